//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ditto_core::harness::config::ray_mixture;
use ditto_core::harness::{generate, SyntheticSpec};
use ditto_core::{Activation, DomainDataset, EncoderSpec, ParamId, ParamStore, Result, Rng, Tape, Tensor, Var};

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).unwrap()
}

pub fn encoder(hidden: &[usize], activation: Activation) -> EncoderSpec {
    EncoderSpec {
        input_dim: 2,
        hidden_dims: hidden.to_vec(),
        activation,
    }
}

/// A rotation ladder small enough for step-level tests.
pub fn small_ladder(angles: &[f64], seed: u64) -> DomainDataset {
    generate(&SyntheticSpec::rotation_ladder(ray_mixture(), angles, 120, 80, 10, 60), seed).unwrap()
}

/// Independent central-difference oracle. `sign(id)` is the expected ratio
/// between the analytic and the numeric gradient of each parameter (`-λ` for
/// parameters whose only path to the loss runs through a gradient reversal).
///
/// Returns `max |analytic − sign·numeric| / max(1, |sign·numeric|)`.
pub fn gradient_error<F, S>(store: &mut ParamStore, h: f64, build: F, sign: S) -> f64
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
    S: Fn(ParamId) -> f64,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(store, &mut tape).unwrap();
    tape.backward(loss, store).unwrap();
    let value = |store: &ParamStore| {
        let mut tape = Tape::new();
        let loss = build(store, &mut tape).unwrap();
        tape.value(loss).item().unwrap()
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        for k in 0..store.value(id).len() {
            let w = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = w + h;
            let plus = value(store);
            store.value_mut(id).data_mut()[k] = w - h;
            let minus = value(store);
            store.value_mut(id).data_mut()[k] = w;
            let expected = sign(id) * (plus - minus) / (2.0 * h);
            let analytic = store.grad(id).data()[k];
            worst = worst.max((analytic - expected).abs() / expected.abs().max(1.0));
        }
    }
    worst
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn param_bits(store: &ParamStore, ids: &[ParamId]) -> Vec<Vec<u64>> {
    ids.iter().map(|&id| bits(store.value(id))).collect()
}

pub fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(d, z)| (d.to_string(), z)).collect()
}

/// `HSIC(K, L) / sqrt(HSIC(K, K)·HSIC(L, L))` with explicit `n×n` Gram and
/// centering matrices.
pub fn cka_via_hsic(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    let gram = |m: &Tensor| m.matmul(&m.transpose()).unwrap();
    let mut h = Tensor::identity(n);
    for v in h.data_mut() {
        *v -= 1.0 / n as f64;
    }
    let hsic = |k: &Tensor, l: &Tensor| {
        let khlh = k.matmul(&h).unwrap().matmul(l).unwrap().matmul(&h).unwrap();
        (0..n).map(|i| khlh.get(i, i)).sum::<f64>() / ((n - 1) as f64).powi(2)
    };
    let (k, l) = (gram(x), gram(y));
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

/// Random orthogonal matrix by Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut Rng, d: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= dot * ci;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = Tensor::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}
