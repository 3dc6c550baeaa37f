//! AdamW with a linear decay schedule, and the two-pass sharpness-aware
//! minimization (SAM) wrapper around it.
//!
//! SAM runs as a fixed protocol over a subset of parameters:
//!
//! 1. forward/backward at `w`;
//! 2. [`sam_perturb`]: move to `w + ε̂`, `ε̂ = ρ·∇L / ‖∇L‖₂` with one global norm;
//! 3. clear gradients, forward/backward at `w + ε̂`;
//! 4. [`sam_restore`]: copy the saved `w` back;
//! 5. AdamW step with the gradients from (3).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Gradient norms below this are treated as zero when normalizing for SAM.
pub const MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate decays linearly to zero.
    pub total_steps: usize,
}

impl AdamWConfig {
    pub fn new(lr: f64, total_steps: usize) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamConfig {
    pub rho: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        SamConfig { rho: 0.05 }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and nonnegative, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Learning rate after `step` updates: `lr · (1 − step/total_steps)`.
pub fn lr_at(config: &AdamWConfig, step: usize) -> f64 {
    if step > config.total_steps {
        log::warn!(
            "schedule step {step} exceeds total_steps {}; clamping learning rate to 0",
            config.total_steps
        );
        return 0.0;
    }
    config.lr * (1.0 - step as f64 / config.total_steps as f64)
}

/// One AdamW update of `ids` using their current gradient slots.
///
/// `step` is the number of scheduled updates already taken and only drives the
/// learning-rate schedule; bias correction uses each parameter's own counter.
pub fn adamw_step(store: &mut ParamStore, ids: &[ParamId], config: &AdamWConfig, step: usize) -> Result<()> {
    for &id in ids {
        if !store.grad(id).is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter `{}`",
                store.name(id)
            )));
        }
    }
    let lr = lr_at(config, step);
    let (b1, b2) = (config.beta1, config.beta2);
    for &id in ids {
        let p = store.param_mut(id);
        p.state.step += 1;
        let t = p.state.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay = lr * config.weight_decay;
        let grads = p.grad.data();
        let m = p.state.m.data_mut();
        for (m, g) in m.iter_mut().zip(grads) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let v = p.state.v.data_mut();
        for (v, g) in v.iter_mut().zip(grads) {
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let (m, v) = (p.state.m.data(), p.state.v.data());
        for ((w, m), v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            if config.weight_decay != 0.0 {
                *w -= decay * *w;
            }
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Global L2 norm of the gradients of `ids`.
pub fn grad_norm(store: &ParamStore, ids: &[ParamId]) -> f64 {
    ids.iter()
        .map(|&id| store.grad(id).frobenius_sq())
        .sum::<f64>()
        .sqrt()
}

/// Saved state needed to undo a SAM perturbation.
#[derive(Debug)]
pub struct Perturbation {
    ids: Vec<ParamId>,
    saved: Vec<Tensor>,
    epsilon: Vec<Tensor>,
    restored: bool,
}

impl Perturbation {
    /// The applied `ε̂`, one tensor per perturbed parameter.
    pub fn epsilon(&self) -> &[Tensor] {
        &self.epsilon
    }

    pub fn epsilon_norm(&self) -> f64 {
        self.epsilon.iter().map(Tensor::frobenius_sq).sum::<f64>().sqrt()
    }

    pub fn is_restored(&self) -> bool {
        self.restored
    }
}

/// Moves `ids` to `w + ρ·∇L/‖∇L‖₂` and returns the record needed to undo it.
///
/// Fails with [`Error::DegenerateGradient`] when `‖∇L‖₂ < MIN_GRAD_NORM`;
/// parameters are left untouched in that case.
pub fn sam_perturb(store: &mut ParamStore, ids: &[ParamId], rho: f64) -> Result<Perturbation> {
    SamConfig { rho }.validate()?;
    let norm = grad_norm(store, ids);
    if !(norm >= MIN_GRAD_NORM) {
        return Err(Error::DegenerateGradient { norm });
    }
    let scale = rho / norm;
    let mut saved = Vec::with_capacity(ids.len());
    let mut epsilon = Vec::with_capacity(ids.len());
    for &id in ids {
        let eps = store.grad(id).scale(scale);
        saved.push(store.value(id).clone());
        for (w, e) in store.value_mut(id).data_mut().iter_mut().zip(eps.data()) {
            // Skipping exact zeros keeps ρ = 0 a bitwise no-op (including signed zeros).
            if *e != 0.0 {
                *w += e;
            }
        }
        epsilon.push(eps);
    }
    Ok(Perturbation {
        ids: ids.to_vec(),
        saved,
        epsilon,
        restored: false,
    })
}

/// Copies the pre-perturbation values back.
pub fn sam_restore(store: &mut ParamStore, perturbation: &mut Perturbation) -> Result<()> {
    if perturbation.restored {
        return Err(Error::State("perturbation already restored".into()));
    }
    for (&id, saved) in perturbation.ids.iter().zip(&perturbation.saved) {
        if id.index() >= store.len() || store.value(id).shape() != saved.shape() {
            return Err(Error::State(format!(
                "perturbation record does not match parameter #{}",
                id.index()
            )));
        }
    }
    for (&id, saved) in perturbation.ids.iter().zip(&perturbation.saved) {
        *store.value_mut(id) = saved.clone();
    }
    perturbation.restored = true;
    Ok(())
}

/// Phases 1–4 of the SAM protocol. On return the gradient slots of `ids` hold
/// the gradient at `w + ε̂` and the values hold `w` again.
///
/// `loss_and_grad` must run a forward and backward pass that adds into the
/// gradient slots and returns the loss. The returned loss is the one at `w`.
/// A degenerate gradient skips the perturbation and keeps the phase-1 gradients.
pub fn sam_gradients<F>(store: &mut ParamStore, ids: &[ParamId], rho: f64, mut loss_and_grad: F) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    store.zero_grad_of(ids);
    let loss = loss_and_grad(store)?;
    match sam_perturb(store, ids, rho) {
        Ok(mut perturbation) => {
            store.zero_grad_of(ids);
            let sharp = loss_and_grad(store);
            sam_restore(store, &mut perturbation)?;
            sharp?;
        }
        Err(Error::DegenerateGradient { norm }) => {
            log::debug!("skipping SAM perturbation, gradient norm {norm:e}");
        }
        Err(e) => return Err(e),
    }
    Ok(loss)
}

/// The full five-phase SAM step followed by AdamW on `ids`.
pub fn sam_step<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    sam: &SamConfig,
    adamw: &AdamWConfig,
    step: usize,
    loss_and_grad: F,
) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    let loss = sam_gradients(store, ids, sam.rho, loss_and_grad)?;
    adamw_step(store, ids, adamw, step)?;
    Ok(loss)
}
