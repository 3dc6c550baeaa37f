//! Linear centered kernel alignment between feature matrices.

use std::collections::BTreeMap;

use crate::analysis::eval::EvalTable;
use crate::analysis::stats::{pearson, spearman};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MIN_SELF_SIMILARITY: f64 = 1e-12;

/// `‖Ycᵀ·Xc‖²_F / (‖Xcᵀ·Xc‖_F · ‖Ycᵀ·Yc‖_F)` on column-centered inputs.
///
/// Rows of `x` and `y` must describe the same examples. Returns 0 when either
/// input has (numerically) no variance.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "CKA needs paired rows, got {}x{} and {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::Shape("CKA needs at least two rows".into()));
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    let cross = yc.t_matmul(&xc)?.frobenius_sq();
    let sx = xc.t_matmul(&xc)?.frobenius_sq().sqrt();
    let sy = yc.t_matmul(&yc)?.frobenius_sq().sqrt();
    if sx < MIN_SELF_SIMILARITY || sy < MIN_SELF_SIMILARITY {
        return Ok(0.0);
    }
    Ok((cross / (sx * sy)).clamp(0.0, 1.0))
}

/// Pairs rows of two labeled sets class by class, in order of appearance,
/// truncating each class to the smaller count. Used when the two sets are not
/// transforms of the same underlying examples.
pub fn stratified_pairs(labels_x: &[usize], labels_y: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, &c) in labels_x.iter().enumerate() {
        by_class.entry(c).or_default().0.push(i);
    }
    for (i, &c) in labels_y.iter().enumerate() {
        by_class.entry(c).or_default().1.push(i);
    }
    let (mut ix, mut iy) = (Vec::new(), Vec::new());
    for (xs, ys) in by_class.values() {
        let n = xs.len().min(ys.len());
        ix.extend_from_slice(&xs[..n]);
        iy.extend_from_slice(&ys[..n]);
    }
    (ix, iy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaCorrelation {
    pub pearson: f64,
    pub spearman: f64,
    /// `CKA(source, t)` per target.
    pub cka: BTreeMap<String, f64>,
}

/// Correlates per-target `CKA(source, target)` with per-target accuracy of
/// `method`. `features` maps each domain, source included, to paired features.
pub fn cka_accuracy_correlation(
    features: &BTreeMap<String, Tensor>,
    eval: &EvalTable,
    method: &str,
) -> Result<CkaCorrelation> {
    let source = eval.source();
    let src = features.get(source).ok_or_else(|| Error::Input(format!("no features for source `{source}`")))?;
    let accs = eval.method(method)?;
    let mut cka = BTreeMap::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (domain, f) in features {
        if domain == source {
            continue;
        }
        let acc = *accs
            .get(domain)
            .ok_or_else(|| Error::Input(format!("no accuracy for `{domain}` under `{method}`")))?;
        let c = linear_cka(src, f)?;
        cka.insert(domain.clone(), c);
        xs.push(c);
        ys.push(acc);
    }
    if xs.len() < 3 {
        return Err(Error::Input(format!(
            "correlation needs at least 3 target domains, got {}",
            xs.len()
        )));
    }
    Ok(CkaCorrelation {
        pearson: pearson(&xs, &ys)?,
        spearman: spearman(&xs, &ys)?,
        cka,
    })
}
