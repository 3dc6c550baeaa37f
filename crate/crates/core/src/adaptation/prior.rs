//! Sampling distribution over target domains.
//!
//! The default prior favours targets whose zero-shot accuracy trails the
//! source the most: `Δ_t = max(Z(s) − Z(t), 0)`, weight `Δ_t + σ` with `σ` the
//! population standard deviation of the `Δ_t`, normalized to sum to one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguagePrior {
    probs: BTreeMap<String, f64>,
}

impl LanguagePrior {
    /// Validates and wraps explicit probabilities.
    pub fn new(probs: BTreeMap<String, f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input("prior needs at least one target".into()));
        }
        for (t, &p) in &probs {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Input(format!("probability for `{t}` is {p}")));
            }
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Input(format!("prior sums to {total}, not 1")));
        }
        Ok(LanguagePrior { probs })
    }

    pub fn uniform<S: AsRef<str>>(targets: &[S]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Input("prior needs at least one target".into()));
        }
        let p = 1.0 / targets.len() as f64;
        let probs = targets.iter().map(|t| (t.as_ref().to_string(), p)).collect();
        Ok(LanguagePrior { probs })
    }

    /// All mass on one target.
    pub fn single(target: &str) -> Self {
        LanguagePrior {
            probs: BTreeMap::from([(target.to_string(), 1.0)]),
        }
    }

    pub fn prob(&self, target: &str) -> f64 {
        self.probs.get(target).copied().unwrap_or(0.0)
    }

    /// `(target, probability)` in sorted target order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.probs.iter().map(|(t, &p)| (t.as_str(), p))
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.probs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF draw over the sorted target order.
    pub fn sample(&self, rng: &mut Rng) -> &str {
        let u = rng.uniform();
        let mut cum = 0.0;
        let mut last_positive = None;
        for (t, &p) in &self.probs {
            if p > 0.0 {
                last_positive = Some(t);
            }
            cum += p;
            if u < cum && p > 0.0 {
                return t;
            }
        }
        // Only reachable through rounding when the cumulative sum ends below u.
        last_positive.expect("validated prior has positive mass")
    }
}

/// Builds the prior from zero-shot accuracies (percent) keyed by domain id.
/// Every key other than `source` is a target.
pub fn compute_prior(scores: &BTreeMap<String, f64>, source: &str) -> Result<LanguagePrior> {
    let source_score = *scores
        .get(source)
        .ok_or_else(|| Error::Input(format!("no score for source domain `{source}`")))?;
    for (d, &z) in scores {
        if !(0.0..=100.0).contains(&z) {
            return Err(Error::Input(format!("score for `{d}` is {z}, outside [0, 100]")));
        }
    }
    let deltas: Vec<(&String, f64)> = scores
        .iter()
        .filter(|(d, _)| d.as_str() != source)
        .map(|(d, &z)| (d, (source_score - z).max(0.0)))
        .collect();
    if deltas.is_empty() {
        return Err(Error::Input("no target scores".into()));
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().map(|(_, d)| d).sum::<f64>() / n;
    let sigma = (deltas.iter().map(|(_, d)| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let weights: Vec<(&String, f64)> = deltas.iter().map(|&(t, d)| (t, d + sigma)).collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        let ids: Vec<&String> = weights.iter().map(|(t, _)| *t).collect();
        return LanguagePrior::uniform(&ids);
    }
    let probs = weights
        .into_iter()
        .map(|(t, w)| (t.clone(), w / total))
        .collect();
    Ok(LanguagePrior { probs })
}
