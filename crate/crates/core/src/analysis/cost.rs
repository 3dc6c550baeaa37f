//! Labeling budget of a fine-tuning dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assumed price of one labeled source instance.
pub const DEFAULT_SOURCE_COST_CENTS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Cents per labeled source instance.
    pub c_s: f64,
    pub n_labeled_source: usize,
    /// Cost of a target label relative to a source label.
    pub c_t_over_s: f64,
    /// Labeled instances per target.
    pub k: usize,
    pub num_targets: usize,
}

impl CostParams {
    pub fn new(n_labeled_source: usize, c_t_over_s: f64, k: usize, num_targets: usize) -> Self {
        CostParams {
            c_s: DEFAULT_SOURCE_COST_CENTS,
            n_labeled_source,
            c_t_over_s,
            k,
            num_targets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_s", self.c_s), ("c_t_over_s", self.c_t_over_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `c_s·n + c_s·c_{t/s}·k·|T|`, in cents.
pub fn annotation_cost(p: &CostParams) -> Result<f64> {
    p.validate()?;
    Ok(p.c_s * p.n_labeled_source as f64 + p.c_s * p.c_t_over_s * p.k as f64 * p.num_targets as f64)
}
