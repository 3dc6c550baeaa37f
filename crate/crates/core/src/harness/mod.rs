//! Data generation, file I/O and experiment orchestration.

pub mod config;
pub mod experiment;
pub mod export;
pub mod io;
pub mod synthetic;

pub use config::{rotation_benchmark, CkaPairing, CostSettings, ExperimentConfig, LADDER_ANGLES};
pub use experiment::{run_experiment, ExperimentOutcome, RunMetrics, RunOutcome, BASELINE};
pub use export::{
    cka_by_target, eval_features, export_features, paired_features, read_features, write_cka_report, write_cost_report,
    write_features, CostCell,
};
pub use io::{load_dataset, load_dataset_dir, write_dataset};
pub use synthetic::{generate, DomainKind, DomainSpec, MixtureSpec, SplitSizes, SyntheticSpec, Transform};

use std::path::{Path, PathBuf};

use crate::error::Result;

/// Generates the configured synthetic dataset and writes it under `dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    write_dataset(&generate(spec, seed)?, dir)
}
