//! Experiment configuration.
//!
//! Values come from [`ExperimentConfig::default`], then a JSON file (any
//! subset of fields), then command-line overrides applied by the caller.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdvSource, TrainConfig, TrainVariant, VariantKind};
use crate::analysis::DEFAULT_SOURCE_COST_CENTS;
use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::harness::synthetic::{MixtureSpec, SyntheticSpec};
use crate::model::{EncoderSpec, DEFAULT_DISC_HIDDEN};

/// How rows of two domains are matched up for CKA.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkaPairing {
    /// Row `i` of every eval split is the same underlying example.
    #[default]
    Paired,
    /// Match rows class by class in order of appearance.
    Stratified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSettings {
    pub source_cents: f64,
    /// Target-to-source labeling cost ratios to tabulate.
    pub target_cost_ratios: Vec<f64>,
}

impl Default for CostSettings {
    fn default() -> Self {
        CostSettings {
            source_cents: DEFAULT_SOURCE_COST_CENTS,
            target_cost_ratios: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder: EncoderSpec,
    pub num_classes: usize,
    /// The baseline always runs; it supplies the prior and the reference for
    /// relative gains.
    pub variants: Vec<VariantKind>,
    pub lambda: f64,
    /// SAM radii tried for every variant that uses SAM.
    pub rho_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub task_lr: f64,
    pub disc_lr: f64,
    pub weight_decay: f64,
    pub disc_hidden: usize,
    pub disc_steps: usize,
    pub adv_source: AdvSource,
    pub seeds: Vec<u64>,
    /// Percent of labeled source rows kept.
    pub source_fractions: Vec<u32>,
    /// Labeled rows per target moved into training.
    pub few_shot_k: Vec<usize>,
    pub cka_pairing: CkaPairing,
    pub cost: CostSettings,
    pub out_dir: PathBuf,
    /// Dataset recipe for `generate` and for `run-all` without a data directory.
    pub synthetic: SyntheticSpec,
    pub data_seed: u64,
    /// Run the seeds of a grid cell on separate threads.
    pub parallel: bool,
}

/// Three classes stacked along one ray; class is a function of radius.
pub fn ray_mixture() -> MixtureSpec {
    MixtureSpec {
        means: vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![5.0, 0.0]],
        std: 0.55,
    }
}

/// Source plus targets rotated by each of `angles`, sized for the default
/// experiment.
pub fn rotation_benchmark(angles: &[f64]) -> SyntheticSpec {
    SyntheticSpec::rotation_ladder(ray_mixture(), angles, 2000, 2000, 50, 600)
}

pub const LADDER_ANGLES: [f64; 4] = [15.0, 30.0, 45.0, 60.0];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            encoder: EncoderSpec {
                input_dim: 2,
                hidden_dims: vec![32, 32],
                activation: Activation::Tanh,
            },
            num_classes: 3,
            variants: vec![VariantKind::Baseline, VariantKind::Ditto],
            lambda: 1.0,
            rho_grid: vec![0.05],
            epochs: 30,
            batch_size: 32,
            task_lr: 4e-3,
            disc_lr: 2e-2,
            weight_decay: 0.0,
            disc_hidden: DEFAULT_DISC_HIDDEN,
            disc_steps: 1,
            adv_source: AdvSource::LabeledBatch,
            seeds: vec![0, 1, 2],
            source_fractions: vec![100],
            few_shot_k: vec![0],
            cka_pairing: CkaPairing::Paired,
            cost: CostSettings::default(),
            out_dir: PathBuf::from("out"),
            synthetic: rotation_benchmark(&LADDER_ANGLES),
            data_seed: 0,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::new(self.encoder.clone(), self.num_classes);
        c.disc_hidden = self.disc_hidden;
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.task_lr = self.task_lr;
        c.disc_lr = self.disc_lr;
        c.weight_decay = self.weight_decay;
        c.adv_source = self.adv_source;
        c.disc_steps = self.disc_steps;
        c.eval_each_epoch = true;
        c
    }

    /// Every (variant, ρ) pair to train besides the baseline.
    pub fn variant_grid(&self) -> Vec<TrainVariant> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for kind in &self.variants {
            if *kind == VariantKind::Baseline || !seen.insert(kind.clone()) {
                continue;
            }
            let uses_sam = !matches!(kind, VariantKind::DittoMinusSam);
            if uses_sam {
                for &rho in &self.rho_grid {
                    out.push(TrainVariant::for_kind(kind.clone(), self.lambda, rho));
                }
            } else {
                out.push(TrainVariant::for_kind(kind.clone(), self.lambda, 0.0));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variants to run".into()));
        }
        if self.rho_grid.is_empty() {
            return Err(Error::Config("rho_grid is empty".into()));
        }
        for v in self.variant_grid() {
            v.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.source_fractions.is_empty() || self.source_fractions.iter().any(|&s| s == 0 || s > 100) {
            return Err(Error::Config("source fractions must be percentages in 1..=100".into()));
        }
        if self.few_shot_k.is_empty() {
            return Err(Error::Config("few_shot_k is empty; use [0] for zero-shot".into()));
        }
        if !(self.cost.source_cents >= 0.0 && self.cost.source_cents.is_finite())
            || self.cost.target_cost_ratios.iter().any(|r| !(*r >= 0.0 && r.is_finite()))
        {
            return Err(Error::Config("costs must be finite and nonnegative".into()));
        }
        Ok(())
    }
}
