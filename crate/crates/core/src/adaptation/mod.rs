//! Source fine-tuning, joint multi-target adversarial adaptation and their
//! ablations.

pub mod dataset;
pub mod prior;
pub mod train;
pub mod variant;

pub use dataset::{few_shot_augment, DomainDataset, Split, TargetSplits};
pub use prior::{compute_prior, LanguagePrior};
pub use train::{train, AdvSource, AdversarialStep, Batch, EpochRecord, TrainConfig, TrainReport, Trainer};
pub use variant::{TrainVariant, VariantKind};
