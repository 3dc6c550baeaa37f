//! Multi-target adversarial domain adaptation with sharpness-aware
//! minimization, on synthetic "language as domain" data.

pub mod adaptation;
pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adaptation::{
    compute_prior, train, DomainDataset, LanguagePrior, Split, TrainConfig, TrainReport, TrainVariant, VariantKind,
};
pub use analysis::{annotation_cost, linear_cka, relative_gain, CostParams, EvalTable};
pub use autodiff::{Activation, Tape, Var};
pub use error::{Error, Result};
pub use model::{EncoderSpec, ModelBundle, ModelSpec};
pub use optim::{AdamWConfig, SamConfig};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
