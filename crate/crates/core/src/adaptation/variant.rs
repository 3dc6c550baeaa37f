use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SamConfig;

/// Which training procedure to run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VariantKind {
    /// Plain source fine-tuning with AdamW.
    Baseline,
    /// SAM on the task loss plus prior-sampled adversarial adaptation.
    Ditto,
    /// Adversarial adaptation without SAM (`ρ = 0`).
    DittoMinusSam,
    /// SAM on the task loss only; no discriminators trained (`λ = 0`).
    DittoMinusLa,
    /// Adaptation towards one target only.
    DittoSingle(String),
    /// Uniform prior over targets.
    DittoUniform,
}

impl VariantKind {
    pub fn is_adversarial(&self) -> bool {
        !matches!(self, VariantKind::Baseline | VariantKind::DittoMinusLa)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::Baseline => f.write_str("baseline"),
            VariantKind::Ditto => f.write_str("ditto"),
            VariantKind::DittoMinusSam => f.write_str("ditto-minus-sam"),
            VariantKind::DittoMinusLa => f.write_str("ditto-minus-la"),
            VariantKind::DittoSingle(t) => write!(f, "ditto-single:{t}"),
            VariantKind::DittoUniform => f.write_str("ditto-uniform"),
        }
    }
}

impl TryFrom<String> for VariantKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<VariantKind> for String {
    fn from(v: VariantKind) -> String {
        v.to_string()
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => VariantKind::Baseline,
            "ditto" => VariantKind::Ditto,
            "ditto-minus-sam" => VariantKind::DittoMinusSam,
            "ditto-minus-la" => VariantKind::DittoMinusLa,
            "ditto-uniform" | "ditto-unf" => VariantKind::DittoUniform,
            other => match other.strip_prefix("ditto-single:") {
                Some(t) if !t.is_empty() => VariantKind::DittoSingle(t.to_string()),
                _ => return Err(Error::Config(format!("unknown variant `{other}`"))),
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainVariant {
    pub kind: VariantKind,
    /// Gradient-reversal strength.
    pub lambda: f64,
    pub sam: SamConfig,
}

impl TrainVariant {
    /// Builds a variant from shared `λ`/`ρ` settings, zeroing whichever the
    /// kind does not use.
    pub fn for_kind(kind: VariantKind, lambda: f64, rho: f64) -> Self {
        let (lambda, rho) = match kind {
            VariantKind::Baseline => (0.0, 0.0),
            VariantKind::DittoMinusSam => (lambda, 0.0),
            VariantKind::DittoMinusLa => (0.0, rho),
            _ => (lambda, rho),
        };
        TrainVariant {
            kind,
            lambda,
            sam: SamConfig { rho },
        }
    }

    pub fn baseline() -> Self {
        Self::for_kind(VariantKind::Baseline, 0.0, 0.0)
    }

    pub fn name(&self) -> String {
        self.kind.to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.sam.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        match self.kind {
            VariantKind::Baseline if self.sam.rho != 0.0 => {
                Err(Error::Config("baseline runs without SAM; rho must be 0".into()))
            }
            VariantKind::DittoMinusSam if self.sam.rho != 0.0 => {
                Err(Error::Config("ditto-minus-sam requires rho = 0".into()))
            }
            VariantKind::DittoMinusLa if self.lambda != 0.0 => {
                Err(Error::Config("ditto-minus-la requires lambda = 0".into()))
            }
            _ => Ok(()),
        }
    }
}
