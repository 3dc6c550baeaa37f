//! Synthetic multi-domain data: one Gaussian class mixture, one transform
//! chain per domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adaptation::{DomainDataset, Split, TargetSplits};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Isotropic Gaussian per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl MixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::Config("mixture needs at least two classes".into()));
        }
        let dim = self.dim();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config("class means must share one positive dimension".into()));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("class means must be finite".into()));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(Error::Config(format!("std must be finite and nonnegative, got {}", self.std)));
        }
        for i in 0..self.means.len() {
            for j in i + 1..self.means.len() {
                if self.means[i] == self.means[j] {
                    return Err(Error::Config(format!("classes {i} and {j} share a mean")));
                }
            }
        }
        Ok(())
    }

    /// Row with label `class`.
    fn draw(&self, class: usize, rng: &mut Rng) -> Vec<f64> {
        self.means[class].iter().map(|m| m + self.std * rng.normal()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Counter-clockwise rotation of the first two coordinates about the
    /// origin, in degrees.
    Rotation(f64),
    Translation(Vec<f64>),
    /// Output coordinate `i` takes input coordinate `perm[i]`.
    Permutation(Vec<usize>),
    /// Additive isotropic Gaussian noise with this standard deviation.
    Noise(f64),
}

impl Transform {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Transform::Rotation(deg) => {
                if !(0.0..360.0).contains(deg) {
                    return Err(Error::Config(format!("rotation must be in [0, 360), got {deg}")));
                }
                if dim < 2 {
                    return Err(Error::Config("rotation needs at least two features".into()));
                }
            }
            Transform::Translation(v) => {
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("translation must have {dim} finite entries")));
                }
            }
            Transform::Permutation(p) => {
                let mut seen = vec![false; dim];
                if p.len() != dim || p.iter().any(|&i| i >= dim || std::mem::replace(&mut seen[i], true)) {
                    return Err(Error::Config(format!("`{p:?}` is not a permutation of 0..{dim}")));
                }
            }
            Transform::Noise(s) => {
                if !(*s >= 0.0 && s.is_finite()) {
                    return Err(Error::Config(format!("noise must be finite and nonnegative, got {s}")));
                }
            }
        }
        Ok(())
    }

    fn apply(&self, row: &mut [f64], rng: &mut Rng) {
        match self {
            Transform::Rotation(deg) => {
                let (s, c) = deg.to_radians().sin_cos();
                let (x, y) = (row[0], row[1]);
                row[0] = c * x - s * y;
                row[1] = s * x + c * y;
            }
            Transform::Translation(v) => row.iter_mut().zip(v).for_each(|(r, t)| *r += t),
            Transform::Permutation(p) => {
                let src = row.to_vec();
                for (dst, &i) in row.iter_mut().zip(p) {
                    *dst = src[i];
                }
            }
            Transform::Noise(s) => row.iter_mut().for_each(|r| *r += s * rng.normal()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    #[serde(default)]
    pub labeled: usize,
    #[serde(default)]
    pub unlabeled: usize,
    #[serde(default)]
    pub few_shot: usize,
    pub eval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub kind: DomainKind,
    /// Applied in order; empty means identity.
    #[serde(default)]
    pub transforms: Vec<Transform>,
    pub sizes: SplitSizes,
}

impl DomainSpec {
    pub fn source(id: &str, labeled: usize, unlabeled: usize, eval: usize) -> Self {
        DomainSpec {
            id: id.to_string(),
            kind: DomainKind::Source,
            transforms: Vec::new(),
            sizes: SplitSizes {
                labeled,
                unlabeled,
                few_shot: 0,
                eval,
            },
        }
    }

    pub fn target(id: &str, transforms: Vec<Transform>, unlabeled: usize, few_shot: usize, eval: usize) -> Self {
        DomainSpec {
            id: id.to_string(),
            kind: DomainKind::Target,
            transforms,
            sizes: SplitSizes {
                labeled: 0,
                unlabeled,
                few_shot,
                eval,
            },
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mixture: MixtureSpec,
    pub domains: Vec<DomainSpec>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        let dim = self.mixture.dim();
        let sources = self.domains.iter().filter(|d| d.kind == DomainKind::Source).count();
        if sources != 1 {
            return Err(Error::Config(format!("need exactly one source domain, found {sources}")));
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.domains {
            if d.id.is_empty() || d.id.contains(|c: char| c.is_whitespace() || c == ',' || c == '/') {
                return Err(Error::Config(format!("invalid domain id `{}`", d.id)));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Config(format!("duplicate domain id `{}`", d.id)));
            }
            if d.sizes.eval == 0 {
                return Err(Error::Config(format!("domain `{}` needs eval rows", d.id)));
            }
            match d.kind {
                DomainKind::Source if d.sizes.labeled == 0 => {
                    return Err(Error::Config(format!("source `{}` needs labeled rows", d.id)))
                }
                DomainKind::Target if d.sizes.labeled != 0 => {
                    return Err(Error::Config(format!(
                        "target `{}` cannot have a labeled split; use few_shot",
                        d.id
                    )))
                }
                _ => {}
            }
            for t in &d.transforms {
                t.validate(dim)?;
            }
        }
        Ok(())
    }

    /// Target domains rotated by each of `angles` degrees.
    pub fn rotation_ladder(
        mixture: MixtureSpec,
        angles: &[f64],
        labeled: usize,
        unlabeled: usize,
        few_shot: usize,
        eval: usize,
    ) -> Self {
        let mut domains = vec![DomainSpec::source("src", labeled, unlabeled, eval)];
        for &a in angles {
            domains.push(DomainSpec::target(
                &format!("rot{a}"),
                vec![Transform::Rotation(a)],
                unlabeled,
                few_shot,
                eval,
            ));
        }
        SyntheticSpec { mixture, domains }
    }
}

/// Draws every split of every domain.
///
/// Eval splits are transforms of one shared base sample, so row `i` of any two
/// eval splits comes from the same underlying draw. All other splits use fresh
/// draws per domain. Labels cycle through the classes, giving balanced splits.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<DomainDataset> {
    spec.validate()?;
    let mix = &spec.mixture;
    let dim = mix.dim();
    let c = mix.num_classes();
    let root = Rng::new(seed);

    let n_eval = spec.domains.iter().map(|d| d.sizes.eval).max().unwrap_or(0);
    let mut base_rng = root.fork(0);
    let base_eval: Vec<Vec<f64>> = (0..n_eval).map(|i| mix.draw(i % c, &mut base_rng)).collect();

    let mut source = None;
    let mut targets = BTreeMap::new();
    for (j, d) in spec.domains.iter().enumerate() {
        let mut rng = root.fork(1 + j as u64);
        let transformed = |rows: Vec<Vec<f64>>, rng: &mut Rng| -> Vec<Vec<f64>> {
            rows.into_iter()
                .map(|mut r| {
                    for t in &d.transforms {
                        t.apply(&mut r, rng);
                    }
                    r
                })
                .collect()
        };
        let fresh = |n: usize, labeled: bool, rng: &mut Rng| -> Result<Split> {
            let rows = (0..n).map(|i| mix.draw(i % c, rng)).collect();
            let rows = transformed(rows, rng);
            let labels = labeled.then(|| (0..n).map(|i| i % c).collect());
            Split::from_rows(dim, rows, labels)
        };
        let labeled = fresh(d.sizes.labeled, true, &mut rng)?;
        let unlabeled = fresh(d.sizes.unlabeled, false, &mut rng)?;
        let few_shot = fresh(d.sizes.few_shot, true, &mut rng)?;
        let eval_rows = transformed(base_eval[..d.sizes.eval].to_vec(), &mut rng);
        let eval = Split::from_rows(dim, eval_rows, Some((0..d.sizes.eval).map(|i| i % c).collect()))?;
        match d.kind {
            DomainKind::Source => source = Some((d.id.clone(), labeled, unlabeled, eval)),
            DomainKind::Target => {
                targets.insert(
                    d.id.clone(),
                    TargetSplits {
                        unlabeled,
                        few_shot,
                        eval,
                    },
                );
            }
        }
    }
    let (source_id, source_labeled, source_unlabeled, source_eval) = source.expect("validated");
    let data = DomainDataset {
        source_id,
        source_labeled,
        source_unlabeled,
        source_eval,
        targets,
    };
    data.validate()?;
    Ok(data)
}
