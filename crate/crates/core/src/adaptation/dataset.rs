//! In-memory multi-domain datasets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A block of feature rows, optionally labeled. May be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    dim: usize,
    x: Vec<f64>,
    y: Option<Vec<usize>>,
}

impl Split {
    pub fn labeled(dim: usize) -> Self {
        Split {
            dim,
            x: Vec::new(),
            y: Some(Vec::new()),
        }
    }

    pub fn unlabeled(dim: usize) -> Self {
        Split { dim, x: Vec::new(), y: None }
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let mut s = if labels.is_some() { Self::labeled(dim) } else { Self::unlabeled(dim) };
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::Data(format!("{} rows but {} labels", rows.len(), l.len())));
            }
        }
        for (i, r) in rows.into_iter().enumerate() {
            s.push(&r, labels.as_ref().map(|l| l[i]))?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.y.is_some()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.y.as_deref()
    }

    pub fn push(&mut self, row: &[f64], label: Option<usize>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Data(format!(
                "row has {} features, split expects {}",
                row.len(),
                self.dim
            )));
        }
        match (&mut self.y, label) {
            (Some(ys), Some(l)) => ys.push(l),
            (None, None) => {}
            (Some(_), None) => return Err(Error::Data("missing label in labeled split".into())),
            (None, Some(_)) => return Err(Error::Data("label given for unlabeled split".into())),
        }
        self.x.extend_from_slice(row);
        Ok(())
    }

    /// Feature rows at `indices` as a tensor.
    pub fn features(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Data("cannot build a tensor from zero rows".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(indices.len(), self.dim, data)
    }

    pub fn all_features(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Data("split is empty".into()));
        }
        Tensor::new(self.len(), self.dim, self.x.clone())
    }

    pub fn labels_at(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let ys = self.y.as_ref().ok_or_else(|| Error::Data("split is unlabeled".into()))?;
        Ok(indices.iter().map(|&i| ys[i]).collect())
    }

    /// New split holding `indices` in order.
    pub fn subset(&self, indices: &[usize]) -> Split {
        let mut out = Split {
            dim: self.dim,
            x: Vec::with_capacity(indices.len() * self.dim),
            y: self.y.as_ref().map(|_| Vec::with_capacity(indices.len())),
        };
        for &i in indices {
            out.x.extend_from_slice(self.row(i));
            if let (Some(dst), Some(src)) = (&mut out.y, &self.y) {
                dst.push(src[i]);
            }
        }
        out
    }

    /// Appends every row of `other`; both must agree on labeling.
    pub fn extend(&mut self, other: &Split) -> Result<()> {
        for i in 0..other.len() {
            self.push(other.row(i), other.y.as_ref().map(|y| y[i]))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSplits {
    pub unlabeled: Split,
    /// Labeled rows that few-shot augmentation may draw from.
    pub few_shot: Split,
    pub eval: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub source_id: String,
    pub source_labeled: Split,
    pub source_unlabeled: Split,
    pub source_eval: Split,
    pub targets: BTreeMap<String, TargetSplits>,
}

impl DomainDataset {
    pub fn dim(&self) -> usize {
        self.source_labeled.dim()
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets.keys().cloned().collect()
    }

    /// Eval split of any domain, source included.
    pub fn eval_split(&self, domain: &str) -> Result<&Split> {
        if domain == self.source_id {
            return Ok(&self.source_eval);
        }
        self.targets
            .get(domain)
            .map(|t| &t.eval)
            .ok_or_else(|| Error::Lookup {
                kind: "domain",
                name: domain.to_string(),
            })
    }

    /// Source first, then targets in sorted order.
    pub fn domain_ids(&self) -> Vec<String> {
        std::iter::once(self.source_id.clone())
            .chain(self.targets.keys().cloned())
            .collect()
    }

    /// Largest label seen in any labeled split, plus one.
    pub fn num_classes(&self) -> usize {
        let mut max = 0;
        let splits = [&self.source_labeled, &self.source_eval]
            .into_iter()
            .chain(self.targets.values().flat_map(|t| [&t.few_shot, &t.eval]));
        for s in splits {
            if let Some(ys) = s.labels() {
                max = max.max(ys.iter().map(|&y| y + 1).max().unwrap_or(0));
            }
        }
        max
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::Data("feature dimension must be positive".into()));
        }
        if self.targets.contains_key(&self.source_id) {
            return Err(Error::Data(format!("`{}` is both source and target", self.source_id)));
        }
        let check = |domain: &str, split: &str, s: &Split, labeled: bool| -> Result<()> {
            if s.dim() != dim {
                return Err(Error::Data(format!(
                    "{domain}/{split} has {} features, expected {dim}",
                    s.dim()
                )));
            }
            if labeled && !s.is_labeled() {
                return Err(Error::Data(format!("{domain}/{split} must be labeled")));
            }
            Ok(())
        };
        let src = self.source_id.as_str();
        check(src, "labeled", &self.source_labeled, true)?;
        check(src, "unlabeled", &self.source_unlabeled, false)?;
        check(src, "eval", &self.source_eval, true)?;
        if self.source_labeled.is_empty() {
            return Err(Error::Data(format!("source `{src}` has no labeled rows")));
        }
        if self.source_eval.is_empty() {
            return Err(Error::Data(format!("source `{src}` has no eval rows")));
        }
        for (t, splits) in &self.targets {
            check(t, "unlabeled", &splits.unlabeled, false)?;
            check(t, "fewshot", &splits.few_shot, true)?;
            check(t, "eval", &splits.eval, true)?;
            if splits.eval.is_empty() {
                return Err(Error::Data(format!("target `{t}` has no eval rows")));
            }
        }
        Ok(())
    }

    /// Keeps `percent`% of the labeled source rows (at least one), chosen by a
    /// seeded shuffle followed by taking a prefix.
    pub fn with_source_fraction(&self, percent: u32, rng: &mut Rng) -> Result<DomainDataset> {
        if percent == 0 || percent > 100 {
            return Err(Error::Config(format!("source fraction must be in 1..=100, got {percent}")));
        }
        let n = self.source_labeled.len();
        let keep = source_fraction_count(n, percent);
        let mut order = rng.permutation(n);
        order.truncate(keep);
        let mut out = self.clone();
        out.source_labeled = self.source_labeled.subset(&order);
        Ok(out)
    }
}

/// Rows kept from `n` at `percent`%: the ceiling, and at least one.
pub fn source_fraction_count(n: usize, percent: u32) -> usize {
    ((n as u64 * percent as u64).div_ceil(100)).max(1) as usize
}

/// Adds `k` labeled rows per target, drawn without replacement from each
/// target's few-shot pool, to the labeled source set. The drawn rows leave the
/// pool; unlabeled and eval splits are untouched.
pub fn few_shot_augment(data: &DomainDataset, k: usize, rng: &mut Rng) -> Result<DomainDataset> {
    let mut out = data.clone();
    if k == 0 {
        return Ok(out);
    }
    for (t, splits) in out.targets.iter_mut() {
        let pool = &splits.few_shot;
        if pool.len() < k {
            return Err(Error::Data(format!(
                "target `{t}` has {} few-shot rows, {k} requested",
                pool.len()
            )));
        }
        let order = rng.permutation(pool.len());
        let (taken, rest) = order.split_at(k);
        out.source_labeled.extend(&pool.subset(taken))?;
        splits.few_shot = pool.subset(rest);
    }
    Ok(out)
}
