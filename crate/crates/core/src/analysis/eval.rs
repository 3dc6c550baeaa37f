//! Per-domain accuracy tables, gaps and relative gains.

use std::collections::BTreeMap;
use std::io::Write;

use crate::adaptation::DomainDataset;
use crate::error::{Error, Result};
use crate::model::ModelBundle;

/// Accuracies in percent keyed by method, then domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalTable {
    source: String,
    methods: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalTable {
    pub fn new(source: impl Into<String>) -> Self {
        EvalTable {
            source: source.into(),
            methods: BTreeMap::new(),
        }
    }

    pub fn with_method(source: impl Into<String>, method: &str, accs: BTreeMap<String, f64>) -> Self {
        let mut t = Self::new(source);
        t.methods.insert(method.to_string(), accs);
        t
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn insert(&mut self, method: &str, domain: &str, accuracy: f64) {
        self.methods
            .entry(method.to_string())
            .or_default()
            .insert(domain.to_string(), accuracy);
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str)
    }

    pub fn method(&self, method: &str) -> Result<&BTreeMap<String, f64>> {
        self.methods.get(method).ok_or_else(|| Error::Lookup {
            kind: "method",
            name: method.to_string(),
        })
    }

    /// Target accuracies of `method` (every domain except the source).
    pub fn targets(&self, method: &str) -> Result<impl Iterator<Item = (&str, f64)>> {
        let src = self.source.as_str();
        Ok(self
            .method(method)?
            .iter()
            .filter(move |(d, _)| d.as_str() != src)
            .map(|(d, &a)| (d.as_str(), a)))
    }

    pub fn mean_target_accuracy(&self, method: &str) -> Result<f64> {
        let accs: Vec<f64> = self.targets(method)?.map(|(_, a)| a).collect();
        if accs.is_empty() {
            return Err(Error::Data(format!("method `{method}` has no target entries")));
        }
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Every method covers the same set of domains, including the source.
    pub fn validate(&self) -> Result<()> {
        let mut domains: Option<Vec<&String>> = None;
        for (m, accs) in &self.methods {
            if !accs.contains_key(&self.source) {
                return Err(Error::Data(format!("method `{m}` lacks the source domain")));
            }
            let keys: Vec<&String> = accs.keys().collect();
            match &domains {
                None => domains = Some(keys),
                Some(d) if *d != keys => {
                    return Err(Error::Data(format!("method `{m}` covers a different set of domains")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Relative gain of `method` over `baseline` for every target.
    pub fn relative_gains(&self, baseline: &str, method: &str) -> Result<BTreeMap<String, f64>> {
        let base = self.method(baseline)?;
        self.targets(method)?
            .map(|(d, acc)| {
                let b = base
                    .get(d)
                    .ok_or_else(|| Error::Data(format!("baseline `{baseline}` has no entry for `{d}`")))?;
                Ok((d.to_string(), relative_gain(*b, acc)?))
            })
            .collect()
    }

    /// Mean over targets of the per-target relative gains.
    pub fn mean_relative_gain(&self, baseline: &str, method: &str) -> Result<f64> {
        let gains = self.relative_gains(baseline, method)?;
        if gains.is_empty() {
            return Err(Error::Data("no targets to average".into()));
        }
        Ok(gains.values().sum::<f64>() / gains.len() as f64)
    }

    /// CSV `domain,method,accuracy,relative_gain`. The gain column is empty for
    /// the source row, for `baseline` itself, or when no baseline is given.
    pub fn write_csv<W: Write>(&self, out: W, baseline: Option<&str>) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["domain", "method", "accuracy", "relative_gain"])?;
        for (method, accs) in &self.methods {
            let gains = match baseline {
                Some(b) if b != method => Some(self.relative_gains(b, method)?),
                _ => None,
            };
            for (domain, acc) in accs {
                let gain = gains
                    .as_ref()
                    .and_then(|g| g.get(domain))
                    .map(|g| g.to_string())
                    .unwrap_or_default();
                w.write_record([domain.as_str(), method.as_str(), &acc.to_string(), &gain])?;
            }
        }
        w.flush().map_err(|e| Error::io("<eval csv>", e))?;
        Ok(())
    }
}

/// Percent of eval rows whose argmax prediction matches the label, per domain.
pub fn domain_accuracies(model: &ModelBundle, data: &DomainDataset) -> Result<BTreeMap<String, f64>> {
    data.domain_ids()
        .into_iter()
        .map(|d| {
            let split = data.eval_split(&d)?;
            if split.is_empty() {
                return Err(Error::Data(format!("eval split of `{d}` is empty")));
            }
            let labels = split.labels().ok_or_else(|| Error::Data(format!("eval split of `{d}` is unlabeled")))?;
            let preds = model.predict(&split.all_features()?)?;
            let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
            Ok((d, 100.0 * correct as f64 / labels.len() as f64))
        })
        .collect()
}

/// Method tag used by [`zero_shot_eval`].
pub const MODEL_TAG: &str = "model";

/// Accuracy table for one model, tagged [`MODEL_TAG`].
pub fn zero_shot_eval(model: &ModelBundle, data: &DomainDataset) -> Result<EvalTable> {
    Ok(EvalTable::with_method(
        data.source_id.clone(),
        MODEL_TAG,
        domain_accuracies(model, data)?,
    ))
}

/// Mean over targets of `Z(source) − Z(target)` for `method`.
pub fn gap_table(eval: &EvalTable, method: &str) -> Result<f64> {
    let accs = eval.method(method)?;
    let src = *accs
        .get(eval.source())
        .ok_or_else(|| Error::Data(format!("no source entry for `{method}`")))?;
    let gaps: Vec<f64> = eval.targets(method)?.map(|(_, z)| src - z).collect();
    if gaps.is_empty() {
        return Err(Error::Data("no targets".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// `(method − baseline) / baseline × 100`.
pub fn relative_gain(baseline_acc: f64, method_acc: f64) -> Result<f64> {
    if !(baseline_acc > 0.0) {
        return Err(Error::UndefinedGain(baseline_acc));
    }
    Ok((method_acc - baseline_acc) / baseline_acc * 100.0)
}
