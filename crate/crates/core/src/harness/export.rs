//! Feature dumps, CKA reports and cost tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::adaptation::DomainDataset;
use crate::analysis::{annotation_cost, linear_cka, stratified_pairs, CostParams};
use crate::error::{Error, Result};
use crate::harness::config::CkaPairing;
use crate::model::ModelBundle;
use crate::tensor::Tensor;

/// Encoder features of every domain's eval split, keyed by domain.
pub fn eval_features(model: &ModelBundle, data: &DomainDataset) -> Result<BTreeMap<String, (Tensor, Vec<usize>)>> {
    data.domain_ids()
        .into_iter()
        .map(|d| {
            let split = data.eval_split(&d)?;
            let labels = split.labels().unwrap_or_default().to_vec();
            Ok((d, (model.extract_features(&split.all_features()?)?, labels)))
        })
        .collect()
}

/// Writes `domain,row_index,label,f0,...` for the eval split of every domain.
pub fn write_features<W: Write>(features: &BTreeMap<String, (Tensor, Vec<usize>)>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = features.values().next().map_or(0, |(f, _)| f.cols());
    let mut head = vec!["domain".to_string(), "row_index".into(), "label".into()];
    head.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&head)?;
    for (domain, (f, labels)) in features {
        for r in 0..f.rows() {
            let mut rec = vec![
                domain.clone(),
                r.to_string(),
                labels.get(r).map(|l| l.to_string()).unwrap_or_default(),
            ];
            rec.extend(f.row(r).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<features>", e))
}

pub fn export_features(model: &ModelBundle, data: &DomainDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(&eval_features(model, data)?, std::io::BufWriter::new(file))
}

/// Reads a file written by [`write_features`]. Rows keep file order.
pub fn read_features(path: &Path) -> Result<BTreeMap<String, (Tensor, Vec<usize>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: BTreeMap<String, (Vec<f64>, usize, Vec<usize>)> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() < 4 {
            return Err(bad(format!("expected at least 4 fields, got {}", rec.len())));
        }
        let entry = rows.entry(rec[0].to_string()).or_default();
        entry.1 = rec.len() - 3;
        if !rec[2].is_empty() {
            entry.2.push(rec[2].parse().map_err(|_| bad(format!("invalid label `{}`", &rec[2])))?);
        }
        for f in rec.iter().skip(3) {
            entry.0.push(f.parse().map_err(|_| bad(format!("invalid number `{f}`")))?);
        }
    }
    rows.into_iter()
        .map(|(d, (x, dim, labels))| Ok((d, (Tensor::new(x.len() / dim, dim, x)?, labels))))
        .collect()
}

/// Row-aligned copies of two feature blocks under `pairing`.
pub fn paired_features(
    a: &(Tensor, Vec<usize>),
    b: &(Tensor, Vec<usize>),
    pairing: CkaPairing,
) -> Result<(Tensor, Tensor)> {
    match pairing {
        CkaPairing::Paired => {
            let n = a.0.rows().min(b.0.rows());
            let idx: Vec<usize> = (0..n).collect();
            Ok((a.0.select_rows(&idx), b.0.select_rows(&idx)))
        }
        CkaPairing::Stratified => {
            let (ia, ib) = stratified_pairs(&a.1, &b.1);
            if ia.is_empty() {
                return Err(Error::Data("no class-matched rows to pair".into()));
            }
            Ok((a.0.select_rows(&ia), b.0.select_rows(&ib)))
        }
    }
}

/// `CKA(source, t)` for every target.
pub fn cka_by_target(
    features: &BTreeMap<String, (Tensor, Vec<usize>)>,
    source: &str,
    pairing: CkaPairing,
) -> Result<BTreeMap<String, f64>> {
    let src = features
        .get(source)
        .ok_or_else(|| Error::Input(format!("no features for source `{source}`")))?;
    features
        .iter()
        .filter(|(d, _)| d.as_str() != source)
        .map(|(d, f)| {
            let (x, y) = paired_features(src, f, pairing)?;
            Ok((d.clone(), linear_cka(&x, &y)?))
        })
        .collect()
}

/// CSV `domain,cka,accuracy`, one row per target.
pub fn write_cka_report<W: Write>(cka: &BTreeMap<String, f64>, accuracy: &BTreeMap<String, f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["domain", "cka", "accuracy"])?;
    for (d, c) in cka {
        let acc = accuracy
            .get(d)
            .ok_or_else(|| Error::Data(format!("no accuracy for `{d}`")))?;
        w.write_record([d.as_str(), &c.to_string(), &acc.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<cka report>", e))
}

/// One measured grid cell for [`write_cost_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct CostCell {
    pub method: String,
    pub source_fraction: u32,
    pub k: usize,
    pub n_labeled_source: usize,
    pub num_targets: usize,
    /// `None` when the cell has no successful runs.
    pub mean_target_accuracy: Option<f64>,
}

/// CSV `method,source_fraction,k,c_t_over_s,cost_cents,accuracy`, one row per
/// cell and cost ratio. Missing accuracies are left empty.
pub fn write_cost_report<W: Write>(cells: &[CostCell], c_s: f64, ratios: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "source_fraction", "k", "c_t_over_s", "cost_cents", "accuracy"])?;
    for cell in cells {
        for &r in ratios {
            let cost = annotation_cost(&CostParams {
                c_s,
                n_labeled_source: cell.n_labeled_source,
                c_t_over_s: r,
                k: cell.k,
                num_targets: cell.num_targets,
            })?;
            w.write_record([
                cell.method.clone(),
                cell.source_fraction.to_string(),
                cell.k.to_string(),
                r.to_string(),
                cost.to_string(),
                cell.mean_target_accuracy.map(|a| format!("{a:.2}")).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<cost report>", e))
}
