//! Dataset CSV files.
//!
//! Each file holds rows `domain,split,label,f0,...,f{d-1}`; `label` is empty
//! for unlabeled rows. [`write_dataset`] emits one file per domain and split,
//! named `<domain>_<split>.csv`, even when the split is empty.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adaptation::{DomainDataset, Split, TargetSplits};
use crate::error::{Error, Result};

pub const SPLIT_LABELED: &str = "labeled";
pub const SPLIT_UNLABELED: &str = "unlabeled";
pub const SPLIT_FEW_SHOT: &str = "fewshot";
pub const SPLIT_EVAL: &str = "eval";
const SPLITS: [&str; 4] = [SPLIT_LABELED, SPLIT_UNLABELED, SPLIT_FEW_SHOT, SPLIT_EVAL];

pub fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["domain".to_string(), "split".into(), "label".into()];
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

fn write_split(path: &Path, domain: &str, split: &str, s: &Split) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(s.dim()))?;
    let labels = s.labels();
    for i in 0..s.len() {
        let mut rec = vec![
            domain.to_string(),
            split.to_string(),
            labels.map(|l| l[i].to_string()).unwrap_or_default(),
        ];
        rec.extend(s.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every split of `data` under `dir` and returns the file paths.
pub fn write_dataset(data: &DomainDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    data.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut emit = |domain: &str, split: &str, s: &Split| -> Result<()> {
        let path = dir.join(format!("{domain}_{split}.csv"));
        write_split(&path, domain, split, s)?;
        files.push(path);
        Ok(())
    };
    let src = data.source_id.as_str();
    emit(src, SPLIT_LABELED, &data.source_labeled)?;
    emit(src, SPLIT_UNLABELED, &data.source_unlabeled)?;
    emit(src, SPLIT_EVAL, &data.source_eval)?;
    for (t, s) in &data.targets {
        emit(t, SPLIT_UNLABELED, &s.unlabeled)?;
        emit(t, SPLIT_FEW_SHOT, &s.few_shot)?;
        emit(t, SPLIT_EVAL, &s.eval)?;
    }
    Ok(files)
}

#[derive(Default)]
struct DomainSplits {
    splits: BTreeMap<&'static str, Split>,
}

fn split_name(s: &str) -> Option<&'static str> {
    SPLITS.into_iter().find(|&k| k == s)
}

/// `(domain, split)` encoded in a `<domain>_<split>.csv` file name.
fn name_parts(path: &Path) -> Option<(String, &'static str)> {
    let stem = path.file_stem()?.to_str()?;
    let (domain, split) = stem.rsplit_once('_')?;
    Some((domain.to_string(), split_name(split)?))
}

/// Reads dataset files. The source is the one domain with a `labeled` split.
/// Header-only files named `<domain>_<split>.csv` still declare their split.
pub fn load_dataset(paths: &[PathBuf]) -> Result<DomainDataset> {
    let mut domains: BTreeMap<String, DomainSplits> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let cols: Vec<&str> = head.split(',').collect();
        let file_dim = cols.len().saturating_sub(3);
        if cols.len() < 4 || cols != header(file_dim) {
            return Err(parse_err(1, format!("expected header `domain,split,label,f0,...`, got `{head}`")));
        }
        match dim {
            None => dim = Some(file_dim),
            Some(d) if d != file_dim => {
                return Err(Error::Data(format!(
                    "{} has {file_dim} features, earlier files have {d}",
                    path.display()
                )))
            }
            _ => {}
        }
        let declare = |domains: &mut BTreeMap<String, DomainSplits>, domain: &str, split: &'static str| {
            domains
                .entry(domain.to_string())
                .or_default()
                .splits
                .entry(split)
                .or_insert_with(|| {
                    if split == SPLIT_UNLABELED {
                        Split::unlabeled(file_dim)
                    } else {
                        Split::labeled(file_dim)
                    }
                });
        };
        if let Some((domain, split)) = name_parts(path) {
            declare(&mut domains, &domain, split);
        }
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(parse_err(lineno, format!("expected {} fields, got {}", cols.len(), fields.len())));
            }
            let domain = fields[0];
            if domain.is_empty() {
                return Err(parse_err(lineno, "empty domain".into()));
            }
            let split = split_name(fields[1]).ok_or_else(|| parse_err(lineno, format!("unknown split `{}`", fields[1])))?;
            let label = match (split, fields[2]) {
                (SPLIT_UNLABELED, "") => None,
                (SPLIT_UNLABELED, l) => return Err(parse_err(lineno, format!("unlabeled row carries label `{l}`"))),
                (_, "") => return Err(parse_err(lineno, format!("missing label in {split} row"))),
                (_, l) => Some(
                    l.parse::<usize>()
                        .map_err(|_| parse_err(lineno, format!("invalid label `{l}`")))?,
                ),
            };
            let row = fields[3..]
                .iter()
                .map(|f| {
                    let v: f64 = f.parse().map_err(|_| parse_err(lineno, format!("invalid number `{f}`")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(lineno, format!("non-finite value `{f}`")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            declare(&mut domains, domain, split);
            domains
                .get_mut(domain)
                .and_then(|d| d.splits.get_mut(split))
                .expect("declared")
                .push(&row, label)
                .map_err(|e| parse_err(lineno, e.to_string()))?;
        }
    }
    assemble(domains, dim.unwrap_or(0))
}

/// Loads every `*.csv` in `dir`, in sorted order.
pub fn load_dataset_dir(dir: &Path) -> Result<DomainDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no CSV files in {}", dir.display())));
    }
    load_dataset(&paths)
}

fn assemble(domains: BTreeMap<String, DomainSplits>, dim: usize) -> Result<DomainDataset> {
    let sources: Vec<&String> = domains
        .iter()
        .filter(|(_, d)| d.splits.contains_key(SPLIT_LABELED))
        .map(|(id, _)| id)
        .collect();
    let source_id = match sources.as_slice() {
        [one] => (*one).clone(),
        [] => return Err(Error::Data("no domain has a labeled split".into())),
        many => return Err(Error::Data(format!("several domains have labeled splits: {many:?}"))),
    };
    let mut source = None;
    let mut targets = BTreeMap::new();
    for (id, mut d) in domains {
        let mut take = |name: &str, labeled: bool| {
            d.splits
                .remove(name)
                .unwrap_or_else(|| if labeled { Split::labeled(dim) } else { Split::unlabeled(dim) })
        };
        if id == source_id {
            let labeled = take(SPLIT_LABELED, true);
            let unlabeled = take(SPLIT_UNLABELED, false);
            let eval = take(SPLIT_EVAL, true);
            if !take(SPLIT_FEW_SHOT, true).is_empty() {
                return Err(Error::Data(format!("source `{id}` has a fewshot split")));
            }
            source = Some((labeled, unlabeled, eval));
        } else {
            let splits = TargetSplits {
                unlabeled: take(SPLIT_UNLABELED, false),
                few_shot: take(SPLIT_FEW_SHOT, true),
                eval: take(SPLIT_EVAL, true),
            };
            if splits.unlabeled.is_empty() {
                return Err(Error::Data(format!("target `{id}` has an empty unlabeled split")));
            }
            targets.insert(id, splits);
        }
    }
    let (source_labeled, source_unlabeled, source_eval) = source.expect("source found above");
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
