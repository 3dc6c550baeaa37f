//! Runs the (source fraction × k × seed × variant × ρ) grid and writes every
//! report under one output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.json
//! runs.csv                              one line per run, with status
//! runs/S{S}_k{k}/{variant}/[rho{ρ}/]seed{n}/
//!     report.jsonl eval.csv cka.csv model.ckpt
//! aggregate/S{S}_k{k}/eval.csv          seed-averaged, best ρ per variant
//! summary.csv                           mean relative gain, rows = variants
//! summary_best_seed.csv
//! summary_per_seed.csv
//! summary_detail.csv
//! cost.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adaptation::dataset::source_fraction_count;
use crate::adaptation::{compute_prior, few_shot_augment, train, DomainDataset, TrainReport, TrainVariant, VariantKind};
use crate::analysis::EvalTable;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::export::{cka_by_target, eval_features, write_cka_report, write_cost_report, CostCell};
use crate::model::ModelBundle;
use crate::rng::Rng;

pub const BASELINE: &str = "baseline";

const STREAM_SOURCE_FRACTION: u64 = 100;
const STREAM_FEW_SHOT: u64 = 101;

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub accuracy: BTreeMap<String, f64>,
    pub cka: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub variant: String,
    pub rho: f64,
    pub source_fraction: u32,
    pub k: usize,
    pub seed: u64,
    /// Relative to the output directory.
    pub dir: PathBuf,
    pub result: std::result::Result<RunMetrics, String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    /// Seed-averaged tables per `(source_fraction, k)` cell.
    pub tables: BTreeMap<(u32, usize), EvalTable>,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.result.is_err())
    }
}

fn cell_name(s: u32, k: usize) -> String {
    format!("S{s}_k{k}")
}

fn run_dir(variant: &TrainVariant, multi_rho: bool, s: u32, k: usize, seed: u64) -> PathBuf {
    let mut p = PathBuf::from("runs").join(cell_name(s, k)).join(variant.name().replace(':', "-"));
    let sam = !matches!(variant.kind, VariantKind::Baseline | VariantKind::DittoMinusSam);
    if multi_rho && sam {
        p = p.join(format!("rho{}", variant.sam.rho));
    }
    p.join(format!("seed{seed}"))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    data: &DomainDataset,
    model: &ModelBundle,
    report: &TrainReport,
    baseline: &BTreeMap<String, f64>,
) -> Result<RunMetrics> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.save_jsonl(&dir.join("report.jsonl"))?;

    let mut table = EvalTable::with_method(data.source_id.clone(), BASELINE, baseline.clone());
    for (d, a) in &report.final_accuracy {
        table.insert(&report.variant, d, *a);
    }
    table.write_csv(create_file(&dir.join("eval.csv"))?, Some(BASELINE))?;

    let cka = cka_by_target(&eval_features(model, data)?, &data.source_id, config.cka_pairing)?;
    write_cka_report(&cka, &report.final_accuracy, create_file(&dir.join("cka.csv"))?)?;
    model.save(&dir.join("model.ckpt"))?;
    Ok(RunMetrics {
        accuracy: report.final_accuracy.clone(),
        cka,
    })
}

/// Baseline and every grid variant for one seed of one cell.
fn run_seed(config: &ExperimentConfig, data: &DomainDataset, s: u32, k: usize, seed: u64) -> Vec<RunOutcome> {
    let grid = config.variant_grid();
    let multi_rho = config.rho_grid.len() > 1;
    let baseline_variant = TrainVariant::baseline();
    let outcome = |v: &TrainVariant, result| RunOutcome {
        variant: v.name(),
        rho: v.sam.rho,
        source_fraction: s,
        k,
        seed,
        dir: run_dir(v, multi_rho, s, k, seed),
        result,
    };
    let fail_all = |msg: String| {
        std::iter::once(&baseline_variant)
            .chain(&grid)
            .map(|v| outcome(v, Err(msg.clone())))
            .collect::<Vec<_>>()
    };

    let root = Rng::new(seed);
    let cell_data = match data
        .with_source_fraction(s, &mut root.fork(STREAM_SOURCE_FRACTION))
        .and_then(|d| few_shot_augment(&d, k, &mut root.fork(STREAM_FEW_SHOT)))
    {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let mut tc = config.train_config();

    let base_dir = config.out_dir.join(run_dir(&baseline_variant, multi_rho, s, k, seed));
    let base = train(&tc, &cell_data, &baseline_variant, seed).and_then(|(m, r)| {
        let metrics = write_run(&base_dir, config, &cell_data, &m, &r, &r.final_accuracy)?;
        Ok((r.final_accuracy, metrics))
    });
    let (base_acc, base_metrics) = match base {
        Ok(b) => b,
        Err(e) => {
            log::warn!("baseline S={s} k={k} seed={seed} failed: {e}");
            let mut all = fail_all(format!("baseline failed: {e}"));
            all[0].result = Err(e.to_string());
            return all;
        }
    };
    let mut out = vec![outcome(&baseline_variant, Ok(base_metrics))];
    tc.prior = compute_prior(&base_acc, &cell_data.source_id).ok();

    for v in &grid {
        let mut o = outcome(v, Err(String::new()));
        let result = train(&tc, &cell_data, v, seed)
            .and_then(|(m, r)| write_run(&config.out_dir.join(&o.dir), config, &cell_data, &m, &r, &base_acc));
        if let Err(e) = &result {
            log::warn!("{} S={s} k={k} seed={seed} failed: {e}", v.name());
        } else {
            log::info!("{} S={s} k={k} seed={seed} done", v.name());
        }
        o.result = result.map_err(|e| e.to_string());
        out.push(o);
    }
    out
}

fn mean_accuracy(runs: &[&RunOutcome]) -> Option<BTreeMap<String, f64>> {
    let ok: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    if ok.is_empty() {
        return None;
    }
    let mut sum: BTreeMap<String, f64> = BTreeMap::new();
    for m in &ok {
        for (d, a) in &m.accuracy {
            *sum.entry(d.clone()).or_default() += a;
        }
    }
    Some(sum.into_iter().map(|(d, a)| (d, a / ok.len() as f64)).collect())
}

fn mean_target(acc: &BTreeMap<String, f64>, source: &str) -> f64 {
    let t: Vec<f64> = acc.iter().filter(|(d, _)| d.as_str() != source).map(|(_, a)| *a).collect();
    t.iter().sum::<f64>() / t.len().max(1) as f64
}

fn fmt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// Trains and evaluates the whole grid, then writes the summaries.
pub fn run_experiment(config: &ExperimentConfig, data: &DomainDataset) -> Result<ExperimentOutcome> {
    config.validate()?;
    data.validate()?;
    let out_dir = config.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    fs::write(out_dir.join("config.json"), config.to_json()? + "\n").map_err(|e| Error::io(&out_dir, e))?;

    let cells: Vec<(u32, usize)> = config
        .source_fractions
        .iter()
        .flat_map(|&s| config.few_shot_k.iter().map(move |&k| (s, k)))
        .collect();

    let mut runs = Vec::new();
    for &(s, k) in &cells {
        let per_seed: Vec<Vec<RunOutcome>> = if config.parallel && config.seeds.len() > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = config
                    .seeds
                    .iter()
                    .map(|&seed| scope.spawn(move || run_seed(config, data, s, k, seed)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
            })
        } else {
            config.seeds.iter().map(|&seed| run_seed(config, data, s, k, seed)).collect()
        };
        runs.extend(per_seed.into_iter().flatten());
    }

    write_runs_csv(&out_dir.join("runs.csv"), &runs)?;
    let tables = write_summaries(config, data, &cells, &runs)?;
    Ok(ExperimentOutcome { out_dir, runs, tables })
}

fn write_runs_csv(path: &Path, runs: &[RunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["variant", "rho", "source_fraction", "k", "seed", "status", "dir"])?;
    for r in runs {
        let status = match &r.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        };
        w.write_record([
            r.variant.clone(),
            r.rho.to_string(),
            r.source_fraction.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            status,
            r.dir.to_string_lossy().replace('\\', "/"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summaries(
    config: &ExperimentConfig,
    data: &DomainDataset,
    cells: &[(u32, usize)],
    runs: &[RunOutcome],
) -> Result<BTreeMap<(u32, usize), EvalTable>> {
    let out = &config.out_dir;
    let source = data.source_id.as_str();
    let grid = config.variant_grid();
    let mut names: Vec<String> = Vec::new();
    for v in &grid {
        if !names.contains(&v.name()) {
            names.push(v.name());
        }
    }
    let cell_cols: Vec<String> = cells.iter().map(|&(s, k)| cell_name(s, k)).collect();
    let select = |name: &str, rho: Option<f64>, s: u32, k: usize| -> Vec<&RunOutcome> {
        runs.iter()
            .filter(|r| r.variant == name && r.source_fraction == s && r.k == k && rho.is_none_or(|p| r.rho == p))
            .collect()
    };

    let mut tables = BTreeMap::new();
    let mut summary: BTreeMap<&str, Vec<Option<f64>>> = names.iter().map(|n| (n.as_str(), vec![])).collect();
    let mut best_seed: BTreeMap<&str, Vec<Option<f64>>> = summary.clone();
    let mut detail = csv::Writer::from_writer(create_file(&out.join("summary_detail.csv"))?);
    detail.write_record([
        "variant",
        "source_fraction",
        "k",
        "rho",
        "seeds_ok",
        "mean_target_accuracy",
        "mean_relative_gain",
        "selected",
    ])?;
    let mut per_seed_rows: Vec<(String, f64, u64, usize, Option<f64>)> = Vec::new();
    let mut cost_cells = Vec::new();

    for (ci, &(s, k)) in cells.iter().enumerate() {
        let base_runs = select(BASELINE, None, s, k);
        let base_by_seed: BTreeMap<u64, &RunMetrics> = base_runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|m| (r.seed, m)))
            .collect();
        let n_source = source_fraction_count(data.source_labeled.len(), s);
        let mut table = EvalTable::new(source);
        let base_mean = mean_accuracy(&base_runs);
        if let Some(acc) = &base_mean {
            for (d, a) in acc {
                table.insert(BASELINE, d, *a);
            }
        }
        cost_cells.push(CostCell {
            method: BASELINE.into(),
            source_fraction: s,
            k,
            n_labeled_source: n_source,
            num_targets: data.targets.len(),
            mean_target_accuracy: base_mean.as_ref().map(|a| mean_target(a, source)),
        });

        for name in &names {
            let rhos: Vec<f64> = grid.iter().filter(|v| &v.name() == name).map(|v| v.sam.rho).collect();
            let mut best: Option<(f64, BTreeMap<String, f64>)> = None;
            let mut rows = Vec::new();
            for &rho in &rhos {
                let rs = select(name, Some(rho), s, k);
                let ok = rs.iter().filter(|r| r.result.is_ok()).count();
                let mean = mean_accuracy(&rs);
                let mt = mean.as_ref().map(|a| mean_target(a, source));
                if let (Some(m), Some(acc)) = (mt, &mean) {
                    if best.as_ref().is_none_or(|(_, b)| m > mean_target(b, source)) {
                        best = Some((rho, acc.clone()));
                    }
                }
                rows.push((rho, ok, mt, mean));
                for r in &rs {
                    let gain = match (&r.result, base_by_seed.get(&r.seed)) {
                        (Ok(m), Some(b)) => {
                            let mut t = EvalTable::with_method(source, BASELINE, b.accuracy.clone());
                            for (d, a) in &m.accuracy {
                                t.insert(name, d, *a);
                            }
                            Some(t.mean_relative_gain(BASELINE, name)?)
                        }
                        _ => None,
                    };
                    per_seed_rows.push((name.clone(), rho, r.seed, ci, gain));
                }
            }
            let mut cell_gain = None;
            if let (Some((_, acc)), true) = (&best, base_mean.is_some()) {
                for (d, a) in acc {
                    table.insert(name, d, *a);
                }
                cell_gain = Some(table.mean_relative_gain(BASELINE, name)?);
            }
            for (rho, ok, mt, mean) in rows {
                let selected = best.as_ref().is_some_and(|(b, _)| *b == rho);
                let gain = match (&mean, &base_mean) {
                    (Some(acc), Some(base)) => {
                        let mut t = EvalTable::with_method(source, BASELINE, base.clone());
                        for (d, a) in acc {
                            t.insert(name, d, *a);
                        }
                        Some(t.mean_relative_gain(BASELINE, name)?)
                    }
                    _ => None,
                };
                detail.write_record([
                    name.clone(),
                    s.to_string(),
                    k.to_string(),
                    rho.to_string(),
                    ok.to_string(),
                    fmt2(mt),
                    fmt2(gain),
                    selected.to_string(),
                ])?;
            }
            summary.get_mut(name.as_str()).expect("named").push(cell_gain);
            cost_cells.push(CostCell {
                method: name.clone(),
                source_fraction: s,
                k,
                n_labeled_source: n_source,
                num_targets: data.targets.len(),
                mean_target_accuracy: best.as_ref().map(|(_, a)| mean_target(a, source)),
            });

            // Best single seed over every ρ, by mean target accuracy.
            let seed_best = select(name, None, s, k)
                .into_iter()
                .filter_map(|r| r.result.as_ref().ok().map(|m| (r, m)))
                .filter(|(r, _)| base_by_seed.contains_key(&r.seed))
                .fold(None::<(&RunOutcome, &RunMetrics)>, |acc, cur| match acc {
                    Some(a) if mean_target(&a.1.accuracy, source) >= mean_target(&cur.1.accuracy, source) => Some(a),
                    _ => Some(cur),
                });
            let gain = match seed_best {
                Some((r, m)) => {
                    let mut t = EvalTable::with_method(source, BASELINE, base_by_seed[&r.seed].accuracy.clone());
                    for (d, a) in &m.accuracy {
                        t.insert(name, d, *a);
                    }
                    Some(t.mean_relative_gain(BASELINE, name)?)
                }
                None => None,
            };
            best_seed.get_mut(name.as_str()).expect("named").push(gain);
        }
        if base_mean.is_some() {
            let path = out.join("aggregate").join(cell_name(s, k)).join("eval.csv");
            table.write_csv(create_file(&path)?, Some(BASELINE))?;
        }
        tables.insert((s, k), table);
    }
    detail.flush().map_err(|e| Error::io(out, e))?;

    for (file, rows) in [("summary.csv", &summary), ("summary_best_seed.csv", &best_seed)] {
        let path = out.join(file);
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        let mut head = vec!["variant".to_string()];
        head.extend(cell_cols.iter().cloned());
        w.write_record(&head)?;
        for name in &names {
            let mut rec = vec![name.clone()];
            rec.extend(rows[name.as_str()].iter().map(|g| fmt2(*g)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let path = out.join("summary_per_seed.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    let mut head = vec!["variant".to_string(), "rho".into(), "seed".into()];
    head.extend(cell_cols.iter().cloned());
    w.write_record(&head)?;
    let mut keyed: BTreeMap<(usize, String, u64), Vec<Option<f64>>> = BTreeMap::new();
    for (name, rho, seed, ci, gain) in per_seed_rows {
        let order = names.iter().position(|n| *n == name).unwrap_or(usize::MAX);
        let row = keyed
            .entry((order, rho.to_string(), seed))
            .or_insert_with(|| vec![None; cells.len()]);
        row[ci] = gain;
    }
    for ((order, rho, seed), gains) in keyed {
        let mut rec = vec![names[order].clone(), rho, seed.to_string()];
        rec.extend(gains.iter().map(|g| fmt2(*g)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_cost_report(
        &cost_cells,
        config.cost.source_cents,
        &config.cost.target_cost_ratios,
        create_file(&out.join("cost.csv"))?,
    )?;
    Ok(tables)
}
