//! `ditto`: generate synthetic domains, train variants, evaluate and analyze.
//!
//! Settings resolve in three layers: built-in defaults, then `--config FILE`
//! (JSON, any subset of fields), then individual flags.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ditto_core::adaptation::{compute_prior, few_shot_augment, train, DomainDataset, TrainVariant, VariantKind};
use ditto_core::analysis::{domain_accuracies, gap_table, pearson, spearman, CostParams, EvalTable};
use ditto_core::harness::{
    cka_by_target, eval_features, generate, generate_synthetic, load_dataset_dir, run_experiment, write_cka_report,
    write_dataset, write_features, ExperimentConfig, BASELINE,
};
use ditto_core::{annotation_cost, ModelBundle, Rng};

#[derive(Parser)]
#[command(name = "ditto", version, about = "Multi-target adversarial domain adaptation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; unspecified fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the seed list (or the data seed for `generate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Variant to train besides the baseline, e.g. `ditto` or `ditto-single:rot45`.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Output directory (a file for `eval`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Percent of labeled source rows to keep.
    #[arg(long, global = true)]
    source_fraction: Option<u32>,
    /// Labeled rows per target added to training.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV files.
    Generate,
    /// Train one variant (and the baseline it is measured against) on one seed.
    Train {
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-domain accuracy of a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model to report relative gains against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// CKA between source and target features, its correlation with accuracy,
    /// and a feature dump.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Annotation cost in cents.
    Cost {
        #[arg(long)]
        n_source: usize,
        #[arg(long, default_value_t = 0)]
        targets: usize,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long)]
        cents: Option<f64>,
    },
    /// Full grid of variants, seeds, source fractions and k.
    RunAll {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(v) = &self.variant {
            let kind: VariantKind = v.parse()?;
            c.variants = vec![VariantKind::Baseline, kind];
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(s) = self.source_fraction {
            c.source_fractions = vec![s];
        }
        if let Some(k) = self.k {
            c.few_shot_k = vec![k];
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_or_generate(data: Option<&Path>, config: &ExperimentConfig) -> Result<DomainDataset> {
    match data {
        Some(dir) => Ok(load_dataset_dir(dir)?),
        None => Ok(generate(&config.synthetic, config.data_seed)?),
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn print_accuracy(label: &str, acc: &BTreeMap<String, f64>) {
    let cells: Vec<String> = acc.iter().map(|(d, a)| format!("{d}={a:.2}")).collect();
    println!("{label:>16}: {}", cells.join(" "));
}

fn cmd_generate(common: &Common) -> Result<()> {
    let mut config = common.resolve()?;
    if let Some(s) = common.seed {
        config.data_seed = s;
    }
    let dir = common.out.clone().unwrap_or_else(|| config.out_dir.join("data"));
    let files = generate_synthetic(&config.synthetic, config.data_seed, &dir)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_train(common: &Common, data: Option<&Path>) -> Result<()> {
    let config = common.resolve()?;
    let seed = config.seeds[0];
    let kind = config.variants.last().cloned().unwrap_or(VariantKind::Baseline);
    let data = load_or_generate(data, &config)?;
    let root = Rng::new(seed);
    let data = data.with_source_fraction(config.source_fractions[0], &mut root.fork(100))?;
    let data = few_shot_augment(&data, config.few_shot_k[0], &mut root.fork(101))?;
    let out = &config.out_dir;
    fs::create_dir_all(out)?;

    let mut tc = config.train_config();
    let (base_model, base_report) = train(&tc, &data, &TrainVariant::baseline(), seed)?;
    print_accuracy(BASELINE, &base_report.final_accuracy);
    let (model, report) = if kind == VariantKind::Baseline {
        (base_model, base_report.clone())
    } else {
        tc.prior = Some(compute_prior(&base_report.final_accuracy, &data.source_id)?);
        let rho = config.rho_grid[0];
        let (m, r) = train(&tc, &data, &TrainVariant::for_kind(kind, config.lambda, rho), seed)?;
        print_accuracy(&r.variant, &r.final_accuracy);
        base_model.save(&out.join("baseline.ckpt"))?;
        (m, r)
    };
    model.save(&out.join("model.ckpt"))?;
    report.save_jsonl(&out.join("report.jsonl"))?;
    let mut table = EvalTable::with_method(data.source_id.clone(), BASELINE, base_report.final_accuracy.clone());
    for (d, a) in &report.final_accuracy {
        table.insert(&report.variant, d, *a);
    }
    table.write_csv(create(&out.join("eval.csv"))?, Some(BASELINE))?;
    let cka = cka_by_target(&eval_features(&model, &data)?, &data.source_id, config.cka_pairing)?;
    write_cka_report(&cka, &report.final_accuracy, create(&out.join("cka.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(common: &Common, model: &Path, data: &Path, baseline: Option<&Path>) -> Result<()> {
    let data = load_dataset_dir(data)?;
    let model = ModelBundle::load(model)?;
    let name = common.variant.clone().unwrap_or_else(|| "model".into());
    let mut table = EvalTable::with_method(data.source_id.clone(), &name, domain_accuracies(&model, &data)?);
    if let Some(b) = baseline {
        for (d, a) in domain_accuracies(&ModelBundle::load(b)?, &data)? {
            table.insert(BASELINE, &d, a);
        }
    }
    let gains_against = baseline.map(|_| BASELINE);
    match &common.out {
        Some(p) => table.write_csv(create(p)?, gains_against)?,
        None => table.write_csv(std::io::stdout().lock(), gains_against)?,
    }
    eprintln!("mean source-target gap: {:.2}", gap_table(&table, &name)?);
    Ok(())
}

fn cmd_analyze(common: &Common, model: &Path, data: &Path) -> Result<()> {
    let config = common.resolve()?;
    let data = load_dataset_dir(data)?;
    let model = ModelBundle::load(model)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let features = eval_features(&model, &data)?;
    let acc = domain_accuracies(&model, &data)?;
    let cka = cka_by_target(&features, &data.source_id, config.cka_pairing)?;
    write_cka_report(&cka, &acc, create(&out.join("cka.csv"))?)?;
    write_features(&features, std::io::BufWriter::new(create(&out.join("features.csv"))?))?;
    for (d, c) in &cka {
        println!("{d:>12}  cka {c:.4}  accuracy {:.2}", acc[d]);
    }
    let xs: Vec<f64> = cka.values().copied().collect();
    let ys: Vec<f64> = cka.keys().map(|d| acc[d]).collect();
    match (pearson(&xs, &ys), spearman(&xs, &ys)) {
        (Ok(p), Ok(r)) => println!("pearson {p:.4}  spearman {r:.4}"),
        (Err(e), _) | (_, Err(e)) => println!("correlation unavailable: {e}"),
    }
    Ok(())
}

fn cmd_cost(common: &Common, n_source: usize, targets: usize, ratio: f64, cents: Option<f64>) -> Result<()> {
    let mut p = CostParams::new(n_source, ratio, common.k.unwrap_or(0), targets);
    if let Some(c) = cents {
        p.c_s = c;
    }
    let cost = annotation_cost(&p)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{cost} cents (${:.2})", cost / 100.0)?;
    Ok(())
}

fn cmd_run_all(common: &Common, data: Option<&Path>) -> Result<()> {
    let config = common.resolve()?;
    let dataset = load_or_generate(data, &config)?;
    if data.is_none() {
        write_dataset(&dataset, &config.out_dir.join("data"))?;
    }
    let outcome = run_experiment(&config, &dataset)?;
    let failed = outcome.failures().count();
    println!(
        "{} runs, {} failed; summary in {}",
        outcome.runs.len(),
        failed,
        outcome.out_dir.join("summary.csv").display()
    );
    for r in outcome.failures() {
        eprintln!("  {} seed {}: {}", r.variant, r.seed, r.result.as_ref().unwrap_err());
    }
    if failed == outcome.runs.len() {
        bail!("every run failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = cli.common;
    match cli.command {
        Command::Generate => cmd_generate(&common),
        Command::Train { data } => cmd_train(&common, data.as_deref()),
        Command::Eval { model, data, baseline } => cmd_eval(&common, &model, &data, baseline.as_deref()),
        Command::Analyze { model, data } => cmd_analyze(&common, &model, &data),
        Command::Cost {
            n_source,
            targets,
            ratio,
            cents,
        } => cmd_cost(&common, n_source, targets, ratio, cents),
        Command::RunAll { data } => cmd_run_all(&common, data.as_deref()),
    }
}
