//! Training loops for every variant.
//!
//! Each optimization step is one of:
//!
//! * [`Trainer::baseline_step`]: cross-entropy on a labeled source batch, AdamW
//!   on encoder and classifier (through SAM for `ditto-minus-la`);
//! * [`Trainer::ditto_step`]: the SAM task phase, then one adversarial pass
//!   `encoder → grad_reverse(λ) → D_t → BCE` for a target `t` drawn from the
//!   prior. The encoder update uses the sum of the SAM gradient and the
//!   reversed adversarial gradient; only `D_t` is updated among the
//!   discriminators.
//!
//! Randomness is split into independent streams (init, shuffling, adversarial
//! sampling) so that variants which skip the adversarial phase see exactly
//! the same initialization and batch order as those that do not.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adaptation::dataset::DomainDataset;
use crate::adaptation::prior::LanguagePrior;
use crate::adaptation::variant::{TrainVariant, VariantKind};
use crate::analysis::domain_accuracies;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{EncoderSpec, ModelBundle, ModelSpec, DEFAULT_DISC_HIDDEN};
use crate::optim::{adamw_step, sam_gradients, AdamWConfig};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_ADVERSARIAL: u64 = 2;

/// Where the source half of each discriminator batch comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvSource {
    /// Reuse the inputs of the current labeled batch.
    #[default]
    LabeledBatch,
    /// Draw from the separate unlabeled source pool.
    UnlabeledPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderSpec,
    pub num_classes: usize,
    pub disc_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for encoder and classifier.
    pub task_lr: f64,
    pub disc_lr: f64,
    pub weight_decay: f64,
    pub adv_source: AdvSource,
    /// Discriminator updates per encoder update.
    pub disc_steps: usize,
    /// Required by `ditto` and `ditto-minus-sam`; other variants ignore it.
    pub prior: Option<LanguagePrior>,
    /// Evaluate every domain after each epoch (otherwise only at the end).
    pub eval_each_epoch: bool,
}

impl TrainConfig {
    pub fn new(encoder: EncoderSpec, num_classes: usize) -> Self {
        TrainConfig {
            encoder,
            num_classes,
            disc_hidden: DEFAULT_DISC_HIDDEN,
            epochs: 10,
            batch_size: 32,
            task_lr: 2e-3,
            disc_lr: 1e-2,
            weight_decay: 0.0,
            adv_source: AdvSource::LabeledBatch,
            disc_steps: 1,
            prior: None,
            eval_each_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.disc_steps == 0 {
            return Err(Error::Config("disc_steps must be at least 1".into()));
        }
        AdamWConfig::new(self.task_lr, 1).with_weight_decay(self.weight_decay).validate()?;
        AdamWConfig::new(self.disc_lr, 1).with_weight_decay(self.weight_decay).validate()?;
        Ok(())
    }
}

/// A labeled minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    /// Mean `−λ·L_L` seen by the encoder; `None` without adaptation.
    pub adv_loss: Option<f64>,
    /// Mean discriminator BCE `L_L`; `None` without adaptation.
    pub disc_loss: Option<f64>,
    pub per_domain_acc: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Adversarial steps per sampled target.
    pub target_counts: BTreeMap<String, usize>,
    pub adversarial_steps: usize,
    pub final_accuracy: BTreeMap<String, f64>,
    /// Kept out of serialized output so that reports stay reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: bool,
    variant: &'a str,
    seed: u64,
    target_counts: &'a BTreeMap<String, usize>,
    adversarial_steps: usize,
    final_accuracy: &'a BTreeMap<String, f64>,
}

impl TrainReport {
    /// One JSON object per epoch followed by a summary object.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<report>", e);
        for rec in &self.epochs {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n").map_err(io)?;
        }
        serde_json::to_writer(
            &mut out,
            &SummaryLine {
                summary: true,
                variant: &self.variant,
                seed: self.seed,
                target_counts: &self.target_counts,
                adversarial_steps: self.adversarial_steps,
                final_accuracy: &self.final_accuracy,
            },
        )?;
        out.write_all(b"\n").map_err(io)?;
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Losses from one [`Trainer::ditto_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialStep {
    pub task_loss: f64,
    /// Discriminator BCE on the mixed source/target batch.
    pub disc_loss: f64,
    pub target: String,
}

/// Owns a model, its optimizer state and the adversarial RNG for one run.
pub struct Trainer<'a> {
    model: ModelBundle,
    data: &'a DomainDataset,
    variant: TrainVariant,
    prior: Option<LanguagePrior>,
    task_opt: AdamWConfig,
    disc_opt: AdamWConfig,
    task_ids: Vec<ParamId>,
    adv_source: AdvSource,
    disc_steps: usize,
    adv_rng: Rng,
    step: usize,
    target_counts: BTreeMap<String, usize>,
}

impl<'a> Trainer<'a> {
    /// `total_steps` sets the length of the linear learning-rate decay.
    pub fn new(
        model: ModelBundle,
        data: &'a DomainDataset,
        variant: TrainVariant,
        config: &TrainConfig,
        total_steps: usize,
        adv_rng: Rng,
    ) -> Result<Self> {
        variant.validate()?;
        let prior = resolve_prior(&variant, config, data)?;
        if let Some(p) = &prior {
            for t in p.targets() {
                model.discriminator_param_ids(t)?;
            }
        }
        let total_steps = total_steps.max(1);
        let task_opt = AdamWConfig::new(config.task_lr, total_steps).with_weight_decay(config.weight_decay);
        let disc_opt = AdamWConfig::new(config.disc_lr, total_steps).with_weight_decay(config.weight_decay);
        task_opt.validate()?;
        disc_opt.validate()?;
        let task_ids = model.task_param_ids();
        Ok(Trainer {
            model,
            data,
            variant,
            prior,
            task_opt,
            disc_opt,
            task_ids,
            adv_source: config.adv_source,
            disc_steps: config.disc_steps,
            adv_rng,
            step: 0,
            target_counts: BTreeMap::new(),
        })
    }

    pub fn model(&self) -> &ModelBundle {
        &self.model
    }

    pub fn into_model(self) -> ModelBundle {
        self.model
    }

    pub fn prior(&self) -> Option<&LanguagePrior> {
        self.prior.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn target_counts(&self) -> &BTreeMap<String, usize> {
        &self.target_counts
    }

    /// Dispatches on the variant.
    pub fn step(&mut self, batch: &Batch) -> Result<(f64, Option<AdversarialStep>)> {
        if self.variant.kind.is_adversarial() {
            let s = self.ditto_step(batch)?;
            Ok((s.task_loss, Some(s)))
        } else {
            Ok((self.baseline_step(batch)?, None))
        }
    }

    /// Source cross-entropy step. Uses SAM only for `ditto-minus-la`.
    pub fn baseline_step(&mut self, batch: &Batch) -> Result<f64> {
        if batch.y.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut params = self.model.take_params();
        let result = (|| {
            let loss = if self.variant.kind == VariantKind::DittoMinusLa {
                sam_gradients(&mut params, &self.task_ids, self.variant.sam.rho, |s| {
                    task_loss(&self.model, s, batch)
                })?
            } else {
                params.zero_grad_of(&self.task_ids);
                task_loss(&self.model, &mut params, batch)?
            };
            adamw_step(&mut params, &self.task_ids, &self.task_opt, self.step)?;
            Ok(loss)
        })();
        self.model.put_params(params);
        self.step += 1;
        result
    }

    /// Joint task + adversarial step for a target drawn from the prior.
    pub fn ditto_step(&mut self, batch: &Batch) -> Result<AdversarialStep> {
        if batch.y.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let prior = self
            .prior
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no target prior", self.variant.name())))?;
        let mut params = self.model.take_params();
        let result = (|| {
            // Task phase: gradients at w + ε̂ land in the encoder/classifier slots.
            let loss = sam_gradients(&mut params, &self.task_ids, self.variant.sam.rho, |s| {
                task_loss(&self.model, s, batch)
            })?;

            let target = prior.sample(&mut self.adv_rng).to_string();
            let pool = &self.data.targets[&target].unlabeled;
            if pool.is_empty() {
                return Err(Error::Data(format!("target `{target}` has no unlabeled rows")));
            }
            let n = batch.y.len();
            let source_x = match self.adv_source {
                AdvSource::LabeledBatch => batch.x.clone(),
                AdvSource::UnlabeledPool => {
                    let src = &self.data.source_unlabeled;
                    if src.is_empty() {
                        return Err(Error::Data(format!(
                            "source `{}` has no unlabeled rows",
                            self.data.source_id
                        )));
                    }
                    let idx: Vec<usize> = (0..n).map(|_| self.adv_rng.below(src.len())).collect();
                    src.features(&idx)?
                }
            };
            let idx: Vec<usize> = (0..n).map(|_| self.adv_rng.below(pool.len())).collect();
            let target_x = pool.features(&idx)?;
            let domain_labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
            let disc_ids = self.model.discriminator_param_ids(&target)?;

            params.zero_grad_of(&disc_ids);
            let disc_loss = adversarial_loss(
                &self.model,
                &mut params,
                &target,
                &source_x,
                &target_x,
                &domain_labels,
                self.variant.lambda,
            )?;

            adamw_step(&mut params, &self.task_ids, &self.task_opt, self.step)?;
            adamw_step(&mut params, &disc_ids, &self.disc_opt, self.step)?;

            for _ in 1..self.disc_steps {
                params.zero_grad_of(&disc_ids);
                adversarial_loss(&self.model, &mut params, &target, &source_x, &target_x, &domain_labels, 0.0)?;
                adamw_step(&mut params, &disc_ids, &self.disc_opt, self.step)?;
            }

            Ok(AdversarialStep {
                task_loss: loss,
                disc_loss,
                target,
            })
        })();
        self.model.put_params(params);
        self.step += 1;
        if let Ok(s) = &result {
            *self.target_counts.entry(s.target.clone()).or_insert(0) += 1;
        }
        result
    }
}

fn task_loss(model: &ModelBundle, store: &mut ParamStore, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.x.clone())?;
    let f = model.encode_with(store, &mut tape, x)?;
    let z = model.classify_with(store, &mut tape, f)?;
    let loss = tape.softmax_cross_entropy(z, &batch.y)?;
    tape.backward(loss, store)?;
    tape.value(loss).item()
}

/// One forward/backward of the discriminator loss through gradient reversal.
fn adversarial_loss(
    model: &ModelBundle,
    store: &mut ParamStore,
    target: &str,
    source_x: &Tensor,
    target_x: &Tensor,
    domain_labels: &[f64],
    lambda: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xs = tape.constant(source_x.clone())?;
    let xt = tape.constant(target_x.clone())?;
    let x = tape.vstack(xs, xt)?;
    let f = model.encode_with(store, &mut tape, x)?;
    let r = tape.grad_reverse(f, lambda)?;
    let p = model.discriminate_with(store, &mut tape, target, r)?;
    let loss = tape.binary_cross_entropy(p, domain_labels)?;
    tape.backward(loss, store)?;
    tape.value(loss).item()
}

fn resolve_prior(variant: &TrainVariant, config: &TrainConfig, data: &DomainDataset) -> Result<Option<LanguagePrior>> {
    let prior = match &variant.kind {
        VariantKind::Baseline | VariantKind::DittoMinusLa => return Ok(None),
        VariantKind::Ditto | VariantKind::DittoMinusSam => config.prior.clone().ok_or_else(|| {
            Error::Config(format!(
                "variant {} needs a target prior (compute one from baseline scores)",
                variant.name()
            ))
        })?,
        VariantKind::DittoUniform => LanguagePrior::uniform(&data.target_ids())
            .map_err(|_| Error::Config("adaptation needs at least one target domain".into()))?,
        VariantKind::DittoSingle(t) => LanguagePrior::single(t),
    };
    for t in prior.targets() {
        if !data.targets.contains_key(t) {
            return Err(Error::Config(format!("prior names unknown target `{t}`")));
        }
    }
    Ok(Some(prior))
}

/// Trains `variant` from a fresh initialization; a pure function of its inputs
/// apart from `wall_clock_seconds`.
pub fn train(
    config: &TrainConfig,
    data: &DomainDataset,
    variant: &TrainVariant,
    seed: u64,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    variant.validate()?;
    data.validate()?;
    if data.dim() != config.encoder.input_dim {
        return Err(Error::Config(format!(
            "encoder input_dim {} does not match dataset dimension {}",
            config.encoder.input_dim,
            data.dim()
        )));
    }
    if data.num_classes() > config.num_classes {
        return Err(Error::Config(format!(
            "dataset has labels up to {} but num_classes is {}",
            data.num_classes() - 1,
            config.num_classes
        )));
    }
    let started = Instant::now();
    let root = Rng::new(seed);
    let spec = ModelSpec {
        encoder: config.encoder.clone(),
        num_classes: config.num_classes,
        targets: data.target_ids(),
        disc_hidden: config.disc_hidden,
    };
    let model = ModelBundle::init(spec, &mut root.fork(STREAM_INIT))?;
    let mut shuffle_rng = root.fork(STREAM_SHUFFLE);

    let n = data.source_labeled.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let mut trainer = Trainer::new(
        model,
        data,
        variant.clone(),
        config,
        total_steps,
        root.fork(STREAM_ADVERSARIAL),
    )?;
    let labels = data
        .source_labeled
        .labels()
        .expect("validated source split is labeled");

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = shuffle_rng.permutation(n);
        let (mut task_sum, mut disc_sum, mut adv_steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                x: data.source_labeled.features(chunk)?,
                y: chunk.iter().map(|&i| labels[i]).collect(),
            };
            let (task, adv) = trainer.step(&batch)?;
            task_sum += task;
            if let Some(a) = adv {
                disc_sum += a.disc_loss;
                adv_steps += 1;
            }
        }
        let per_domain_acc = if config.eval_each_epoch {
            domain_accuracies(trainer.model(), data)?
        } else {
            BTreeMap::new()
        };
        let disc_loss = (adv_steps > 0).then(|| disc_sum / adv_steps as f64);
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            task_loss: task_sum / steps_per_epoch as f64,
            adv_loss: disc_loss.map(|d| -variant.lambda * d),
            disc_loss,
            per_domain_acc,
        });
        log::debug!(
            "{} seed {seed} epoch {}: task loss {:.4}",
            variant.name(),
            epoch + 1,
            task_sum / steps_per_epoch as f64
        );
    }

    let target_counts = trainer.target_counts().clone();
    let adversarial_steps = target_counts.values().sum();
    let model = trainer.into_model();
    let final_accuracy = domain_accuracies(&model, data)?;
    let report = TrainReport {
        variant: variant.name(),
        seed,
        epochs,
        target_counts,
        adversarial_steps,
        final_accuracy,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
