//! Encoder, task classifier and per-target domain discriminators.
//!
//! All parameters live in one [`ParamStore`] under hierarchical names:
//!
//! ```text
//! encoder.layer{i}.W / .b
//! classifier.W / .b
//! disc.{target}.hidden.W / .b
//! disc.{target}.head.W / .b
//! ```
//!
//! The encoder output (last hidden layer) is the feature space shared by the
//! classifier and every discriminator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_DISC_HIDDEN: usize = 64;

const CHECKPOINT_MAGIC: &str = "ditto-checkpoint 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated encoder has hidden layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Parameter("encoder input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Parameter("encoder needs at least one hidden layer".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::Parameter(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a [`ModelBundle`]'s layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub num_classes: usize,
    /// Target domain ids; one discriminator each.
    pub targets: Vec<String>,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
}

fn default_disc_hidden() -> usize {
    DEFAULT_DISC_HIDDEN
}

impl ModelSpec {
    pub fn new(encoder: EncoderSpec, num_classes: usize, targets: Vec<String>) -> Self {
        ModelSpec {
            encoder,
            num_classes,
            targets,
            disc_hidden: DEFAULT_DISC_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes == 0 {
            return Err(Error::Parameter("num_classes must be positive".into()));
        }
        if self.disc_hidden == 0 {
            return Err(Error::Parameter("discriminator hidden width must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.targets {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parameter(format!("invalid target domain id `{t}`")));
            }
            if !seen.insert(t) {
                return Err(Error::Parameter(format!("duplicate target domain `{t}`")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

impl Layer {
    fn record(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.affine(x, w, b)
    }

    fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.matmul(store.value(self.w))?.add_row(store.value(self.b))
    }

    fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Clone, Copy, Debug)]
struct Discriminator {
    hidden: Layer,
    head: Layer,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    spec: ModelSpec,
    params: ParamStore,
    encoder: Vec<Layer>,
    classifier: Layer,
    discriminators: BTreeMap<String, Discriminator>,
}

impl ModelBundle {
    /// Glorot-uniform weights, zero biases. Deterministic in `rng`.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect();
            Tensor::new(fan_in, fan_out, data)
        })
    }

    /// Same layout as [`ModelBundle::init`] with every parameter zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        Self::build(spec, |r, c| Ok(Tensor::zeros(r, c)))
    }

    fn build(
        spec: ModelSpec,
        mut weight: impl FnMut(usize, usize) -> Result<Tensor>,
    ) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut layer = |params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
            let w = params.insert(format!("{name}.W"), weight(fan_in, fan_out)?)?;
            let b = params.insert(format!("{name}.b"), Tensor::zeros(1, fan_out))?;
            Ok::<_, Error>(Layer { w, b })
        };

        let mut encoder = Vec::with_capacity(spec.encoder.hidden_dims.len());
        let mut fan_in = spec.encoder.input_dim;
        for (i, &width) in spec.encoder.hidden_dims.iter().enumerate() {
            encoder.push(layer(&mut params, &format!("encoder.layer{i}"), fan_in, width)?);
            fan_in = width;
        }
        let feature_dim = fan_in;
        let classifier = layer(&mut params, "classifier", feature_dim, spec.num_classes)?;

        let mut discriminators = BTreeMap::new();
        let mut ordered = spec.targets.clone();
        ordered.sort();
        for t in ordered {
            let hidden = layer(&mut params, &format!("disc.{t}.hidden"), feature_dim, spec.disc_hidden)?;
            let head = layer(&mut params, &format!("disc.{t}.head"), spec.disc_hidden, 1)?;
            discriminators.insert(t, Discriminator { hidden, head });
        }

        Ok(ModelBundle {
            spec,
            params,
            encoder,
            classifier,
            discriminators,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.encoder.feature_dim()
    }

    pub fn num_discriminators(&self) -> usize {
        self.discriminators.len()
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.discriminators.keys().map(String::as_str)
    }

    /// Encoder followed by classifier parameters; the set SAM perturbs.
    pub fn task_param_ids(&self) -> Vec<ParamId> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .flat_map(Layer::ids)
            .collect()
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.encoder.iter().flat_map(Layer::ids).collect()
    }

    pub fn discriminator_param_ids(&self, target: &str) -> Result<Vec<ParamId>> {
        let d = self.disc(target)?;
        Ok(d.hidden.ids().into_iter().chain(d.head.ids()).collect())
    }

    fn disc(&self, target: &str) -> Result<&Discriminator> {
        self.discriminators.get(target).ok_or_else(|| Error::Lookup {
            kind: "target domain",
            name: target.to_string(),
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.spec.encoder.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects {} input features, got {}x{}",
                self.spec.encoder.input_dim,
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Records the encoder on `tape`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.encode_with(&self.params, tape, x)
    }

    /// Records the classifier head on `tape`, producing logits.
    pub fn classify(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.classify_with(&self.params, tape, features)
    }

    /// Records discriminator `target` on `tape`, producing an `m×1` column in (0,1).
    pub fn discriminate(&self, tape: &mut Tape, target: &str, features: Var) -> Result<Var> {
        self.discriminate_with(&self.params, tape, target, features)
    }

    /// [`ModelBundle::encode`] reading values from `store`, which must have
    /// this bundle's layout (e.g. its params temporarily moved out).
    pub fn encode_with(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for layer in &self.encoder {
            let z = layer.record(store, tape, h)?;
            h = tape.activation(z, self.spec.encoder.activation)?;
        }
        Ok(h)
    }

    pub fn classify_with(&self, store: &ParamStore, tape: &mut Tape, features: Var) -> Result<Var> {
        self.classifier.record(store, tape, features)
    }

    pub fn discriminate_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        target: &str,
        features: Var,
    ) -> Result<Var> {
        let d = self.disc(target)?;
        let z = d.hidden.record(store, tape, features)?;
        let h = tape.activation(z, Activation::Tanh)?;
        let logit = d.head.record(store, tape, h)?;
        tape.sigmoid(logit)
    }

    /// Moves the parameters out, leaving an empty store behind.
    pub(crate) fn take_params(&mut self) -> ParamStore {
        std::mem::take(&mut self.params)
    }

    pub(crate) fn put_params(&mut self, params: ParamStore) {
        debug_assert!(self.params.is_empty());
        self.params = params;
    }

    /// Encoder outputs without recording anything.
    pub fn extract_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = self.spec.encoder.activation.apply(&layer.apply(&self.params, &h)?);
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.extract_features(x)?;
        self.classifier.apply(&self.params, &f)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }

    /// Discriminator probabilities without recording anything.
    pub fn discriminator_probs(&self, target: &str, features: &Tensor) -> Result<Tensor> {
        let d = self.disc(target)?;
        let h = Activation::Tanh.apply(&d.hidden.apply(&self.params, features)?);
        Ok(sigmoid(&d.head.apply(&self.params, &h)?))
    }

    /// Writes the spec and every parameter value.
    ///
    /// Values are printed with Rust's shortest round-trip formatting, so
    /// [`ModelBundle::read_checkpoint`] restores them bit-exactly.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = String::new();
        buf.push_str(CHECKPOINT_MAGIC);
        buf.push('\n');
        buf.push_str("spec ");
        buf.push_str(&serde_json::to_string(&self.spec)?);
        buf.push('\n');
        for p in self.params.iter() {
            let (r, c) = p.value.shape();
            let _ = writeln!(buf, "param {} {r} {c}", p.name);
            let line: Vec<String> = p.value.data().iter().map(|v| v.to_string()).collect();
            buf.push_str(&line.join(" "));
            buf.push('\n');
        }
        out.write_all(buf.as_bytes())
            .map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let path = std::path::PathBuf::from("<checkpoint>");
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut lines = BufReader::new(input).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(parse_err(i + 1, e.to_string())),
                None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (ln, magic) = next("header")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(parse_err(ln, format!("bad header `{magic}`")));
        }
        let (ln, spec_line) = next("spec")?;
        let spec_json = spec_line
            .strip_prefix("spec ")
            .ok_or_else(|| parse_err(ln, "expected `spec <json>`".into()))?;
        let spec: ModelSpec =
            serde_json::from_str(spec_json).map_err(|e| parse_err(ln, e.to_string()))?;
        let mut bundle = ModelBundle::zeros(spec)?;

        let mut seen = vec![false; bundle.params.len()];
        for _ in 0..bundle.params.len() {
            let (ln, header) = next("param header")?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let [tag, name, rows, cols] = fields[..] else {
                return Err(parse_err(ln, format!("malformed param header `{header}`")));
            };
            if tag != "param" {
                return Err(parse_err(ln, format!("expected `param`, got `{tag}`")));
            }
            let rows: usize = rows.parse().map_err(|_| parse_err(ln, "bad row count".into()))?;
            let cols: usize = cols.parse().map_err(|_| parse_err(ln, "bad column count".into()))?;
            let id = bundle.params.id(name).map_err(|e| parse_err(ln, e.to_string()))?;
            let (ln, values) = next("param values")?;
            let data = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(ln, e.to_string()))?;
            let t = Tensor::new(rows, cols, data).map_err(|e| parse_err(ln, e.to_string()))?;
            if !t.is_finite() {
                return Err(parse_err(ln, format!("non-finite value in `{name}`")));
            }
            bundle
                .params
                .set_value(id, t)
                .map_err(|e| parse_err(ln, e.to_string()))?;
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(parse_err(0, format!("missing parameter `{}`", bundle.params.name(ParamId(i)))));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(file).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }
}
