//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records each operation as it is evaluated. Node ids are assigned
//! in evaluation order, so the tape is always topologically sorted and the
//! backward sweep is a single reverse pass. Parameters enter the tape as leaves
//! tagged with their [`ParamId`]; [`Tape::backward`] adds the leaf gradients
//! into the store's gradient slots without clearing them first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Lower clamp for probabilities fed to [`Tape::binary_cross_entropy`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Tanh => x.map(f64::tanh),
            Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Parameter(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Activation(Var, Activation),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    VStack(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor,
        labels: Vec<usize>,
    },
    BinaryCrossEntropy {
        p: Var,
        targets: Vec<f64>,
    },
    GradReverse(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not reach it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reaches(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf(None), value)
    }

    /// Records the current value of a parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(Op::Leaf(Some(id)), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out)
    }

    /// `x·W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = self.value(x).matmul(self.value(w))?.add_row(self.value(b))?;
        self.push(Op::Affine(x, w, b), out)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = kind.apply(self.value(x));
        self.push(Op::Activation(x, kind), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = sigmoid(self.value(x));
        self.push(Op::Sigmoid(x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push(Op::Scale(x, s), out)
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    pub fn vstack(&mut self, top: Var, bottom: Var) -> Result<Var> {
        let out = self.value(top).vstack(self.value(bottom))?;
        self.push(Op::VStack(top, bottom), out)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (m, c) = z.shape();
        if labels.len() != m {
            return Err(Error::Shape(format!(
                "{} labels for {m} rows of logits",
                labels.len()
            )));
        }
        let mut probs = Vec::with_capacity(m * c);
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::Label {
                    row: i,
                    label,
                    classes: c,
                });
            }
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|v| (v - max).exp() / denom));
        }
        let probs = Tensor::new(m, c, probs)?;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            Tensor::scalar(total / m as f64),
        )
    }

    /// Mean binary cross-entropy of an `m×1` probability column, with `p`
    /// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if pv.cols() != 1 || pv.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "binary cross-entropy expects {}x1 probabilities, got {}x{}",
                targets.len(),
                pv.rows(),
                pv.cols()
            )));
        }
        let m = targets.len() as f64;
        let loss: f64 = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        self.push(
            Op::BinaryCrossEntropy {
                p,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss / m),
        )
    }

    /// Identity on the forward pass; scales the upstream gradient by `-lambda`
    /// on the backward pass. With `lambda == 0` no gradient flows through.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "gradient reversal strength must be finite and nonnegative, got {lambda}"
            )));
        }
        let out = self.value(x).clone();
        self.push(Op::GradReverse(x, lambda), out)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            for (input, local) in self.local_grads(&node.op, &node.value, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&local)?,
                    slot @ None => *slot = Some(local),
                }
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Adds `∂loss/∂param` into the gradient slot of every parameter leaf.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Leaf(Some(pid)), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*pid, g)?;
            }
        }
        Ok(())
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |x: &Var| self.value(*x);
        Ok(match op {
            Op::Leaf(_) => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_t(v(b))?),
                (*b, v(a).t_matmul(g)?),
            ],
            Op::Affine(x, w, b) => vec![
                (*x, g.matmul_t(v(w))?),
                (*w, v(x).t_matmul(g)?),
                (*b, g.sum_rows()),
            ],
            Op::Activation(x, Activation::Tanh) => {
                vec![(*x, g.zip_map(out, |g, y| g * (1.0 - y * y))?)]
            }
            Op::Activation(x, Activation::Relu) => {
                vec![(*x, g.zip_map(v(x), |g, x| if x > 0.0 { g } else { 0.0 })?)]
            }
            Op::Sigmoid(x) => vec![(*x, g.zip_map(out, |g, y| g * y * (1.0 - y))?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![(*a, g.mul(v(b))?), (*b, g.mul(v(a))?)],
            Op::Scale(x, s) => vec![(*x, g.scale(*s))],
            Op::Sum(x) => {
                let (r, c) = v(x).shape();
                vec![(*x, Tensor::full(r, c, g.item()?))]
            }
            Op::VStack(top, bottom) => {
                let split = v(top).len();
                let (data_top, data_bottom) = g.data().split_at(split);
                vec![
                    (*top, Tensor::new(v(top).rows(), g.cols(), data_top.to_vec())?),
                    (
                        *bottom,
                        Tensor::new(v(bottom).rows(), g.cols(), data_bottom.to_vec())?,
                    ),
                ]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let scale = g.item()? / labels.len() as f64;
                let mut d = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    let val = d.get(i, label) - 1.0;
                    d.set(i, label, val);
                }
                vec![(*logits, d.scale(scale))]
            }
            Op::BinaryCrossEntropy { p, targets } => {
                let scale = g.item()? / targets.len() as f64;
                let d: Vec<f64> = v(p)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            scale * ((1.0 - y) / (1.0 - p) - y / p)
                        }
                    })
                    .collect();
                vec![(*p, Tensor::new(targets.len(), 1, d)?)]
            }
            Op::GradReverse(x, lambda) => {
                if *lambda == 0.0 {
                    Vec::new()
                } else {
                    vec![(*x, g.scale(-lambda))]
                }
            }
        })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf(_) => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Affine(..) => "affine",
        Op::Activation(..) => "activation",
        Op::Sigmoid(_) => "sigmoid",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Sum(_) => "sum",
        Op::VStack(..) => "vstack",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::BinaryCrossEntropy { .. } => "binary_cross_entropy",
        Op::GradReverse(..) => "grad_reverse",
    }
}
