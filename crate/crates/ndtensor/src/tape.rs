//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value. Inputs always
//! precede the node that consumes them, so walking the list backwards from
//! the loss visits operations in exact reverse execution order.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::conv::{self, Conv3dSpec};
use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d { input: Var, kernel: Var, spec: Conv3dSpec },
    Conv3dTranspose { input: Var, kernel: Var, spec: Conv3dSpec },
    ChannelBias { input: Var, bias: Var },
    Linear { input: Var, weight: Var, bias: Var },
    LeakyRelu { input: Var, slope: f64 },
    Clamp { input: Var, lo: f64, hi: f64 },
    Reshape { input: Var },
    Add { lhs: Var, rhs: Var },
    Scale { input: Var, factor: f64 },
    Sum { input: Var },
    Dot { lhs: Var, rhs: Var },
    Reparameterize { mu: Var, logvar: Var, noise: Vec<f64> },
    CrossEntropy { target: Tensor, logits: Var },
    KlStandardNormal { mu: Var, logvar: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, spec: Conv3dSpec) -> Result<Var> {
        let out = conv::conv3d(self.value(input), self.value(kernel), spec)?;
        Ok(self.push(out, Op::Conv3d { input, kernel, spec }, &[input, kernel]))
    }

    /// See [`conv::conv3d_transpose`]; the output extents are recorded in
    /// the node's value.
    pub fn conv3d_transpose(&mut self, input: Var, kernel: Var, spec: Conv3dSpec, output: [usize; 3]) -> Result<Var> {
        let out = conv::conv3d_transpose(self.value(input), self.value(kernel), spec, output)?;
        Ok(self.push(out, Op::Conv3dTranspose { input, kernel, spec }, &[input, kernel]))
    }

    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let out = ops::add_channel_bias(self.value(input), self.value(bias))?;
        Ok(self.push(out, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(TensorError::InvalidArgument {
                op: "leaky_relu",
                reason: format!("slope {slope} outside (0, 1)"),
            });
        }
        let out = ops::leaky_relu(self.value(input), slope);
        Ok(self.push(out, Op::LeakyRelu { input, slope }, &[input]))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(input).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { input, lo, hi }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }, &[input]))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        ops::same_shape("add", self.value(lhs), self.value(rhs))?;
        let mut out = self.value(lhs).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(rhs).data())
            .for_each(|(a, b)| *a += b);
        Ok(self.push(out, Op::Add { lhs, rhs }, &[lhs, rhs]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    pub fn dot(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(lhs).dot(self.value(rhs))?);
        Ok(self.push(out, Op::Dot { lhs, rhs }, &[lhs, rhs]))
    }

    /// `mu + exp(logvar / 2) * noise` with `noise` held fixed.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, noise: Vec<f64>) -> Result<Var> {
        let out = ops::reparameterize(self.value(mu), self.value(logvar), &noise)?;
        Ok(self.push(out, Op::Reparameterize { mu, logvar, noise }, &[mu, logvar]))
    }

    /// Scalar cross-entropy of `logits` against the constant `target`
    /// distributions, summed over every spectrum.
    pub fn cross_entropy(&mut self, target: Tensor, logits: Var) -> Result<Var> {
        let value = ops::cross_entropy(&target, self.value(logits))?;
        Ok(self.push(Tensor::scalar(value), Op::CrossEntropy { target, logits }, &[logits]))
    }

    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let value = ops::kl_standard_normal(self.value(mu), self.value(logvar))?;
        Ok(self.push(Tensor::scalar(value), Op::KlStandardNormal { mu, logvar }, &[mu, logvar]))
    }

    /// Propagates `d loss / d v` to every node that requires a gradient.
    ///
    /// Contributions from several consumers are summed. The tape is
    /// consumed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(TensorError::ContractViolation {
                op: "backward",
                reason: format!("variable {} is not on this tape", loss.0),
            });
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::ContractViolation {
                op: "backward",
                reason: format!("loss has shape {:?}; a scalar is required", self.nodes[loss.0].value.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut send = |v: Var, contribution: Vec<f64>| accumulate(grads, v, contribution);
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { input, kernel, spec } => {
                let (gi, gk) = conv::conv3d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    *spec,
                    g,
                    self.wants(*input),
                    self.wants(*kernel),
                )?;
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                if let Some(gk) = gk {
                    send(*kernel, gk);
                }
            }
            Op::Conv3dTranspose { input, kernel, spec } => {
                let s = node.value.shape();
                let (gi, gk) = conv::conv3d_transpose_backward(
                    self.value(*input),
                    self.value(*kernel),
                    *spec,
                    [s[2], s[3], s[4]],
                    g,
                    self.wants(*input),
                    self.wants(*kernel),
                )?;
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                if let Some(gk) = gk {
                    send(*kernel, gk);
                }
            }
            Op::ChannelBias { input, bias } => {
                if self.wants(*bias) {
                    let channels = self.value(*bias).len();
                    let inner = ops::channel_bias_layout(self.value(*input), self.value(*bias))?;
                    let mut gb = vec![0.0; channels];
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        gb[i % channels] += chunk.iter().sum::<f64>();
                    }
                    send(*bias, gb);
                }
                if self.wants(*input) {
                    send(*input, g.to_vec());
                }
            }
            Op::Linear { input, weight, bias } => {
                let (batch, features, outputs) =
                    ops::linear_shapes(self.value(*input), self.value(*weight), self.value(*bias))?;
                let gout = ArrayView2::from_shape((batch, outputs), g).expect("grad view");
                if self.wants(*input) {
                    let w = ArrayView2::from_shape((outputs, features), self.value(*weight).data()).expect("weight");
                    let mut gi = vec![0.0; batch * features];
                    general_mat_mul(
                        1.0,
                        &gout,
                        &w,
                        0.0,
                        &mut ArrayViewMut2::from_shape((batch, features), &mut gi).expect("gi"),
                    );
                    send(*input, gi);
                }
                if self.wants(*weight) {
                    let x = ArrayView2::from_shape((batch, features), self.value(*input).data()).expect("input");
                    let mut gw = vec![0.0; outputs * features];
                    general_mat_mul(
                        1.0,
                        &gout.t(),
                        &x,
                        0.0,
                        &mut ArrayViewMut2::from_shape((outputs, features), &mut gw).expect("gw"),
                    );
                    send(*weight, gw);
                }
                if self.wants(*bias) {
                    send(*bias, ops::column_sums(g, batch, outputs));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                send(
                    *input,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect(),
                );
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                send(
                    *input,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Reshape { input } => send(*input, g.to_vec()),
            Op::Add { lhs, rhs } => {
                if self.wants(*lhs) {
                    send(*lhs, g.to_vec());
                }
                if self.wants(*rhs) {
                    send(*rhs, g.to_vec());
                }
            }
            Op::Scale { input, factor } => send(*input, g.iter().map(|v| v * factor).collect()),
            Op::Sum { input } => send(*input, vec![g[0]; self.value(*input).len()]),
            Op::Dot { lhs, rhs } => {
                let (a, b) = (self.value(*lhs).data(), self.value(*rhs).data());
                if self.wants(*lhs) {
                    send(*lhs, b.iter().map(|v| g[0] * v).collect());
                }
                if self.wants(*rhs) {
                    send(*rhs, a.iter().map(|v| g[0] * v).collect());
                }
            }
            Op::Reparameterize { mu, logvar, noise } => {
                if self.wants(*mu) {
                    send(*mu, g.to_vec());
                }
                if self.wants(*logvar) {
                    let lv = self.value(*logvar).data();
                    send(
                        *logvar,
                        g.iter()
                            .zip(lv)
                            .zip(noise)
                            .map(|((g, lv), n)| g * n * 0.5 * (0.5 * lv).exp())
                            .collect(),
                    );
                }
            }
            Op::CrossEntropy { target, logits } => {
                let p = ops::softmax_energy(self.value(*logits));
                let e = target.last_dim();
                let mut out = vec![0.0; p.len()];
                for ((o, p), y) in out.chunks_mut(e).zip(p.data().chunks(e)).zip(target.data().chunks(e)) {
                    let mass: f64 = y.iter().sum();
                    for ((o, p), y) in o.iter_mut().zip(p).zip(y) {
                        *o = g[0] * (p * mass - y);
                    }
                }
                send(*logits, out);
            }
            Op::KlStandardNormal { mu, logvar } => {
                let batch = self.value(*mu).shape()[0] as f64;
                let scale = g[0] / batch;
                if self.wants(*mu) {
                    send(*mu, self.value(*mu).data().iter().map(|m| scale * m).collect());
                }
                if self.wants(*logvar) {
                    send(
                        *logvar,
                        self.value(*logvar)
                            .data()
                            .iter()
                            .map(|lv| scale * -0.5 * (1.0 - lv.exp()))
                            .collect(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}
