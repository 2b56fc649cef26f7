//! Forward evaluation of the non-convolutional primitives.
//!
//! Every function here is pure; [`crate::Tape`] records the same
//! computations and supplies their derivatives.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Allowed deviation of a target spectrum's channel sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(TensorError::RankMismatch {
            op,
            expected: a.rank(),
            found: b.rank(),
        });
    }
    for (axis, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(TensorError::DimensionMismatch {
                op,
                axis: axis_name(axis, a.rank()),
                expected: x,
                found: y,
            });
        }
    }
    Ok(())
}

fn axis_name(axis: usize, rank: usize) -> &'static str {
    const NAMES: [&str; 5] = ["batch", "channel", "x", "y", "energy"];
    if axis + 1 == rank {
        "energy"
    } else if rank <= 5 {
        NAMES[axis + 5 - rank]
    } else {
        "leading"
    }
}

pub(crate) fn linear_shapes(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    input.expect_rank(OP, 2)?;
    weight.expect_rank(OP, 2)?;
    bias.expect_rank(OP, 1)?;
    let (batch, features) = (input.shape()[0], input.shape()[1]);
    let (outputs, wf) = (weight.shape()[0], weight.shape()[1]);
    if wf != features {
        return Err(TensorError::DimensionMismatch {
            op: OP,
            axis: "features",
            expected: features,
            found: wf,
        });
    }
    if bias.shape()[0] != outputs {
        return Err(TensorError::DimensionMismatch {
            op: OP,
            axis: "outputs",
            expected: outputs,
            found: bias.shape()[0],
        });
    }
    Ok((batch, features, outputs))
}

/// `out[b, g] = sum_f input[b, f] * weight[g, f] + bias[g]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, features, outputs) = linear_shapes(input, weight, bias)?;
    let x = ArrayView2::from_shape((batch, features), input.data()).expect("input view");
    let w = ArrayView2::from_shape((outputs, features), weight.data()).expect("weight view");
    let b = ArrayView1::from_shape(outputs, bias.data()).expect("bias view");
    let mut out = vec![0.0; batch * outputs];
    {
        let mut o = ArrayViewMut2::from_shape((batch, outputs), &mut out).expect("output view");
        o.assign(&b.broadcast((batch, outputs)).expect("bias broadcast"));
        general_mat_mul(1.0, &x, &w.t(), 1.0, &mut o);
    }
    Tensor::new([batch, outputs], out)
}

/// Adds `bias[c]` to every element of channel `c` (axis 1).
pub fn add_channel_bias(input: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let inner = channel_bias_layout(input, bias)?;
    let mut out = input.clone();
    let channels = bias.len();
    for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
        let b = bias.data()[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

pub(crate) fn channel_bias_layout(input: &Tensor, bias: &Tensor) -> Result<usize> {
    const OP: &str = "add_channel_bias";
    bias.expect_rank(OP, 1)?;
    if input.rank() < 2 {
        return Err(TensorError::RankMismatch {
            op: OP,
            expected: 2,
            found: input.rank(),
        });
    }
    if input.shape()[1] != bias.len() {
        return Err(TensorError::DimensionMismatch {
            op: OP,
            axis: "channel",
            expected: input.shape()[1],
            found: bias.len(),
        });
    }
    Ok(input.shape()[2..].iter().product())
}

/// Elementwise `max(x, slope * x)` for `slope` in (0, 1).
pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Softmax along the last (energy) axis, with max-subtraction.
pub fn softmax_energy(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let e = logits.last_dim();
    for row in out.data_mut().chunks_mut(e) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// `log(softmax(x))` along the energy axis, computed as `x - m - log(sum(exp(x - m)))`.
pub fn log_softmax_energy(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let e = logits.last_dim();
    for row in out.data_mut().chunks_mut(e) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Sum over spectra of the Shannon entropy `-sum_e y_e log y_e` (with `0 log 0 = 0`).
pub fn entropy_energy(y: &Tensor) -> f64 {
    y.data().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

pub(crate) fn check_distribution(op: &'static str, target: &Tensor) -> Result<()> {
    let e = target.last_dim();
    for (i, row) in target.data().chunks(e).enumerate() {
        if let Some(bad) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(TensorError::ContractViolation {
                op,
                reason: format!("spectrum {i} has entry {bad}; targets must be non-negative"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(TensorError::ContractViolation {
                op,
                reason: format!("spectrum {i} sums to {sum}, not 1"),
            });
        }
    }
    Ok(())
}

/// Cross-entropy summed over every spectrum:
/// `sum_spectra -sum_e y_e * log_softmax(logits)_e`.
pub fn cross_entropy(target: &Tensor, logits: &Tensor) -> Result<f64> {
    const OP: &str = "cross_entropy";
    check_same_shape(OP, target, logits)?;
    check_distribution(OP, target)?;
    let logp = log_softmax_energy(logits);
    Ok(-target.data().iter().zip(logp.data()).map(|(y, l)| y * l).sum::<f64>())
}

pub(crate) fn kl_shapes(mu: &Tensor, logvar: &Tensor) -> Result<(usize, usize)> {
    const OP: &str = "kl_standard_normal";
    mu.expect_rank(OP, 2)?;
    check_same_shape(OP, mu, logvar)?;
    Ok((mu.shape()[0], mu.shape()[1]))
}

/// Batch mean of `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_standard_normal(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    let (batch, _) = kl_shapes(mu, logvar)?;
    let total: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum();
    Ok(total / batch as f64)
}

/// `mu + exp(logvar / 2) * noise`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, noise: &[f64]) -> Result<Tensor> {
    check_same_shape("reparameterize", mu, logvar)?;
    if noise.len() != mu.len() {
        return Err(TensorError::DataLength {
            shape: mu.shape().to_vec(),
            expected: mu.len(),
            found: noise.len(),
        });
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// Column sums of a `[rows, cols]` matrix.
pub(crate) fn column_sums(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let m = ArrayView2::from_shape((rows, cols), data).expect("matrix view");
    let s: Array1<f64> = m.sum_axis(Axis(0));
    s.to_vec()
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    check_same_shape(op, a, b)
}
