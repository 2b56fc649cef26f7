use ndtensor::ops::softmax_energy;
use ndtensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Architecture, ModelParams};
use crate::datacube::Shard;
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Tolerance on the unit sum of every input spectrum.
const INPUT_SUM_TOLERANCE: f64 = 1e-6;

/// Posterior parameters of one shard.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentCode {
    /// `mu + exp(logvar / 2) * eps` with standard normal `eps`.
    pub fn reparameterize(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.logvar)
            .map(|(m, lv)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * eps
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub kl: f64,
}

/// Handles to the values of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub params: Vec<Var>,
    pub mu: Var,
    pub logvar: Var,
    pub logits: Var,
    pub ce: Var,
    pub kl: Var,
    pub total: Var,
}

impl Forward {
    pub fn components(&self, tape: &Tape) -> LossComponents {
        let item = |v: Var| tape.value(v).data()[0];
        LossComponents {
            total: item(self.total),
            ce: item(self.ce),
            kl: item(self.kl),
        }
    }
}

/// Checks geometry and unit-sum spectra against the model's configuration.
pub fn check_shard(shard: &Shard, arch: &Architecture) -> Result<()> {
    if shard.extent() != arch.extent || shard.channels() != arch.channels {
        return Err(Error::dimension(
            "shard for model",
            format!("{0}x{0}x{1}", arch.extent, arch.channels),
            format!("{0}x{0}x{1}", shard.extent(), shard.channels()),
        ));
    }
    for (i, s) in shard.data().chunks_exact(arch.channels).enumerate() {
        let sum: f64 = s.iter().sum();
        if (sum - 1.0).abs() > INPUT_SUM_TOLERANCE {
            return Err(Error::Contract(format!(
                "shard at {:?}: spectrum {} sums to {sum}; the model needs normalized spectra",
                shard.origin(),
                i
            )));
        }
    }
    Ok(())
}

/// `[B, 1, X, Y, L]` batch of shards.
pub fn stack_shards(shards: &[&Shard], arch: &Architecture) -> Result<Tensor> {
    let mut data = Vec::with_capacity(shards.len() * arch.extent * arch.extent * arch.channels);
    for s in shards {
        check_shard(s, arch)?;
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::new(
        [shards.len(), 1, arch.extent, arch.extent, arch.channels],
        data,
    )?)
}

fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), trainable))
        .collect()
}

// Indices into the declaration order of `Architecture::param_shapes`.
const ENC: [(usize, usize); 3] = [(0, 1), (2, 3), (4, 5)];
const MU: (usize, usize) = (6, 7);
const LOGVAR: (usize, usize) = (8, 9);
const DEC_LINEAR: (usize, usize) = (10, 11);
const DEC: [(usize, usize); 3] = [(12, 13), (14, 15), (16, 17)];

fn encoder(tape: &mut Tape, p: &[Var], arch: &Architecture, input: Var) -> Result<(Var, Var)> {
    let spec = arch.conv_spec();
    let mut h = input;
    for (w, b) in ENC {
        h = tape.conv3d(h, p[w], spec)?;
        h = tape.add_channel_bias(h, p[b])?;
        h = tape.leaky_relu(h, arch.slope)?;
    }
    let batch = tape.value(h).shape()[0];
    let flat = tape.reshape(h, [batch, arch.flat_features()?])?;
    let mu = tape.linear(flat, p[MU.0], p[MU.1])?;
    let logvar = tape.linear(flat, p[LOGVAR.0], p[LOGVAR.1])?;
    let logvar = tape.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
    Ok((mu, logvar))
}

fn decoder(tape: &mut Tape, p: &[Var], arch: &Architecture, z: Var) -> Result<Var> {
    let spec = arch.conv_spec();
    let stages = arch.stage_extents()?;
    let batch = tape.value(z).shape()[0];
    let h = tape.linear(z, p[DEC_LINEAR.0], p[DEC_LINEAR.1])?;
    let h = tape.leaky_relu(h, arch.slope)?;
    let [x3, y3, e3] = stages[3];
    let mut h = tape.reshape(h, [batch, arch.widths[2], x3, y3, e3])?;
    for (i, (w, b)) in DEC.into_iter().enumerate() {
        h = tape.conv3d_transpose(h, p[w], spec, stages[2 - i])?;
        h = tape.add_channel_bias(h, p[b])?;
        if i < 2 {
            h = tape.leaky_relu(h, arch.slope)?;
        }
    }
    Ok(h)
}

impl ModelParams {
    /// Records `loss = CE / B + beta * KL` for a `[B, 1, X, Y, L]` batch.
    ///
    /// `noise` supplies the reparameterization draws (`B * J` values); with
    /// `None` the decoder sees the posterior mean.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &Tensor,
        beta: f64,
        noise: Option<Vec<f64>>,
        trainable: bool,
    ) -> Result<Forward> {
        let arch = self.architecture();
        let b = batch.shape().first().copied().unwrap_or(0);
        let expected = [b, 1, arch.extent, arch.extent, arch.channels];
        if batch.shape() != expected || b == 0 {
            return Err(Error::dimension("model batch", format!("{expected:?}"), format!("{:?}", batch.shape())));
        }
        let params = register(tape, self, trainable);
        let input = tape.constant(batch.clone());
        let (mu, logvar) = encoder(tape, &params, arch, input)?;
        let z = match noise {
            Some(eps) => tape.reparameterize(mu, logvar, eps)?,
            None => mu,
        };
        let logits = decoder(tape, &params, arch, z)?;
        let ce_sum = tape.cross_entropy(batch.clone(), logits)?;
        let ce = tape.scale(ce_sum, 1.0 / b as f64);
        let kl = tape.kl_standard_normal(mu, logvar)?;
        let weighted = tape.scale(kl, beta);
        let total = tape.add(ce, weighted)?;
        Ok(Forward {
            params,
            mu,
            logvar,
            logits,
            ce,
            kl,
            total,
        })
    }

    /// Loss components and per-tensor gradients with fixed noise.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        beta: f64,
        noise: Option<Vec<f64>>,
    ) -> Result<(LossComponents, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, beta, noise, true)?;
        let parts = fwd.components(&tape);
        let mut grads = tape.backward(fwd.total)?;
        let g = fwd
            .params
            .iter()
            .zip(self.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok((parts, g))
    }

    /// Loss components only.
    pub fn loss(&self, batch: &Tensor, beta: f64, noise: Option<Vec<f64>>) -> Result<LossComponents> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, beta, noise, false)?;
        Ok(fwd.components(&tape))
    }
}

/// Posterior parameters of each shard in one pass.
pub fn encode_batch(shards: &[&Shard], params: &ModelParams) -> Result<Vec<LatentCode>> {
    let arch = params.architecture();
    let batch = stack_shards(shards, arch)?;
    let mut tape = Tape::new();
    let p = register(&mut tape, params, false);
    let input = tape.constant(batch);
    let (mu, logvar) = encoder(&mut tape, &p, arch, input)?;
    let j = arch.latent;
    let mus = tape.value(mu).data().chunks_exact(j);
    let lvs = tape.value(logvar).data().chunks_exact(j);
    Ok(mus
        .zip(lvs)
        .map(|(m, l)| LatentCode {
            mu: m.to_vec(),
            logvar: l.to_vec(),
        })
        .collect())
}

pub fn encode(shard: &Shard, params: &ModelParams) -> Result<LatentCode> {
    Ok(encode_batch(&[shard], params)?.remove(0))
}

/// Raw logits `[X, Y, L]` for one latent vector.
pub fn decode(z: &[f64], params: &ModelParams) -> Result<Tensor> {
    let arch = params.architecture();
    Ok(decode_batch(&[z.to_vec()], params)?.reshape([arch.extent, arch.extent, arch.channels])?)
}

/// Raw logits `[B, 1, X, Y, L]` for a batch of latent vectors.
pub(crate) fn decode_batch(zs: &[Vec<f64>], params: &ModelParams) -> Result<Tensor> {
    let arch = params.architecture();
    if let Some(bad) = zs.iter().find(|z| z.len() != arch.latent) {
        return Err(Error::dimension("latent vector", arch.latent, bad.len()));
    }
    let mut tape = Tape::new();
    let p = register(&mut tape, params, false);
    let z = tape.constant(Tensor::new([zs.len(), arch.latent], zs.concat())?);
    let logits = decoder(&mut tape, &p, arch, z)?;
    Ok(tape.value(logits).clone())
}

/// Probability spectra `[B, 1, X, Y, L]` decoded from each shard's mean.
pub(crate) fn reconstruct_batch(shards: &[&Shard], params: &ModelParams) -> Result<Tensor> {
    let codes = encode_batch(shards, params)?;
    let zs: Vec<Vec<f64>> = codes.into_iter().map(|c| c.mu).collect();
    Ok(softmax_energy(&decode_batch(&zs, params)?))
}

/// `CE + beta * KL` for one shard with a sampled latent.
pub fn loss_total(shard: &Shard, params: &ModelParams, beta: f64, rng: &mut impl Rng) -> Result<LossComponents> {
    let arch = params.architecture();
    let batch = stack_shards(&[shard], arch)?;
    let noise = (0..arch.latent).map(|_| rng.sample(StandardNormal)).collect();
    params.loss(&batch, beta, Some(noise))
}
