use std::io::Write;

use ndtensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{stack_shards, LossComponents};
use super::params::{ModelParams, ParamInit};
use super::{Architecture, DEFAULT_BETA};
use crate::config::KvConfig;
use crate::datacube::Shard;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs over which the KL weight ramps linearly up to `beta`; 0 disables.
    pub kl_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: DEFAULT_BETA,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            kl_warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam decays must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }

    /// Reads `train.*` keys; the seed comes from the caller.
    pub fn from_config(cfg: &KvConfig, seed: u64) -> Result<Self> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            beta: cfg.get_or("train.beta", d.beta)?,
            learning_rate: cfg.get_or("train.learning_rate", d.learning_rate)?,
            epochs: cfg.get_or("train.epochs", d.epochs)?,
            batch_size: cfg.get_or("train.batch_size", d.batch_size)?,
            seed,
            adam_beta1: cfg.get_or("train.adam_beta1", d.adam_beta1)?,
            adam_beta2: cfg.get_or("train.adam_beta2", d.adam_beta2)?,
            adam_eps: cfg.get_or("train.adam_eps", d.adam_eps)?,
            kl_warmup_epochs: cfg.get_or("train.kl_warmup_epochs", d.kl_warmup_epochs)?,
        };
        c.validate()?;
        Ok(c)
    }

    fn beta_at(&self, epoch: usize) -> f64 {
        if self.kl_warmup_epochs == 0 {
            self.beta
        } else {
            self.beta * ((epoch + 1) as f64 / self.kl_warmup_epochs as f64).min(1.0)
        }
    }
}

/// Shard-weighted mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_ce: f64,
    pub mean_kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochLosses>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_total).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,mean_total,mean_ce,mean_kl")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.mean_total, e.mean_ce, e.mean_kl)?;
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Tensor], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (k, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Trains a freshly initialized model; the architecture is taken from the
/// shards' geometry with the standard layer layout.
pub fn train(shards: &[Shard], config: &TrainConfig) -> Result<(ModelParams, LossHistory)> {
    let first = shards
        .first()
        .ok_or_else(|| Error::config("training needs at least one shard"))?;
    let arch = Architecture::standard(first.extent(), first.channels());
    let init = ModelParams::new(arch, *first.axis(), config.beta, ParamInit::HeUniform { seed: config.seed })?;
    train_with_init(shards, init, config)
}

/// Adam on `CE / B + beta * KL`, shuffling shards every epoch.
///
/// Deterministic per `config.seed`. Stops with [`Error::NonFiniteLoss`] as
/// soon as any loss component is not finite.
pub fn train_with_init(
    shards: &[Shard],
    mut params: ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, LossHistory)> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::config("training needs at least one shard"));
    }
    params.set_beta(config.beta);
    let arch = *params.architecture();
    for s in shards {
        super::model::check_shard(s, &arch)?;
    }
    let mut order_rng = seeds::indexed(config.seed, seeds::TRAIN, 1);
    let mut noise_rng = seeds::indexed(config.seed, seeds::TRAIN, 2);
    let mut adam = Adam::new(&params);
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..shards.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let beta = config.beta_at(epoch);
        let mut acc = LossComponents::default();
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&Shard> = chunk.iter().map(|&i| &shards[i]).collect();
            let batch = stack_shards(&members, &arch)?;
            let noise: Vec<f64> = (0..members.len() * arch.latent)
                .map(|_| noise_rng.sample(StandardNormal))
                .collect();
            let (parts, grads) = params.loss_and_gradients(&batch, beta, Some(noise))?;
            for (component, value) in [("total", parts.total), ("ce", parts.ce), ("kl", parts.kl)] {
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        component,
                        value,
                    });
                }
            }
            adam.update(&mut params, &grads, config);
            let w = members.len() as f64;
            acc.total += parts.total * w;
            acc.ce += parts.ce * w;
            acc.kl += parts.kl * w;
        }
        let n = shards.len() as f64;
        history.epochs.push(EpochLosses {
            epoch,
            mean_total: acc.total / n,
            mean_ce: acc.ce / n,
            mean_kl: acc.kl / n,
        });
    }
    Ok((params, history))
}
