//! Shared setup for the examples: the standard 48×48 bulk cube and a
//! CVAE trained on it, cached in the temp directory between runs.
#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use eels_cvae::cvae::{load_checkpoint, save_checkpoint, ModelParams, TrainConfig};
use eels_cvae::datacube::Datacube;
use eels_cvae::pipeline::{model_window, train_on_cube, DEFAULT_TRAIN_STRIDE, MODEL_WINDOW_CHANNELS, MODEL_WINDOW_START_EV};
use eels_cvae::synth::{default_axis, generate_bulk, inject_peak_shift, AnomalyMask, AnomalySpec, SpectrumModel};
use eels_cvae::Result;

#[derive(Args, Debug, Clone, Copy)]
pub struct RunArgs {
    /// Seed for generation, training and injection.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Training epochs; fewer run faster but detect less reliably.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Peak shift of the injected clusters.
    #[arg(long, default_value_t = 2.5)]
    pub shift_ev: f64,
}

pub fn bulk(seed: u64) -> Result<Datacube> {
    generate_bulk(&SpectrumModel::default(), 48, 48, &default_axis(), seed)
}

/// Default clusters with their fill noise seeded by `seed`.
pub fn anomaly_spec(seed: u64, shift_ev: f64) -> AnomalySpec {
    AnomalySpec {
        seed,
        ..AnomalySpec::new(shift_ev, AnomalySpec::default_clusters(48, 48))
    }
}

pub fn injected(bulk: &Datacube, args: &RunArgs) -> Result<(Datacube, AnomalyMask)> {
    inject_peak_shift(bulk, &anomaly_spec(args.seed, args.shift_ev))
}

/// Trains on `bulk` with the default configuration, or loads the model a
/// previous run with the same seed and epochs left behind.
pub fn trained(bulk: &Datacube, args: &RunArgs) -> Result<ModelParams> {
    let cache = std::env::temp_dir().join(format!("eels-cvae-example-s{}-e{}.cvw", args.seed, args.epochs));
    if let Ok(params) = load_checkpoint(&cache) {
        println!("loaded cached model {}", cache.display());
        return Ok(params);
    }
    let window = model_window(bulk.axis(), MODEL_WINDOW_START_EV, MODEL_WINDOW_CHANNELS)?;
    let config = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    println!("training {} epochs on 16 shards ...", args.epochs);
    let start = Instant::now();
    let (params, history) = train_on_cube(bulk, &window, DEFAULT_TRAIN_STRIDE, &config)?;
    let totals = history.totals();
    if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
        println!("loss {first:.2} -> {last:.2} in {:.0} s", start.elapsed().as_secs_f64());
    }
    save_checkpoint(&params, &cache)?;
    Ok(params)
}

/// `dir`, created, or a fresh directory under the temp dir.
pub fn out_dir(dir: Option<PathBuf>, name: &str) -> std::io::Result<PathBuf> {
    let dir = dir.unwrap_or_else(|| std::env::temp_dir().join(format!("eels-cvae-{name}")));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
