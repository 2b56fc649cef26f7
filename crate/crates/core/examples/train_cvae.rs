//! Trains the CVAE on shards of the standard bulk cube and saves the
//! checkpoint and per-epoch losses.
//!
//! cargo run --release --example train_cvae -- --epochs 20

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use eels_cvae::cvae::{save_checkpoint, TrainConfig};
use eels_cvae::pipeline::{model_window, training_shards, DEFAULT_TRAIN_STRIDE, MODEL_WINDOW_CHANNELS, MODEL_WINDOW_START_EV};
use eels_cvae::synth::{default_axis, generate_bulk, SpectrumModel};

#[derive(Parser)]
struct Cli {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Output directory; defaults to one under the temp dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let out = cli.out.unwrap_or_else(|| std::env::temp_dir().join("eels-cvae-train"));
    std::fs::create_dir_all(&out)?;

    let axis = default_axis();
    let bulk = generate_bulk(&SpectrumModel::default(), 48, 48, &axis, cli.seed)?;
    let window = model_window(&axis, MODEL_WINDOW_START_EV, MODEL_WINDOW_CHANNELS)?;
    let shards = training_shards(&bulk, &window, DEFAULT_TRAIN_STRIDE)?;
    let config = TrainConfig {
        epochs: cli.epochs,
        batch_size: cli.batch_size,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    println!(
        "{} shards of 24x24x{} from {} eV, beta {}",
        shards.len(),
        window.channels(),
        window.offset_ev(),
        config.beta
    );

    let start = Instant::now();
    let (params, history) = eels_cvae::cvae::train(&shards, &config)?;
    for (epoch, total) in history.totals().iter().enumerate() {
        println!("epoch {:>3}  loss {total:.3}", epoch + 1);
    }
    println!(
        "{} parameters trained in {:.1} s",
        params.parameter_count(),
        start.elapsed().as_secs_f64()
    );

    save_checkpoint(&params, out.join("model.cvw"))?;
    history.write_csv(std::fs::File::create(out.join("loss.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}
