//! F1 of the CVAE and the PCA baselines as the injected shift grows from
//! 1 to 6 eV, with clusters and fill noise fixed.
//!
//! cargo run --release --example shift_sweep -- --epochs 200

mod common;

use clap::Parser;
use eels_cvae::pipeline::{f1_sweep, std_dev, SweepOptions};

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let bulk = common::bulk(cli.run.seed)?;
    let params = common::trained(&bulk, &cli.run)?;
    let options = SweepOptions::default();
    let table = f1_sweep(&bulk, &params, &common::anomaly_spec(cli.run.seed, 0.0), &options)?;

    print!("{:>6}", "eV");
    for m in &options.methods {
        print!("{:>8}", m.name());
    }
    println!();
    for (i, &magnitude) in options.magnitudes.iter().enumerate() {
        print!("{magnitude:>6.1}");
        for &m in &options.methods {
            let f1 = table.f1_series(m)[i].1.unwrap_or(f64::NAN);
            print!("{f1:>8.3}");
        }
        println!();
    }
    for &m in &options.methods {
        let f1: Vec<f64> = table.f1_series(m).into_iter().filter_map(|(_, f)| f).collect();
        println!("{} F1 standard deviation {:.3}", m.name(), std_dev(&f1));
    }
    Ok(())
}
