//! Reconstructs an injected cube with the trained CVAE, scores each pixel
//! by PCC and flags anomalies with Otsu's threshold behind the unimodality
//! check. The anomaly-free cube is run through the same detector.
//!
//! cargo run --release --example detect_anomalies -- --epochs 200

mod common;

use std::path::PathBuf;

use clap::Parser;
use eels_cvae::detect::{classify, detect, DetectOptions};
use eels_cvae::pipeline::{vae_pcc_map, Separation};

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let out = common::out_dir(cli.out, "detect")?;
    let bulk = common::bulk(cli.run.seed)?;
    let params = common::trained(&bulk, &cli.run)?;
    let (cube, truth) = common::injected(&bulk, &cli.run)?;

    let map = vae_pcc_map(&cube, &params)?;
    let report = detect(&map, &truth, DetectOptions::default())?;
    let sep = Separation::new(&map, &truth)?;
    println!(
        "PCC bulk mean {:.4}, anomalous mean {:.4}, {:.1} pooled sd apart",
        sep.bulk_mean,
        sep.anomalous_mean,
        sep.ratio()
    );
    println!("{}", eels_cvae::detect::DetectionReport::csv_header());
    println!("{}", report.csv_row());

    let clean = classify(&vae_pcc_map(&bulk, &params)?, DetectOptions::default());
    println!(
        "anomaly-free cube: variance ratio {:.3}, bimodal {}, {} pixels flagged",
        clean.ratio,
        clean.bimodal,
        clean.predicted.count()
    );

    map.write_pgm(std::fs::File::create(out.join("pcc.pgm"))?)?;
    report.predicted.write_pgm(std::fs::File::create(out.join("predicted.pgm"))?)?;
    map.write_histogram_csv(&truth, 64, std::fs::File::create(out.join("histogram.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}
