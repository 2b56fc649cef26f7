//! Fits PCA with 3, 4 and 5 components to the normalized spectra of an
//! injected cube and scores the reconstructions exactly as the CVAE is
//! scored. Needs no training.
//!
//! cargo run --release --example pca_baseline -- --shift-ev 2.5

mod common;

use clap::Parser;
use eels_cvae::detect::{detect, DetectOptions};
use eels_cvae::pipeline::{model_window, PcaBaseline, Separation, DEFAULT_PCA_COMPONENTS, MODEL_WINDOW_CHANNELS, MODEL_WINDOW_START_EV};

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let bulk = common::bulk(cli.run.seed)?;
    let (cube, truth) = common::injected(&bulk, &cli.run)?;
    let window = model_window(cube.axis(), MODEL_WINDOW_START_EV, MODEL_WINDOW_CHANNELS)?;

    for k in DEFAULT_PCA_COMPONENTS {
        let baseline = PcaBaseline::fit(&cube, &window, k)?;
        let variance = baseline.model.explained_variance();
        let map = baseline.pcc_map(&cube)?;
        let report = detect(&map, &truth, DetectOptions::default())?;
        println!(
            "pca{k}: leading variances {:.2e}, separation {:.2} sd, bimodal {}, F1 {:.3}",
            variance[0],
            Separation::new(&map, &truth)?.ratio(),
            report.bimodal,
            report.metrics.f1
        );
    }
    Ok(())
}
