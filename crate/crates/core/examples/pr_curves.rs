//! Precision-recall curves of every detector on the injected cube, swept
//! over the PCC threshold, with the area under each.
//!
//! cargo run --release --example pr_curves -- --epochs 200

mod common;

use std::path::PathBuf;

use clap::Parser;
use eels_cvae::detect::{pr_auc, pr_curve, write_pr_csv};
use eels_cvae::pipeline::{method_pcc_map, SweepOptions};

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
    #[arg(long, default_value_t = 201)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let out = common::out_dir(cli.out, "pr")?;
    let bulk = common::bulk(cli.run.seed)?;
    let params = common::trained(&bulk, &cli.run)?;
    let (cube, truth) = common::injected(&bulk, &cli.run)?;
    let options = SweepOptions::default();

    for &method in &options.methods {
        let map = method_pcc_map(method, &cube, &bulk, &params, &options)?;
        let points = pr_curve(&map, &truth, cli.steps)?;
        let best = points
            .iter()
            .map(|p| if p.precision + p.recall > 0.0 { 2.0 * p.precision * p.recall / (p.precision + p.recall) } else { 0.0 })
            .fold(0.0, f64::max);
        println!("{:>5}: AUC {:.3}, best F1 over thresholds {best:.3}", method.name(), pr_auc(&points));
        write_pr_csv(&points, std::fs::File::create(out.join(format!("pr_{}.csv", method.name())))?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
