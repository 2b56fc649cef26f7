//! Encodes 64 held-out bulk shards and their injected twins and compares
//! latent means by cosine similarity. Matched pairs sit on the diagonal.
//!
//! cargo run --release --example latent_similarity -- --epochs 200

mod common;

use std::path::PathBuf;

use clap::Parser;
use eels_cvae::latentdiag::{similarity_matrix, PairOptions, PairSet};

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let out = common::out_dir(cli.out, "latent")?;
    let params = common::trained(&common::bulk(cli.run.seed)?, &cli.run)?;
    let held_out = common::bulk(cli.run.seed + 1000)?;

    for shift_ev in [cli.run.shift_ev, 0.0] {
        let options = PairOptions {
            shift_ev,
            seed: cli.run.seed,
            ..PairOptions::default()
        };
        let pairs = PairSet::build(&held_out, &params, options)?;
        let sim = similarity_matrix(&pairs, &params)?;
        println!(
            "{shift_ev} eV: {} pairs, mean diagonal {:.4}, mean off-diagonal {:.4}",
            pairs.len(),
            sim.diagonal_mean(),
            sim.off_diagonal_mean()
        );
        if shift_ev != 0.0 {
            sim.write_pgm(std::fs::File::create(out.join("similarity.pgm"))?)?;
            sim.write_csv(std::fs::File::create(out.join("similarity.csv"))?)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
