//! Generates the standard bulk cube, injects clustered peak shifts and
//! writes both cubes and the truth mask.
//!
//! cargo run --release --example synthesize_cube -- --shift-ev 2.5

mod common;

use std::path::PathBuf;

use clap::Parser;
use eels_cvae::datacube::save_esi;
use eels_cvae::synth::default_axis;

#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    run: common::RunArgs,
    /// Output directory; defaults to one under the temp dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let out = common::out_dir(cli.out, "synthesize")?;
    let bulk = common::bulk(cli.run.seed)?;
    let (cube, mask) = common::injected(&bulk, &cli.run)?;

    let axis = default_axis();
    println!(
        "{}x{} pixels, {} channels from {} to {} eV",
        cube.width(),
        cube.height(),
        axis.channels(),
        axis.offset_ev(),
        axis.last_energy()
    );
    println!(
        "{} anomalous pixels ({:.1}%) shifted by {} eV",
        mask.count(),
        100.0 * mask.fraction(),
        cli.run.shift_ev
    );
    // the shifted segment holds the Fe L3 and L2 white lines
    let edge = axis.window(700.0, 730.0)?;
    for (name, c) in [("bulk", &bulk), ("injected", &cube)] {
        let (x, y) = mask.coords().next().unwrap_or((0, 0));
        let s = &c.spectrum(x, y)[edge.clone()];
        let peak = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0);
        println!("{name} L3 maximum at pixel ({x}, {y}): {:.1} eV", axis.energy(edge.start + peak));
    }

    save_esi(&bulk, out.join("bulk.esi"))?;
    save_esi(&cube, out.join("injected.esi"))?;
    mask.write_pgm(std::fs::File::create(out.join("mask.pgm"))?)?;
    mask.write_csv(std::fs::File::create(out.join("mask.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}
