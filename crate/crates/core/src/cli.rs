//! Command-line front end. Every subcommand reads a `key = value` config,
//! applies `--set` overrides and `--seed`, writes a resolved snapshot to
//! `<out>/resolved.cfg` and then its outputs next to it.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::KvConfig;
use crate::cvae::{
    load_checkpoint, reconstruct_cube_with_stride, save_checkpoint, train_with_init, Architecture,
    ModelParams, ParamInit, TrainConfig,
};
use crate::datacube::{load_esi, save_esi, SHARD_EXTENT};
use crate::detect::{classify, pcc_map, pr_auc, pr_curve, write_pr_csv, DetectOptions, DetectionReport};
use crate::error::{Error, Result};
use crate::latentdiag::{similarity_matrix, PairOptions, PairSet, DEFAULT_PAIRS, DEFAULT_PAIR_RADIUS};
use crate::pipeline::{
    f1_sweep, method_pcc_map, model_window, pcc_window, training_shards, Method, PcaFit, Separation, SweepOptions,
    DEFAULT_PCA_COMPONENTS, DEFAULT_RECONSTRUCT_STRIDE, DEFAULT_TRAIN_STRIDE, MODEL_WINDOW_CHANNELS,
    MODEL_WINDOW_START_EV,
};
use crate::synth::{axis_from_config, generate_bulk, inject_peak_shift, AnomalyMask, AnomalySpec, SpectrumModel};

pub const SNAPSHOT_FILE: &str = "resolved.cfg";

#[derive(Debug, Parser)]
#[command(name = "eels-cvae", version, about = "Spectral anomaly detection with a 3D convolutional VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bulk cube (cube.esi).
    Gen(Common),
    /// Inject clustered peak shifts (cube.esi, mask.pgm, mask.csv).
    Inject(Common),
    /// Train the CVAE on a bulk cube (model.cvw, loss.csv).
    Train(Common),
    /// Reconstruct a cube over the model window (recon.esi).
    Reconstruct(Common),
    /// PCC map, Otsu classification and report for a reconstruction.
    Detect(Common),
    /// Score the CVAE and PCA baselines against a truth mask.
    Eval(Common),
    /// F1 of every method across shift magnitudes (sweep.csv).
    Sweep(Common),
    /// Cosine similarities between paired latent encodings.
    #[command(name = "latent-sim")]
    LatentSim(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen(c) => gen(Run::new(c)?),
        Command::Inject(c) => inject(Run::new(c)?),
        Command::Train(c) => train(Run::new(c)?),
        Command::Reconstruct(c) => reconstruct(Run::new(c)?),
        Command::Detect(c) => detect(Run::new(c)?),
        Command::Eval(c) => eval(Run::new(c)?),
        Command::Sweep(c) => sweep(Run::new(c)?),
        Command::LatentSim(c) => latent_sim(Run::new(c)?),
    }
}

struct Run {
    cfg: KvConfig,
    seed: u64,
    out: PathBuf,
}

impl Run {
    fn new(common: Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => KvConfig::load(path)?,
            None => KvConfig::new(),
        };
        for pair in &common.set {
            cfg.set_pair(pair)?;
        }
        if let Some(seed) = common.seed {
            cfg.set("seed", seed);
        }
        let seed = cfg.get_or("seed", 0u64)?;
        Ok(Run {
            cfg,
            seed,
            out: common.out,
        })
    }

    /// Rejects unknown keys, creates the output directory and writes the
    /// snapshot. Call after every key has been read.
    fn begin(&self) -> Result<()> {
        self.cfg.finish()?;
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.path(SNAPSHOT_FILE);
        std::fs::write(&path, self.cfg.snapshot()).map_err(|e| Error::io(&path, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, key: &str) -> Result<PathBuf> {
        self.cfg.require::<String>(key).map(PathBuf::from)
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn detect_options(&self) -> Result<DetectOptions> {
        let d = DetectOptions::default();
        let options = DetectOptions {
            bins: self.cfg.get_or("detect.bins", d.bins)?,
            gamma: self.cfg.get_or("detect.gamma", d.gamma)?,
        };
        if options.bins < 2 {
            return Err(Error::config("detect.bins must be at least 2"));
        }
        Ok(options)
    }

    fn pca_settings(&self) -> Result<(Vec<usize>, PcaFit)> {
        let ks = self.cfg.get_list_or("pca.components", &DEFAULT_PCA_COMPONENTS)?;
        let fit = match self.cfg.get_str_or("pca.fit", "target").as_str() {
            "target" => PcaFit::Target,
            "bulk" => PcaFit::Bulk,
            other => return Err(Error::config(format!("pca.fit must be `target` or `bulk`, got `{other}`"))),
        };
        Ok((ks, fit))
    }

    fn reconstruct_stride(&self) -> Result<usize> {
        let stride = self.cfg.get_or("reconstruct.stride", DEFAULT_RECONSTRUCT_STRIDE)?;
        if stride == 0 || stride > SHARD_EXTENT {
            return Err(Error::config(format!(
                "reconstruct.stride must lie in 1..={SHARD_EXTENT}, got {stride}"
            )));
        }
        Ok(stride)
    }
}

fn load_mask(path: &Path, width: usize, height: usize) -> Result<AnomalyMask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    AnomalyMask::read_csv(BufReader::new(file), width, height)
}

fn gen(run: Run) -> Result<()> {
    let width: usize = run.cfg.require("width")?;
    let height: usize = run.cfg.require("height")?;
    let axis = axis_from_config(&run.cfg)?;
    let model = SpectrumModel::from_config(&run.cfg)?;
    model.validate(&axis)?;
    run.begin()?;
    let cube = generate_bulk(&model, width, height, &axis, run.seed)?;
    save_esi(&cube, run.path("cube.esi"))?;
    println!("wrote {width}x{height}x{} cube", axis.channels());
    Ok(())
}

fn inject(run: Run) -> Result<()> {
    let cube = load_esi(run.input("input")?)?;
    let spec = AnomalySpec::from_config(&run.cfg, cube.width(), cube.height(), run.seed)?;
    run.begin()?;
    let (injected, mask) = inject_peak_shift(&cube, &spec)?;
    save_esi(&injected, run.path("cube.esi"))?;
    run.write_with("mask.pgm", |w| mask.write_pgm(w))?;
    run.write_with("mask.csv", |w| mask.write_csv(w))?;
    println!("injected {} eV into {} pixels ({:.2}%)", spec.shift_ev, mask.count(), 100.0 * mask.fraction());
    Ok(())
}

fn train(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let start = run.cfg.get_or("window.start_ev", MODEL_WINDOW_START_EV)?;
    let channels = run.cfg.get_or("window.channels", MODEL_WINDOW_CHANNELS)?;
    let stride = run.cfg.get_or("train.stride", DEFAULT_TRAIN_STRIDE)?;
    let config = TrainConfig::from_config(&run.cfg, run.seed)?;
    let arch = Architecture::from_config(&run.cfg, SHARD_EXTENT, channels)?;
    run.begin()?;
    let cube = load_esi(input)?;
    let window = model_window(cube.axis(), start, channels)?;
    let shards = training_shards(&cube, &window, stride)?;
    let init = ModelParams::new(arch, window, config.beta, ParamInit::HeUniform { seed: run.seed })?;
    let (params, history) = train_with_init(&shards, init, &config)?;
    save_checkpoint(&params, run.path("model.cvw"))?;
    run.write_with("loss.csv", |w| history.write_csv(w))?;
    if let Some(last) = history.epochs.last() {
        println!("{} epochs on {} shards, final mean loss {:.4}", history.len(), shards.len(), last.mean_total);
    }
    Ok(())
}

fn reconstruct(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let model = run.input("model")?;
    let stride = run.reconstruct_stride()?;
    run.begin()?;
    let params = load_checkpoint(model)?;
    let cube = load_esi(input)?;
    let recon = reconstruct_cube_with_stride(&cube, &params, stride)?;
    save_esi(&recon, run.path("recon.esi"))?;
    Ok(())
}

fn detect(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let recon_path = run.input("reconstruction")?;
    let truth_path = run.cfg.get_str("truth").map(PathBuf::from);
    let options = run.detect_options()?;
    run.begin()?;
    let recon = load_esi(recon_path)?;
    let cube = load_esi(input)?;
    let original = if cube.axis() == recon.axis() {
        cube
    } else {
        cube.crop_to_axis(recon.axis())?
    };
    let original = original.normalize_spectra()?;
    let recon = if recon.is_normalized() { recon } else { recon.normalize_spectra()? };
    let map = pcc_map(&original, &recon, pcc_window(recon.axis())?)?;
    let truth = match truth_path {
        Some(p) => load_mask(&p, map.width(), map.height())?,
        None => AnomalyMask::empty(map.width(), map.height()),
    };
    let report = DetectionReport::new(classify(&map, options), &truth)?;
    run.write_with("pcc.pgm", |w| map.write_pgm(w))?;
    run.write_with("pcc.csv", |w| map.write_csv(w))?;
    run.write_with("histogram.csv", |w| map.write_histogram_csv(&truth, options.bins, w))?;
    run.write_with("report.csv", |w| report.write_csv(w))?;
    run.write_with("predicted.pgm", |w| report.predicted.write_pgm(w))?;
    run.write_with("predicted.csv", |w| report.predicted.write_csv(w))?;
    println!(
        "bimodal {}, {} pixels flagged, F1 {:.4}",
        report.bimodal,
        report.predicted.count(),
        report.metrics.f1
    );
    Ok(())
}

fn methods(ks: &[usize]) -> Vec<Method> {
    std::iter::once(Method::Vae).chain(ks.iter().map(|&k| Method::Pca(k))).collect()
}

fn eval(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let truth_path = run.input("truth")?;
    let model = run.input("model")?;
    let bulk_path = run.cfg.get_str("bulk").map(PathBuf::from);
    let (ks, pca_fit) = run.pca_settings()?;
    if pca_fit == PcaFit::Bulk && bulk_path.is_none() {
        return Err(Error::config("pca.fit = bulk needs the `bulk` key"));
    }
    let steps = run.cfg.get_or("pr.steps", 101usize)?;
    let options = SweepOptions {
        magnitudes: Vec::new(),
        methods: methods(&ks),
        pca_fit,
        reconstruct_stride: run.reconstruct_stride()?,
        detect: run.detect_options()?,
    };
    run.begin()?;
    let params = load_checkpoint(model)?;
    let cube = load_esi(input)?;
    let truth = load_mask(&truth_path, cube.width(), cube.height())?;
    let bulk = match &bulk_path {
        Some(p) => load_esi(p)?,
        None => cube.clone(),
    };
    let mut rows = Vec::new();
    for &method in &options.methods {
        let map = method_pcc_map(method, &cube, &bulk, &params, &options)?;
        let report = DetectionReport::new(classify(&map, options.detect), &truth)?;
        let curve = pr_curve(&map, &truth, steps)?;
        let separation = Separation::new(&map, &truth).map(|s| s.ratio()).ok();
        run.write_with(&format!("pr_{}.csv", method.name()), |w| write_pr_csv(&curve, w))?;
        rows.push(format!(
            "{},{},{},{}",
            method.name(),
            report.csv_row(),
            pr_auc(&curve),
            separation.map_or("NA".into(), |s| s.to_string())
        ));
    }
    run.write_with("eval.csv", |w| {
        writeln!(w, "method,{},pr_auc,separation", DetectionReport::csv_header())?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))?;
        Ok(())
    })?;
    for r in &rows {
        println!("{r}");
    }
    Ok(())
}

fn sweep(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let model = run.input("model")?;
    let (ks, pca_fit) = run.pca_settings()?;
    let defaults = SweepOptions::default();
    let options = SweepOptions {
        magnitudes: run.cfg.get_list_or("sweep.magnitudes", &defaults.magnitudes)?,
        methods: methods(&ks),
        pca_fit,
        reconstruct_stride: run.reconstruct_stride()?,
        detect: run.detect_options()?,
    };
    let params = load_checkpoint(model)?;
    let cube = load_esi(input)?;
    let base = AnomalySpec::from_config(&run.cfg, cube.width(), cube.height(), run.seed)?;
    run.begin()?;
    let table = f1_sweep(&cube, &params, &base, &options)?;
    run.write_with("sweep.csv", |w| table.write_csv(w))?;
    println!("{} rows", table.entries.len());
    Ok(())
}

fn latent_sim(run: Run) -> Result<()> {
    let input = run.input("input")?;
    let model = run.input("model")?;
    let options = PairOptions {
        count: run.cfg.get_or("latent.pairs", DEFAULT_PAIRS)?,
        shift_ev: run.cfg.get_or("latent.shift_ev", 2.5)?,
        radius: run.cfg.get_or("latent.radius", DEFAULT_PAIR_RADIUS)?,
        seed: run.seed,
    };
    if options.count == 0 {
        return Err(Error::config("latent.pairs must be positive"));
    }
    run.begin()?;
    let params = load_checkpoint(model)?;
    let cube = load_esi(input)?;
    let pairs = PairSet::build(&cube, &params, options)?;
    let sim = similarity_matrix(&pairs, &params)?;
    run.write_with("similarity.csv", |w| sim.write_csv(w))?;
    run.write_with("similarity.pgm", |w| sim.write_pgm(w))?;
    run.write_with("latent_summary.csv", |w| {
        writeln!(w, "pairs,diagonal_mean,off_diagonal_mean")?;
        writeln!(w, "{},{},{}", sim.size(), sim.diagonal_mean(), sim.off_diagonal_mean())?;
        Ok(())
    })?;
    println!(
        "diagonal {:.4}, off-diagonal {:.4}",
        sim.diagonal_mean(),
        sim.off_diagonal_mean()
    );
    Ok(())
}

