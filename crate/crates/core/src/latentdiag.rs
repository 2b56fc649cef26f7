//! Latent-space diagnostics: cosine similarities between the posterior
//! means of bulk shards and their anomaly-injected counterparts.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;

use crate::cvae::{encode_batch, prepare_input, ModelParams};
use crate::datacube::{shard_at, Datacube, Shard};
use crate::detect::write_pgm16;
use crate::error::{Error, Result};
use crate::seeds;
use crate::synth::{inject_peak_shift, AnomalySpec, Disc};

pub const DEFAULT_PAIRS: usize = 64;
/// Radius of the single disc injected into each paired shard.
pub const DEFAULT_PAIR_RADIUS: f64 = 3.0;

const PAIRS_STREAM: &str = "pairs";
const ENCODE_BATCH: usize = 8;

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension("cosine inputs", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("cosine similarity with a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalized shards over the model window, in pairs that share an
/// origin and differ only inside one injected disc.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub bulk: Vec<Shard>,
    pub injected: Vec<Shard>,
    pub discs: Vec<Disc>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOptions {
    pub count: usize,
    pub shift_ev: f64,
    pub radius: f64,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            count: DEFAULT_PAIRS,
            shift_ev: 2.5,
            radius: DEFAULT_PAIR_RADIUS,
            seed: 0,
        }
    }
}

impl PairSet {
    /// Draws `count` distinct shard origins from `cube` (raw counts, ideally
    /// a region the model never saw) and injects one disc at a random
    /// position inside each block.
    pub fn build(cube: &Datacube, params: &ModelParams, options: PairOptions) -> Result<Self> {
        let extent = params.architecture().extent;
        if cube.width() < extent || cube.height() < extent {
            return Err(Error::dimension(
                "pair source cube",
                format!("at least {extent}x{extent}"),
                format!("{}x{}", cube.width(), cube.height()),
            ));
        }
        let nx = cube.width() - extent + 1;
        let ny = cube.height() - extent + 1;
        if options.count > nx * ny {
            return Err(Error::config(format!(
                "{} pairs requested but only {} distinct shard origins exist",
                options.count,
                nx * ny
            )));
        }
        let mut rng = seeds::substream(options.seed, PAIRS_STREAM);
        let origins = sample(&mut rng, nx * ny, options.count);
        let margin = options.radius.ceil() as usize;
        let (lo, hi) = (margin.min(extent / 2), extent.saturating_sub(margin).max(extent / 2 + 1));
        let mut set = PairSet {
            bulk: Vec::with_capacity(options.count),
            injected: Vec::with_capacity(options.count),
            discs: Vec::with_capacity(options.count),
        };
        for (i, k) in origins.into_iter().enumerate() {
            let origin = (k % nx, k / nx);
            let block = cube.region(origin, extent, extent)?;
            let disc = Disc::new(
                rng.random_range(lo..hi) as f64,
                rng.random_range(lo..hi) as f64,
                options.radius,
            );
            let spec = AnomalySpec {
                seed: seeds::substream_seed(options.seed, PAIRS_STREAM).wrapping_add(i as u64),
                ..AnomalySpec::new(options.shift_ev, vec![disc])
            };
            let (injected, _) = inject_peak_shift(&block, &spec)?;
            let norm = |c: &Datacube| -> Result<Shard> {
                Ok(shard_at(&prepare_input(c, params)?, (0, 0), extent)?.with_origin(origin))
            };
            set.bulk.push(norm(&block)?);
            set.injected.push(norm(&injected)?);
            set.discs.push(disc);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.bulk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bulk.is_empty()
    }
}

/// Square matrix, row `i` a bulk shard and column `j` an injected one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn diagonal_mean(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum::<f64>() / self.n as f64
    }

    /// Mean over `i != j`; `NaN` for a 1×1 matrix.
    pub fn off_diagonal_mean(&self) -> f64 {
        let total: f64 = self.values.iter().sum();
        let diag: f64 = (0..self.n).map(|i| self.get(i, i)).sum();
        (total - diag) / (self.n * self.n - self.n) as f64
    }

    /// `n` rows of `n` comma-separated values, full precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.values.chunks_exact(self.n) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// 16-bit heatmap with `[-1, 1]` mapped onto `[0, 65535]`.
    pub fn write_pgm<W: Write>(&self, out: W) -> Result<()> {
        write_pgm16(out, self.n, self.n, &self.values)
    }
}

fn encode_means(shards: &[Shard], params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(shards.len());
    for chunk in shards.chunks(ENCODE_BATCH) {
        let refs: Vec<&Shard> = chunk.iter().collect();
        out.extend(encode_batch(&refs, params)?.into_iter().map(|c| c.mu));
    }
    Ok(out)
}

/// Cosine similarities of the posterior means (not samples, so the matrix
/// is deterministic).
pub fn similarity_matrix(pairs: &PairSet, params: &ModelParams) -> Result<SimilarityMatrix> {
    if pairs.is_empty() {
        return Err(Error::config("similarity matrix of an empty pair set"));
    }
    let bulk = encode_means(&pairs.bulk, params)?;
    let injected = encode_means(&pairs.injected, params)?;
    let n = bulk.len();
    let mut values = Vec::with_capacity(n * n);
    for a in &bulk {
        for b in &injected {
            values.push(cosine_similarity(a, b)?);
        }
    }
    Ok(SimilarityMatrix { n, values })
}
