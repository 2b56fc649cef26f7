//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use eels_cvae::cvae::{Architecture, ModelParams, ParamInit};
use eels_cvae::datacube::{Datacube, EnergyAxis};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use ndtensor::gradcheck::{central_difference, check_graph, relative_error, GradCheck, DEFAULT_FLOOR, DEFAULT_STEP};
use ndtensor::ops::softmax_energy;
use ndtensor::{conv3d_output_shape, Conv3dSpec, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Otsu by exhaustive scan: every interior edge of a `bins`-bin histogram
/// over `[min, max]`, scored by the between-class variance of bin centres
/// summed directly for each candidate. Ties keep the lowest edge, and
/// edges that leave a class empty are skipped.
pub fn brute_force_otsu(values: &[f64], bins: usize) -> Option<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return None;
    }
    let width = (max - min) / bins as f64;
    let bin = |v: f64| (((v - min) / width).floor() as usize).min(bins - 1);
    let center = |i: usize| min + (i as f64 + 0.5) * width;
    let n = values.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    for t in 1..bins {
        let (lo, hi): (Vec<usize>, Vec<usize>) = values.iter().map(|&v| bin(v)).partition(|&b| b < t);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let mean = |class: &[usize]| class.iter().map(|&b| center(b)).sum::<f64>() / class.len() as f64;
        let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let between = w0 * w1 * (mean(&lo) - mean(&hi)).powi(2);
        // partitions repeat across empty bins; strict comparison keeps the first
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((min + t as f64 * width, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Random value set drawn from one of several shapes, including heavy
/// duplication and tiny ranges.
pub fn random_value_set(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(2..600);
    match rng.random_range(0..5) {
        0 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1 => {
            let a = Normal::new(rng.random_range(0.0..0.5), rng.random_range(0.01..0.1)).unwrap();
            let b = Normal::new(rng.random_range(0.5..1.0), rng.random_range(0.01..0.1)).unwrap();
            let split = rng.random_range(0.05..0.95);
            (0..n)
                .map(|_| if rng.random_bool(split) { a.sample(rng) } else { b.sample(rng) })
                .collect()
        }
        2 => (0..n).map(|_| rng.random_range(0..7) as f64).collect(),
        3 => {
            let d = Normal::new(0.99, 1e-3).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        _ => (0..n).map(|_| rng.random_range(0.0f64..1.0).powi(6)).collect(),
    }
}

/// Principal directions of the sample covariance, one per column, ordered
/// by decreasing eigenvalue.
pub fn covariance_eigenvectors(m: &Array2<f64>) -> DMatrix<f64> {
    let (n, e) = m.dim();
    let x = DMatrix::from_fn(n, e, |i, j| m[[i, j]]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, e, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(e, e, |i, j| eig.eigenvectors[(i, order[j])])
}

/// Largest entrywise gap between the PCA components (rows) and the oracle
/// eigenvectors (columns), each compared up to sign.
pub fn component_mismatch(components: &Array2<f64>, oracle: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (c, row) in components.rows().into_iter().enumerate() {
        let col = oracle.column(c);
        let sign = if row.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (a, b) in row.iter().zip(col.iter()) {
            worst = worst.max((a - sign * b).abs());
        }
    }
    worst
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, e: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, e), |_| rng.random_range(-1.0..1.0))
}

/// Random positive cube with `channels` channels from 700 eV.
pub fn random_cube(rng: &mut ChaCha8Rng, width: usize, height: usize, channels: usize) -> Datacube {
    let axis = EnergyAxis::new(700.0, 0.5, channels).unwrap();
    let data = (0..width * height * channels)
        .map(|_| rng.random_range(0.0..1000.0f64).round())
        .collect();
    Datacube::new(width, height, axis, data).unwrap()
}

pub fn toy_params(seed: u64) -> ModelParams {
    let arch = Architecture::toy();
    let axis = EnergyAxis::new(700.0, 0.5, arch.channels).unwrap();
    ModelParams::new(arch, axis, 1.2, ParamInit::HeUniform { seed }).unwrap()
}

/// Batch of `b` random unit-sum spectra shaped for `arch`.
pub fn random_batch(rng: &mut ChaCha8Rng, arch: &Architecture, b: usize) -> Tensor {
    let shape = [b, 1, arch.extent, arch.extent, arch.channels];
    softmax_energy(&Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)))
}

/// Full-loss gradient check on the reduced model, plus the parameters whose
/// central difference straddles a kink of leaky_relu or the logvar clamp.
pub struct ModelCheck {
    pub report: GradCheck,
    pub kinks: Vec<usize>,
    /// Worst relative error over the entries not explained by a kink.
    pub unexplained: f64,
}

/// Every parameter gradient of the full loss on the reduced model against
/// central differences, with the reparameterization noise frozen.
pub fn toy_model_gradcheck(seed: u64) -> GradCheck {
    toy_model_check(seed, f64::INFINITY).report
}

/// As [`toy_model_gradcheck`]. Each entry worse than `tolerance` is
/// re-probed one-sidedly: across a kink the forward and backward slopes
/// differ by about twice the central-difference error, while a smooth loss
/// with a wrong gradient has one-sided slopes within O(step) of each other.
pub fn toy_model_check(seed: u64, tolerance: f64) -> ModelCheck {
    let mut rng = rng(seed);
    let params = toy_params(seed);
    let arch = *params.architecture();
    let batch = random_batch(&mut rng, &arch, 1 + (seed % 2) as usize);
    let b = batch.shape()[0];
    let noise: Vec<f64> = (0..b * arch.latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = params.loss_and_gradients(&batch, 1.2, Some(noise.clone())).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let x0 = params.flatten();
    let mut probe = params.clone();
    let mut loss = |x: &[f64]| {
        probe.set_flat(x).unwrap();
        probe.loss(&batch, 1.2, Some(noise.clone())).unwrap().total
    };
    let numeric = central_difference(&mut loss, &x0, DEFAULT_STEP);
    let report = GradCheck::compare(&analytic, &numeric, DEFAULT_FLOOR);
    let mut kinks = Vec::new();
    if report.max_relative_error >= tolerance {
        let f0 = loss(&x0);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            if relative_error(a, n, DEFAULT_FLOOR) < tolerance {
                continue;
            }
            let mut x = x0.clone();
            x[i] += DEFAULT_STEP;
            let forward = (loss(&x) - f0) / DEFAULT_STEP;
            x[i] = x0[i] - DEFAULT_STEP;
            let backward = (f0 - loss(&x)) / DEFAULT_STEP;
            if (forward - backward).abs() >= (n - a).abs() {
                kinks.push(i);
            }
        }
    }
    let unexplained = (0..analytic.len())
        .filter(|i| !kinks.contains(i))
        .map(|i| relative_error(analytic[i], numeric[i], DEFAULT_FLOOR))
        .fold(0.0, f64::max);
    ModelCheck {
        report,
        kinks,
        unexplained,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn projected(tape: &mut Tape, out: Var, probe: &Tensor) -> Var {
    let p = tape.constant(probe.clone());
    tape.dot(out, p).expect("probe matches output")
}

/// `trials` seeded gradient checks of every differentiable tape operation,
/// each on freshly drawn shapes and values. Returns `(op, report)` pairs.
pub fn op_gradcheck_suite(trials: u64) -> Vec<(&'static str, GradCheck)> {
    let mut out = Vec::new();
    for trial in 0..trials {
        let mut r = rng(10_000 + trial);
        let rng = &mut r;

        // convolution and its adjoint on random geometry
        let cin = rng.random_range(1..=2);
        let cout = rng.random_range(1..=3);
        let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=3));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=2));
        let pad: [usize; 3] = std::array::from_fn(|i| rng.random_range(0..k[i]));
        let ext: [usize; 3] = std::array::from_fn(|_| rng.random_range(3..=6));
        let spec = Conv3dSpec::new(stride, pad);
        let small = conv3d_output_shape(ext, k, spec).unwrap();
        let kernel = uniform(rng, &[cout, cin, k[0], k[1], k[2]]);
        let x = uniform(rng, &[1, cin, ext[0], ext[1], ext[2]]);
        let y = uniform(rng, &[1, cout, small[0], small[1], small[2]]);
        let (px, py) = (uniform(rng, y.shape()), uniform(rng, x.shape()));
        out.push((
            "conv3d",
            check_graph(&[x.clone(), kernel.clone()], |t, v| {
                let o = t.conv3d(v[0], v[1], spec).unwrap();
                projected(t, o, &px)
            }),
        ));
        out.push((
            "conv3d_transpose",
            check_graph(&[y, kernel], |t, v| {
                let o = t.conv3d_transpose(v[0], v[1], spec, ext).unwrap();
                projected(t, o, &py)
            }),
        ));

        let (b, f, g) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=5));
        let lin = [uniform(rng, &[b, f]), uniform(rng, &[g, f]), uniform(rng, &[g])];
        let probe = uniform(rng, &[b, g]);
        out.push((
            "linear",
            check_graph(&lin, |t, v| {
                let o = t.linear(v[0], v[1], v[2]).unwrap();
                projected(t, o, &probe)
            }),
        ));

        let bias_in = [uniform(rng, &[1, cin, 2, 2, 3]), uniform(rng, &[cin])];
        let probe = uniform(rng, &[1, cin, 2, 2, 3]);
        out.push((
            "add_channel_bias",
            check_graph(&bias_in, |t, v| {
                let o = t.add_channel_bias(v[0], v[1]).unwrap();
                projected(t, o, &probe)
            }),
        ));

        // kinks of leaky_relu and clamp kept at least 1e-2 away
        let away = Tensor::from_fn([12], |_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let probe = uniform(rng, &[12]);
        out.push((
            "leaky_relu",
            check_graph(std::slice::from_ref(&away), |t, v| {
                let o = t.leaky_relu(v[0], 0.1).unwrap();
                projected(t, o, &probe)
            }),
        ));
        out.push((
            "clamp",
            check_graph(&[away.map(|v| 2.0 * v)], |t, v| {
                let o = t.clamp(v[0], -1.0 - 1e-3, 1.0 + 1e-3);
                projected(t, o, &probe)
            }),
        ));

        let pair = [uniform(rng, &[2, 6]), uniform(rng, &[2, 6])];
        let probe = uniform(rng, &[3, 4]);
        let factor = rng.random_range(-2.0..2.0);
        out.push((
            "add/scale/reshape/sum/dot",
            check_graph(&pair, |t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let s = t.scale(s, factor);
                let s = t.reshape(s, [3, 4]).unwrap();
                let d = projected(t, s, &probe);
                let q = t.dot(v[0], v[1]).unwrap();
                let e = t.sum(v[1]);
                let d = t.add(d, q).unwrap();
                t.add(d, e).unwrap()
            }),
        ));

        let j = rng.random_range(1..=5);
        let noise: Vec<f64> = (0..2 * j).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gauss = [uniform(rng, &[2, j]), uniform(rng, &[2, j])];
        let probe = uniform(rng, &[2, j]);
        out.push((
            "reparameterize",
            check_graph(&gauss, |t, v| {
                let z = t.reparameterize(v[0], v[1], noise.clone()).unwrap();
                projected(t, z, &probe)
            }),
        ));
        out.push(("kl_standard_normal", check_graph(&gauss, |t, v| t.kl_standard_normal(v[0], v[1]).unwrap())));

        let e = rng.random_range(2..=9);
        let target = softmax_energy(&uniform(rng, &[2, 1, 2, 2, e]).map(|v| 3.0 * v));
        let logits = uniform(rng, &[2, 1, 2, 2, e]).map(|v| 3.0 * v);
        out.push(("cross_entropy", check_graph(&[logits], |t, v| t.cross_entropy(target.clone(), v[0]).unwrap())));
    }
    out
}
