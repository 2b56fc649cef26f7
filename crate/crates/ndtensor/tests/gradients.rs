//! Every differentiable tape operation against central finite differences.

use ndtensor::gradcheck::{check_graph as check, GradCheck};
use ndtensor::ops::softmax_energy;
use ndtensor::{conv3d_output_shape, Conv3dSpec, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 10;
const TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero by `gap`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `loss = <op(inputs), probe>` so that every output element contributes.
fn project(tape: &mut Tape, out: Var, probe: &Tensor) -> Var {
    let p = tape.constant(probe.clone());
    tape.dot(out, p).expect("probe shape")
}

fn assert_passes(name: &str, seed: u64, report: GradCheck, tolerance: f64) {
    assert!(
        report.max_relative_error < tolerance,
        "{name} seed {seed}: max relative error {:e} at index {} of {}",
        report.max_relative_error,
        report.worst_index,
        report.checked
    );
}

fn random_conv_case(rng: &mut ChaCha8Rng) -> ([usize; 5], [usize; 5], Conv3dSpec) {
    let cin = rng.random_range(1..=2);
    let cout = rng.random_range(1..=3);
    let kernel = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
    let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
    let padding = [rng.random_range(0..kernel[0]), rng.random_range(0..kernel[1]), rng.random_range(0..kernel[2])];
    let extent = [rng.random_range(3..=5), rng.random_range(3..=5), rng.random_range(3..=6)];
    let batch = rng.random_range(1..=2);
    (
        [batch, cin, extent[0], extent[1], extent[2]],
        [cout, cin, kernel[0], kernel[1], kernel[2]],
        Conv3dSpec::new(stride, padding),
    )
}

#[test]
fn conv3d_reference_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[1, 2, 5, 5, 8]);
    let k = random(&mut rng, &[3, 2, 3, 3, 3]);
    let spec = Conv3dSpec::new([2, 2, 2], [0, 0, 0]);
    let out = conv3d_output_shape([5, 5, 8], [3, 3, 3], spec).unwrap();
    let probe = random(&mut rng, &[1, 3, out[0], out[1], out[2]]);
    let report = check(&[x, k], |t, v| {
        let y = t.conv3d(v[0], v[1], spec).unwrap();
        project(t, y, &probe)
    });
    assert_passes("conv3d 1x2x5x5x8", 1, report, 1e-5);
}

#[test]
fn conv3d_random_shapes() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (xs, ks, spec) = random_conv_case(&mut rng);
        let out = conv3d_output_shape([xs[2], xs[3], xs[4]], [ks[2], ks[3], ks[4]], spec).unwrap();
        let x = random(&mut rng, &xs);
        let k = random(&mut rng, &ks);
        let probe = random(&mut rng, &[xs[0], ks[0], out[0], out[1], out[2]]);
        let report = check(&[x, k], |t, v| {
            let y = t.conv3d(v[0], v[1], spec).unwrap();
            project(t, y, &probe)
        });
        assert_passes("conv3d", seed, report, 1e-5);
    }
}

#[test]
fn conv3d_transpose_random_shapes() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (xs, ks, spec) = random_conv_case(&mut rng);
        let target = [xs[2], xs[3], xs[4]];
        let small = conv3d_output_shape(target, [ks[2], ks[3], ks[4]], spec).unwrap();
        let v = random(&mut rng, &[xs[0], ks[0], small[0], small[1], small[2]]);
        let k = random(&mut rng, &ks);
        let probe = random(&mut rng, &xs);
        let report = check(&[v, k], |t, vars| {
            let y = t.conv3d_transpose(vars[0], vars[1], spec, target).unwrap();
            project(t, y, &probe)
        });
        assert_passes("conv3d_transpose", seed, report, 1e-5);
    }
}

#[test]
fn linear_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (b, f, g) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
        let inputs = [random(&mut rng, &[b, f]), random(&mut rng, &[g, f]), random(&mut rng, &[g])];
        let probe = random(&mut rng, &[b, g]);
        let report = check(&inputs, |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            project(t, y, &probe)
        });
        assert_passes("linear", seed, report, 1e-6);
    }
}

#[test]
fn channel_bias_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let c = rng.random_range(1..=3);
        let shape = [rng.random_range(1..=2), c, 2, 3, rng.random_range(1..=4)];
        let inputs = [random(&mut rng, &shape), random(&mut rng, &[c])];
        let probe = random(&mut rng, &shape);
        let report = check(&inputs, |t, v| {
            let y = t.add_channel_bias(v[0], v[1]).unwrap();
            project(t, y, &probe)
        });
        assert_passes("add_channel_bias", seed, report, 1e-6);
    }
}

#[test]
fn leaky_relu_gradients_away_from_zero() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let slope = rng.random_range(0.01..0.5);
        let x = away_from_zero(&mut rng, &[3, 7], 1e-2);
        let probe = random(&mut rng, &[3, 7]);
        let report = check(&[x], |t, v| {
            let y = t.leaky_relu(v[0], slope).unwrap();
            project(t, y, &probe)
        });
        assert_passes("leaky_relu", seed, report, 1e-6);
    }
}

#[test]
fn clamp_gradients_away_from_bounds() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        // bounds at ±0.5 with no value within 1e-2 of them
        let x = Tensor::from_fn([20], |_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if (v.abs() - 0.5).abs() < 1e-2 {
                v * 0.5
            } else {
                v
            }
        });
        let probe = random(&mut rng, &[20]);
        let report = check(&[x], |t, v| {
            let y = t.clamp(v[0], -0.5, 0.5);
            project(t, y, &probe)
        });
        assert_passes("clamp", seed, report, 1e-6);
    }
}

#[test]
fn elementwise_and_reduction_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let factor = rng.random_range(-3.0..3.0);
        let inputs = [random(&mut rng, &[2, 6]), random(&mut rng, &[2, 6])];
        let probe = random(&mut rng, &[3, 4]);
        // reshape, add, scale, sum and dot in one graph, with `a` used twice
        let report = check(&inputs, |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let s = t.scale(s, factor);
            let r = t.reshape(s, [3, 4]).unwrap();
            let d = project(t, r, &probe);
            let q = t.dot(v[0], v[1]).unwrap();
            let total = t.add(d, q).unwrap();
            let extra = t.sum(v[0]);
            t.add(total, extra).unwrap()
        });
        assert_passes("add/scale/reshape/dot/sum", seed, report, 1e-6);
    }
}

#[test]
fn reparameterize_with_frozen_noise() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (b, j) = (rng.random_range(1..=3), rng.random_range(1..=5));
        let noise: Vec<f64> = (0..b * j).map(|_| rng.random_range(-2.0..2.0)).collect();
        let inputs = [random(&mut rng, &[b, j]), random(&mut rng, &[b, j])];
        let probe = random(&mut rng, &[b, j]);
        let report = check(&inputs, |t, v| {
            let z = t.reparameterize(v[0], v[1], noise.clone()).unwrap();
            project(t, z, &probe)
        });
        assert_passes("reparameterize", seed, report, 1e-5);
    }
}

#[test]
fn cross_entropy_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let shape = [rng.random_range(1..=3), 1, 2, 2, rng.random_range(2..=9)];
        let target = softmax_energy(&random(&mut rng, &shape).map(|v| 3.0 * v));
        let logits = random(&mut rng, &shape).map(|v| 4.0 * v);
        let report = check(&[logits], |t, v| t.cross_entropy(target.clone(), v[0]).unwrap());
        assert_passes("cross_entropy", seed, report, 1e-6);
    }
}

#[test]
fn kl_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (b, j) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let inputs = [random(&mut rng, &[b, j]).map(|v| 2.0 * v), random(&mut rng, &[b, j])];
        let report = check(&inputs, |t, v| t.kl_standard_normal(v[0], v[1]).unwrap());
        assert_passes("kl_standard_normal", seed, report, 1e-6);
    }
}

/// A miniature encoder/decoder through every op at once.
#[test]
fn composed_graph_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let spec = Conv3dSpec::new([2, 2, 2], [1, 1, 1]);
        let x = softmax_energy(&random(&mut rng, &[1, 1, 4, 4, 6]));
        let inputs = [
            random(&mut rng, &[2, 1, 3, 3, 3]),
            random(&mut rng, &[2]),
            random(&mut rng, &[2, 2 * 2 * 2 * 3]),
            random(&mut rng, &[2]),
            random(&mut rng, &[2, 2 * 2 * 2 * 3]),
            random(&mut rng, &[2]),
            random(&mut rng, &[2 * 2 * 2 * 3, 2]),
            random(&mut rng, &[2 * 2 * 2 * 3]),
        ];
        let noise: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = check(&inputs, |t, v| {
            let input = t.constant(x.clone());
            let h = t.conv3d(input, v[0], spec).unwrap();
            let h = t.add_channel_bias(h, v[1]).unwrap();
            let h = t.leaky_relu(h, 0.1).unwrap();
            let h = t.reshape(h, [1, 24]).unwrap();
            let mu = t.linear(h, v[2], v[3]).unwrap();
            let lv = t.linear(h, v[4], v[5]).unwrap();
            let lv = t.clamp(lv, -30.0, 10.0);
            let z = t.reparameterize(mu, lv, noise.clone()).unwrap();
            let d = t.linear(z, v[6], v[7]).unwrap();
            let d = t.reshape(d, [1, 2, 2, 2, 3]).unwrap();
            let k = t.scale(v[0], 0.5);
            let logits = t.conv3d_transpose(d, k, spec, [4, 4, 6]).unwrap();
            let ce = t.cross_entropy(x.clone(), logits).unwrap();
            let kl = t.kl_standard_normal(mu, lv).unwrap();
            let kl = t.scale(kl, 1.2);
            t.add(ce, kl).unwrap()
        });
        assert_passes("composed", seed, report, TOLERANCE);
    }
}
