//! Checks reverse-mode gradients against central differences, first for a
//! single strided 3D convolution, then for the full loss of a reduced
//! 4×4×16 model.
//!
//! cargo run --release --example gradient_check

use eels_cvae::cvae::{Architecture, ModelParams, ParamInit};
use eels_cvae::datacube::EnergyAxis;
use ndtensor::gradcheck::{central_difference, check_graph, GradCheck, DEFAULT_FLOOR, DEFAULT_STEP};
use ndtensor::ops::softmax_energy;
use ndtensor::{Conv3dSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let spec = Conv3dSpec::new([2, 2, 2], [1, 1, 1]);
    let input = random(&mut rng, &[1, 2, 6, 6, 8]);
    let kernel = random(&mut rng, &[3, 2, 3, 3, 3]);
    let probe = random(&mut rng, &[1, 3, 3, 3, 4]);
    let conv = check_graph(&[input, kernel], |t, v| {
        let out = t.conv3d(v[0], v[1], spec).expect("shapes agree");
        let p = t.constant(probe.clone());
        t.dot(out, p).expect("probe matches output")
    });
    println!(
        "conv3d: {} gradients, max relative error {:.1e}",
        conv.checked, conv.max_relative_error
    );

    let arch = Architecture::toy();
    let axis = EnergyAxis::new(700.0, 0.5, arch.channels)?;
    let params = ModelParams::new(arch, axis, 1.2, ParamInit::HeUniform { seed: 1 })?;
    let batch = softmax_energy(&random(&mut rng, &[1, 1, arch.extent, arch.extent, arch.channels]));
    let noise: Vec<f64> = (0..arch.latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (parts, grads) = params.loss_and_gradients(&batch, 1.2, Some(noise.clone()))?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let mut probe = params.clone();
    let numeric = central_difference(
        |x| {
            probe.set_flat(x).expect("same parameter count");
            probe.loss(&batch, 1.2, Some(noise.clone())).expect("valid batch").total
        },
        &params.flatten(),
        DEFAULT_STEP,
    );
    let full = GradCheck::compare(&analytic, &numeric, DEFAULT_FLOOR);
    println!(
        "full loss (CE {:.3} + 1.2 x KL {:.3}): {} parameters, max relative error {:.1e}",
        parts.ce, parts.kl, full.checked, full.max_relative_error
    );
    Ok(())
}
