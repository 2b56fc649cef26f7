use ndtensor::Tensor;
use rand::Rng;

use super::Architecture;
use crate::datacube::EnergyAxis;
use crate::error::{Error, Result};
use crate::seeds;

/// How [`ModelParams::new`] fills the weights. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { seed: u64 },
    Zeros,
}

/// Model weights plus the geometry and energy window they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    axis: EnergyAxis,
    beta: f64,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// `axis` is the energy window the model consumes; its channel count
    /// must equal `arch.channels`.
    pub fn new(arch: Architecture, axis: EnergyAxis, beta: f64, init: ParamInit) -> Result<Self> {
        if axis.channels() != arch.channels {
            return Err(Error::dimension("model energy window", arch.channels, axis.channels()));
        }
        let shapes = arch.param_shapes()?;
        let mut rng = match init {
            ParamInit::HeUniform { seed } => Some(seeds::indexed(seed, seeds::TRAIN, 0)),
            ParamInit::Zeros => None,
        };
        let kvol: usize = arch.kernel.iter().product();
        let stride_vol: usize = arch.stride.iter().product();
        let tensors = shapes
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let (Some(rng), true) = (rng.as_mut(), name.ends_with(".weight")) else {
                    return Tensor::zeros(shape.clone());
                };
                let fan_in = if name.starts_with("enc") {
                    shape[1] * kvol
                } else if name.starts_with("dec") && shape.len() == 5 {
                    // transposed: each output sees about in_channels * kvol / stride^3 inputs
                    (shape[0] * kvol / stride_vol).max(1)
                } else {
                    shape[1]
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape.clone(), data).expect("shape matches length")
            })
            .collect();
        Ok(ModelParams {
            arch,
            axis,
            beta,
            tensors,
        })
    }

    pub(crate) fn from_parts(arch: Architecture, axis: EnergyAxis, beta: f64, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        if shapes.len() != tensors.len() {
            return Err(Error::dimension("parameter tensors", shapes.len(), tensors.len()));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::dimension(name, format!("{shape:?}"), format!("{:?}", t.shape())));
            }
        }
        if axis.channels() != arch.channels {
            return Err(Error::dimension("model energy window", arch.channels, axis.channels()));
        }
        Ok(ModelParams {
            arch,
            axis,
            beta,
            tensors,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Energy window the model consumes.
    pub fn axis(&self) -> &EnergyAxis {
        &self.axis
    }

    /// KL weight the model was trained with.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub(crate) fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.arch
            .param_shapes()
            .expect("architecture validated at construction")
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names().iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All parameters concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::dimension("flat parameters", self.parameter_count(), values.len()));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(init: ParamInit) -> ModelParams {
        let arch = Architecture::toy();
        let axis = EnergyAxis::new(700.0, 0.5, arch.channels).unwrap();
        ModelParams::new(arch, axis, 1.2, init).unwrap()
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = toy(ParamInit::HeUniform { seed: 1 });
        let b = toy(ParamInit::HeUniform { seed: 1 });
        let c = toy(ParamInit::HeUniform { seed: 2 });
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("enc2.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let w = a.get("enc1.weight").unwrap();
        let bound = (6.0f64 / 45.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert!(w.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let mut p = toy(ParamInit::HeUniform { seed: 3 });
        let flat = p.flatten();
        assert_eq!(flat.len(), p.parameter_count());
        let mut zeros = toy(ParamInit::Zeros);
        zeros.set_flat(&flat).unwrap();
        assert_eq!(zeros, p);
        assert!(p.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn window_must_match_channels() {
        let arch = Architecture::toy();
        let axis = EnergyAxis::new(700.0, 0.5, 8).unwrap();
        assert!(ModelParams::new(arch, axis, 1.2, ParamInit::Zeros).is_err());
    }
}
