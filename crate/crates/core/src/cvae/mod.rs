//! 3D convolutional variational autoencoder over spectrum-image shards.
//!
//! The encoder is three strided convolutions followed by two linear heads
//! producing the posterior mean and log-variance; the decoder mirrors it
//! with transposed convolutions and emits per-channel logits. Training
//! minimizes `CE + beta * KL`, where CE treats each energy channel of a
//! spectrum as a class.

mod checkpoint;
mod infer;
mod model;
mod params;
mod train;

use ndtensor::conv::conv_output_extent;
use ndtensor::Conv3dSpec;

use crate::config::KvConfig;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use infer::{prepare_input, reconstruct_cube, reconstruct_cube_with_stride};
pub use model::{
    check_shard, decode, encode, encode_batch, loss_total, stack_shards, Forward, LatentCode, LossComponents,
    LOGVAR_MAX, LOGVAR_MIN,
};
pub use params::{ModelParams, ParamInit};
pub use train::{train, train_with_init, EpochLosses, LossHistory, TrainConfig};

/// Weight of the KL term in the training objective.
pub const DEFAULT_BETA: f64 = 1.2;
/// Latent dimension.
pub const DEFAULT_LATENT: usize = 40;

/// Layer geometry. Every stage uses the same kernel, stride and padding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    /// Spatial extent of the square input shard.
    pub extent: usize,
    /// Energy channels per spectrum (L).
    pub channels: usize,
    /// Feature maps after each encoder stage.
    pub widths: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub latent: usize,
    pub slope: f64,
}

impl Architecture {
    /// Channels 1→16→32→64, kernels 3×3×5, stride 2, J = 40.
    pub fn standard(extent: usize, channels: usize) -> Self {
        Architecture {
            extent,
            channels,
            widths: [16, 32, 64],
            kernel: [3, 3, 5],
            stride: [2, 2, 2],
            padding: [1, 1, 2],
            latent: DEFAULT_LATENT,
            slope: 0.1,
        }
    }

    /// Reduced 4×4×16 configuration used for gradient checks.
    pub fn toy() -> Self {
        Architecture {
            widths: [2, 3, 4],
            latent: 3,
            ..Architecture::standard(4, 16)
        }
    }

    pub fn conv_spec(&self) -> Conv3dSpec {
        Conv3dSpec::new(self.stride, self.padding)
    }

    /// Extents `(x, y, energy)` of the input and after each encoder stage.
    pub fn stage_extents(&self) -> Result<[[usize; 3]; 4]> {
        let mut out = [[self.extent, self.extent, self.channels]; 4];
        for s in 1..4 {
            for a in 0..3 {
                out[s][a] = conv_output_extent(out[s - 1][a], self.kernel[a], self.stride[a], self.padding[a])
                    .ok_or_else(|| {
                        Error::config(format!(
                            "architecture: stage {s} cannot reduce extent {} along axis {a} with kernel {}",
                            out[s - 1][a],
                            self.kernel[a]
                        ))
                    })?;
            }
        }
        Ok(out)
    }

    /// Length of the flattened feature vector entering the latent heads.
    pub fn flat_features(&self) -> Result<usize> {
        let last = self.stage_extents()?[3];
        Ok(self.widths[2] * last.iter().product::<usize>())
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent == 0 || self.channels == 0 || self.latent == 0 || self.widths.contains(&0) {
            return Err(Error::config("architecture extents, widths and latent size must be positive"));
        }
        if self.stride.contains(&0) {
            return Err(Error::config("architecture strides must be at least 1"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config(format!("leaky-ReLU slope {} outside (0, 1)", self.slope)));
        }
        self.stage_extents().map(|_| ())
    }

    /// Parameter names and shapes in declaration order.
    pub fn param_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        self.validate()?;
        let [c1, c2, c3] = self.widths;
        let [kx, ky, ke] = self.kernel;
        let f = self.flat_features()?;
        let j = self.latent;
        Ok(vec![
            ("enc1.weight", vec![c1, 1, kx, ky, ke]),
            ("enc1.bias", vec![c1]),
            ("enc2.weight", vec![c2, c1, kx, ky, ke]),
            ("enc2.bias", vec![c2]),
            ("enc3.weight", vec![c3, c2, kx, ky, ke]),
            ("enc3.bias", vec![c3]),
            ("mu.weight", vec![j, f]),
            ("mu.bias", vec![j]),
            ("logvar.weight", vec![j, f]),
            ("logvar.bias", vec![j]),
            ("dec.weight", vec![f, j]),
            ("dec.bias", vec![f]),
            ("dec3.weight", vec![c3, c2, kx, ky, ke]),
            ("dec3.bias", vec![c2]),
            ("dec2.weight", vec![c2, c1, kx, ky, ke]),
            ("dec2.bias", vec![c1]),
            ("dec1.weight", vec![c1, 1, kx, ky, ke]),
            ("dec1.bias", vec![1]),
        ])
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }

    /// Reads `model.*` keys on top of [`Architecture::standard`].
    pub fn from_config(cfg: &KvConfig, extent: usize, channels: usize) -> Result<Self> {
        let d = Architecture::standard(extent, channels);
        let triple = |key: &str, default: [usize; 3]| -> Result<[usize; 3]> {
            let v: Vec<usize> = cfg.get_list_or(key, &default)?;
            v.try_into()
                .map_err(|v: Vec<usize>| Error::config(format!("`{key}` needs three values, got {}", v.len())))
        };
        let arch = Architecture {
            widths: triple("model.widths", d.widths)?,
            kernel: triple("model.kernel", d.kernel)?,
            stride: triple("model.stride", d.stride)?,
            padding: triple("model.padding", d.padding)?,
            latent: cfg.get_or("model.latent", d.latent)?,
            slope: cfg.get_or("model.slope", d.slope)?,
            ..d
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_stages() {
        let a = Architecture::standard(24, 128);
        assert_eq!(
            a.stage_extents().unwrap(),
            [[24, 24, 128], [12, 12, 64], [6, 6, 32], [3, 3, 16]]
        );
        assert_eq!(a.flat_features().unwrap(), 64 * 9 * 16);
    }

    #[test]
    fn toy_stages() {
        let a = Architecture::toy();
        assert_eq!(a.stage_extents().unwrap(), [[4, 4, 16], [2, 2, 8], [1, 1, 4], [1, 1, 2]]);
    }

    #[test]
    fn parameter_count_is_stable() {
        let a = Architecture::standard(24, 128);
        let n = a.parameter_count().unwrap();
        assert_eq!(n, a.parameter_count().unwrap());
        let conv = 45 * (16 + 16 * 32 + 32 * 64) * 2;
        let biases = (16 + 32 + 64) + (32 + 16 + 1);
        let f = 9216;
        let heads = 2 * (40 * f + 40) + (f * 40 + f);
        assert_eq!(n, conv + biases + heads);
    }

    #[test]
    fn invalid_slope() {
        let a = Architecture {
            slope: 1.5,
            ..Architecture::toy()
        };
        assert!(a.validate().is_err());
    }
}
