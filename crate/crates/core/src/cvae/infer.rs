use super::model::reconstruct_batch;
use super::ModelParams;
use crate::datacube::{extract_shards_with_extent, recombine, Datacube, Shard};
use crate::error::Result;

/// Shards decoded per forward pass at inference.
const INFERENCE_BATCH: usize = 8;

/// Crops `cube` to the model's energy window and normalizes each spectrum.
pub fn prepare_input(cube: &Datacube, params: &ModelParams) -> Result<Datacube> {
    let windowed = if cube.axis() == params.axis() {
        cube.clone()
    } else {
        cube.crop_to_axis(params.axis())?
    };
    windowed.normalize_spectra()
}

/// Reconstruction of `cube` over the model's energy window, using
/// non-overlapping shards except where the far edge forces overlap.
pub fn reconstruct_cube(cube: &Datacube, params: &ModelParams) -> Result<Datacube> {
    reconstruct_cube_with_stride(cube, params, params.architecture().extent)
}

/// Encodes every shard to its posterior mean, decodes, applies the
/// energy softmax and averages overlapping pixels. Every output spectrum
/// sums to 1.
pub fn reconstruct_cube_with_stride(cube: &Datacube, params: &ModelParams, stride: usize) -> Result<Datacube> {
    let input = prepare_input(cube, params)?;
    let extent = params.architecture().extent;
    let shards = extract_shards_with_extent(&input, stride, extent);
    let mut out: Vec<Shard> = Vec::with_capacity(shards.len());
    for chunk in shards.chunks(INFERENCE_BATCH) {
        let refs: Vec<&Shard> = chunk.iter().collect();
        let probs = reconstruct_batch(&refs, params)?;
        let per = probs.len() / chunk.len();
        for (shard, block) in chunk.iter().zip(probs.data().chunks_exact(per)) {
            out.push(shard.with_data(block.to_vec(), true)?);
        }
    }
    recombine(&out, input.width(), input.height())
}
