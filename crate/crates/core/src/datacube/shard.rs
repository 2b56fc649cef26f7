use ndtensor::Tensor;

use super::{Datacube, EnergyAxis};
use crate::error::{Error, Result};

/// Spatial extent of the blocks the model consumes.
pub const SHARD_EXTENT: usize = 24;

const COVERAGE_REPORT_LIMIT: usize = 16;

/// A square spatial block of a datacube with its origin.
///
/// The block is stored x-major, `((i * extent) + j) * L + e` for cube pixel
/// `(x0 + i, y0 + j)`, so it maps directly onto a `[1, 1, X, Y, L]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    origin: (usize, usize),
    extent: usize,
    axis: EnergyAxis,
    padded: bool,
    normalized: bool,
    data: Vec<f64>,
}

impl Shard {
    pub fn new(origin: (usize, usize), extent: usize, axis: EnergyAxis, data: Vec<f64>) -> Result<Self> {
        let expected = extent * extent * axis.channels();
        if extent == 0 || data.len() != expected {
            return Err(Error::dimension("shard block", expected, data.len()));
        }
        Ok(Shard {
            origin,
            extent,
            axis,
            padded: false,
            normalized: false,
            data,
        })
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn channels(&self) -> usize {
        self.axis.channels()
    }

    pub fn axis(&self) -> &EnergyAxis {
        &self.axis
    }

    /// True when the block was filled by reflection because the cube is
    /// smaller than the block along some axis.
    pub fn is_padded(&self) -> bool {
        self.padded
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &[f64] {
        let l = self.channels();
        let start = (i * self.extent + j) * l;
        &self.data[start..start + l]
    }

    /// Copy with a new block of the same geometry, keeping the padding flag.
    pub fn with_data(&self, data: Vec<f64>, normalized: bool) -> Result<Shard> {
        if data.len() != self.data.len() {
            return Err(Error::dimension("shard block", self.data.len(), data.len()));
        }
        Ok(Shard {
            data,
            normalized,
            ..self.clone()
        })
    }

    /// Same block relabelled as taken from `origin`.
    pub(crate) fn with_origin(mut self, origin: (usize, usize)) -> Shard {
        self.origin = origin;
        self
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.extent, self.extent, self.channels()], self.data.clone())
            .expect("shard block length matches its extents")
    }
}

/// Origins along one axis: multiples of `stride`, then a final block flush
/// with the far edge. A dimension no larger than `extent` gets one block.
pub fn tile_origins(dim: usize, extent: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1, "stride must be at least 1");
    if dim <= extent {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + extent >= dim {
            origins.push(dim - extent);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins
}

/// Symmetric reflection about the edges, without repeating the edge sample.
fn reflect(i: usize, dim: usize) -> usize {
    if dim == 1 {
        return 0;
    }
    let period = 2 * (dim - 1);
    let r = i % period;
    if r < dim {
        r
    } else {
        period - r
    }
}

/// Block of `extent`×`extent` pixels at `origin`, reflecting past the cube
/// edges where the cube is smaller than the block.
pub fn shard_at(cube: &Datacube, origin: (usize, usize), extent: usize) -> Result<Shard> {
    let (x0, y0) = origin;
    let (w, h) = (cube.width(), cube.height());
    let fits_x = x0 + extent <= w;
    let fits_y = y0 + extent <= h;
    if (!fits_x && x0 != 0) || (!fits_y && y0 != 0) || extent == 0 {
        return Err(Error::dimension(
            "shard origin",
            format!("block of {extent} inside {w}x{h}"),
            format!("origin {origin:?}"),
        ));
    }
    let l = cube.channels();
    let mut data = Vec::with_capacity(extent * extent * l);
    for i in 0..extent {
        let x = if fits_x { x0 + i } else { reflect(i, w) };
        for j in 0..extent {
            let y = if fits_y { y0 + j } else { reflect(j, h) };
            data.extend_from_slice(cube.spectrum(x, y));
        }
    }
    Ok(Shard {
        origin,
        extent,
        axis: *cube.axis(),
        padded: !(fits_x && fits_y),
        normalized: cube.is_normalized(),
        data,
    })
}

pub fn extract_shards(cube: &Datacube, stride: usize) -> Vec<Shard> {
    extract_shards_with_extent(cube, stride, SHARD_EXTENT)
}

/// Tiles the cube with blocks of the given extent; see [`tile_origins`].
/// Shards are ordered row-major by origin.
pub fn extract_shards_with_extent(cube: &Datacube, stride: usize, extent: usize) -> Vec<Shard> {
    let xs = tile_origins(cube.width(), extent, stride);
    let ys = tile_origins(cube.height(), extent, stride);
    ys.iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| (x0, y0)))
        .map(|origin| shard_at(cube, origin, extent).expect("tile origins lie inside the cube"))
        .collect()
}

/// Reassembles a `width`×`height` cube, averaging pixels covered more
/// than once. Reflected samples of padded shards are discarded.
pub fn recombine(shards: &[Shard], width: usize, height: usize) -> Result<Datacube> {
    let Some(first) = shards.first() else {
        return Err(uncovered(width, &vec![0; width * height]));
    };
    let axis = *first.axis();
    let l = axis.channels();
    let mut sum = vec![0.0; width * height * l];
    let mut hits = vec![0u32; width * height];
    for shard in shards {
        if shard.axis != axis || shard.extent != first.extent {
            return Err(Error::dimension(
                "shard geometry",
                format!("extent {} with {} channels", first.extent, l),
                format!("extent {} with {} channels", shard.extent, shard.channels()),
            ));
        }
        let (x0, y0) = shard.origin;
        for i in 0..shard.extent {
            let x = x0 + i;
            if x >= width {
                continue;
            }
            for j in 0..shard.extent {
                let y = y0 + j;
                if y >= height {
                    continue;
                }
                let p = y * width + x;
                hits[p] += 1;
                for (acc, v) in sum[p * l..(p + 1) * l].iter_mut().zip(shard.spectrum(i, j)) {
                    *acc += v;
                }
            }
        }
    }
    if hits.contains(&0) {
        return Err(uncovered(width, &hits));
    }
    for (p, &n) in hits.iter().enumerate() {
        if n > 1 {
            let inv = f64::from(n);
            sum[p * l..(p + 1) * l].iter_mut().for_each(|v| *v /= inv);
        }
    }
    let normalized = shards.iter().all(|s| s.normalized);
    Datacube::new(width, height, axis, sum).map(|c| c.with_normalized_flag(normalized))
}

fn uncovered(width: usize, hits: &[u32]) -> Error {
    let missing: Vec<(usize, usize)> = hits
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(p, _)| (p % width, p / width))
        .collect();
    Error::Coverage {
        count: missing.len(),
        first: missing.into_iter().take(COVERAGE_REPORT_LIMIT).collect(),
    }
}
