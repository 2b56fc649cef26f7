//! CVW1 checkpoints, little-endian:
//!
//! ```text
//! "CVW1"
//! u32 extent, u32 channels, u32 widths[3], u32 kernel[3], u32 stride[3],
//! u32 padding[3], u32 latent
//! f64 slope, f64 beta, f64 window offset_eV, f64 window dispersion_eV
//! u32 tensor count
//! per tensor in declaration order: u32 rank, u32 extents[rank], f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndtensor::Tensor;

use super::{Architecture, ModelParams};
use crate::datacube::EnergyAxis;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVW1";

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let a = params.architecture();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let ints = [a.extent, a.channels]
        .into_iter()
        .chain(a.widths)
        .chain(a.kernel)
        .chain(a.stride)
        .chain(a.padding)
        .chain([a.latent]);
    for v in ints {
        put_u32(&mut buf, v)?;
    }
    for v in [a.slope, params.beta(), params.axis().offset_ev(), params.axis().dispersion_ev()] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut buf, params.tensors().len())?;
    for t in params.tensors() {
        put_u32(&mut buf, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                reason: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format {
                offset: at as u64,
                reason: format!("non-finite {what}"),
            });
        }
        Ok(v)
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"CVW1\"".into(),
        });
    }
    let triple = |c: &mut Cursor, what: &str| -> Result<[usize; 3]> {
        Ok([c.u32(what)?, c.u32(what)?, c.u32(what)?])
    };
    let extent = c.u32("extent")?;
    let channels = c.u32("channels")?;
    let widths = triple(&mut c, "widths")?;
    let kernel = triple(&mut c, "kernel")?;
    let stride = triple(&mut c, "stride")?;
    let padding = triple(&mut c, "padding")?;
    let latent = c.u32("latent")?;
    let slope = c.f64("slope")?;
    let beta = c.f64("beta")?;
    let offset = c.f64("window offset")?;
    let dispersion = c.f64("window dispersion")?;
    let arch = Architecture {
        extent,
        channels,
        widths,
        kernel,
        stride,
        padding,
        latent,
        slope,
    };
    let axis = EnergyAxis::new(offset, dispersion, channels)?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = c.u32("rank")?;
        if rank > 8 {
            return Err(Error::Format {
                offset: (c.pos - 4) as u64,
                reason: format!("implausible tensor rank {rank}"),
            });
        }
        let shape: Vec<usize> = (0..rank).map(|_| c.u32("extent")).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.saturating_mul(8), "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    ModelParams::from_parts(arch, axis, beta, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
