//! ESI1 container: little-endian header followed by f32 intensities.
//!
//! ```text
//! 0   "ESI1"
//! 4   u32 width
//! 8   u32 height
//! 12  u32 channels
//! 16  u8  flag (0 raw counts, 1 normalized)
//! 17  f64 offset_eV
//! 25  f64 dispersion_eV
//! 33  width*height*channels f32, energy-fastest, rows in (y, x)
//! ```
//!
//! Intensities are held as f64 in memory and narrowed to f32 on save, so a
//! save/load round trip is exact whenever every value is f32-representable
//! (raw counts always are). load followed by save reproduces the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Datacube, EnergyAxis};
use crate::error::{Error, Result};

pub const ESI_MAGIC: &[u8; 4] = b"ESI1";
pub const ESI_HEADER_LEN: usize = 33;

pub fn write_esi<W: Write>(cube: &Datacube, mut out: W) -> Result<()> {
    let dims = [cube.width(), cube.height(), cube.channels()];
    let mut header = Vec::with_capacity(ESI_HEADER_LEN);
    header.extend_from_slice(ESI_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::config(format!("extent {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    header.push(u8::from(cube.is_normalized()));
    header.extend_from_slice(&cube.axis().offset_ev().to_le_bytes());
    header.extend_from_slice(&cube.axis().dispersion_ev().to_le_bytes());
    debug_assert_eq!(header.len(), ESI_HEADER_LEN);
    out.write_all(&header)?;

    let mut payload = Vec::with_capacity(cube.data().len() * 4);
    for &v in cube.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

pub fn read_esi<R: Read>(mut input: R) -> Result<Datacube> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn save_esi(cube: &Datacube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_esi(cube, BufWriter::new(file))
}

pub fn load_esi(path: impl AsRef<Path>) -> Result<Datacube> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_esi(BufReader::new(file))
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn parse(bytes: &[u8]) -> Result<Datacube> {
    if bytes.len() < ESI_HEADER_LEN {
        if bytes.len() < 4 || &bytes[..4] != ESI_MAGIC {
            return Err(format_err(0, "bad magic, expected \"ESI1\""));
        }
        return Err(format_err(
            bytes.len(),
            format!("truncated header: {} of {ESI_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != ESI_MAGIC {
        return Err(format_err(0, "bad magic, expected \"ESI1\""));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (width, height, channels) = (u32_at(4), u32_at(8), u32_at(12));
    for (offset, name, v) in [(4, "width", width), (8, "height", height), (12, "channels", channels)] {
        if v == 0 {
            return Err(format_err(offset, format!("{name} is zero")));
        }
    }
    let normalized = match bytes[16] {
        0 => false,
        1 => true,
        f => return Err(format_err(16, format!("flag must be 0 or 1, got {f}"))),
    };
    let offset_ev = f64_at(17);
    if !offset_ev.is_finite() {
        return Err(format_err(17, "non-finite energy offset"));
    }
    let dispersion = f64_at(25);
    if !(dispersion.is_finite() && dispersion > 0.0) {
        return Err(format_err(25, format!("dispersion must be positive and finite, got {dispersion}")));
    }
    let axis = EnergyAxis::new(offset_ev, dispersion, channels)?;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| format_err(4, "declared extents overflow"))?;
    let payload = &bytes[ESI_HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: header declares {count} values ({} bytes), found {} bytes",
                count * 4,
                payload.len()
            ),
        ));
    }
    if payload.len() > count * 4 {
        return Err(format_err(
            ESI_HEADER_LEN + count * 4,
            format!("{} trailing bytes after payload", payload.len() - count * 4),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(ESI_HEADER_LEN + 4 * i, format!("non-finite intensity {v}")));
        }
        if v < 0.0 {
            return Err(format_err(ESI_HEADER_LEN + 4 * i, format!("negative intensity {v}")));
        }
        data.push(f64::from(v));
    }
    Ok(Datacube::from_parts_unchecked(width, height, axis, normalized, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Datacube {
        Datacube::new(1, 1, EnergyAxis::new(450.0, 0.5, 1).unwrap(), vec![value]).unwrap()
    }

    fn encode(cube: &Datacube) -> Vec<u8> {
        let mut buf = Vec::new();
        write_esi(cube, &mut buf).unwrap();
        buf
    }

    #[test]
    fn one_voxel_layout() {
        let buf = encode(&single(3.5));
        assert_eq!(buf.len(), 33 + 4);
        assert_eq!(&buf[..4], b"ESI1");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(buf[16], 0);
        assert_eq!(&buf[17..25], &450.0f64.to_le_bytes());
        assert_eq!(&buf[25..33], &0.5f64.to_le_bytes());
        assert_eq!(&buf[33..], &3.5f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_at_zero() {
        let mut buf = encode(&single(1.0));
        buf[0] = b'X';
        assert!(matches!(read_esi(&buf[..]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload() {
        let buf = encode(&single(1.0));
        match read_esi(&buf[..35]) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset, 35);
                assert!(reason.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_offset() {
        let mut buf = encode(&single(1.0));
        buf[33..37].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_esi(&buf[..]), Err(Error::Format { offset: 33, .. })));
    }

    #[test]
    fn bad_flag() {
        let mut buf = encode(&single(1.0));
        buf[16] = 7;
        assert!(matches!(read_esi(&buf[..]), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn normalized_flag_round_trips() {
        let cube = single(1.0).normalize_spectra().unwrap();
        let back = read_esi(&encode(&cube)[..]).unwrap();
        assert!(back.is_normalized());
    }
}
