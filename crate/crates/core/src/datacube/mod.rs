//! Spectrum-image datacubes: a calibrated energy axis plus a W×H grid of
//! spectra stored energy-fastest.

mod esi;
mod shard;

use std::io::Write;
use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use esi::{load_esi, read_esi, save_esi, write_esi, ESI_HEADER_LEN, ESI_MAGIC};
pub use shard::{
    extract_shards, extract_shards_with_extent, recombine, shard_at, tile_origins, Shard, SHARD_EXTENT,
};

/// Slack used when converting window edges to channel indices, so that an
/// edge landing exactly on a channel energy is included despite rounding.
const WINDOW_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyAxis {
    offset_ev: f64,
    dispersion_ev: f64,
    channels: usize,
}

impl EnergyAxis {
    pub fn new(offset_ev: f64, dispersion_ev: f64, channels: usize) -> Result<Self> {
        if !offset_ev.is_finite() {
            return Err(Error::config(format!("axis offset must be finite, got {offset_ev}")));
        }
        if !(dispersion_ev.is_finite() && dispersion_ev > 0.0) {
            return Err(Error::config(format!(
                "axis dispersion must be positive and finite, got {dispersion_ev}"
            )));
        }
        if channels == 0 {
            return Err(Error::config("axis needs at least one channel"));
        }
        Ok(EnergyAxis {
            offset_ev,
            dispersion_ev,
            channels,
        })
    }

    pub fn offset_ev(&self) -> f64 {
        self.offset_ev
    }

    pub fn dispersion_ev(&self) -> f64 {
        self.dispersion_ev
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn energy(&self, channel: usize) -> f64 {
        self.offset_ev + channel as f64 * self.dispersion_ev
    }

    pub fn last_energy(&self) -> f64 {
        self.energy(self.channels - 1)
    }

    pub fn contains(&self, energy_ev: f64) -> bool {
        energy_ev >= self.offset_ev && energy_ev <= self.last_energy()
    }

    /// Maximal half-open channel range whose energies lie in `[lo_ev, hi_ev]`.
    pub fn window(&self, lo_ev: f64, hi_ev: f64) -> Result<Range<usize>> {
        let err = || Error::Window {
            lo_ev,
            hi_ev,
            axis_lo_ev: self.offset_ev,
            axis_hi_ev: self.last_energy(),
        };
        if !(lo_ev.is_finite() && hi_ev.is_finite() && lo_ev < hi_ev) {
            return Err(err());
        }
        let lo = ((lo_ev - self.offset_ev) / self.dispersion_ev - WINDOW_EPS).ceil();
        let hi = ((hi_ev - self.offset_ev) / self.dispersion_ev + WINDOW_EPS).floor() + 1.0;
        let lo = lo.max(0.0);
        let hi = hi.min(self.channels as f64);
        if hi <= lo {
            return Err(err());
        }
        Ok(lo as usize..hi as usize)
    }

    /// Axis describing the channels in `range`.
    pub fn sub_axis(&self, range: Range<usize>) -> Result<EnergyAxis> {
        if range.start >= range.end || range.end > self.channels {
            return Err(Error::dimension(
                "sub-axis channel range",
                format!("non-empty range within 0..{}", self.channels),
                format!("{range:?}"),
            ));
        }
        EnergyAxis::new(self.energy(range.start), self.dispersion_ev, range.len())
    }

    /// Channel of `other` that coincides with channel 0 of `self`, if the
    /// two axes share a grid and `self` lies inside `other`.
    pub fn offset_within(&self, other: &EnergyAxis) -> Option<usize> {
        let rel = (self.dispersion_ev - other.dispersion_ev).abs() / other.dispersion_ev;
        if rel > 1e-9 {
            return None;
        }
        let pos = (self.offset_ev - other.offset_ev) / other.dispersion_ev;
        let start = pos.round();
        if (pos - start).abs() > 1e-6 || start < 0.0 {
            return None;
        }
        let start = start as usize;
        (start + self.channels <= other.channels).then_some(start)
    }
}

/// A W×H grid of spectra. Intensities are finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Datacube {
    width: usize,
    height: usize,
    axis: EnergyAxis,
    normalized: bool,
    data: Vec<f64>,
}

impl Datacube {
    pub fn new(width: usize, height: usize, axis: EnergyAxis, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!("cube extent must be positive, got {width}x{height}")));
        }
        let expected = width * height * axis.channels();
        if data.len() != expected {
            return Err(Error::dimension("datacube intensities", expected, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            let e = i % axis.channels();
            let p = i / axis.channels();
            return Err(Error::Contract(format!(
                "intensity {} at (x={}, y={}, e={e}) is negative or non-finite",
                data[i],
                p % width,
                p / width
            )));
        }
        Ok(Datacube {
            width,
            height,
            axis,
            normalized: false,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, axis: EnergyAxis) -> Result<Self> {
        Datacube::new(width, height, axis, vec![0.0; width * height * axis.channels()])
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        axis: EnergyAxis,
        normalized: bool,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * axis.channels());
        Datacube {
            width,
            height,
            axis,
            normalized,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn channels(&self) -> usize {
        self.axis.channels()
    }

    pub fn axis(&self) -> &EnergyAxis {
        &self.axis
    }

    /// True when spectra are known to be unit-sum probability vectors.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn with_normalized_flag(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, x: usize, y: usize, e: usize) -> usize {
        (y * self.width + x) * self.channels() + e
    }

    pub fn get(&self, x: usize, y: usize, e: usize) -> f64 {
        self.data[self.index(x, y, e)]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> &[f64] {
        let start = self.index(x, y, 0);
        &self.data[start..start + self.channels()]
    }

    pub(crate) fn spectrum_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let start = self.index(x, y, 0);
        let e = self.channels();
        &mut self.data[start..start + e]
    }

    /// Spectra in row-major (y, x) order.
    pub fn spectra(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels())
    }

    pub fn energy_window(&self, lo_ev: f64, hi_ev: f64) -> Result<Range<usize>> {
        self.axis.window(lo_ev, hi_ev)
    }

    /// Each spectrum divided by its own channel sum.
    pub fn normalize_spectra(&self) -> Result<Datacube> {
        let e = self.channels();
        let mut data = self.data.clone();
        for (p, spectrum) in data.chunks_exact_mut(e).enumerate() {
            let total: f64 = spectrum.iter().sum();
            if !(total > 0.0) {
                return Err(Error::DegenerateSpectrum {
                    x: p % self.width,
                    y: p / self.width,
                });
            }
            spectrum.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Datacube::from_parts_unchecked(self.width, self.height, self.axis, true, data))
    }

    /// Keeps only the channels in `range`.
    pub fn crop_channels(&self, range: Range<usize>) -> Result<Datacube> {
        let axis = self.axis.sub_axis(range.clone())?;
        let data = self.spectra().flat_map(|s| s[range.clone()].iter().copied()).collect();
        Ok(Datacube::from_parts_unchecked(self.width, self.height, axis, false, data))
    }

    /// Crops to the channels of `axis`, which must lie on this cube's grid.
    pub fn crop_to_axis(&self, axis: &EnergyAxis) -> Result<Datacube> {
        let start = axis.offset_within(&self.axis).ok_or_else(|| {
            Error::dimension(
                "energy axis",
                format!(
                    "sub-grid of {}+{}*e eV, e<{}",
                    self.axis.offset_ev, self.axis.dispersion_ev, self.axis.channels
                ),
                format!("{}+{}*e eV, e<{}", axis.offset_ev, axis.dispersion_ev, axis.channels),
            )
        })?;
        self.crop_channels(start..start + axis.channels())
    }

    /// The `width`×`height` block of pixels starting at `origin`.
    pub fn region(&self, origin: (usize, usize), width: usize, height: usize) -> Result<Datacube> {
        let (x0, y0) = origin;
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::dimension(
                "region",
                format!("non-empty block inside {}x{}", self.width, self.height),
                format!("{width}x{height} at {origin:?}"),
            ));
        }
        let mut data = Vec::with_capacity(width * height * self.channels());
        for y in y0..y0 + height {
            let start = self.index(x0, y, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels()]);
        }
        Ok(Datacube::from_parts_unchecked(width, height, self.axis, self.normalized, data))
    }

    /// N×E matrix of spectra, rows in (y, x) order.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.pixels(), self.channels()), self.data.clone())
            .expect("cube data length is W*H*E")
    }

    pub fn from_matrix(width: usize, height: usize, axis: EnergyAxis, m: &Array2<f64>) -> Result<Datacube> {
        if m.dim() != (width * height, axis.channels()) {
            return Err(Error::dimension(
                "spectra matrix",
                format!("{}x{}", width * height, axis.channels()),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        Datacube::new(width, height, axis, m.iter().copied().collect())
    }

    pub fn same_geometry(&self, other: &Datacube) -> bool {
        self.width == other.width && self.height == other.height && self.axis == other.axis
    }

    pub(crate) fn check_same_geometry(&self, other: &Datacube, what: &'static str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::dimension(
                what,
                format!("{}x{}x{}", self.width, self.height, self.channels()),
                format!("{}x{}x{}", other.width, other.height, other.channels()),
            ))
        }
    }

    /// Writes one spectrum as `energy_eV,intensity` rows.
    pub fn write_spectrum_csv<W: Write>(&self, x: usize, y: usize, mut out: W) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::dimension(
                "spectrum coordinate",
                format!("x<{}, y<{}", self.width, self.height),
                format!("({x}, {y})"),
            ));
        }
        writeln!(out, "energy_eV,intensity")?;
        for (e, v) in self.spectrum(x, y).iter().enumerate() {
            writeln!(out, "{},{}", self.axis.energy(e), v)?;
        }
        Ok(())
    }
}
