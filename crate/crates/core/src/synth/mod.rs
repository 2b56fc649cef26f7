//! Synthetic bulk spectrum images with an Fe L-edge-like white-line pair on
//! a power-law background, plus clustered peak-shift anomalies.

mod anomaly;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KvConfig;
use crate::datacube::{Datacube, EnergyAxis};
use crate::error::{Error, Result};
use crate::seeds;

pub use anomaly::{inject_peak_shift, sweep_shifts, AnomalyMask, AnomalySpec, Disc, FillPolicy};

/// Above this mean, Poisson draws use a rounded normal approximation.
pub const POISSON_INVERSION_LIMIT: f64 = 50.0;

/// A Gaussian component; `width_ev` is the standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub center_ev: f64,
    pub width_ev: f64,
    pub amplitude: f64,
}

impl Peak {
    pub fn new(center_ev: f64, width_ev: f64, amplitude: f64) -> Self {
        Peak {
            center_ev,
            width_ev,
            amplitude,
        }
    }

    fn eval(&self, energy_ev: f64, amplitude: f64, drift_ev: f64) -> f64 {
        let z = (energy_ev - self.center_ev - drift_ev) / self.width_ev;
        amplitude * (-0.5 * z * z).exp()
    }
}

/// Slow linear variation of the spectrum across the field of view.
///
/// With normalized coordinates `u, v` in `[-1, 1]` along x and y: peak
/// amplitudes scale by `1 + amplitude_gradient * u`, the second peak also
/// by `1 + ratio_variation * u * v`, all peaks move by `energy_drift_ev * v`
/// and the background exponent becomes `r + exponent_variation * v`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Heterogeneity {
    pub amplitude_gradient: f64,
    pub energy_drift_ev: f64,
    pub ratio_variation: f64,
    pub exponent_variation: f64,
}

impl Heterogeneity {
    pub fn is_none(&self) -> bool {
        *self == Heterogeneity::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumModel {
    /// Background counts at `background_reference_ev`.
    pub background_amplitude: f64,
    pub background_exponent: f64,
    pub background_reference_ev: f64,
    pub peaks: Vec<Peak>,
    /// Each peak amplitude is scaled per pixel by `1 + U(-jitter, jitter)`.
    pub jitter: f64,
    pub poisson: bool,
    pub heterogeneity: Heterogeneity,
}

impl Default for SpectrumModel {
    /// Fe L3/L2 white lines at 708 and 721 eV (2:1) with a weak O K peak,
    /// drifting by ±1.5 eV and with a background exponent varying by ±0.8
    /// from top to bottom of the field.
    fn default() -> Self {
        SpectrumModel {
            background_amplitude: 1000.0,
            background_exponent: 3.0,
            background_reference_ev: 700.0,
            peaks: vec![
                Peak::new(708.0, 1.5, 3000.0),
                Peak::new(721.0, 1.8, 1500.0),
                Peak::new(532.0, 2.0, 300.0),
            ],
            jitter: 0.05,
            poisson: true,
            heterogeneity: Heterogeneity {
                energy_drift_ev: 1.5,
                exponent_variation: 0.8,
                ..Heterogeneity::default()
            },
        }
    }
}

/// Default calibration: 450 eV + 0.5 eV/channel, 640 channels.
pub fn default_axis() -> EnergyAxis {
    EnergyAxis::new(450.0, 0.5, 640).expect("default axis is valid")
}

impl SpectrumModel {
    pub fn validate(&self, axis: &EnergyAxis) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.background_amplitude) || !positive(self.background_exponent) {
            return Err(Error::config("background amplitude and exponent must be positive"));
        }
        if !positive(self.background_reference_ev) || !positive(axis.offset_ev()) {
            return Err(Error::config("background energies must be positive"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::config(format!("jitter must lie in [0, 1), got {}", self.jitter)));
        }
        let h = self.heterogeneity;
        if !(h.amplitude_gradient.abs() < 1.0 && h.ratio_variation.abs() < 1.0) {
            return Err(Error::config("amplitude gradient and ratio variation must lie in (-1, 1)"));
        }
        if !h.energy_drift_ev.is_finite() || self.background_exponent - h.exponent_variation.abs() <= 0.0 {
            return Err(Error::config("background exponent must stay positive across the field"));
        }
        for p in &self.peaks {
            if !positive(p.width_ev) || !(p.amplitude.is_finite() && p.amplitude >= 0.0) {
                return Err(Error::config(format!("peak at {} eV needs positive width and amplitude", p.center_ev)));
            }
            let drift = h.energy_drift_ev.abs();
            if !(axis.contains(p.center_ev - drift) && axis.contains(p.center_ev + drift)) {
                return Err(Error::config(format!(
                    "peak at {} eV (drift ±{drift} eV) lies outside the axis [{}, {}] eV",
                    p.center_ev,
                    axis.offset_ev(),
                    axis.last_energy()
                )));
            }
        }
        Ok(())
    }

    /// Noiseless spectrum at normalized position `(u, v)` with per-peak
    /// amplitude factors `scale`.
    pub fn spectrum_at(&self, axis: &EnergyAxis, u: f64, v: f64, scale: &[f64]) -> Vec<f64> {
        let h = self.heterogeneity;
        let exponent = self.background_exponent + h.exponent_variation * v;
        let drift = h.energy_drift_ev * v;
        let amps: Vec<f64> = self
            .peaks
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut a = p.amplitude * (1.0 + h.amplitude_gradient * u);
                if i == 1 {
                    a *= 1.0 + h.ratio_variation * u * v;
                }
                a * scale.get(i).copied().unwrap_or(1.0)
            })
            .collect();
        (0..axis.channels())
            .map(|e| {
                let en = axis.energy(e);
                let bg = self.background_amplitude * (en / self.background_reference_ev).powf(-exponent);
                bg + self.peaks.iter().zip(&amps).map(|(p, &a)| p.eval(en, a, drift)).sum::<f64>()
            })
            .collect()
    }

    /// Reads `background.*`, `peaks`, `jitter`, `poisson` and `hetero.*`.
    ///
    /// `peaks` is a comma-separated list of `center:width:amplitude`.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = SpectrumModel::default();
        let default_peaks = d
            .peaks
            .iter()
            .map(|p| format!("{}:{}:{}", p.center_ev, p.width_ev, p.amplitude))
            .collect::<Vec<_>>()
            .join(", ");
        let peaks = parse_peaks(&cfg.get_str_or("peaks", &default_peaks))?;
        Ok(SpectrumModel {
            background_amplitude: cfg.get_or("background.amplitude", d.background_amplitude)?,
            background_exponent: cfg.get_or("background.exponent", d.background_exponent)?,
            background_reference_ev: cfg.get_or("background.reference_ev", d.background_reference_ev)?,
            peaks,
            jitter: cfg.get_or("jitter", d.jitter)?,
            poisson: cfg.get_or("poisson", d.poisson)?,
            heterogeneity: Heterogeneity {
                amplitude_gradient: cfg.get_or("hetero.amplitude_gradient", d.heterogeneity.amplitude_gradient)?,
                energy_drift_ev: cfg.get_or("hetero.energy_drift_ev", d.heterogeneity.energy_drift_ev)?,
                ratio_variation: cfg.get_or("hetero.ratio_variation", d.heterogeneity.ratio_variation)?,
                exponent_variation: cfg.get_or("hetero.exponent_variation", d.heterogeneity.exponent_variation)?,
            },
        })
    }
}

fn parse_peaks(text: &str) -> Result<Vec<Peak>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<f64> = item
                .split(':')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("peak `{item}`: {e}")))?;
            match parts[..] {
                [c, w, a] => Ok(Peak::new(c, w, a)),
                _ => Err(Error::config(format!("peak `{item}` is not center:width:amplitude"))),
            }
        })
        .collect()
}

/// Reads `axis.offset_ev`, `axis.dispersion_ev` and `axis.channels`.
pub fn axis_from_config(cfg: &KvConfig) -> Result<EnergyAxis> {
    let d = default_axis();
    EnergyAxis::new(
        cfg.get_or("axis.offset_ev", d.offset_ev())?,
        cfg.get_or("axis.dispersion_ev", d.dispersion_ev())?,
        cfg.get_or("axis.channels", d.channels())?,
    )
}

/// Poisson draw: inversion for small means, rounded normal above
/// [`POISSON_INVERSION_LIMIT`].
pub fn poisson_sample(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    if mean > POISSON_INVERSION_LIMIT {
        let z: f64 = StandardNormal.sample(rng);
        return (mean + mean.sqrt() * z).round().max(0.0);
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u32;
    // cdf reaches 1 - 1e-16 well before k = 1000 for means up to 50
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / f64::from(k);
        cdf += p;
    }
    f64::from(k)
}

fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Bulk cube. Each pixel draws from its own substream of `(seed, "gen")`,
/// so the result depends only on the arguments.
pub fn generate_bulk(
    model: &SpectrumModel,
    width: usize,
    height: usize,
    axis: &EnergyAxis,
    seed: u64,
) -> Result<Datacube> {
    model.validate(axis)?;
    if width == 0 || height == 0 {
        return Err(Error::config(format!("cube extent must be positive, got {width}x{height}")));
    }
    let mut data = Vec::with_capacity(width * height * axis.channels());
    let mut scale = vec![1.0; model.peaks.len()];
    for y in 0..height {
        for x in 0..width {
            let mut rng = seeds::indexed(seed, seeds::GEN, (y * width + x) as u64);
            for s in scale.iter_mut() {
                *s = 1.0 + model.jitter * (2.0 * rng.random::<f64>() - 1.0);
            }
            let mean = model.spectrum_at(axis, normalized_coord(x, width), normalized_coord(y, height), &scale);
            if model.poisson {
                data.extend(mean.into_iter().map(|m| poisson_sample(m, &mut rng)));
            } else {
                data.extend(mean);
            }
        }
    }
    Datacube::new(width, height, *axis, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_axis() -> EnergyAxis {
        EnergyAxis::new(680.0, 0.5, 100).unwrap()
    }

    fn model_without_o() -> SpectrumModel {
        SpectrumModel {
            peaks: SpectrumModel::default().peaks[..2].to_vec(),
            ..SpectrumModel::default()
        }
    }

    #[test]
    fn noiseless_without_jitter_is_uniform() {
        let m = SpectrumModel {
            jitter: 0.0,
            poisson: false,
            heterogeneity: Heterogeneity::default(),
            ..model_without_o()
        };
        let cube = generate_bulk(&m, 3, 2, &small_axis(), 1).unwrap();
        let first = cube.spectrum(0, 0).to_vec();
        assert!(cube.spectra().all(|s| s == first.as_slice()));
        assert!(first.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = model_without_o();
        let a = generate_bulk(&m, 4, 4, &small_axis(), 9).unwrap();
        let b = generate_bulk(&m, 4, 4, &small_axis(), 9).unwrap();
        let c = generate_bulk(&m, 4, 4, &small_axis(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn peak_outside_axis_is_config_error() {
        let m = SpectrumModel::default();
        assert!(matches!(generate_bulk(&m, 2, 2, &small_axis(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn poisson_small_mean_moments() {
        let mut rng = seeds::substream(3, "test");
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| poisson_sample(4.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 4.0 * (4.0f64 / n as f64).sqrt());
        assert!((var - 4.0).abs() < 0.3);
    }

    #[test]
    fn peaks_parse() {
        let p = parse_peaks("708:1.5:3000, 721:1.8:1500").unwrap();
        assert_eq!(p[1], Peak::new(721.0, 1.8, 1500.0));
        assert!(parse_peaks("708:1.5").is_err());
    }
}
