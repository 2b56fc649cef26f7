//! End-to-end glue: model windows, training shards, PCC maps for the CVAE
//! and the PCA baseline, and the shift-magnitude sweep.

use std::io::Write;

use ndarray::Array2;

use crate::cvae::{prepare_input, reconstruct_cube_with_stride, train, LossHistory, ModelParams, TrainConfig};
use crate::datacube::{extract_shards, Datacube, EnergyAxis, Shard, SHARD_EXTENT};
use crate::detect::{detect, fmt_opt, pcc_map, pcc_map_matrix, DetectOptions, DetectionReport, PccMap};
use crate::error::{Error, Result};
use crate::pca;
use crate::synth::{inject_peak_shift, AnomalyMask, AnomalySpec};

/// First energy of the window the model sees.
pub const MODEL_WINDOW_START_EV: f64 = 670.0;
/// Channels in the model window.
pub const MODEL_WINDOW_CHANNELS: usize = 128;
/// Energies over which spectra are compared.
pub const PCC_WINDOW_EV: (f64, f64) = (690.0, 730.0);
/// Stride between training shards.
pub const DEFAULT_TRAIN_STRIDE: usize = 8;
/// Stride between reconstruction shards; overlapping blocks are averaged.
pub const DEFAULT_RECONSTRUCT_STRIDE: usize = 8;
pub const DEFAULT_PCA_COMPONENTS: [usize; 3] = [3, 4, 5];

/// `channels` channels of `axis` starting at the first channel at or
/// above `start_ev`.
pub fn model_window(axis: &EnergyAxis, start_ev: f64, channels: usize) -> Result<EnergyAxis> {
    let first = axis.window(start_ev, axis.last_energy())?.start;
    if first + channels > axis.channels() {
        return Err(Error::Window {
            lo_ev: start_ev,
            hi_ev: start_ev + channels as f64 * axis.dispersion_ev(),
            axis_lo_ev: axis.offset_ev(),
            axis_hi_ev: axis.last_energy(),
        });
    }
    axis.sub_axis(first..first + channels)
}

/// Normalized shards of `cube` over `window`.
pub fn training_shards(cube: &Datacube, window: &EnergyAxis, stride: usize) -> Result<Vec<Shard>> {
    if stride == 0 {
        return Err(Error::config("shard stride must be positive"));
    }
    let input = cube.crop_to_axis(window)?.normalize_spectra()?;
    Ok(extract_shards(&input, stride))
}

pub fn train_on_cube(
    cube: &Datacube,
    window: &EnergyAxis,
    stride: usize,
    config: &TrainConfig,
) -> Result<(ModelParams, LossHistory)> {
    if cube.width() < SHARD_EXTENT || cube.height() < SHARD_EXTENT {
        return Err(Error::dimension(
            "training cube",
            format!("at least {SHARD_EXTENT}x{SHARD_EXTENT}"),
            format!("{}x{}", cube.width(), cube.height()),
        ));
    }
    train(&training_shards(cube, window, stride)?, config)
}

/// Channels of `axis` covering [`PCC_WINDOW_EV`].
pub fn pcc_window(axis: &EnergyAxis) -> Result<std::ops::Range<usize>> {
    axis.window(PCC_WINDOW_EV.0, PCC_WINDOW_EV.1)
}

/// PCC between each normalized input spectrum and its CVAE reconstruction.
pub fn vae_pcc_map(cube: &Datacube, params: &ModelParams) -> Result<PccMap> {
    vae_pcc_map_with_stride(cube, params, DEFAULT_RECONSTRUCT_STRIDE)
}

/// [`vae_pcc_map`] with reconstruction shards `stride` apart.
pub fn vae_pcc_map_with_stride(cube: &Datacube, params: &ModelParams, stride: usize) -> Result<PccMap> {
    let input = prepare_input(cube, params)?;
    let recon = reconstruct_cube_with_stride(cube, params, stride)?;
    pcc_map(&input, &recon, pcc_window(params.axis())?)
}

/// PCA baseline over the same normalized spectra as the CVAE.
#[derive(Clone, Debug)]
pub struct PcaBaseline {
    pub window: EnergyAxis,
    pub model: pca::PcaModel,
}

impl PcaBaseline {
    /// Fits `k` components to the normalized spectra of `cube` over `window`.
    pub fn fit(cube: &Datacube, window: &EnergyAxis, k: usize) -> Result<Self> {
        let m = normalized_matrix(cube, window)?;
        Ok(PcaBaseline {
            window: *window,
            model: pca::fit(&m, k)?,
        })
    }

    pub fn pcc_map(&self, cube: &Datacube) -> Result<PccMap> {
        let m = normalized_matrix(cube, &self.window)?;
        let recon = self.model.reconstruct(&m)?;
        pcc_map_matrix(&m, &recon, cube.width(), cube.height(), pcc_window(&self.window)?)
    }
}

fn normalized_matrix(cube: &Datacube, window: &EnergyAxis) -> Result<Array2<f64>> {
    Ok(cube.crop_to_axis(window)?.normalize_spectra()?.to_matrix())
}

/// Which cube the PCA baseline is fitted to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PcaFit {
    /// The cube under test, anomalies included, as an unsupervised
    /// baseline would be applied in practice.
    #[default]
    Target,
    /// The anomaly-free cube, mirroring how the CVAE is trained.
    Bulk,
}

/// Detector compared in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Vae,
    Pca(usize),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Vae => "vae".into(),
            Method::Pca(k) => format!("pca{k}"),
        }
    }
}

/// PCC map of `cube` under `method`. `bulk` is the anomaly-free cube
/// used by [`PcaFit::Bulk`].
pub fn method_pcc_map(
    method: Method,
    cube: &Datacube,
    bulk: &Datacube,
    params: &ModelParams,
    options: &SweepOptions,
) -> Result<PccMap> {
    match method {
        Method::Vae => vae_pcc_map_with_stride(cube, params, options.reconstruct_stride),
        Method::Pca(k) => {
            let source = match options.pca_fit {
                PcaFit::Target => cube,
                PcaFit::Bulk => bulk,
            };
            PcaBaseline::fit(source, params.axis(), k)?.pcc_map(cube)
        }
    }
}

/// Class means and pooled standard deviation of a PCC map against truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    pub bulk_mean: f64,
    pub anomalous_mean: f64,
    pub pooled_std: f64,
}

impl Separation {
    pub fn new(map: &PccMap, truth: &AnomalyMask) -> Result<Self> {
        let split = |select: bool| -> Vec<f64> {
            map.values()
                .iter()
                .zip(truth.data())
                .filter(|(_, &t)| t == select)
                .map(|(v, _)| *v)
                .collect()
        };
        let (bulk, anom) = (split(false), split(true));
        if bulk.len() < 2 || anom.len() < 2 {
            return Err(Error::Undefined("separation needs two pixels in each class"));
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        };
        let (mb, ssb) = stats(&bulk);
        let (ma, ssa) = stats(&anom);
        Ok(Separation {
            bulk_mean: mb,
            anomalous_mean: ma,
            pooled_std: ((ssb + ssa) / (bulk.len() + anom.len() - 2) as f64).sqrt(),
        })
    }

    /// Distance between class means in pooled standard deviations.
    pub fn ratio(&self) -> f64 {
        (self.bulk_mean - self.anomalous_mean).abs() / self.pooled_std
    }
}

/// One detector on one injected cube.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub method: Method,
    pub magnitude_ev: f64,
    pub report: DetectionReport,
}

impl SweepEntry {
    /// F1, undefined at magnitude 0 where there is nothing to find.
    pub fn f1(&self) -> Option<f64> {
        (self.magnitude_ev != 0.0).then_some(self.report.metrics.f1)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub entries: Vec<SweepEntry>,
}

impl SweepTable {
    pub fn f1_series(&self, method: Method) -> Vec<(f64, Option<f64>)> {
        self.entries
            .iter()
            .filter(|e| e.method == method)
            .map(|e| (e.magnitude_ev, e.f1()))
            .collect()
    }

    /// `method,magnitude_eV,f1,precision,recall,bimodal`, one row per
    /// method and magnitude.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method,magnitude_eV,f1,precision,recall,bimodal")?;
        for e in &self.entries {
            let m = &e.report.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.method.name(),
                e.magnitude_ev,
                fmt_opt(e.f1()),
                m.precision,
                m.recall,
                e.report.bimodal
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub magnitudes: Vec<f64>,
    pub methods: Vec<Method>,
    pub pca_fit: PcaFit,
    pub reconstruct_stride: usize,
    pub detect: DetectOptions,
}

impl Default for SweepOptions {
    /// 1.0 to 6.0 eV in 0.5 eV steps; CVAE and PCA with 3, 4, 5 components
    /// fitted to the cube under test.
    fn default() -> Self {
        SweepOptions {
            magnitudes: (2..=12).map(|i| i as f64 * 0.5).collect(),
            methods: std::iter::once(Method::Vae)
                .chain(DEFAULT_PCA_COMPONENTS.iter().map(|&k| Method::Pca(k)))
                .collect(),
            pca_fit: PcaFit::default(),
            reconstruct_stride: DEFAULT_RECONSTRUCT_STRIDE,
            detect: DetectOptions::default(),
        }
    }
}

/// Injects each magnitude with the clusters and fill seed of `base` and
/// scores every method. Entries are ordered by method, then magnitude.
pub fn f1_sweep(bulk: &Datacube, params: &ModelParams, base: &AnomalySpec, options: &SweepOptions) -> Result<SweepTable> {
    let injected: Vec<(Datacube, AnomalyMask)> = options
        .magnitudes
        .iter()
        .map(|&m| inject_peak_shift(bulk, &base.with_shift(m)))
        .collect::<Result<_>>()?;
    let mut table = SweepTable::default();
    for &method in &options.methods {
        for (&magnitude_ev, (cube, truth)) in options.magnitudes.iter().zip(&injected) {
            let map = method_pcc_map(method, cube, bulk, params, options)?;
            table.entries.push(SweepEntry {
                method,
                magnitude_ev,
                report: detect(&map, truth, options.detect)?,
            });
        }
    }
    Ok(table)
}

/// Population standard deviation of the defined values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::default_axis;

    #[test]
    fn default_model_window() {
        let w = model_window(&default_axis(), MODEL_WINDOW_START_EV, MODEL_WINDOW_CHANNELS).unwrap();
        assert_eq!(w.offset_ev(), 670.0);
        assert_eq!(w.channels(), 128);
        assert_eq!(pcc_window(&w).unwrap(), 40..121);
    }

    #[test]
    fn window_past_axis_end() {
        assert!(model_window(&default_axis(), 700.0, 400).is_err());
    }

    #[test]
    fn default_magnitudes() {
        let m = SweepOptions::default().magnitudes;
        assert_eq!(m.len(), 11);
        assert_eq!((m[0], m[10]), (1.0, 6.0));
    }
}
