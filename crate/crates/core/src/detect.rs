//! Anomaly scoring by Pearson correlation between original and
//! reconstructed spectra, Otsu classification with a bimodality guard, and
//! precision/recall evaluation against ground truth.

use std::io::Write;
use std::ops::Range;

use ndarray::Array2;

use crate::datacube::Datacube;
use crate::error::{Error, Result};
use crate::synth::AnomalyMask;

pub const DEFAULT_BINS: usize = 256;

/// Minimum ratio of between-class to total variance at the Otsu threshold
/// for a histogram to count as bimodal.
///
/// A single normal population already scores 2/π ≈ 0.64 on this ratio
/// and a uniform one 0.75, so the cut sits above both.
pub const DEFAULT_GAMMA: f64 = 0.8;

/// Value ranges at or below this (relative to the magnitude) count as
/// constant, so rounding noise in a perfect reconstruction is not split.
pub const DEGENERATE_RANGE: f64 = 1e-9;

/// Pearson correlation, clamped to `[-1, 1]`.
///
/// Undefined (and an error) when either vector is constant; see
/// [`pcc_or_convention`] for the value used in maps.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dimension("pcc inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation of fewer than two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector"));
    }
    // sqrt(fl(s * s)) == s, so identical inputs give exactly 1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// [`pcc`], with the undefined cases mapped to 1 for identical vectors and
/// 0 otherwise.
pub fn pcc_or_convention(x: &[f64], y: &[f64]) -> Result<f64> {
    match pcc(x, y) {
        Err(Error::Undefined(_)) => Ok(if x == y { 1.0 } else { 0.0 }),
        other => other,
    }
}

/// Per-pixel correlation over a channel window. Rows in (y, x).
#[derive(Clone, Debug, PartialEq)]
pub struct PccMap {
    width: usize,
    height: usize,
    window: Range<usize>,
    values: Vec<f64>,
}

impl PccMap {
    pub fn new(width: usize, height: usize, window: Range<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dimension("PCC map", width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("PCC value {v} outside [-1, 1]")));
        }
        Ok(PccMap {
            width,
            height,
            window,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> Range<usize> {
        self.window.clone()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Mean over pixels where `select` is true, or `None` if there are none.
    pub fn mean_where(&self, mask: &AnomalyMask, select: bool) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m == select)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// 16-bit binary PGM, `round((pcc + 1) / 2 * 65535)`, big-endian samples.
    pub fn write_pgm<W: Write>(&self, out: W) -> Result<()> {
        write_pgm16(out, self.width, self.height, &self.values)
    }

    /// `x,y,pcc` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,pcc")?;
        for (p, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{}", p % self.width, p / self.width, v)?;
        }
        Ok(())
    }

    /// `bin_left,bin_right,count_bulk,count_anomalous` over `[min, max]`.
    pub fn write_histogram_csv<W: Write>(&self, truth: &AnomalyMask, bins: usize, mut out: W) -> Result<()> {
        truth.check_same_size(self.width, self.height, "truth mask")?;
        let hist = Histogram::new(&self.values, bins.max(1));
        let mut bulk = vec![0usize; hist.bins];
        let mut anom = vec![0usize; hist.bins];
        for (v, &m) in self.values.iter().zip(truth.data()) {
            let b = hist.bin_of(*v);
            if m {
                anom[b] += 1;
            } else {
                bulk[b] += 1;
            }
        }
        writeln!(out, "bin_left,bin_right,count_bulk,count_anomalous")?;
        for b in 0..hist.bins {
            writeln!(out, "{},{},{},{}", hist.edge(b), hist.edge(b + 1), bulk[b], anom[b])?;
        }
        Ok(())
    }
}

pub(crate) fn write_pgm16<W: Write>(mut out: W, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write!(out, "P5\n{width} {height}\n65535\n")?;
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for v in values {
        let level = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 65535.0).round() as u16;
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn pcc_map(original: &Datacube, recon: &Datacube, window: Range<usize>) -> Result<PccMap> {
    original.check_same_geometry(recon, "reconstruction")?;
    pcc_map_spectra(
        original.data(),
        recon.data(),
        original.width(),
        original.height(),
        original.channels(),
        window,
    )
}

/// [`pcc_map`] for spectra held as N×E matrices (e.g. PCA reconstructions,
/// which may be negative).
pub fn pcc_map_matrix(
    original: &Array2<f64>,
    recon: &Array2<f64>,
    width: usize,
    height: usize,
    window: Range<usize>,
) -> Result<PccMap> {
    if original.dim() != recon.dim() {
        return Err(Error::dimension(
            "reconstruction",
            format!("{:?}", original.dim()),
            format!("{:?}", recon.dim()),
        ));
    }
    let channels = original.ncols();
    let a = original.as_standard_layout();
    let b = recon.as_standard_layout();
    pcc_map_spectra(
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
        width,
        height,
        channels,
        window,
    )
}

fn pcc_map_spectra(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    window: Range<usize>,
) -> Result<PccMap> {
    if a.len() != width * height * channels || b.len() != a.len() {
        return Err(Error::dimension("spectra", width * height * channels, b.len()));
    }
    if window.is_empty() || window.end > channels {
        return Err(Error::dimension(
            "PCC window",
            format!("non-empty range within 0..{channels}"),
            format!("{window:?}"),
        ));
    }
    let values = a
        .chunks_exact(channels)
        .zip(b.chunks_exact(channels))
        .map(|(x, y)| pcc_or_convention(&x[window.clone()], &y[window.clone()]))
        .collect::<Result<Vec<_>>>()?;
    PccMap::new(width, height, window, values)
}

/// Equal-width histogram over `[min, max]` of the data.
#[derive(Clone, Debug)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut h = Histogram {
            min,
            max,
            bins,
            counts: vec![0; bins],
        };
        for &v in values {
            let b = h.bin_of(v);
            h.counts[b] += 1;
        }
        h
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins as f64
    }

    /// Bin index; the maximum falls in the last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        if !(self.max > self.min) {
            return 0;
        }
        (((v - self.min) / self.width()).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.min + i as f64 * self.width()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.width()
    }
}

/// Otsu split of a histogram: the best interior edge index and the ratio
/// of its between-class variance to the total variance, both computed on
/// bin centres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuSplit {
    pub edge_index: usize,
    pub threshold: f64,
    pub between_variance: f64,
    pub total_variance: f64,
}

impl OtsuSplit {
    pub fn ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.between_variance / self.total_variance
        } else {
            0.0
        }
    }
}

pub fn otsu_split(values: &[f64], bins: usize) -> Result<OtsuSplit> {
    if bins < 2 {
        return Err(Error::config(format!("Otsu needs at least 2 bins, got {bins}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("Otsu input contains non-finite values".into()));
    }
    let h = Histogram::new(values, bins);
    if !(h.max - h.min > DEGENERATE_RANGE * h.max.abs().max(1.0)) {
        return Err(Error::Undefined("Otsu threshold of a degenerate histogram"));
    }
    let n = values.len() as f64;
    let total_sum: f64 = (0..bins).map(|i| h.counts[i] as f64 * h.center(i)).sum();
    let total_mean = total_sum / n;
    let total_variance = (0..bins)
        .map(|i| h.counts[i] as f64 * (h.center(i) - total_mean).powi(2))
        .sum::<f64>()
        / n;
    let mut best: Option<(usize, f64)> = None;
    let (mut c0, mut s0) = (0usize, 0.0);
    for t in 1..bins {
        c0 += h.counts[t - 1];
        s0 += h.counts[t - 1] as f64 * h.center(t - 1);
        // an empty bin below the edge repeats the previous partition
        if h.counts[t - 1] == 0 || c0 == values.len() {
            continue;
        }
        let w0 = c0 as f64 / n;
        let w1 = 1.0 - w0;
        let m0 = s0 / c0 as f64;
        let m1 = (total_sum - s0) / (values.len() - c0) as f64;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    let (edge_index, between_variance) = best.expect("two distinct values give a non-trivial split");
    Ok(OtsuSplit {
        edge_index,
        threshold: h.edge(edge_index),
        between_variance,
        total_variance,
    })
}

/// Bin edge maximizing the between-class variance `w0 w1 (m0 - m1)^2`;
/// ties go to the lower edge.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    otsu_split(values, bins).map(|s| s.threshold)
}

/// True when the values should be treated as one population: the Otsu
/// split explains less than `gamma` of the variance, or the values are
/// all equal.
pub fn unimodality_check(values: &[f64], bins: usize, gamma: f64) -> bool {
    match otsu_split(values, bins) {
        Ok(split) => split.ratio() < gamma,
        Err(_) => true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectOptions {
    pub bins: usize,
    pub gamma: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            bins: DEFAULT_BINS,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// `None` when the map was judged unimodal.
    pub threshold: Option<f64>,
    pub bimodal: bool,
    /// Between-class over total variance at the Otsu split; 0 for a
    /// constant map.
    pub ratio: f64,
    pub predicted: AnomalyMask,
}

/// Flags pixels with PCC below the Otsu threshold, or nothing if the map
/// is unimodal.
pub fn classify(map: &PccMap, options: DetectOptions) -> Classification {
    let empty = AnomalyMask::empty(map.width, map.height);
    let Ok(split) = otsu_split(&map.values, options.bins) else {
        return Classification {
            threshold: None,
            bimodal: false,
            ratio: 0.0,
            predicted: empty,
        };
    };
    let ratio = split.ratio();
    if ratio < options.gamma {
        return Classification {
            threshold: None,
            bimodal: false,
            ratio,
            predicted: empty,
        };
    }
    let t = split.threshold;
    let predicted = AnomalyMask::from_vec(map.width, map.height, map.values.iter().map(|&v| v < t).collect())
        .expect("map dimensions");
    Classification {
        threshold: Some(t),
        bimodal: true,
        ratio,
        predicted,
    }
}

/// `num / den`, or the convention for `den = 0`: 1 when there were no
/// errors at all, else 0.
fn ratio_or(num: usize, den: usize, no_errors: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if no_errors {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion counts over every pixel.
pub fn evaluate(predicted: &AnomalyMask, truth: &AnomalyMask) -> Result<Metrics> {
    truth.check_same_size(predicted.width(), predicted.height(), "truth mask")?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let clean = fp == 0 && fn_ == 0;
    let precision = ratio_or(tp, tp + fp, clean);
    let recall = ratio_or(tp, tp + fn_, clean);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else if clean {
        1.0
    } else {
        0.0
    };
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub threshold: Option<f64>,
    pub bimodal: bool,
    pub ratio: f64,
    pub predicted: AnomalyMask,
    pub metrics: Metrics,
}

impl DetectionReport {
    pub fn new(classification: Classification, truth: &AnomalyMask) -> Result<Self> {
        let metrics = evaluate(&classification.predicted, truth)?;
        Ok(DetectionReport {
            threshold: classification.threshold,
            bimodal: classification.bimodal,
            ratio: classification.ratio,
            predicted: classification.predicted,
            metrics,
        })
    }

    pub fn csv_header() -> &'static str {
        "threshold,bimodal,ratio,tp,fp,fn,tn,precision,recall,f1"
    }

    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_opt(self.threshold),
            self.bimodal,
            self.ratio,
            m.tp,
            m.fp,
            m.fn_,
            m.tn,
            m.precision,
            m.recall,
            m.f1
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        writeln!(out, "{}", self.csv_row())?;
        Ok(())
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn detect(map: &PccMap, truth: &AnomalyMask, options: DetectOptions) -> Result<DetectionReport> {
    DetectionReport::new(classify(map, options), truth)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `steps` evenly spaced thresholds from the smallest PCC (nothing
/// flagged) to just above the largest (everything flagged). An empty
/// prediction has precision 1.
pub fn pr_curve(map: &PccMap, truth: &AnomalyMask, steps: usize) -> Result<Vec<PrPoint>> {
    if steps < 2 {
        return Err(Error::config(format!("a PR curve needs at least 2 steps, got {steps}")));
    }
    truth.check_same_size(map.width, map.height, "truth mask")?;
    let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let positives = truth.count();
    (0..steps)
        .map(|i| {
            let threshold = if i == steps - 1 {
                max.next_up()
            } else {
                min + (max - min) * i as f64 / (steps - 1) as f64
            };
            let (mut tp, mut flagged) = (0usize, 0usize);
            for (&v, &t) in map.values.iter().zip(truth.data()) {
                if v < threshold {
                    flagged += 1;
                    tp += usize::from(t);
                }
            }
            let precision = if flagged == 0 { 1.0 } else { tp as f64 / flagged as f64 };
            let recall = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
            Ok(PrPoint {
                threshold,
                precision,
                recall,
            })
        })
        .collect()
}

/// Trapezoidal area under precision as a function of recall.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], mut out: W) -> Result<()> {
    writeln!(out, "threshold,precision,recall")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcc_basic_identities() {
        let x = [1.0, 3.0, 2.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let aff: Vec<f64> = x.iter().map(|v| 2.5 * v + 7.0).collect();
        assert_eq!(pcc(&x, &x).unwrap(), 1.0);
        assert_eq!(pcc(&x, &neg).unwrap(), -1.0);
        assert!((pcc(&x, &aff).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pcc_constant_convention() {
        assert!(matches!(pcc(&[2.0, 2.0], &[2.0, 2.0]), Err(Error::Undefined(_))));
        assert_eq!(pcc_or_convention(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(pcc_or_convention(&[2.0, 2.0], &[3.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn otsu_symmetric_two_bins() {
        assert_eq!(otsu_threshold(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap(), 0.5);
    }

    #[test]
    fn otsu_degenerate() {
        assert!(otsu_threshold(&[0.3; 5], 256).is_err());
        assert!(otsu_threshold(&[1.0, 1.0 - 1e-15, 1.0], 256).is_err());
        assert!(unimodality_check(&[0.3; 5], 256, DEFAULT_GAMMA));
    }

    #[test]
    fn all_ones_map_is_empty() {
        let map = PccMap::new(3, 2, 0..4, vec![1.0; 6]).unwrap();
        let c = classify(&map, DetectOptions::default());
        assert_eq!(c.predicted.count(), 0);
        assert_eq!(c.threshold, None);
    }

    #[test]
    fn indicator_map_recovered() {
        let truth = AnomalyMask::from_fn(8, 8, |x, y| x < 2 && y < 3);
        let values = truth.data().iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
        let map = PccMap::new(8, 8, 0..4, values).unwrap();
        let r = detect(&map, &truth, DetectOptions::default()).unwrap();
        assert_eq!(r.predicted, truth);
        assert_eq!(r.metrics.f1, 1.0);
    }

    #[test]
    fn metrics_formula() {
        let truth = AnomalyMask::from_vec(6, 1, vec![true, true, true, true, false, false]).unwrap();
        let pred = AnomalyMask::from_vec(6, 1, vec![true, true, true, false, true, false]).unwrap();
        let m = evaluate(&pred, &truth).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 1));
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn empty_prediction_metrics() {
        let truth = AnomalyMask::from_vec(3, 1, vec![true, false, false]).unwrap();
        let m = evaluate(&AnomalyMask::empty(3, 1), &truth).unwrap();
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
        let m = evaluate(&truth, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn pr_curve_endpoints() {
        let truth = AnomalyMask::from_vec(4, 1, vec![true, false, false, false]).unwrap();
        let map = PccMap::new(4, 1, 0..2, vec![0.2, 0.9, 0.95, 0.99]).unwrap();
        let pts = pr_curve(&map, &truth, 5).unwrap();
        assert_eq!(pts[0].recall, 0.0);
        assert_eq!(pts[0].precision, 1.0);
        let last = pts.last().unwrap();
        assert_eq!(last.recall, 1.0);
        assert_eq!(last.precision, 0.25);
        assert!(pts.windows(2).all(|w| w[0].recall <= w[1].recall));
    }

    #[test]
    fn pgm16_levels() {
        let mut buf = Vec::new();
        write_pgm16(&mut buf, 3, 1, &[-1.0, 0.0, 1.0]).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0, 0, 0x80, 0x00, 0xff, 0xff]);
    }
}
