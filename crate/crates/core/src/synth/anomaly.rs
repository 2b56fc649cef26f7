use std::io::{BufRead, Write};

use crate::config::KvConfig;
use crate::datacube::Datacube;
use crate::error::{Error, Result};
use crate::seeds;

use super::poisson_sample;

/// Disc of pixels `(x - cx)^2 + (y - cy)^2 <= radius^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Disc {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Disc { cx, cy, radius }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// How channels vacated by a shift are filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FillPolicy {
    /// Mean of up to `channels` channels just below the segment, optionally
    /// resampled as Poisson counts.
    LocalBackground { channels: usize, noise: bool },
    /// Repeat the channel just below the segment.
    Hold,
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::LocalBackground {
            channels: 4,
            noise: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalySpec {
    pub shift_ev: f64,
    pub segment_ev: (f64, f64),
    pub clusters: Vec<Disc>,
    pub fill: FillPolicy,
    /// Seeds the fill noise; the same seed gives the same fill at every
    /// magnitude.
    pub seed: u64,
}

impl AnomalySpec {
    pub fn new(shift_ev: f64, clusters: Vec<Disc>) -> Self {
        AnomalySpec {
            shift_ev,
            segment_ev: (700.0, 730.0),
            clusters,
            fill: FillPolicy::default(),
            seed: 0,
        }
    }

    /// Six radius-2 discs spread over the field, about 3% of a 48×48 cube.
    pub fn default_clusters(width: usize, height: usize) -> Vec<Disc> {
        const LAYOUT: [(f64, f64); 6] = [(6.0, 6.0), (40.0, 8.0), (24.0, 24.0), (8.0, 40.0), (40.0, 40.0), (24.0, 6.0)];
        let (sx, sy) = (width as f64 / 48.0, height as f64 / 48.0);
        LAYOUT
            .iter()
            .map(|&(x, y)| Disc::new((x * sx).floor(), (y * sy).floor(), 2.0))
            .collect()
    }

    pub fn with_shift(&self, shift_ev: f64) -> Self {
        AnomalySpec {
            shift_ev,
            ..self.clone()
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> AnomalyMask {
        AnomalyMask::from_fn(width, height, |x, y| self.clusters.iter().any(|d| d.contains(x, y)))
    }

    /// Reads `anomaly.*`. `anomaly.clusters` is a comma-separated list of
    /// `cx:cy:radius`; `anomaly.fill` is `local_background` or `hold`.
    pub fn from_config(cfg: &KvConfig, width: usize, height: usize, seed: u64) -> Result<Self> {
        let defaults = Self::default_clusters(width, height);
        let clusters = match cfg.get_str("anomaly.clusters") {
            Some(text) => parse_discs(&text)?,
            None => {
                cfg.note("anomaly.clusters", format_discs(&defaults));
                defaults
            }
        };
        let segment: Vec<f64> = cfg.get_list_or("anomaly.segment_ev", &[700.0, 730.0])?;
        let [lo, hi] = segment[..] else {
            return Err(Error::config("anomaly.segment_ev needs two energies `lo, hi`"));
        };
        let fill = match cfg.get_str_or("anomaly.fill", "local_background").as_str() {
            "local_background" => FillPolicy::LocalBackground {
                channels: cfg.get_or("anomaly.fill_channels", 4usize)?,
                noise: cfg.get_or("anomaly.fill_noise", true)?,
            },
            "hold" => FillPolicy::Hold,
            other => return Err(Error::config(format!("unknown anomaly.fill `{other}`"))),
        };
        Ok(AnomalySpec {
            shift_ev: cfg.get_or("anomaly.shift_ev", 2.5)?,
            segment_ev: (lo, hi),
            clusters,
            fill,
            seed,
        })
    }

    /// `(lo, hi, lag)`: the segment's channel range and the shift in channels.
    fn channels(&self, cube: &Datacube) -> Result<(usize, usize, usize)> {
        if !(self.shift_ev.is_finite() && self.shift_ev >= 0.0) {
            return Err(Error::config(format!("shift must be non-negative, got {} eV", self.shift_ev)));
        }
        let seg = cube.axis().window(self.segment_ev.0, self.segment_ev.1)?;
        let lag = (self.shift_ev / cube.axis().dispersion_ev()).round() as usize;
        if seg.end + lag > cube.channels() {
            return Err(Error::config(format!(
                "a {} eV shift moves the segment {:?} eV past the last channel ({} eV)",
                self.shift_ev,
                self.segment_ev,
                cube.axis().last_energy()
            )));
        }
        for d in &self.clusters {
            let inside = d.cx >= 0.0 && d.cy >= 0.0 && d.cx < cube.width() as f64 && d.cy < cube.height() as f64;
            if !inside || !(d.radius >= 0.0) {
                return Err(Error::config(format!(
                    "cluster {d:?} does not lie within the {}x{} field",
                    cube.width(),
                    cube.height()
                )));
            }
        }
        Ok((seg.start, seg.end, lag))
    }
}

fn parse_discs(text: &str) -> Result<Vec<Disc>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let v: Vec<f64> = item
                .split(':')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("cluster `{item}`: {e}")))?;
            match v[..] {
                [cx, cy, r] => Ok(Disc::new(cx, cy, r)),
                _ => Err(Error::config(format!("cluster `{item}` is not cx:cy:radius"))),
            }
        })
        .collect()
}

fn format_discs(discs: &[Disc]) -> String {
    discs
        .iter()
        .map(|d| format!("{}:{}:{}", d.cx, d.cy, d.radius))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-pixel boolean map; true marks an anomalous pixel. Rows in (y, x).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnomalyMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl AnomalyMask {
    pub fn empty(width: usize, height: usize) -> Self {
        AnomalyMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        AnomalyMask { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dimension("mask", width * height, data.len()));
        }
        Ok(AnomalyMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(p, _)| (p % self.width, p / self.width))
    }

    pub(crate) fn check_same_size(&self, width: usize, height: usize, what: &'static str) -> Result<()> {
        if (self.width, self.height) == (width, height) {
            Ok(())
        } else {
            Err(Error::dimension(
                what,
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ))
        }
    }

    /// Binary PGM (P5, maxval 255, 255 = anomalous).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    /// `x,y` rows for every anomalous pixel.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y")?;
        for (x, y) in self.coords() {
            writeln!(out, "{x},{y}")?;
        }
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv) for a known extent.
    pub fn read_csv<R: BufRead>(input: R, width: usize, height: usize) -> Result<Self> {
        let mut mask = AnomalyMask::empty(width, height);
        let mut offset = 0u64;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let at = offset;
            offset += line.len() as u64 + 1;
            let line = line.trim();
            if n == 0 && line == "x,y" || line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Format { offset: at, reason };
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("mask row `{line}` is not `x,y`")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("mask row `{line}`: {e}")));
            let (x, y) = (parse(x)?, parse(y)?);
            if x >= width || y >= height {
                return Err(bad(format!("mask pixel ({x}, {y}) outside {width}x{height}")));
            }
            mask.data[y * width + x] = true;
        }
        Ok(mask)
    }
}

/// Shifts the segment of every masked spectrum toward higher energy by
/// `round(shift / dispersion)` channels. Unmasked pixels are untouched.
pub fn inject_peak_shift(cube: &Datacube, spec: &AnomalySpec) -> Result<(Datacube, AnomalyMask)> {
    let (lo, hi, lag) = spec.channels(cube)?;
    let mask = spec.mask(cube.width(), cube.height());
    let mut out = cube.clone();
    if lag == 0 {
        return Ok((out, mask));
    }
    for (x, y) in mask.coords() {
        let src = cube.spectrum(x, y);
        let dst = out.spectrum_mut(x, y);
        dst[lo + lag..hi + lag].copy_from_slice(&src[lo..hi]);
        match spec.fill {
            FillPolicy::LocalBackground { channels, noise } => {
                let below = &src[lo.saturating_sub(channels.max(1))..lo];
                let level = if below.is_empty() {
                    src[lo]
                } else {
                    below.iter().sum::<f64>() / below.len() as f64
                };
                let mut rng = seeds::indexed(spec.seed, seeds::INJECT, (y * cube.width() + x) as u64);
                for v in &mut dst[lo..lo + lag] {
                    *v = if noise { poisson_sample(level, &mut rng) } else { level };
                }
            }
            FillPolicy::Hold => {
                let level = src[lo.saturating_sub(1)];
                dst[lo..lo + lag].iter_mut().for_each(|v| *v = level);
            }
        }
    }
    Ok((out, mask))
}

/// One injected cube per magnitude, sharing clusters and fill seed.
pub fn sweep_shifts(cube: &Datacube, base: &AnomalySpec, magnitudes: &[f64]) -> Result<Vec<(Datacube, AnomalyMask)>> {
    magnitudes.iter().map(|&m| inject_peak_shift(cube, &base.with_shift(m))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::EnergyAxis;

    fn ramp_cube() -> Datacube {
        let axis = EnergyAxis::new(690.0, 0.5, 120).unwrap();
        let data = (0..6 * 6 * 120).map(|i| (i % 120) as f64 + 1.0).collect();
        Datacube::new(6, 6, axis, data).unwrap()
    }

    #[test]
    fn disc_radius_three_has_29_pixels() {
        let spec = AnomalySpec::new(2.5, vec![Disc::new(24.0, 24.0, 3.0)]);
        assert_eq!(spec.mask(48, 48).count(), 29);
    }

    #[test]
    fn zero_shift_is_identity_with_mask() {
        let cube = ramp_cube();
        let spec = AnomalySpec::new(0.0, vec![Disc::new(2.0, 2.0, 1.0)]);
        let (out, mask) = inject_peak_shift(&cube, &spec).unwrap();
        assert_eq!(out, cube);
        assert_eq!(mask.count(), 5);
    }

    #[test]
    fn shift_moves_segment_and_fills_below() {
        let cube = ramp_cube();
        let mut spec = AnomalySpec::new(2.5, vec![Disc::new(0.0, 0.0, 0.0)]);
        spec.fill = FillPolicy::LocalBackground {
            channels: 4,
            noise: false,
        };
        let (out, _) = inject_peak_shift(&cube, &spec).unwrap();
        // segment 700..=730 eV is channels 20..81
        let s = out.spectrum(0, 0);
        assert_eq!(&s[25..86], &cube.spectrum(0, 0)[20..81]);
        assert!(s[20..25].iter().all(|&v| v == (17.0 + 18.0 + 19.0 + 20.0) / 4.0));
        assert_eq!(out.spectrum(1, 0), cube.spectrum(1, 0));
    }

    #[test]
    fn shift_off_axis_is_rejected() {
        let cube = ramp_cube();
        let spec = AnomalySpec::new(40.0, vec![Disc::new(0.0, 0.0, 1.0)]);
        assert!(matches!(inject_peak_shift(&cube, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn cluster_outside_field_is_rejected() {
        let cube = ramp_cube();
        let spec = AnomalySpec::new(1.0, vec![Disc::new(10.0, 0.0, 1.0)]);
        assert!(inject_peak_shift(&cube, &spec).is_err());
    }

    #[test]
    fn pgm_and_csv_agree() {
        let mask = AnomalySpec::new(1.0, vec![Disc::new(2.0, 2.0, 1.0)]).mask(5, 4);
        let mut pgm = Vec::new();
        mask.write_pgm(&mut pgm).unwrap();
        let header = b"P5\n5 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let white = pgm[header.len()..].iter().filter(|&&b| b == 255).count();
        let mut csv = Vec::new();
        mask.write_csv(&mut csv).unwrap();
        let rows = String::from_utf8(csv).unwrap().lines().count() - 1;
        assert_eq!(white, rows);
        assert_eq!(rows, 5);
    }

    #[test]
    fn default_layout_fraction() {
        let clusters = AnomalySpec::default_clusters(48, 48);
        let f = AnomalySpec::new(2.5, clusters).mask(48, 48).fraction();
        assert!((0.02..=0.05).contains(&f), "{f}");
    }
}
