//! Principal component baseline: the top-k right singular vectors of the
//! mean-centred spectra, used as a linear reconstruction model.
//!
//! The SVD is a one-sided Jacobi iteration. The centred N×E matrix is
//! first reduced to its E×E triangular QR factor, which has the same right
//! singular vectors, so each sweep costs O(E³) rather than O(N·E²).

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Rotations stop once every column pair has `|cos| < JACOBI_TOLERANCE`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    /// k×E, rows orthonormal.
    components: Array2<f64>,
    /// Non-increasing, `sigma^2 / (N - 1)`.
    explained_variance: Array1<f64>,
}

/// Householder QR; returns the E×E upper-triangular factor of an N×E
/// matrix (N ≥ E). Rows below the diagonal are zero.
fn qr_r(a: ArrayView2<f64>) -> Array2<f64> {
    let (n, e) = a.dim();
    let mut m = a.to_owned();
    for k in 0..e.min(n) {
        let norm = m.slice(s![k.., k]).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if m[[k, k]] > 0.0 { -norm } else { norm };
        let mut v = m.slice(s![k.., k]).to_owned();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..e {
            let dot: f64 = v.iter().zip(m.slice(s![k.., j])).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            m.slice_mut(s![k.., j]).zip_mut_with(&v, |x, vi| *x -= f * vi);
        }
    }
    let rows = e.min(n);
    let mut r = Array2::zeros((e, e));
    for i in 0..rows {
        for j in i..e {
            r[[i, j]] = m[[i, j]];
        }
    }
    r
}

/// Singular values (descending) and right singular vectors (columns of V)
/// of `a` by one-sided Jacobi rotations.
pub fn right_singular_vectors(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, e) = a.dim();
    // columns of w are rotated until mutually orthogonal; w = a v
    let mut w = if n > e { qr_r(a) } else { a.to_owned() };
    let mut v = Array2::<f64>::eye(e);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..e {
            for j in i + 1..e {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in w.column(i).iter().zip(w.column(j)) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= JACOBI_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[[r, i]], m[[r, j]]);
                        m[[r, i]] = c * x - sn * y;
                        m[[r, j]] = sn * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..e).map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..e).collect();
    // stable: equal singular values keep column order
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let sigma = order.iter().map(|&j| norms[j]).collect();
    let mut vs = Array2::zeros((e, e));
    for (dst, &src) in order.iter().enumerate() {
        vs.column_mut(dst).assign(&v.column(src));
    }
    (sigma, vs)
}

/// Flips each row so its largest-magnitude entry is positive (the first
/// such entry on ties).
fn fix_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in row.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            row.mapv_inplace(|x| -x);
        }
    }
}

/// Fits `k` components to the rows of `spectra` (N×E).
pub fn fit(spectra: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, e) = spectra.dim();
    if n == 0 || e == 0 {
        return Err(Error::config("PCA needs a non-empty matrix"));
    }
    if k > n.min(e) {
        return Err(Error::config(format!("k = {k} exceeds min(N, E) = {}", n.min(e))));
    }
    let mean = spectra.mean_axis(Axis(0)).expect("non-empty");
    let centred = spectra - &mean;
    let (sigma, v) = right_singular_vectors(centred.view());
    let mut components = v.slice(s![.., ..k]).t().to_owned();
    fix_signs(&mut components);
    let dof = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let explained_variance = sigma.slice(s![..k]).mapv(|s| s * s / dof);
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &Array1<f64> {
        &self.explained_variance
    }

    /// Orthogonal projection of each row onto `mean + span(components)`.
    pub fn reconstruct(&self, spectra: &Array2<f64>) -> Result<Array2<f64>> {
        if spectra.ncols() != self.channels() {
            return Err(Error::dimension("spectra for PCA", self.channels(), spectra.ncols()));
        }
        let centred = spectra - &self.mean;
        let scores = centred.dot(&self.components.t());
        Ok(scores.dot(&self.components) + &self.mean)
    }

    /// First row the mean, then one row per component, then the explained
    /// variances (padded with empty cells).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let row = |vals: &mut dyn Iterator<Item = String>| vals.collect::<Vec<_>>().join(",");
        writeln!(out, "{}", row(&mut self.mean.iter().map(|v| v.to_string())))?;
        for c in self.components.rows() {
            writeln!(out, "{}", row(&mut c.iter().map(|v| v.to_string())))?;
        }
        let pad = self.channels().saturating_sub(self.k());
        let ev = self
            .explained_variance
            .iter()
            .map(|v| v.to_string())
            .chain(std::iter::repeat_n(String::new(), pad));
        writeln!(out, "{}", row(&mut ev.into_iter()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rank_one_recovery() {
        let u = array![1.0, -2.0, 0.5, 3.0, -1.0];
        let v = array![0.6, 0.0, -0.8];
        let m = Array2::from_shape_fn((5, 3), |(i, j)| u[i] * v[j]);
        let model = fit(&m, 1).unwrap();
        let c = model.components().row(0);
        let cos = c.dot(&v).abs() / (c.dot(&c).sqrt() * v.dot(&v).sqrt());
        assert!(cos > 1.0 - 1e-10);
    }

    #[test]
    fn zero_components_give_mean() {
        let m = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let model = fit(&m, 0).unwrap();
        let r = model.reconstruct(&m).unwrap();
        for row in r.rows() {
            assert_eq!(row, model.mean().view());
        }
    }

    #[test]
    fn k_too_large() {
        let m = Array2::<f64>::zeros((3, 5));
        assert!(matches!(fit(&m, 4), Err(Error::Config(_))));
    }

    #[test]
    fn sign_convention() {
        let mut c = array![[0.1, -0.9, 0.2], [0.5, 0.5, -0.5]];
        fix_signs(&mut c);
        assert_eq!(c, array![[-0.1, 0.9, -0.2], [0.5, 0.5, -0.5]]);
    }

    #[test]
    fn csv_shape() {
        let m = array![[1.0, 2.0, 0.0], [3.0, 6.0, 1.0], [5.0, 1.0, 2.0]];
        let model = fit(&m, 2).unwrap();
        let mut buf = Vec::new();
        model.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(','));
    }
}
