//! Central finite differences, used as an independent oracle for the
//! analytic gradients recorded on a [`crate::Tape`].

use crate::{Tape, Tensor, Var};

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Entries whose analytic and
/// numeric gradients are both below this are compared absolutely, which
/// keeps rounding noise on vanishing gradients from dominating the check.
pub const DEFAULT_FLOOR: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Worst-case comparison between two gradient vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> Self {
        assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
        let mut report = GradCheck {
            max_relative_error: 0.0,
            worst_index: 0,
            checked: analytic.len(),
        };
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let err = relative_error(a, n, floor);
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst_index = i;
            }
        }
        report
    }

    /// Merges two reports, keeping the worse maximum.
    pub fn merge(self, other: GradCheck) -> GradCheck {
        let checked = self.checked + other.checked;
        let mut worst = if other.max_relative_error > self.max_relative_error {
            other
        } else {
            self
        };
        worst.checked = checked;
        worst
    }
}

/// Gradient of the scalar built by `build` with respect to every input,
/// taken once through the tape and once by central differences over the
/// concatenated inputs.
///
/// `build` receives one variable per input; it must be a pure function of
/// their values.
pub fn check_graph(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> GradCheck {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("graph output must be a scalar");
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |x: &[f64]| {
        let mut tape = Tape::new();
        let mut rest = x;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let (head, tail) = rest.split_at(t.len());
                rest = tail;
                tape.constant(Tensor::new(t.shape().to_vec(), head.to_vec()).expect("same shape"))
            })
            .collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let numeric = central_difference(eval, &flat, DEFAULT_STEP);
    GradCheck::compare(&analytic, &numeric, DEFAULT_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], DEFAULT_STEP);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn floor_applies_to_tiny_gradients() {
        assert!(relative_error(1e-12, 2e-12, DEFAULT_FLOOR) < 1e-7);
        assert!((relative_error(1.0, 1.1, DEFAULT_FLOOR) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn graph_check_of_a_product() {
        let a = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let b = Tensor::new([3], vec![0.3, 0.7, -1.1]).unwrap();
        let report = check_graph(&[a, b], |t, v| t.dot(v[0], v[1]).unwrap());
        assert_eq!(report.checked, 6);
        assert!(report.max_relative_error < 1e-8);
    }
}
