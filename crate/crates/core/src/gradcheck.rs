//! Central finite-difference validation of tape gradients.
//!
//! The analytic gradient from [`Tape::backward`] is compared against
//! `(f(x + h e_i) - f(x - h e_i)) / 2h` coordinate by coordinate, with the
//! relative error denominator guarded at 1e-8 so near-zero gradients do not
//! blow the ratio up.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
const GUARD: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Name of the function or parameter group under test.
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate, if any coordinate was checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max_rel_error={:.3e} over {} coords (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.checked,
            self.tol
        )
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GUARD)
}

/// Check the gradient of `f` at `x` on every coordinate.
///
/// `f` receives a fresh tape and the input leaf, and must return a scalar
/// output variable built on that tape.
pub fn finite_difference_check<F>(
    f: F,
    x: &Tensor,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape, Var) -> Result<Var, TensorError>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_difference_check_coords("f", f, x, step, tol, &coords)
}

/// Check the gradient of `f` at `x` on a chosen subset of coordinates.
pub fn finite_difference_check_coords<F>(
    name: &str,
    f: F,
    x: &Tensor,
    step: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape, Var) -> Result<Var, TensorError>,
{
    let eval = |point: &Tensor| -> Result<(f64, Option<Vec<f64>>), TensorError> {
        let tape = Tape::new();
        let leaf = tape.leaf(point);
        let out = f(&tape, leaf)?;
        let value = tape.scalar_value(out)?;
        if point.requires_grad {
            let grads = tape.backward(out)?;
            Ok((value, grads.wrt(leaf).map(|g| g.to_vec())))
        } else {
            Ok((value, None))
        }
    };

    let mut base = x.clone();
    base.requires_grad = true;
    let (_, analytic) = eval(&base)?;
    let analytic = analytic.unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut probe = x.clone();
    probe.requires_grad = false;
    let mut max_rel = 0.0;
    let mut worst = None;
    for &i in coords {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let (plus, _) = eval(&probe)?;
        probe.data_mut()[i] = original - step;
        let (minus, _) = eval(&probe)?;
        probe.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let err = rel_error(analytic[i], numeric);
        if err > max_rel {
            max_rel = err;
            worst = Some(i);
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        worst_index: worst,
        checked: coords.len(),
        tol,
    })
}

/// Pick up to `limit` distinct coordinates of an `n`-element tensor.
pub fn sample_coords<R: Rng>(n: usize, limit: usize, rng: &mut R) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if n <= limit {
        return all;
    }
    all.shuffle(rng);
    all.truncate(limit);
    all.sort_unstable();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sum_of_squares_gradient_is_tight() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(data);
        let report = finite_difference_check(
            |t, v| {
                let sq = t.hadamard(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report}");
    }

    #[test]
    fn constant_function_has_zero_gradients_on_both_sides() {
        let x = Tensor::from_vec(vec![0.4, -1.2, 2.2]);
        let report = finite_difference_check(
            |t, _v| t.constant(vec![1], vec![42.0]),
            &x,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn composite_nonlinearity_passes_default_tolerance() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data);
        let report = finite_difference_check(
            |t, v| {
                let s = t.sigmoid(v);
                let th = t.tanh(v);
                let prod = t.hadamard(s, th)?;
                Ok(t.sum(prod))
            },
            &x,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn sample_coords_is_exhaustive_for_small_tensors() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(sample_coords(5, 10, &mut rng), vec![0, 1, 2, 3, 4]);
        let picked = sample_coords(100, 10, &mut rng);
        assert_eq!(picked.len(), 10);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
    }
}
