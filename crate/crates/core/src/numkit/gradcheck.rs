//! Central finite-difference certification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParameterStore};
use super::tape::{Tape, Var};

/// Central-difference step used in 64-bit checks.
pub const FD_STEP: f64 = 1e-5;

/// Step reduction applied when a central difference straddles a kink.
pub const KINK_SHRINK: f64 = 0.1;

/// Gradients smaller than this are compared on an absolute scale: the
/// relative error denominator is `max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub non_finite: bool,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Checks every coordinate of `point`. `f` returns the value and its analytic gradient.
pub fn grad_check<F>(f: F, point: &[f64], rel_tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, &coords, rel_tol)
}

/// Checks only the listed coordinates (large models are spot-checked).
pub fn grad_check_coords<F>(f: F, point: &[f64], coords: &[usize], rel_tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    check_against(|x| f(x).0, &analytic, point, coords, rel_tol)
}

/// Compares a precomputed analytic gradient with central differences of `value`.
pub fn check_against<F>(value: F, analytic: &[f64], point: &[f64], coords: &[usize], rel_tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len(), "analytic gradient length must match the point");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        non_finite: false,
        passed: true,
    };
    if analytic.iter().any(|g| !g.is_finite()) {
        report.non_finite = true;
        report.passed = false;
        report.max_rel_error = f64::INFINITY;
        return report;
    }
    let mut x = point.to_vec();
    let mut f0 = None;
    for &i in coords {
        let (fp, fm) = probe(&value, &mut x, i, FD_STEP);
        let mut numeric = (fp - fm) / (2.0 * FD_STEP);
        let mut err = if numeric.is_finite() { relative_error(analytic[i], numeric) } else { f64::INFINITY };
        if err >= rel_tol && numeric.is_finite() {
            // one-sided slopes that disagree mean a kink (relu, max, top-k) lies
            // inside the step; re-measure with a step that does not straddle it
            let f0 = *f0.get_or_insert_with(|| value(point));
            let (fwd, bwd) = ((fp - f0) / FD_STEP, (f0 - fm) / FD_STEP);
            if relative_error(fwd, bwd) >= rel_tol {
                let h = FD_STEP * KINK_SHRINK;
                let (fp, fm) = probe(&value, &mut x, i, h);
                let fine = (fp - fm) / (2.0 * h);
                let fine_err = relative_error(analytic[i], fine);
                if fine_err < err {
                    numeric = fine;
                    err = fine_err;
                }
            }
        }
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error < rel_tol;
    report
}

fn probe<F: Fn(&[f64]) -> f64>(value: &F, x: &mut [f64], i: usize, h: f64) -> (f64, f64) {
    let orig = x[i];
    x[i] = orig + h;
    let fp = value(x);
    x[i] = orig - h;
    let fm = value(x);
    x[i] = orig;
    (fp, fm)
}

/// Spot-checks the tape gradient of `loss` with respect to every parameter in
/// `store`: up to `per_param` randomly chosen coordinates of each array.
pub fn grad_check_store<F>(
    store: &ParameterStore<f64>,
    loss: F,
    per_param: usize,
    seed: u64,
    rel_tol: f64,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &Bound) -> Var,
{
    let eval = |flat: &[f64], with_grad: bool| -> (f64, Vec<f64>) {
        let mut s = store.clone();
        s.unflatten(flat);
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        let l = loss(&mut tape, &bound);
        let v = tape.scalar(l);
        if !with_grad {
            return (v, Vec::new());
        }
        let g = tape.backward(l);
        s.zero_grads();
        s.accumulate(&bound, &g);
        (v, s.flatten_grads())
    };
    let point = store.flatten();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    let mut offset = 0;
    for (_, e) in store.iter() {
        let n = e.value.len();
        if n <= per_param {
            coords.extend(offset..offset + n);
        } else {
            coords.extend(rand::seq::index::sample(&mut rng, n, per_param).into_iter().map(|i| offset + i));
        }
        offset += n;
    }
    let (_, analytic) = eval(&point, true);
    check_against(|x| eval(x, false).0, &analytic, &point, &coords, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = grad_check(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[3.0], 1e-8);
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let r = grad_check(|x| (x[0].sin() * x[1], vec![x[0].cos() * x[1], 0.0]), &[0.3, 2.0], 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_index, 1);
    }

    // kink 5e-6 left of the point: the default step straddles it
    fn kinked(x: &[f64]) -> f64 {
        x[0] * x[0] + 0.5 * (x[0] - 3.0 + 5e-6).max(0.0)
    }

    #[test]
    fn kink_inside_the_step_is_remeasured() {
        let r = grad_check(|x| (kinked(x), vec![2.0 * x[0] + 0.5]), &[3.0], 1e-6);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn kink_retry_does_not_hide_a_wrong_gradient() {
        let r = grad_check(|x| (kinked(x), vec![2.0 * x[0]]), &[3.0], 1e-4);
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_gradient_fails() {
        let r = grad_check(|x| (x[0], vec![f64::NAN]), &[1.0], 1e-4);
        assert!(r.non_finite && !r.passed);
    }
}
