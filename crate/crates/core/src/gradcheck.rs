//! Central finite-difference gradient checking.
//!
//! Used by the test suites to validate every backward rule against an
//! independent numerical estimate.

use crate::tensor::{no_grad, Tensor};

/// Gradients smaller than this are compared in absolute terms.
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

/// Largest discrepancy found by [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter, index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error <= rel_tol
    }
}

/// Relative error with a floor on the denominator so that entries whose
/// true gradient is (numerically) zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar `loss` with respect to each
/// parameter against `(f(p + eps) - f(p - eps)) / 2 eps`.
///
/// `loss` is called once with gradients recorded and then twice per checked
/// entry without. Gradients of `params` are cleared first. At most
/// `max_entries_per_param` entries are perturbed for each parameter (evenly
/// spaced); `None` checks all of them.
pub fn check_gradients(
    params: &[(String, Tensor<f64>)],
    loss: impl Fn() -> Tensor<f64>,
    eps: f64,
    max_entries_per_param: Option<usize>,
) -> GradCheckReport {
    for (_, p) in params {
        p.zero_grad();
    }
    let out = loss();
    out.backward();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        let n = p.len();
        let step = match max_entries_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for idx in (0..n).step_by(step) {
            let orig = p.data()[idx];
            p.update_data(|v| v[idx] = orig + eps);
            let plus = no_grad(|| loss().item());
            p.update_data(|v| v[idx] = orig - eps);
            let minus = no_grad(|| loss().item());
            p.update_data(|v| v[idx] = orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[idx], numeric, DENOMINATOR_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx, analytic[idx], numeric));
            }
        }
    }
    for (_, p) in params {
        p.zero_grad();
    }
    report
}
