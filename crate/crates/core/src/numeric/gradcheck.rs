use super::ParamSet;
use crate::error::{Error, Result};

/// Magnitude below which gradient entries are compared absolutely rather
/// than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` to `(f(w+h) - f(w-h)) / 2h` over every coordinate of
/// every block.
///
/// `loss_fn` must be deterministic: it is evaluated twice at `params` first
/// and any difference is reported as a contract violation.
pub fn grad_check<F>(
    loss_fn: F,
    params: &ParamSet,
    analytic: &ParamSet,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::arg(format!("finite-difference step must be positive, got {h}")));
    }
    params.check_congruent(analytic)?;
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::Contract(format!(
            "loss function is not deterministic ({first} vs {second})"
        )));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
        tol,
        passed: true,
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.get(name)?.data().len();
        for i in 0..n {
            let orig = params.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + h;
            let plus = loss_fn(&probe);
            probe.get_mut(name)?.data_mut()[i] = orig - h;
            let minus = loss_fn(&probe);
            probe.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(name)?.data()[i];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_block = name.clone();
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
