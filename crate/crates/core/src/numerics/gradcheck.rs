//! Central finite-difference gradient checker.

/// Tunables for [`grad_check_with`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Denominator floor for the relative error, so that near-zero gradients
    /// are compared in absolute terms.
    pub abs_floor: f64,
    /// A coordinate whose one-sided slopes differ by more than
    /// `kink_tol · max(1, |slope|)` straddles a non-differentiable point and
    /// is excluded from the maximum.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-6,
            abs_floor: 1e-6,
            kink_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate attaining `max_rel_error`.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because they sit on a kink.
    pub excluded: Vec<usize>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(abs_floor)
}

/// Compares `analytic` against `(f(x+ε) − f(x−ε)) / 2ε` coordinate by
/// coordinate.
pub fn grad_check<F>(loss_fn: F, x: &[f64], analytic: &[f64], epsilon: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_with(
        loss_fn,
        x,
        analytic,
        GradCheckOptions {
            epsilon,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<F>(
    mut loss_fn: F,
    x: &[f64],
    analytic: &[f64],
    opts: GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match parameters");
    let eps = opts.epsilon;
    let f0 = loss_fn(x);
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: Vec::new(),
        numeric: Vec::with_capacity(x.len()),
    };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = loss_fn(&probe);
        probe[i] = x[i] - eps;
        let fm = loss_fn(&probe);
        probe[i] = x[i];

        let numeric = (fp - fm) / (2.0 * eps);
        report.numeric.push(numeric);
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        let scale = 1.0f64.max(forward.abs()).max(backward.abs());
        if (forward - backward).abs() > opts.kink_tol * scale {
            report.excluded.push(i);
            continue;
        }
        report.checked += 1;
        let err = relative_error(analytic[i], numeric, opts.abs_floor);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}
