//! Central finite-difference oracles for gradient verification. The
//! whole numeric core is generic over the scalar type, so checks run in
//! f64 regardless of the training precision.

use crate::matrix::Matrix;
use crate::nn::ParamStore;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error pass threshold.
pub const FD_TOL: f64 = 1e-4;

/// Outcome of a gradient comparison sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (parameter name, flat index, analytic, finite-difference) of the
    /// worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// |a - f| / max(|a|, |f|, floor); the floor keeps near-zero gradient
/// pairs from blowing up the ratio.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs()).max(1e-6);
    (analytic - fd).abs() / denom
}

/// Compares analytic parameter gradients (already accumulated in
/// `analytic`) against central finite differences of `eval` over every
/// scalar of every entry accepted by `filter`.
pub fn check_store_grads<F, P>(
    analytic: &ParamStore<f64>,
    mut eval: F,
    filter: P,
    step: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
    P: Fn(&str) -> bool,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let names: Vec<String> = analytic
        .names()
        .filter(|n| filter(n))
        .cloned()
        .collect();
    let mut probe = analytic.clone();
    probe.zero_grads();
    for name in names {
        let len = analytic.get(&name).expect("name").values.data().len();
        for idx in 0..len {
            let base = probe.get(&name).expect("name").values.data()[idx];
            probe.get_mut(&name).expect("name").values.data_mut()[idx] = base + step;
            let up = eval(&probe);
            probe.get_mut(&name).expect("name").values.data_mut()[idx] = base - step;
            let down = eval(&probe);
            probe.get_mut(&name).expect("name").values.data_mut()[idx] = base;
            let fd = (up - down) / (2.0 * step);
            let a = analytic.get(&name).expect("name").grad.data()[idx];
            let err = rel_err(a, fd);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), idx, a, fd));
            }
        }
    }
    report
}

/// Same sweep over the elements of a single input matrix.
pub fn check_matrix_grad<F>(
    analytic: &Matrix<f64>,
    at: &Matrix<f64>,
    mut eval: F,
    step: f64,
) -> GradCheckReport
where
    F: FnMut(&Matrix<f64>) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = at.clone();
    for idx in 0..at.data().len() {
        let base = probe.data()[idx];
        probe.data_mut()[idx] = base + step;
        let up = eval(&probe);
        probe.data_mut()[idx] = base - step;
        let down = eval(&probe);
        probe.data_mut()[idx] = base;
        let fd = (up - down) / (2.0 * step);
        let a = analytic.data()[idx];
        let err = rel_err(a, fd);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(("input".to_string(), idx, a, fd));
        }
    }
    report
}
