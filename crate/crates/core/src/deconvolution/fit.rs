use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvefit::{linear_lsq, nonlinear_lsq, FitProblem, FitResult};
use crate::error::{Error, Result};
use crate::impact::{prop_shape, prop_shape_dbeta};

pub const DEFAULT_PROPAGATOR_BETA: f64 = 0.22;
pub const DEFAULT_TRUNCATION: f64 = 0.038;

/// `i_inf + (1 - i_inf) * I_prop(tau; beta) * exp(-b tau)`.
pub fn modified_propagator(tau: f64, i_inf: f64, b: f64, beta: f64) -> f64 {
    i_inf + (1.0 - i_inf) * prop_shape(tau, beta) * (-b * tau).exp()
}

/// Partial derivatives with respect to `(i_inf, b, beta)`.
pub fn modified_propagator_gradient(tau: f64, i_inf: f64, b: f64, beta: f64) -> [f64; 3] {
    let e = (-b * tau).exp();
    let p = prop_shape(tau, beta);
    [1.0 - p * e, -(1.0 - i_inf) * p * tau * e, (1.0 - i_inf) * e * prop_shape_dbeta(tau, beta)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Fit `i_inf`; `beta` and `b` fixed.
    OneParam,
    /// Fit `i_inf` and `b`; `beta` fixed.
    TwoParam,
    /// `b = 0`; fit `i_inf` and `beta`.
    BZeroFreeBeta,
}

impl FitMode {
    pub const ALL: [FitMode; 3] = [FitMode::OneParam, FitMode::TwoParam, FitMode::BZeroFreeBeta];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsymptoteOptions {
    pub mode: FitMode,
    /// Truncation rate used when `b` is not fitted (one-parameter mode).
    pub b_fixed: f64,
    /// Propagator exponent used when `beta` is not fitted.
    pub beta_fixed: f64,
}

impl Default for AsymptoteOptions {
    fn default() -> Self {
        Self { mode: FitMode::OneParam, b_fixed: DEFAULT_TRUNCATION, beta_fixed: DEFAULT_PROPAGATOR_BETA }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFitParams {
    pub mode: FitMode,
    pub i_inf: f64,
    pub b: f64,
    pub beta: f64,
    /// NaN for parameters held fixed.
    pub i_inf_stderr: f64,
    pub b_stderr: f64,
    pub beta_stderr: f64,
    pub boundary_hit: bool,
    pub converged: bool,
    /// False when unit weights replaced missing standard errors.
    pub inverse_variance_weights: bool,
    pub fit: FitResult,
}

/// Deterministic starting point: asymptote from the mean of the last ten
/// points, `b` from a log-linear regression of the excess over it.
fn initial_guess(taus: &[f64], values: &[f64], beta: f64) -> (f64, f64) {
    let n = values.len();
    let tail = &values[n.saturating_sub(10)..];
    let i0 = (tail.iter().sum::<f64>() / tail.len() as f64).clamp(0.01, 0.99);
    let pts: Vec<(f64, f64)> = taus
        .iter()
        .zip(values)
        .filter_map(|(&t, &v)| {
            let excess = (v - i0) / ((1.0 - i0) * prop_shape(t, beta));
            (excess > 0.0 && t > 0.0).then(|| (t, excess.ln()))
        })
        .collect();
    let mut b0 = DEFAULT_TRUNCATION;
    if pts.len() >= 3 {
        let x = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].0 });
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
        if let Ok(f) = linear_lsq(&x, &y, None) {
            b0 = -f.coefficients[1];
        }
    }
    let b0 = if b0.is_finite() { b0.clamp(1e-4, 1.0) } else { DEFAULT_TRUNCATION };
    (i0, b0)
}

/// Weighted fit of the modified propagator to a normalized kernel sampled at
/// `tau = 0, 1, ..`. The `tau = 0` point is exact by construction and left out.
pub fn fit_kernel_asymptote(normalized: &[f64], stderr: Option<&[f64]>, opts: &AsymptoteOptions) -> Result<KernelFitParams> {
    if normalized.len() < 4 {
        return Err(Error::InvalidArgument("need the kernel at lag 0 and at least 3 further lags".into()));
    }
    if (normalized[0] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("kernel is not normalized: value {} at lag 0", normalized[0])));
    }
    if !(opts.b_fixed >= 0.0) || !(opts.beta_fixed >= 0.0 && opts.beta_fixed <= 1.0) {
        return Err(Error::InvalidArgument("fixed b must be >= 0 and fixed beta in [0, 1]".into()));
    }
    if let Some(se) = stderr {
        if se.len() != normalized.len() {
            return Err(Error::InvalidArgument("stderr length mismatch".into()));
        }
    }
    let taus: Vec<f64> = (1..normalized.len()).map(|t| t as f64).collect();
    let values = normalized[1..].to_vec();
    let (weights, weighted) = match stderr.map(|s| &s[1..]) {
        Some(se) if se.iter().all(|e| e.is_finite() && *e > 0.0) => (se.iter().map(|e| e.powi(-2)).collect(), true),
        _ => (vec![1.0; values.len()], false),
    };
    let (i0, b0) = initial_guess(&taus, &values, opts.beta_fixed);
    let mode = opts.mode;
    let (bf, betaf) = (opts.b_fixed, opts.beta_fixed);

    // map the free parameter vector onto (i_inf, b, beta)
    let full = move |p: &[f64]| -> [f64; 3] {
        match mode {
            FitMode::OneParam => [p[0], bf, betaf],
            FitMode::TwoParam => [p[0], p[1], betaf],
            FitMode::BZeroFreeBeta => [p[0], 0.0, p[1]],
        }
    };
    let free: &'static [usize] = match mode {
        FitMode::OneParam => &[0],
        FitMode::TwoParam => &[0, 1],
        FitMode::BZeroFreeBeta => &[0, 2],
    };
    let (initial, lower, upper) = match mode {
        FitMode::OneParam => (vec![i0], vec![0.0], vec![1.0]),
        FitMode::TwoParam => (vec![i0, b0], vec![0.0, 0.0], vec![1.0, f64::INFINITY]),
        FitMode::BZeroFreeBeta => (vec![i0, betaf], vec![0.0, 0.0], vec![1.0, 1.0]),
    };
    let (t1, t2) = (taus.clone(), taus);
    let problem = FitProblem::new(
        move |p: &[f64]| {
            let q = full(p);
            t1.iter().map(|&t| modified_propagator(t, q[0], q[1], q[2])).collect()
        },
        values,
        initial,
    )
    .weights(weights)
    .bounds(lower, upper)
    .analytic_jacobian(move |p: &[f64]| {
        let q = full(p);
        DMatrix::from_fn(t2.len(), free.len(), |i, j| modified_propagator_gradient(t2[i], q[0], q[1], q[2])[free[j]])
    });
    let fit = nonlinear_lsq(&problem)?;
    let q = full(&fit.params);
    let mut errs = [f64::NAN; 3];
    for (j, &k) in free.iter().enumerate() {
        errs[k] = fit.errors[j];
    }
    Ok(KernelFitParams {
        mode,
        i_inf: q[0],
        b: q[1],
        beta: q[2],
        i_inf_stderr: errs[0],
        b_stderr: errs[1],
        beta_stderr: errs[2],
        boundary_hit: fit.boundary_hit(),
        converged: fit.converged,
        inverse_variance_weights: weighted,
        fit,
    })
}
