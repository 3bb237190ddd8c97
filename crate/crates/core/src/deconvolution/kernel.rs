use serde::{Deserialize, Serialize};

use super::design::Design;
use crate::curvefit::{solve_block_refs, CompressedBlock, LinearFit};
use crate::error::{Error, Result};

/// Per-lag bootstrap summary of the normalized cumulative kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub replicates: usize,
    /// Replicates whose resampled system could not be solved.
    pub failed: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub p05: Vec<f64>,
    pub p95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub horizon: usize,
    /// Lag coefficients G(l), l = 0..=horizon.
    pub coefficients: Vec<f64>,
    pub coefficient_se: Vec<f64>,
    /// Cumulative kernel, running sum of the coefficients.
    pub cumulative: Vec<f64>,
    /// `sqrt` of the running sum of coefficient variances.
    pub cumulative_se: Vec<f64>,
    /// Cumulative kernel divided by its value at lag 0.
    pub normalized: Vec<f64>,
    /// `cumulative_se / |G(0)|`.
    pub normalized_se: Vec<f64>,
    /// Coefficients of the lagged-return regressors, if any.
    pub alpha_coefficients: Vec<f64>,
    pub rows: usize,
    /// Ridge strength when regularization was requested.
    pub ridge: Option<f64>,
    pub bands: Option<BootstrapBands>,
}

pub(crate) fn estimate_from_fit(fit: &LinearFit, horizon: usize, ridge: Option<f64>) -> KernelEstimate {
    let k = horizon + 1;
    let coefficients = fit.coefficients[..k].to_vec();
    let coefficient_se = fit.std_errors[..k].to_vec();
    let mut cumulative = Vec::with_capacity(k);
    let mut cumulative_se = Vec::with_capacity(k);
    let (mut acc, mut var) = (0.0, 0.0);
    for l in 0..k {
        acc += coefficients[l];
        var += coefficient_se[l].powi(2);
        cumulative.push(acc);
        cumulative_se.push(var.sqrt());
    }
    let g0 = cumulative[0];
    KernelEstimate {
        horizon,
        normalized: cumulative.iter().map(|c| c / g0).collect(),
        normalized_se: cumulative_se.iter().map(|e| e / g0.abs()).collect(),
        coefficients,
        coefficient_se,
        cumulative,
        cumulative_se,
        alpha_coefficients: fit.coefficients[k..].to_vec(),
        rows: fit.rows,
        ridge,
        bands: None,
    }
}

/// Solve stacked per-stock factors, with an optional ridge on the flow lags.
/// A zero lag-0 coefficient leaves the normalized kernel NaN.
pub(crate) fn solve_factors<'a, I>(blocks: I, horizon: usize, columns: usize, ridge: Option<f64>) -> Result<KernelEstimate>
where
    I: IntoIterator<Item = &'a CompressedBlock>,
{
    let penalty = ridge.map(|l| CompressedBlock::ridge(columns, horizon + 1, l));
    let mut refs: Vec<&CompressedBlock> = blocks.into_iter().collect();
    refs.extend(penalty.as_ref());
    let fit = solve_block_refs(refs)?;
    Ok(estimate_from_fit(&fit, horizon, ridge))
}

/// Orthogonal-factorization least squares on the pooled design, then the
/// cumulative and normalized kernels.
pub fn solve_kernel(design: &Design, ridge: Option<f64>) -> Result<KernelEstimate> {
    if let Some(l) = ridge {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!("ridge must be positive, got {l}")));
        }
    }
    let blocks = design.compress()?;
    solve_factors(&blocks, design.horizon, design.columns(), ridge)
}
