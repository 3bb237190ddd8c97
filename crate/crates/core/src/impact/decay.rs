use std::cmp::Ordering;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{equal_population, mean_and_se, prop_shape, prop_shape_dbeta, ratio_of_means, OrderImpact};
use crate::curvefit::{linear_lsq, nonlinear_lsq, FitProblem, FitResult};
use crate::error::{Error, Result};

/// Linear bins below this z, logarithmic bins above.
const LOG_SPLIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    SameDay,
    NextDay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// `z = V_EC / V_SE`.
    Volume,
    /// `z = T_EC / T_SE`.
    Calendar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayOptions {
    pub horizon: Horizon,
    pub n_bins: usize,
    /// Multiplies the next-day ratio; must be 1 for the same-day curve.
    pub zeta: f64,
    pub clock: Clock,
    /// Orders beyond this z are ignored; defaults to the largest observed z.
    pub z_max: Option<f64>,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self { horizon: Horizon::SameDay, n_bins: 20, zeta: 1.0, clock: Clock::Volume, z_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    /// Mean z of the bin members.
    pub z: f64,
    pub value: f64,
    pub stderr: f64,
    pub count: usize,
}

fn z_of(o: &OrderImpact, opts: &DecayOptions) -> Option<f64> {
    match (opts.horizon, opts.clock) {
        (Horizon::SameDay, Clock::Volume) => Some(o.z),
        (Horizon::SameDay, Clock::Calendar) => o.z_calendar,
        (Horizon::NextDay, Clock::Volume) => o.z_next,
        (Horizon::NextDay, Clock::Calendar) => o.z_next_calendar,
    }
}

fn bin_index(z: f64, n_lin: usize, n_log: usize, z_hi: f64) -> usize {
    if z < LOG_SPLIT || n_log == 0 {
        ((z / LOG_SPLIT * n_lin as f64) as usize).min(n_lin - 1)
    } else {
        let frac = (z / LOG_SPLIT).ln() / (z_hi / LOG_SPLIT).ln();
        n_lin + ((frac * n_log as f64) as usize).min(n_log - 1)
    }
}

/// Relaxation ratio per z-bin: ratio of mean numerator (close or next close
/// impact) to mean start-to-end impact, times `zeta`. Empty bins are dropped.
pub fn decay_curve(orders: &[OrderImpact], opts: &DecayOptions) -> Result<Vec<DecayPoint>> {
    if opts.n_bins < 2 {
        return Err(Error::InvalidArgument("decay curve needs at least 2 bins".into()));
    }
    if !(opts.zeta > 0.0) || !opts.zeta.is_finite() {
        return Err(Error::InvalidArgument(format!("zeta must be positive, got {}", opts.zeta)));
    }
    if opts.horizon == Horizon::SameDay && opts.zeta != 1.0 {
        return Err(Error::InvalidArgument("zeta applies to the next-day curve only".into()));
    }
    let members: Vec<(f64, f64, f64)> = orders
        .iter()
        .filter_map(|o| {
            let z = z_of(o, opts)?;
            let num = match opts.horizon {
                Horizon::SameDay => o.start_close,
                Horizon::NextDay => o.start_next_close?,
            };
            Some((z, num, o.start_end))
        })
        .filter(|(z, _, _)| z.is_finite() && opts.z_max.is_none_or(|m| *z <= m))
        .collect();
    if members.is_empty() {
        return Err(Error::Data("no orders with a defined z".into()));
    }
    let observed_max = members.iter().map(|m| m.0).fold(0.0, f64::max);
    let z_hi = opts.z_max.unwrap_or(observed_max).max(LOG_SPLIT * (1.0 + 1e-12));
    let n_lin = (opts.n_bins / 4).max(1);
    let n_log = opts.n_bins - n_lin;
    let mut groups: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); opts.n_bins];
    for m in members {
        groups[bin_index(m.0, n_lin, n_log, z_hi)].push(m);
    }
    let mut out = Vec::new();
    for (b, g) in groups.iter().enumerate() {
        if g.is_empty() {
            warn!("decay curve: bin {b} is empty and was dropped");
            continue;
        }
        let num: Vec<f64> = g.iter().map(|m| m.1).collect();
        let den: Vec<f64> = g.iter().map(|m| m.2).collect();
        let (ratio, se) = ratio_of_means(&num, &den);
        out.push(DecayPoint {
            z: g.iter().map(|m| m.0).sum::<f64>() / g.len() as f64,
            value: opts.zeta * ratio,
            stderr: opts.zeta * se,
            count: g.len(),
        });
    }
    Ok(out)
}

/// Inverse-variance weights, or unit weights when any error is unusable.
fn weights_from(points: &[DecayPoint]) -> (Vec<f64>, bool) {
    if points.iter().all(|p| p.stderr.is_finite() && p.stderr > 0.0) {
        (points.iter().map(|p| p.stderr.powi(-2)).collect(), true)
    } else {
        (vec![1.0; points.len()], false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayExponentFit {
    pub beta: f64,
    /// Error from the chi-square-rescaled covariance.
    pub stderr: f64,
    /// Error from `(J^T W J)^{-1}` alone.
    pub stderr_absolute: f64,
    /// True when `beta` sits on 0 or 1.
    pub boundary_hit: bool,
    /// False when unit weights replaced missing standard errors.
    pub inverse_variance_weights: bool,
    pub fit: FitResult,
}

/// One-parameter fit of the propagator shape to a relaxation curve.
pub fn fit_decay_exponent(points: &[DecayPoint]) -> Result<DecayExponentFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} points, need at least 3", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.value > 0.0 && p.value <= 1.0) || !(p.z >= 0.0)) {
        return Err(Error::InvalidArgument(format!("point (z={}, R={}) outside z>=0, R in (0,1]", p.z, p.value)));
    }
    let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    let (w, weighted) = weights_from(points);
    let model_z = zs.clone();
    let problem = FitProblem::new(
        move |p: &[f64]| model_z.iter().map(|&z| prop_shape(z, p[0])).collect(),
        points.iter().map(|p| p.value).collect(),
        vec![0.22],
    )
    .weights(w)
    .bounds(vec![0.0], vec![1.0])
    .analytic_jacobian(move |p: &[f64]| DMatrix::from_fn(zs.len(), 1, |i, _| prop_shape_dbeta(zs[i], p[0])));
    let fit = nonlinear_lsq(&problem)?.require_converged()?;
    Ok(DecayExponentFit {
        beta: fit.params[0],
        stderr: fit.errors[0],
        stderr_absolute: fit.covariance[0][0].sqrt(),
        boundary_hit: fit.boundary_hit(),
        inverse_variance_weights: weighted,
        fit,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauFit {
    pub plateau: f64,
    pub rate: f64,
    pub plateau_stderr: f64,
    pub rate_stderr: f64,
    pub fit: FitResult,
}

/// Fit `p + (1 - p) exp(-k z)` to the points with `z <= z_max`; used to show
/// how the apparent plateau depends on the observation window.
pub fn fit_plateau(points: &[DecayPoint], z_max: f64) -> Result<PlateauFit> {
    let pts: Vec<DecayPoint> = points.iter().copied().filter(|p| p.z <= z_max).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} points below z_max, need at least 3", pts.len())));
    }
    let zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
    let (w, _) = weights_from(&pts);
    let tail = pts.iter().rev().take(3).map(|p| p.value).sum::<f64>() / 3.0;
    let p0 = (tail * 0.9).clamp(0.0, 0.99);
    let k0 = 3.0 / zs.iter().copied().fold(0.0, f64::max);
    let mz = zs.clone();
    let problem = FitProblem::new(
        move |p: &[f64]| mz.iter().map(|&z| p[0] + (1.0 - p[0]) * (-p[1] * z).exp()).collect(),
        pts.iter().map(|p| p.value).collect(),
        vec![p0, k0],
    )
    .weights(w)
    .bounds(vec![0.0, 0.0], vec![1.0, f64::INFINITY])
    .analytic_jacobian(move |p: &[f64]| {
        DMatrix::from_fn(zs.len(), 2, |i, j| {
            let e = (-p[1] * zs[i]).exp();
            if j == 0 { 1.0 - e } else { -(1.0 - p[0]) * zs[i] * e }
        })
    });
    let fit = nonlinear_lsq(&problem)?.require_converged()?;
    Ok(PlateauFit {
        plateau: fit.params[0],
        rate: fit.params[1],
        plateau_stderr: fit.errors[0],
        rate_stderr: fit.errors[1],
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCloseBin {
    pub start_close: f64,
    pub start_next_close: f64,
    pub stderr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCloseRegression {
    pub bins: Vec<NextCloseBin>,
    /// Zero-intercept least-squares slope of next-close on close impact,
    /// fitted on individual orders.
    pub slope: f64,
    pub stderr: f64,
    pub n_orders: usize,
}

/// Mean next-day-close impact conditioned on bins of same-day-close impact.
pub fn conditional_next_close(orders: &[OrderImpact], n_bins: usize) -> Result<NextCloseRegression> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let mut pairs: Vec<(f64, f64, usize, usize)> = orders
        .iter()
        .filter_map(|o| o.start_next_close.map(|y| (o.start_close, y, o.stock, o.day)))
        .collect();
    if pairs.len() < n_bins {
        return Err(Error::Data(format!("{} paired orders for {n_bins} bins", pairs.len())));
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
    });
    let bins = equal_population(pairs.len(), n_bins)
        .into_iter()
        .map(|r| {
            let g = &pairs[r];
            let (my, se, count) = mean_and_se(g.iter().map(|p| p.1));
            NextCloseBin {
                start_close: g.iter().map(|p| p.0).sum::<f64>() / count as f64,
                start_next_close: my,
                stderr: se,
                count,
            }
        })
        .collect();
    let x = DMatrix::from_iterator(pairs.len(), 1, pairs.iter().map(|p| p.0));
    let y = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.1));
    let fit = linear_lsq(&x, &y, None)?;
    Ok(NextCloseRegression { bins, slope: fit.coefficients[0], stderr: fit.std_errors[0], n_orders: pairs.len() })
}
