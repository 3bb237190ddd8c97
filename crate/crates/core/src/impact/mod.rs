//! Binned impact curves and post-execution relaxation.
//!
//! Impacts are measured in rescaled log-price units: `eps * (s(b) - s(a))`
//! with `s = log(price) / sigma_d` and `sigma_d` taken on the execution day.

mod decay;
mod export;

use std::cmp::Ordering;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvefit::linear_lsq;
use crate::datamodel::{metaorder_stats, rescaled_log_price, seconds, Panel};
use crate::error::{Error, Result};

pub use decay::{
    conditional_next_close, decay_curve, fit_decay_exponent, fit_plateau, Clock, DecayExponentFit,
    DecayOptions, DecayPoint, Horizon, NextCloseRegression, PlateauFit,
};
pub use export::{write_decay_csv, write_impact_csv, write_ratio_csv};

/// Propagator relaxation `(1+z)^(1-beta) - z^(1-beta)`.
pub fn propagator_decay(z: f64, beta: f64) -> Result<f64> {
    if !z.is_finite() || z < 0.0 {
        return Err(Error::InvalidArgument(format!("z must be >= 0, got {z}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(prop_shape(z, beta))
}

/// Unchecked shape, also defined on the closed interval `beta in [0, 1]`.
pub(crate) fn prop_shape(z: f64, beta: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    let e = 1.0 - beta;
    (1.0 + z).powf(e) - z.powf(e)
}

/// Derivative of [`prop_shape`] with respect to `beta`.
pub(crate) fn prop_shape_dbeta(z: f64, beta: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let e = 1.0 - beta;
    -(1.0 + z).ln() * (1.0 + z).powf(e) + z.ln() * z.powf(e)
}

/// Next-day rescaling `1 / (1 + C(1))`.
pub fn zeta_from_autocorr(c1: f64) -> Result<f64> {
    if !c1.is_finite() || c1 <= -1.0 {
        return Err(Error::InvalidArgument(format!("C(1) must exceed -1, got {c1}")));
    }
    Ok(1.0 / (1.0 + c1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricePair {
    StartEnd,
    StartClose,
    StartNextClose,
}

/// Per-order quantities feeding every curve.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderImpact {
    /// Row in `panel.metaorders()`.
    pub index: usize,
    pub stock: usize,
    pub day: usize,
    pub phi: f64,
    pub eta: f64,
    pub duration: f64,
    pub start_end: f64,
    pub start_close: f64,
    /// Missing when the next trading day has no bar.
    pub start_next_close: Option<f64>,
    /// `V_EC / V_SE`.
    pub z: f64,
    /// `(V_EC + V_d(next)) / V_SE`.
    pub z_next: Option<f64>,
    /// `T_EC / T_SE`; needs an intraday volume curve and `t_e > t_s`.
    pub z_calendar: Option<f64>,
    pub z_next_calendar: Option<f64>,
}

impl OrderImpact {
    pub fn value(&self, pair: PricePair) -> Option<f64> {
        match pair {
            PricePair::StartEnd => Some(self.start_end),
            PricePair::StartClose => Some(self.start_close),
            PricePair::StartNextClose => self.start_next_close,
        }
    }
}

/// Compute impacts for every order that has both intraday prices and a bar
/// with `sigma_d > 0`. Orders failing either are skipped.
pub fn order_impacts(panel: &Panel) -> Vec<OrderImpact> {
    let mut out = Vec::with_capacity(panel.metaorders().len());
    for (i, m) in panel.metaorders().iter().enumerate() {
        let (Some(ps), Some(pe)) = (m.price_at_start, m.price_at_end) else { continue };
        let (s, d) = panel.location(i);
        let bar = panel.bar(s, d).expect("panel resolves every metaorder");
        let sigma = bar.sigma();
        let Ok(stats) = metaorder_stats(m, bar) else { continue };
        let (Ok(ls), Ok(le), Ok(lc)) = (
            rescaled_log_price(ps, sigma),
            rescaled_log_price(pe, sigma),
            rescaled_log_price(bar.close, sigma),
        ) else {
            continue;
        };
        let eps = m.epsilon();
        let v_se = m.interval_volume();
        let v_ec = (bar.total_volume - m.vol_at_end).max(0.0);
        let next = panel.bar(s, d + 1);
        let start_next_close =
            next.and_then(|nb| rescaled_log_price(nb.close, sigma).ok()).map(|ln| eps * (ln - ls));
        let z_next = next.map(|nb| (v_ec + nb.total_volume) / v_se);

        let t_se = seconds(m.end_time - m.start_time);
        let (z_calendar, z_next_calendar) = match bar.close_time() {
            Some(close) if t_se > 0.0 => {
                let t_ec = seconds(close - m.end_time).max(0.0);
                let zn = next.and_then(|nb| nb.session_seconds()).map(|len| (t_ec + len) / t_se);
                (Some(t_ec / t_se), zn)
            }
            _ => (None, None),
        };
        out.push(OrderImpact {
            index: i,
            stock: s,
            day: d,
            phi: stats.phi,
            eta: stats.eta,
            duration: stats.duration,
            start_end: eps * (le - ls),
            start_close: eps * (lc - ls),
            start_next_close,
            z: v_ec / v_se,
            z_next,
            z_calendar,
            z_next_calendar,
        });
    }
    out
}

/// Split `n` sorted items into `k` contiguous groups whose sizes differ by
/// at most one (larger groups first).
pub(crate) fn equal_population(n: usize, k: usize) -> Vec<Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

pub(crate) fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN, n);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactBin {
    pub phi_lo: f64,
    pub phi_hi: f64,
    /// Mean `phi` of the bin members.
    pub center: f64,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub pair: PricePair,
    pub bins: Vec<ImpactBin>,
}

/// Orders with a value for `pair`, sorted by `(phi, stock_id, day)`.
fn sorted_by_phi<'a>(panel: &Panel, orders: &'a [OrderImpact], pair: PricePair) -> Vec<&'a OrderImpact> {
    let mut v: Vec<&OrderImpact> = orders.iter().filter(|o| o.value(pair).is_some()).collect();
    v.sort_by(|a, b| {
        a.phi
            .partial_cmp(&b.phi)
            .unwrap_or(Ordering::Equal)
            .then_with(|| panel.stocks()[a.stock].id.cmp(&panel.stocks()[b.stock].id))
            .then_with(|| a.day.cmp(&b.day))
    });
    v
}

fn phi_bins<'a>(
    panel: &Panel,
    orders: &'a [OrderImpact],
    pair: PricePair,
    n_bins: usize,
) -> Result<Vec<Vec<&'a OrderImpact>>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be positive".into()));
    }
    let sorted = sorted_by_phi(panel, orders, pair);
    let mut distinct = sorted.iter().map(|o| o.phi).collect::<Vec<_>>();
    distinct.dedup();
    if n_bins > distinct.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_bins} bins requested but only {} distinct phi values",
            distinct.len()
        )));
    }
    Ok(equal_population(sorted.len(), n_bins).into_iter().map(|r| sorted[r].to_vec()).collect())
}

/// Equal-population bins over `phi`; each bin holds the mean impact for
/// `pair`, its standard error and the member count.
pub fn impact_curve(panel: &Panel, orders: &[OrderImpact], pair: PricePair, n_bins: usize) -> Result<ImpactCurve> {
    let bins = phi_bins(panel, orders, pair, n_bins)?
        .into_iter()
        .map(|members| {
            let (mean, stderr, count) = mean_and_se(members.iter().map(|o| o.value(pair).unwrap()));
            ImpactBin {
                phi_lo: members.first().unwrap().phi,
                phi_hi: members.last().unwrap().phi,
                center: members.iter().map(|o| o.phi).sum::<f64>() / count as f64,
                mean,
                stderr,
                count,
            }
        })
        .collect();
    Ok(ImpactCurve { pair, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    pub center: f64,
    pub ratio: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Ratio of mean numerator to mean denominator, errors added in quadrature.
pub(crate) fn ratio_of_means(num: &[f64], den: &[f64]) -> (f64, f64) {
    let (mn, sn, _) = mean_and_se(num.iter().copied());
    let (md, sd, _) = mean_and_se(den.iter().copied());
    let r = mn / md;
    let se = if mn == 0.0 {
        (sn / md).abs()
    } else {
        (r * ((sn / mn).powi(2) + (sd / md).powi(2)).sqrt()).abs()
    };
    (r, se)
}

/// Per-`phi`-bin ratio `mean(I_SC) / mean(I_SE)`.
pub fn ratio_curve(panel: &Panel, orders: &[OrderImpact], n_bins: usize) -> Result<Vec<RatioBin>> {
    Ok(phi_bins(panel, orders, PricePair::StartEnd, n_bins)?
        .into_iter()
        .map(|members| {
            let num: Vec<f64> = members.iter().map(|o| o.start_close).collect();
            let den: Vec<f64> = members.iter().map(|o| o.start_end).collect();
            let (ratio, stderr) = ratio_of_means(&num, &den);
            RatioBin {
                center: members.iter().map(|o| o.phi).sum::<f64>() / members.len() as f64,
                ratio,
                stderr,
                count: members.len(),
            }
        })
        .collect())
}

/// Average of the per-bin ratios and its standard error across bins.
pub fn mean_ratio(bins: &[RatioBin]) -> (f64, f64) {
    let (m, se, _) = mean_and_se(bins.iter().map(|b| b.ratio));
    (m, se)
}

/// Slope (and standard error) of `ln(mean)` against `ln(phi)` over bins whose
/// center lies in `[phi_min, phi_max]` and whose mean is positive.
pub fn loglog_slope(curve: &ImpactCurve, phi_min: f64, phi_max: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = curve
        .bins
        .iter()
        .filter(|b| b.center >= phi_min && b.center <= phi_max && b.mean > 0.0)
        .map(|b| (b.center.ln(), b.mean.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Data(format!("{} usable bins in the phi window, need 3", pts.len())));
    }
    let x = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].0 });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let fit = linear_lsq(&x, &y, None)?;
    Ok((fit.coefficients[1], fit.std_errors[1]))
}
