//! Daily signed imbalance, cross-sectional adjustment, and the
//! autocorrelation of the signed square-root imbalance with its
//! truncated power-law fit.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvefit::{linear_lsq, nonlinear_lsq, FitProblem, FitResult};
use crate::datamodel::{metaorder_stats, signed_sqrt, Panel};
use crate::error::{Error, Result};
use crate::par::map_range;

/// Default propagator exponent; the constrained autocorrelation exponent is
/// `1 - 2 * beta`.
pub const DEFAULT_BETA: f64 = 0.22;

/// A stock-by-day grid; `None` marks days without a bar.
pub type Grid = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StockDayFlow {
    pub stock: usize,
    pub day: usize,
    /// Net signed daily fraction.
    pub net: f64,
    /// Sum of unsigned daily fractions.
    pub gross: f64,
    pub orders: usize,
    /// Signed square root of `net`.
    pub root: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyFlows {
    records: Vec<Vec<Option<StockDayFlow>>>,
}

impl DailyFlows {
    pub fn n_stocks(&self) -> usize {
        self.records.len()
    }

    pub fn n_days(&self) -> usize {
        self.records.first().map_or(0, Vec::len)
    }

    pub fn get(&self, stock: usize, day: usize) -> Option<&StockDayFlow> {
        self.records[stock][day].as_ref()
    }

    pub fn records(&self) -> impl Iterator<Item = &StockDayFlow> {
        self.records.iter().flatten().flatten()
    }

    /// Grid of signed square-root imbalances.
    pub fn roots(&self) -> Grid {
        self.records.iter().map(|row| row.iter().map(|r| r.map(|f| f.root)).collect()).collect()
    }

    pub fn nets(&self) -> Grid {
        self.records.iter().map(|row| row.iter().map(|r| r.map(|f| f.net)).collect()).collect()
    }
}

/// Net daily fraction per stock-day. Every stock-day with a bar gets a
/// record; days without orders carry zero flow.
pub fn daily_imbalance(panel: &Panel) -> DailyFlows {
    let mut records: Vec<Vec<Option<StockDayFlow>>> = (0..panel.n_stocks())
        .map(|s| {
            (0..panel.n_days())
                .map(|d| {
                    panel.bar(s, d).map(|_| StockDayFlow { stock: s, day: d, net: 0.0, gross: 0.0, orders: 0, root: 0.0 })
                })
                .collect()
        })
        .collect();
    for (i, m) in panel.metaorders().iter().enumerate() {
        let (s, d) = panel.location(i);
        match metaorder_stats(m, panel.bar(s, d).expect("panel resolves every metaorder")) {
            Ok(st) => {
                let r = records[s][d].as_mut().unwrap();
                r.net += m.epsilon() * st.phi;
                r.gross += st.phi;
                r.orders += 1;
            }
            Err(e) => warn!("metaorder {i} skipped in daily imbalance: {e}"),
        }
    }
    for r in records.iter_mut().flatten().flatten() {
        r.root = signed_sqrt(r.net).expect("finite flow");
    }
    DailyFlows { records }
}

/// `root(s, t) - beta(s, t) * mean_s' root(s', t)`, the mean taken over stocks
/// present on day `t`.
pub fn cross_sectional_adjust(roots: &Grid, betas: &[Vec<f64>]) -> Result<Grid> {
    let n_stocks = roots.len();
    if n_stocks == 0 {
        return Err(Error::Data("no stocks".into()));
    }
    if betas.len() != n_stocks {
        return Err(Error::InvalidArgument("beta grid shape mismatch".into()));
    }
    let n_days = roots[0].len();
    let mut means = vec![0.0; n_days];
    for (t, mean) in means.iter_mut().enumerate() {
        let present: Vec<f64> = roots.iter().filter_map(|row| row[t]).collect();
        if present.is_empty() {
            return Err(Error::Data(format!("day {t} has no stocks")));
        }
        *mean = present.iter().sum::<f64>() / present.len() as f64;
    }
    Ok(roots
        .iter()
        .zip(betas)
        .map(|(row, b)| row.iter().enumerate().map(|(t, v)| v.map(|x| x - b[t] * means[t])).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrCurve {
    /// Lags 1..=max_lag.
    pub lags: Vec<usize>,
    pub mean: Vec<f64>,
    /// Cross-stock standard deviation over the square root of `stocks`.
    pub stderr: Vec<f64>,
    /// Stocks that entered the average.
    pub stocks: usize,
}

/// Biased sample autocorrelation of one series with gaps: full-sample mean
/// and variance over present values, lag products summed over present pairs.
pub fn series_autocorrelation(x: &[Option<f64>], max_lag: usize) -> Option<Vec<f64>> {
    let vals: Vec<f64> = x.iter().flatten().copied().collect();
    let n = vals.len() as f64;
    if vals.is_empty() {
        return None;
    }
    let mu = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return None;
    }
    Some(
        (1..=max_lag)
            .map(|lag| {
                let mut acc = 0.0;
                for t in 0..x.len().saturating_sub(lag) {
                    if let (Some(a), Some(b)) = (x[t], x[t + lag]) {
                        acc += (a - mu) * (b - mu);
                    }
                }
                acc / n / var
            })
            .collect(),
    )
}

/// Per-stock autocorrelation averaged across stocks. Constant series are
/// skipped with a warning.
pub fn flow_autocorrelation(series: &Grid, max_lag: usize) -> Result<AutocorrCurve> {
    let len = series.first().map_or(0, Vec::len);
    if max_lag == 0 || max_lag >= len {
        return Err(Error::InvalidArgument(format!("max_lag {max_lag} must lie in 1..{len}")));
    }
    let per_stock = map_range(series.len(), |s| series_autocorrelation(&series[s], max_lag));
    let mut used = Vec::new();
    for (s, c) in per_stock.into_iter().enumerate() {
        match c {
            Some(c) => used.push(c),
            None => warn!("stock {s} has a constant flow series and is skipped"),
        }
    }
    if used.is_empty() {
        return Err(Error::Data("every flow series is constant".into()));
    }
    let k = used.len() as f64;
    let mut mean = vec![0.0; max_lag];
    let mut stderr = vec![f64::NAN; max_lag];
    for l in 0..max_lag {
        let m = used.iter().map(|c| c[l]).sum::<f64>() / k;
        mean[l] = m;
        if used.len() > 1 {
            let var = used.iter().map(|c| (c[l] - m).powi(2)).sum::<f64>() / (k - 1.0);
            stderr[l] = (var / k).sqrt();
        }
    }
    Ok(AutocorrCurve { lags: (1..=max_lag).collect(), mean, stderr, stocks: used.len() })
}

/// `a * tau^-gamma * exp(-b * tau)`.
pub fn truncated_power_law(tau: f64, a: f64, b: f64, gamma: f64) -> f64 {
    a * tau.powf(-gamma) * (-b * tau).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Fixed(f64),
    Free,
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Fixed(1.0 - 2.0 * DEFAULT_BETA)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutocorrFit {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub a_stderr: f64,
    pub b_stderr: f64,
    /// NaN when gamma was fixed.
    pub gamma_stderr: f64,
    /// Covariance of `(a, b)` from the rescaled fit covariance.
    pub cov_ab: [[f64; 2]; 2],
    pub gamma_mode: GammaMode,
    /// False when unit weights replaced missing standard errors.
    pub inverse_variance_weights: bool,
    pub fit: FitResult,
}

/// Weighted fit of `a tau^-gamma exp(-b tau)` to an autocorrelation curve.
pub fn fit_autocorr(curve: &AutocorrCurve, gamma: GammaMode) -> Result<AutocorrFit> {
    let n = curve.lags.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!("{n} lags, need at least 5")));
    }
    if curve.mean.iter().all(|c| !(*c > 0.0)) {
        return Err(Error::Data("autocorrelation is nowhere positive; fit refused".into()));
    }
    let taus: Vec<f64> = curve.lags.iter().map(|&l| l as f64).collect();
    let (weights, weighted) = if curve.stderr.iter().all(|s| s.is_finite() && *s > 0.0) {
        (curve.stderr.iter().map(|s| s.powi(-2)).collect(), true)
    } else {
        (vec![1.0; n], false)
    };

    // log-linear start on the positive lags
    let pos: Vec<(f64, f64)> = taus.iter().zip(&curve.mean).filter(|(_, c)| **c > 0.0).map(|(t, c)| (*t, c.ln())).collect();
    let fixed_gamma = match gamma {
        GammaMode::Fixed(g) => Some(g),
        GammaMode::Free => None,
    };
    let (mut a0, mut b0, mut g0) = (pos[0].1.exp() * pos[0].0.powf(fixed_gamma.unwrap_or(0.5)), 0.01, 0.5);
    let cols = if fixed_gamma.is_some() { 2 } else { 3 };
    if pos.len() > cols {
        let x = DMatrix::from_fn(pos.len(), cols, |i, j| match j {
            0 => 1.0,
            1 => -pos[i].0,
            _ => -pos[i].0.ln(),
        });
        let y = DVector::from_iterator(pos.len(), pos.iter().map(|(t, lc)| lc + fixed_gamma.map_or(0.0, |g| g * t.ln())));
        if let Ok(f) = linear_lsq(&x, &y, None) {
            a0 = f.coefficients[0].exp();
            b0 = f.coefficients[1];
            if cols == 3 {
                g0 = f.coefficients[2];
            }
        }
    }
    let b0 = if b0.is_finite() { b0.max(1e-4) } else { 0.01 };
    let g0 = if g0.is_finite() { g0.clamp(0.0, 3.0) } else { 0.5 };
    let a0 = if a0.is_finite() { a0.max(1e-6) } else { 0.1 };

    let observed = curve.mean.clone();
    let (fit, gamma_value, gamma_stderr) = match fixed_gamma {
        Some(g) => {
            let (t1, t2) = (taus.clone(), taus.clone());
            let problem = FitProblem::new(
                move |p: &[f64]| t1.iter().map(|&t| truncated_power_law(t, p[0], p[1], g)).collect(),
                observed,
                vec![a0, b0],
            )
            .weights(weights)
            .bounds(vec![0.0, 0.0], vec![f64::INFINITY, f64::INFINITY])
            .analytic_jacobian(move |p: &[f64]| {
                DMatrix::from_fn(t2.len(), 2, |i, j| {
                    let base = truncated_power_law(t2[i], 1.0, p[1], g);
                    if j == 0 { base } else { -t2[i] * p[0] * base }
                })
            });
            (nonlinear_lsq(&problem)?.require_converged()?, g, f64::NAN)
        }
        None => {
            let (t1, t2) = (taus.clone(), taus.clone());
            let problem = FitProblem::new(
                move |p: &[f64]| t1.iter().map(|&t| truncated_power_law(t, p[0], p[1], p[2])).collect(),
                observed,
                vec![a0, b0, g0],
            )
            .weights(weights)
            .bounds(vec![0.0, 0.0, 0.0], vec![f64::INFINITY, f64::INFINITY, 3.0])
            .analytic_jacobian(move |p: &[f64]| {
                DMatrix::from_fn(t2.len(), 3, |i, j| {
                    let g = truncated_power_law(t2[i], p[0], p[1], p[2]);
                    match j {
                        0 => truncated_power_law(t2[i], 1.0, p[1], p[2]),
                        1 => -t2[i] * g,
                        _ => -t2[i].ln() * g,
                    }
                })
            });
            let fit = nonlinear_lsq(&problem)?.require_converged()?;
            let (g, e) = (fit.params[2], fit.errors[2]);
            (fit, g, e)
        }
    };
    let c = &fit.scaled_covariance;
    Ok(AutocorrFit {
        a: fit.params[0],
        b: fit.params[1],
        gamma: gamma_value,
        a_stderr: fit.errors[0],
        b_stderr: fit.errors[1],
        gamma_stderr,
        cov_ab: [[c[0][0], c[0][1]], [c[1][0], c[1][1]]],
        gamma_mode: gamma,
        inverse_variance_weights: weighted,
        fit,
    })
}

/// `lag,mean_corr,stderr`.
pub fn write_autocorr_csv<W: Write>(w: W, curve: &AutocorrCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lag", "mean_corr", "stderr"])?;
    for i in 0..curve.lags.len() {
        wtr.write_record([curve.lags[i].to_string(), curve.mean[i].to_string(), curve.stderr[i].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures::*;
    use crate::datamodel::{MarketSeries, Stock};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel_with(orders: Vec<crate::datamodel::Metaorder>, days: u32) -> Panel {
        let bars = (0..days).map(|d| bar("A", d, 10.0, 10.0, 0.02, 1e5)).collect();
        Panel::new(
            (0..days).map(date).collect(),
            vec![Stock { id: "A".into(), tranche: None }],
            bars,
            orders,
            MarketSeries { returns: vec![0.0; days as usize] },
        )
        .unwrap()
    }

    #[test]
    fn imbalance_examples() {
        let p = panel_with(
            vec![order("A", 0, 1, 4000.0, 0.0, 50_000.0), order("A", 0, -1, 1000.0, 0.0, 50_000.0), order("A", 1, 1, 4000.0, 0.0, 50_000.0)],
            3,
        );
        let f = daily_imbalance(&p);
        assert_relative_eq!(f.get(0, 0).unwrap().net, 0.03, epsilon = 1e-15);
        assert_relative_eq!(f.get(0, 0).unwrap().gross, 0.05, epsilon = 1e-15);
        assert_relative_eq!(f.get(0, 1).unwrap().root, 0.2, epsilon = 1e-15);
        let empty = f.get(0, 2).unwrap();
        assert_eq!((empty.net, empty.root, empty.orders), (0.0, 0.0, 0));
    }

    #[test]
    fn adjustment_examples() {
        let one = vec![vec![Some(0.3), Some(-0.1)]];
        let adj = cross_sectional_adjust(&one, &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(adj, vec![vec![Some(0.0), Some(0.0)]]);
        let two = vec![vec![Some(0.3), Some(0.2)], vec![Some(-0.3), Some(0.4)]];
        let zero = cross_sectional_adjust(&two, &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        assert_eq!(zero, two);
        let adj = cross_sectional_adjust(&two, &[vec![1.0; 2], vec![1.0; 2]]).unwrap();
        assert_eq!(adj[0][0], Some(0.3));
        assert_eq!(adj[1][0], Some(-0.3));
        let gap = vec![vec![None, Some(0.1)]];
        assert!(cross_sectional_adjust(&gap, &[vec![1.0; 2]]).is_err());
    }

    #[test]
    fn two_stock_fixture_matches_hand_computation() {
        let s1 = [1.0, -1.0, 1.0, -1.0];
        let s2 = [1.0, 1.0, -1.0, -1.0];
        // stock 1: mean 0, var 1, lag-1 sum -3 -> -0.75
        // stock 2: mean 0, var 1, lag-1 sum 1 -> 0.25
        let grid: Grid = vec![s1.iter().map(|v| Some(*v)).collect(), s2.iter().map(|v| Some(*v)).collect()];
        let c = flow_autocorrelation(&grid, 1).unwrap();
        assert_relative_eq!(c.mean[0], -0.25);
        assert_relative_eq!(c.stderr[0], (0.5f64.powi(2) * 2.0).sqrt() / 2f64.sqrt());
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let grid: Grid = (0..5).map(|_| (0..n).map(|_| Some(StandardNormal.sample(&mut rng))).collect()).collect();
        let c = flow_autocorrelation(&grid, 20).unwrap();
        let bound = 3.0 / ((5 * n) as f64).sqrt();
        assert!(c.mean.iter().all(|v| v.abs() < bound), "{:?}", c.mean);
    }

    #[test]
    fn constant_stock_is_skipped() {
        let grid: Grid = vec![vec![Some(1.0); 10], (0..10).map(|i| Some(i as f64)).collect()];
        assert_eq!(flow_autocorrelation(&grid, 3).unwrap().stocks, 1);
        assert!(flow_autocorrelation(&grid, 10).is_err());
    }

    proptest! {
        #[test]
        fn autocorrelation_is_bounded_and_reversible(xs in prop::collection::vec(prop::option::weighted(0.9, -5.0f64..5.0), 8..60)) {
            if let Some(c) = series_autocorrelation(&xs, 5) {
                prop_assert!(c.iter().all(|v| v.abs() <= 1.0 + 1e-12));
                let rev: Vec<Option<f64>> = xs.iter().rev().copied().collect();
                let r = series_autocorrelation(&rev, 5).unwrap();
                for (a, b) in c.iter().zip(&r) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    fn exact_curve(a: f64, b: f64, g: f64) -> AutocorrCurve {
        let lags: Vec<usize> = (1..=50).collect();
        let mean = lags.iter().map(|&l| truncated_power_law(l as f64, a, b, g)).collect();
        AutocorrCurve { stderr: vec![0.01; 50], lags, mean, stocks: 100 }
    }

    #[test]
    fn g_at_one() {
        // 0.24 * exp(-0.038), 50-digit arithmetic
        assert_relative_eq!(truncated_power_law(1.0, 0.24, 0.038, 0.56), 0.231_051_105_813_887_9, max_relative = 1e-14);
    }

    #[test]
    fn noiseless_recovery_with_fixed_gamma() {
        let f = fit_autocorr(&exact_curve(0.24, 0.038, 0.56), GammaMode::default()).unwrap();
        assert!((f.a - 0.24).abs() < 1e-8 && (f.b - 0.038).abs() < 1e-8, "{} {}", f.a, f.b);
        assert_eq!(f.gamma, 1.0 - 2.0 * 0.22);
    }

    #[test]
    fn noiseless_recovery_with_free_gamma() {
        let f = fit_autocorr(&exact_curve(0.24, 0.038, 0.56), GammaMode::Free).unwrap();
        assert!((f.a - 0.24).abs() < 1e-8 && (f.b - 0.038).abs() < 1e-8 && (f.gamma - 0.56).abs() < 1e-8);
    }

    #[test]
    fn pure_exponential_with_zero_gamma() {
        let f = fit_autocorr(&exact_curve(0.3, 0.1, 0.0), GammaMode::Fixed(0.0)).unwrap();
        assert!((f.a - 0.3).abs() < 1e-10 && (f.b - 0.1).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_curve_refused() {
        let mut c = exact_curve(0.24, 0.038, 0.56);
        c.mean.iter_mut().for_each(|v| *v = -*v);
        assert!(matches!(fit_autocorr(&c, GammaMode::default()), Err(Error::Data(_))));
    }
}
