//! Daily signed flow with a prescribed autocorrelation of its signed square
//! root.
//!
//! A latent stationary Gaussian series is mapped through an odd monotone
//! transform onto a truncated-Pareto magnitude, and days without orders are
//! zeroed by an independent Poisson mask. The latent correlation at each lag
//! is solved so the transformed, masked series hits the target.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowstats::truncated_power_law;
use crate::par::map_range;
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Target autocorrelation `a * tau^-gamma * exp(-b tau)` of the signed
    /// square-root daily flow.
    pub a: f64,
    pub gamma: f64,
    pub b: f64,
    /// Daily fraction range and tail exponent (truncated Pareto).
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_tail: f64,
    /// Participation-rate range and tail exponent.
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_tail: f64,
    /// Smallest execution duration as a fraction of day volume.
    pub duration_min: f64,
    /// Mean of the Poisson count of metaorders per stock-day.
    pub intensity: f64,
    pub max_orders_per_day: u32,
    /// Lags beyond this get no explicit latent correlation.
    pub max_lag: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            a: 0.24,
            gamma: 0.56,
            b: 0.038,
            phi_min: 1e-4,
            phi_max: 0.2,
            phi_tail: 0.5,
            eta_min: 1e-2,
            eta_max: 0.4,
            eta_tail: 0.5,
            duration_min: 2e-4,
            intensity: 1.0,
            max_orders_per_day: 5,
            max_lag: 250,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.a >= 0.0) || !(self.b > 0.0) || !(self.gamma > 0.0) {
            return bad("flow autocorrelation needs a >= 0, b > 0, gamma > 0");
        }
        if !(self.phi_min > 0.0 && self.phi_min <= self.phi_max && self.phi_max <= 1.0) {
            return bad("daily fraction range must satisfy 0 < phi_min <= phi_max <= 1");
        }
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_max && self.eta_max <= 1.0) {
            return bad("participation range must satisfy 0 < eta_min <= eta_max <= 1");
        }
        if self.phi_max > self.eta_max {
            return bad("phi_max above eta_max would need a duration longer than the day");
        }
        if !(self.phi_tail > 0.0) || !(self.eta_tail > 0.0) {
            return bad("tail exponents must be positive");
        }
        if !(self.duration_min > 0.0 && self.duration_min < 1.0) {
            return bad("duration_min must lie in (0, 1)");
        }
        if !(self.intensity > 0.0) || !self.intensity.is_finite() || self.max_orders_per_day == 0 {
            return bad("intensity must be positive and max_orders_per_day at least 1");
        }
        Ok(())
    }

    /// Probability that a stock-day carries at least one metaorder.
    pub fn active_probability(&self) -> f64 {
        1.0 - (-self.intensity).exp()
    }

    pub fn target_autocorr(&self, lag: usize) -> f64 {
        truncated_power_law(lag as f64, self.a, self.b, self.gamma)
    }
}

/// Quantile of the Pareto law with exponent `tail` truncated to `[lo, hi]`.
pub fn truncated_pareto_quantile(u: f64, lo: f64, hi: f64, tail: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = 1.0 - (lo / hi).powf(tail);
    (lo * (1.0 - u * span).powf(-1.0 / tail)).min(hi)
}

/// Odd map from the latent Gaussian to the signed square root of the flow:
/// `|x|` goes to a uniform through the half-normal law, then to a magnitude.
fn root_transform(x: f64, p: &FlowParams) -> f64 {
    x.signum() * magnitude(x.abs(), p).sqrt()
}

fn magnitude(ax: f64, p: &FlowParams) -> f64 {
    let u = libm::erf(ax / std::f64::consts::SQRT_2);
    truncated_pareto_quantile(u, p.phi_min, p.phi_max, p.phi_tail)
}

/// Correlation of `f(X), f(Y)` for standard normals with correlation `rho`,
/// via the Hermite expansion of an odd function `f`.
pub struct HermiteCorrelation {
    /// `E[f(X) He_k(X)]^2 / k!` for odd `k`.
    weights: Vec<(i32, f64)>,
    variance: f64,
}

const HERMITE_TERMS: usize = 241;
const QUAD_UPPER: f64 = 12.0;
const QUAD_STEPS: usize = 24_000;

impl HermiteCorrelation {
    pub fn new<F: Fn(f64) -> f64>(f: F) -> Self {
        // Simpson on [0, 12]; oddness doubles the half-line integral, and
        // keeps the jump at zero (if any) at the boundary.
        let h = QUAD_UPPER / QUAD_STEPS as f64;
        let mut acc = vec![0.0; HERMITE_TERMS + 1];
        let mut variance = 0.0;
        for i in 0..=QUAD_STEPS {
            let x = if i == 0 { 1e-300 } else { i as f64 * h };
            let w = if i == 0 || i == QUAD_STEPS {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let fx = f(x);
            variance += w * fx * fx * dens;
            // normalized Hermite polynomials He_k / sqrt(k!)
            let (mut prev, mut cur) = (1.0, x);
            acc[1] += w * fx * cur * dens;
            for k in 1..HERMITE_TERMS {
                let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
                prev = cur;
                cur = next;
                if (k + 1) % 2 == 1 {
                    acc[k + 1] += w * fx * cur * dens;
                }
            }
        }
        let scale = 2.0 * h / 3.0;
        let weights = (1..=HERMITE_TERMS).step_by(2).map(|k| (k as i32, (acc[k] * scale).powi(2))).collect();
        Self { weights, variance: variance * scale }
    }

    pub fn correlation(&self, rho: f64) -> f64 {
        self.weights.iter().map(|(k, w)| w * rho.powi(*k)).sum::<f64>() / self.variance
    }

    /// Latent correlation in `[0, 1)` reaching `target`, or `None` when the
    /// target exceeds what the transform can carry.
    pub fn invert(&self, target: f64) -> Option<f64> {
        if target <= 0.0 {
            return Some(0.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
        if self.correlation(hi) < target {
            return None;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.correlation(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Innovation filters of a stationary Gaussian series with autocorrelation
/// `rho[0] = 1, rho[1], ..`, one per prefix length (Durbin-Levinson).
pub struct LatentProcess {
    /// `coeffs[m]` predicts `x_t` from `x_{t-1}, .., x_{t-m}`.
    coeffs: Vec<Vec<f64>>,
    /// Innovation standard deviation for each order.
    scale: Vec<f64>,
}

impl LatentProcess {
    pub fn new(rho: &[f64]) -> Result<Self> {
        let order = rho.len().saturating_sub(1);
        let mut coeffs: Vec<Vec<f64>> = vec![Vec::new()];
        let mut var = vec![1.0];
        for m in 1..=order {
            let prev = &coeffs[m - 1];
            let num = rho[m] - (1..m).map(|j| prev[j - 1] * rho[m - j]).sum::<f64>();
            let kappa = num / var[m - 1];
            if !(kappa.abs() < 1.0) {
                return Err(Error::NotPositiveDefinite { lag: m });
            }
            let mut next: Vec<f64> = (1..m).map(|j| prev[j - 1] - kappa * prev[m - j - 1]).collect();
            next.push(kappa);
            var.push(var[m - 1] * (1.0 - kappa * kappa));
            coeffs.push(next);
        }
        Ok(Self { coeffs, scale: var.iter().map(|v| v.sqrt()).collect() })
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let order = self.coeffs.len() - 1;
        let mut x = Vec::with_capacity(n);
        for t in 0..n {
            let m = t.min(order);
            let mean: f64 = self.coeffs[m].iter().enumerate().map(|(j, c)| c * x[t - 1 - j]).sum();
            let e: f64 = StandardNormal.sample(rng);
            x.push(mean + self.scale[m] * e);
        }
        x
    }
}

/// Latent correlations for lags `0..=max_lag` such that the masked,
/// transformed series has autocorrelation `g(lag)`.
pub fn latent_autocorr(p: &FlowParams, max_lag: usize) -> Result<Vec<f64>> {
    let mut rho = vec![1.0];
    if p.a == 0.0 || max_lag == 0 {
        return Ok(rho);
    }
    let hc = HermiteCorrelation::new(|x| root_transform(x, p));
    let active = p.active_probability();
    for lag in 1..=max_lag {
        let target = p.target_autocorr(lag) / active;
        rho.push(hc.invert(target).ok_or(Error::NotPositiveDefinite { lag })?);
    }
    Ok(rho)
}

/// Signed daily flow and the (capped) order count of one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    /// Net signed daily fraction; zero on days without orders.
    pub phi: Vec<f64>,
    pub counts: Vec<u32>,
}

pub(crate) fn flow_for_stock(p: &FlowParams, latent: &LatentProcess, n_days: usize, seed: u64, stock: usize) -> FlowSeries {
    let mut rng = stream_rng(seed, Stream::Flow, stock as u64);
    let x = latent.sample(n_days, &mut rng);
    let poisson = Poisson::new(p.intensity).expect("validated intensity");
    let counts: Vec<u32> = (0..n_days).map(|_| (poisson.sample(&mut rng) as u32).min(p.max_orders_per_day)).collect();
    let phi = x
        .iter()
        .zip(&counts)
        .map(|(&xi, &n)| if n == 0 { 0.0 } else { xi.signum() * magnitude(xi.abs(), p) })
        .collect();
    FlowSeries { phi, counts }
}

/// Per-stock daily signed flow whose signed square root has autocorrelation
/// `a tau^-gamma e^(-b tau)`. Stock `s` draws from its own stream.
pub fn generate_sign_series(p: &FlowParams, n_stocks: usize, n_days: usize, seed: u64) -> Result<Vec<FlowSeries>> {
    p.validate()?;
    let max_lag = p.max_lag.min(n_days.saturating_sub(1));
    let latent = LatentProcess::new(&latent_autocorr(p, max_lag)?)?;
    Ok(map_range(n_stocks, |s| flow_for_stock(p, &latent, n_days, seed, s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowstats::series_autocorrelation;

    fn roots(f: &FlowSeries) -> Vec<Option<f64>> {
        f.phi.iter().map(|x| Some(x.signum() * x.abs().sqrt())).collect()
    }

    #[test]
    fn uniform_transform_matches_closed_form() {
        let hc = HermiteCorrelation::new(|x| libm::erf(x / std::f64::consts::SQRT_2));
        for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let exact = 6.0 / std::f64::consts::PI * (rho / 2.0f64).asin();
            assert!((hc.correlation(rho) - exact).abs() < 1e-6, "{rho}: {} vs {exact}", hc.correlation(rho));
        }
        let r = hc.invert(0.4).unwrap();
        assert!((6.0 / std::f64::consts::PI * (r / 2.0).asin() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn sign_transform_matches_arcsine_law() {
        let hc = HermiteCorrelation::new(f64::signum);
        // truncation is slow near rho = 1, fine at moderate correlation
        for rho in [0.2, 0.5] {
            let exact = 2.0 / std::f64::consts::PI * f64::asin(rho);
            assert!((hc.correlation(rho) - exact).abs() < 2e-3, "{rho}");
        }
    }

    #[test]
    fn latent_process_reproduces_ar1() {
        let rho: Vec<f64> = (0..4).map(|k| 0.6f64.powi(k)).collect();
        let lp = LatentProcess::new(&rho).unwrap();
        assert!((lp.coeffs[3][0] - 0.6).abs() < 1e-12);
        assert!(lp.coeffs[3][1].abs() < 1e-12 && lp.coeffs[3][2].abs() < 1e-12);
        assert!((lp.scale[3] - (1.0f64 - 0.36).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn impossible_correlation_names_the_lag() {
        match LatentProcess::new(&[1.0, 0.9, -0.9]) {
            Err(Error::NotPositiveDefinite { lag }) => assert_eq!(lag, 2),
            other => panic!("{:?}", other.err()),
        }
        let p = FlowParams { a: 0.99, b: 1e-3, gamma: 1e-3, intensity: 0.1, ..Default::default() };
        assert!(matches!(generate_sign_series(&p, 1, 50, 0), Err(Error::NotPositiveDefinite { lag: 1 })));
    }

    #[test]
    fn white_flow_is_uncorrelated() {
        // 3/sqrt(n) is a pointwise 3-sigma envelope: over 20 seeds x 10 lags
        // about 0.5 exceedances are expected
        let p = FlowParams { a: 0.0, ..Default::default() };
        let n = 20_000;
        let bound = 3.0 / (n as f64).sqrt();
        let mut outside = 0;
        for f in generate_sign_series(&p, 20, n, 3).unwrap() {
            let c = series_autocorrelation(&roots(&f), 10).unwrap();
            outside += c.iter().filter(|x| x.abs() >= bound).count();
        }
        assert!(outside <= 3, "{outside}");
    }

    #[test]
    fn lag_one_autocorrelation_hits_target() {
        let p = FlowParams::default();
        let f = &generate_sign_series(&p, 1, 100_000, 11).unwrap()[0];
        let c = series_autocorrelation(&roots(f), 1).unwrap();
        assert!((c[0] - 0.231).abs() < 0.02, "{}", c[0]);
    }

    #[test]
    fn same_seed_same_series() {
        let p = FlowParams::default();
        assert_eq!(generate_sign_series(&p, 3, 300, 5).unwrap(), generate_sign_series(&p, 3, 300, 5).unwrap());
        assert_ne!(generate_sign_series(&p, 1, 300, 5).unwrap(), generate_sign_series(&p, 1, 300, 6).unwrap());
    }

    #[test]
    fn magnitudes_stay_in_range() {
        let p = FlowParams::default();
        for f in generate_sign_series(&p, 5, 500, 9).unwrap() {
            for (x, n) in f.phi.iter().zip(&f.counts) {
                assert!(*n <= p.max_orders_per_day);
                if *n == 0 {
                    assert_eq!(*x, 0.0);
                } else {
                    assert!(x.abs() >= p.phi_min && x.abs() <= p.phi_max);
                }
            }
        }
    }
}
