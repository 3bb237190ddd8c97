//! Metaorders consistent with a stock's daily flow, and the intraday volume
//! curve they execute against.

use chrono::NaiveTime;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flow::{truncated_pareto_quantile, FlowParams, FlowSeries};
use crate::error::{Error, Result};

/// Half-hour checkpoints from 09:30 to 16:00.
pub const SESSION_CHECKPOINTS: usize = 14;
/// Ratio of the intensity at the open (and close) to the midday intensity
/// minus one.
const U_SHAPE: f64 = 3.0;

/// Cumulative fraction of day volume at each checkpoint of a U-shaped
/// intensity `1 + u (2x - 1)^2` over the session.
pub fn volume_curve() -> Vec<(NaiveTime, f64)> {
    let open = NaiveTime::from_hms_opt(9, 30, 0).unwrap();
    let n = SESSION_CHECKPOINTS - 1;
    let total = 1.0 + U_SHAPE / 3.0;
    (0..=n)
        .map(|j| {
            let x = j as f64 / n as f64;
            let frac = if j == n { 1.0 } else { (x + U_SHAPE * ((2.0 * x - 1.0).powi(3) + 1.0) / 6.0) / total };
            (open + chrono::Duration::minutes(30 * j as i64), frac)
        })
        .collect()
}

/// How metaorders pick their start within the day, in volume time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum StartTimes {
    /// Uniform over `[0, 1 - D]`.
    #[default]
    Uniform,
    /// Uniform choice among these fractions, each clamped to `1 - D`.
    Fixed(Vec<f64>),
}

/// Execution settings on top of the flow parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionParams {
    pub start_times: StartTimes,
    /// Every order lasts this fraction of day volume instead of drawing a
    /// participation rate.
    pub fixed_duration: Option<f64>,
}

impl ExecutionParams {
    pub fn validate(&self, flow: &FlowParams) -> Result<()> {
        if let StartTimes::Fixed(v) = &self.start_times {
            if v.is_empty() || v.iter().any(|s| !(*s >= 0.0 && *s < 1.0)) {
                return Err(Error::Config("fixed start fractions must be non-empty and in [0, 1)".into()));
            }
        }
        if let Some(d) = self.fixed_duration {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("fixed duration {d} not in (0, 1]")));
            }
            if flow.phi_max > d {
                return Err(Error::Config("phi_max above the fixed duration gives participation above 1".into()));
            }
        }
        Ok(())
    }
}

/// One generated metaorder before prices are attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOrder {
    pub day: usize,
    pub sign: i8,
    /// Fraction of the day's volume.
    pub phi: f64,
    /// Duration as a fraction of the day's volume.
    pub duration: f64,
    /// Start, as the fraction of day volume already traded.
    pub start: f64,
}

impl SimOrder {
    pub fn eta(&self) -> f64 {
        self.phi / self.duration
    }
}

fn place<R: Rng>(day: usize, sign: i8, phi: f64, f: &FlowParams, x: &ExecutionParams, rng: &mut R) -> SimOrder {
    let duration = match x.fixed_duration {
        Some(d) => d,
        None => {
            let lo = f.eta_min.max(phi);
            let hi = f.eta_max.min(phi / f.duration_min);
            phi / truncated_pareto_quantile(rng.random::<f64>(), lo, hi, f.eta_tail)
        }
    };
    let duration = duration.min(1.0);
    let latest = 1.0 - duration;
    let start = match &x.start_times {
        StartTimes::Uniform => rng.random::<f64>() * latest,
        StartTimes::Fixed(v) => v[rng.random_range(0..v.len())].min(latest),
    };
    SimOrder { day, sign, phi, duration, start }
}

/// Orders for one stock-day realizing net signed fraction `net` with `n`
/// orders. Odd `n`: one order carries the whole net; even: two share it. The
/// rest come in opposite-signed pairs of equal size that cancel.
pub(crate) fn orders_for_day<R: Rng>(
    day: usize,
    net: f64,
    n: u32,
    f: &FlowParams,
    x: &ExecutionParams,
    rng: &mut R,
) -> Vec<SimOrder> {
    if n == 0 {
        return Vec::new();
    }
    let sign = if net < 0.0 { -1 } else { 1 };
    let mut out = Vec::with_capacity(n as usize);
    let carriers = if n % 2 == 1 { 1 } else { 2 };
    for _ in 0..carriers {
        out.push(place(day, sign, net.abs() / carriers as f64, f, x, rng));
    }
    for _ in 0..(n - carriers) / 2 {
        let size = truncated_pareto_quantile(rng.random::<f64>(), f.phi_min, f.phi_max, f.phi_tail);
        let first: i8 = if rng.random::<bool>() { 1 } else { -1 };
        out.push(place(day, first, size, f, x, rng));
        out.push(place(day, -first, size, f, x, rng));
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start));
    out
}

/// Day volumes of one stock: lognormal around its base level.
pub(crate) fn day_volumes<R: Rng>(base: f64, dispersion: f64, n_days: usize, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, dispersion).expect("finite dispersion");
    (0..n_days).map(|_| (base * noise.sample(rng).exp()).round().max(1.0)).collect()
}

/// Orders of one stock over the whole calendar.
pub(crate) fn orders_for_stock<R: Rng>(flow: &FlowSeries, f: &FlowParams, x: &ExecutionParams, rng: &mut R) -> Vec<SimOrder> {
    flow.phi
        .iter()
        .zip(&flow.counts)
        .enumerate()
        .flat_map(|(d, (&net, &n))| orders_for_day(d, net, n, f, x, rng))
        .collect()
}
