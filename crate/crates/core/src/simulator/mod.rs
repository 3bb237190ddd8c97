//! Synthetic panels with known ground truth: square-root impact, propagator
//! relaxation, power-law correlated daily flow, and optionally an explicit
//! daily lag kernel.
//!
//! Seeds: every per-stock draw comes from `stream_rng(seed, stream, stock)`
//! (flow, orders and prices streams); the market series and violation
//! injection use index 0 of their own streams. Output is bit-identical for a
//! given configuration whatever the thread count.

mod flow;
mod orders;
mod prices;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_panel, DailyBar, Filter, MarketSeries, Metaorder, Panel, Stock};
use crate::deconvolution::modified_propagator;
use crate::error::{Error, Result};
use crate::flowstats::{cross_sectional_adjust, Grid};
use crate::par::map_range;
use crate::seeds::{stream_rng, Stream};

pub use flow::{
    generate_sign_series, latent_autocorr, truncated_pareto_quantile, FlowParams, FlowSeries, HermiteCorrelation,
    LatentProcess,
};
pub use orders::{volume_curve, ExecutionParams, SimOrder, StartTimes, SESSION_CHECKPOINTS};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagatorParams {
    /// Relaxation exponent, in (0, 1).
    pub beta: f64,
    /// Prefactor of the square-root law.
    pub y: f64,
}

impl Default for PropagatorParams {
    fn default() -> Self {
        Self { beta: 0.22, y: 0.5 }
    }
}

/// Where daily returns come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KernelSpec {
    /// Intraday propagator transients on a share clock; no explicit daily kernel.
    #[default]
    Propagator,
    /// Daily returns from these lag coefficients `G(0), G(1), ..`.
    Explicit { lags: Vec<f64> },
    /// Explicit kernel whose normalized cumulative sum is
    /// `i_inf + (1 - i_inf) I_prop(tau) e^(-b tau)`, scaled by `amplitude`.
    ModifiedPropagator { amplitude: f64, i_inf: f64, b: f64, beta: f64, horizon: usize },
}

impl KernelSpec {
    /// Lag coefficients for the explicit modes.
    pub fn coefficients(&self) -> Option<Vec<f64>> {
        match self {
            KernelSpec::Propagator => None,
            KernelSpec::Explicit { lags } => Some(lags.clone()),
            KernelSpec::ModifiedPropagator { amplitude, i_inf, b, beta, horizon } => {
                let cum: Vec<f64> = (0..=*horizon).map(|t| modified_propagator(t as f64, *i_inf, *b, *beta)).collect();
                Some((0..=*horizon).map(|t| amplitude * if t == 0 { cum[0] } else { cum[t] - cum[t - 1] }).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Scale of the idiosyncratic noise, in units of each stock's daily
    /// volatility: the intraday Brownian motion, and the daily `xi` of the
    /// explicit modes. The default `sqrt(pi / 8)` makes the expected
    /// high-low range of a pure diffusion day equal to the volatility.
    pub noise: f64,
    /// Standard deviation of the daily market return.
    pub market_vol: f64,
    /// Standard deviation of the overnight log gap, independent of flow.
    pub gap_vol: f64,
    pub capm_beta: f64,
    /// Daily volatility of each stock, uniform in this range.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Median daily volume of the middle tranche.
    pub base_volume: f64,
    /// Log-dispersion of base volume across stocks.
    pub volume_dispersion: f64,
    /// Log-dispersion of daily volume around a stock's base.
    pub daily_volume_noise: f64,
    pub initial_price: f64,
    /// Transients stop decaying after this many days.
    pub carryover_days: usize,
    pub propagator: PropagatorParams,
    pub flow: FlowParams,
    pub execution: ExecutionParams,
    pub kernel: KernelSpec,
    /// Flow lags feeding daily returns in the explicit modes; defaults to the
    /// full kernel and may not exceed it.
    pub return_lags: Option<usize>,
    /// Fraction of metaorder records corrupted after simulation.
    pub violation_rate: f64,
    /// Tranche labels assigned to contiguous blocks of stocks, by increasing
    /// liquidity.
    pub tranches: Vec<String>,
}

/// Brownian scale whose mean daily range `2 sqrt(2 / pi)` times the scale is 1.
pub const RANGE_CONSISTENT_NOISE: f64 = 0.626_657_068_657_750_1;

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_stocks: 100,
            n_days: 250,
            seed: 0,
            noise: RANGE_CONSISTENT_NOISE,
            market_vol: 0.01,
            gap_vol: 0.0,
            capm_beta: 1.0,
            sigma_min: 0.015,
            sigma_max: 0.03,
            base_volume: 1e6,
            volume_dispersion: 0.5,
            daily_volume_noise: 0.25,
            initial_price: 20.0,
            carryover_days: 20,
            propagator: PropagatorParams::default(),
            flow: FlowParams::default(),
            execution: ExecutionParams::default(),
            kernel: KernelSpec::default(),
            return_lags: None,
            violation_rate: 0.0,
            tranches: vec!["small".into(), "mid".into(), "large".into()],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stocks == 0 || self.n_days == 0 {
            return bad("panel needs at least one stock and one day".into());
        }
        let p = &self.propagator;
        if !(p.beta > 0.0 && p.beta < 1.0) || !(p.y > 0.0) {
            return bad(format!("propagator needs 0 < beta < 1 and Y > 0, got {} and {}", p.beta, p.y));
        }
        for (name, v) in [("noise", self.noise), ("market_vol", self.market_vol), ("gap_vol", self.gap_vol)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max < 1.0) {
            return bad("volatility range must satisfy 0 < sigma_min <= sigma_max < 1".into());
        }
        if !(self.base_volume >= 1.0) || !(self.initial_price > 0.0) || !self.capm_beta.is_finite() {
            return bad("base volume, initial price and capm beta must be valid".into());
        }
        if !(self.volume_dispersion >= 0.0) || !(self.daily_volume_noise >= 0.0) {
            return bad("volume dispersions must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.violation_rate) {
            return bad("violation_rate must lie in [0, 1]".into());
        }
        self.flow.validate()?;
        self.execution.validate(&self.flow)?;
        if let Some(g) = self.kernel.coefficients() {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                return bad("explicit kernel needs finite coefficients".into());
            }
            if let KernelSpec::ModifiedPropagator { i_inf, beta, b, .. } = self.kernel {
                if !(0.0..=1.0).contains(&i_inf) || !(beta > 0.0 && beta < 1.0) || !(b >= 0.0) {
                    return bad("modified propagator needs i_inf in [0, 1], beta in (0, 1), b >= 0".into());
                }
            }
            if let Some(h) = self.return_lags {
                if h + 1 > g.len() {
                    return bad(format!("kernel has {} lags but {h} simulation lags were requested", g.len() - 1));
                }
            }
        }
        Ok(())
    }

    /// Kernel actually applied, truncated to `return_lags`.
    pub fn applied_kernel(&self) -> Option<Vec<f64>> {
        let mut g = self.kernel.coefficients()?;
        if let Some(h) = self.return_lags {
            g.truncate(h + 1);
        }
        Some(g)
    }

    fn tranche_of(&self, stock: usize) -> Option<(usize, &str)> {
        let k = self.tranches.len();
        (k > 0).then(|| {
            let t = stock * k / self.n_stocks;
            (t, self.tranches[t].as_str())
        })
    }
}

/// Weekdays from 2020-01-02.
pub fn business_calendar(n_days: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
    let mut out = Vec::with_capacity(n_days);
    while out.len() < n_days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

pub fn stock_id(stock: usize) -> String {
    format!("S{stock:04}")
}

/// Flow, volumes and orders of every stock, before prices.
#[derive(Debug, Clone)]
pub struct OrderFlow {
    pub flows: Vec<FlowSeries>,
    /// `volumes[stock][day]`, whole shares.
    pub volumes: Vec<Vec<f64>>,
    /// Per stock, sorted by day then start.
    pub orders: Vec<Vec<SimOrder>>,
    pub latent_autocorr: Vec<f64>,
}

/// Daily flow with the configured autocorrelation, split into metaorders
/// with truncated power-law sizes and participation rates.
pub fn generate_metaorders(cfg: &SimConfig) -> Result<OrderFlow> {
    cfg.validate()?;
    let max_lag = cfg.flow.max_lag.min(cfg.n_days.saturating_sub(1));
    let rho = latent_autocorr(&cfg.flow, max_lag)?;
    let latent = LatentProcess::new(&rho)?;
    let per_stock = map_range(cfg.n_stocks, |s| {
        let fs = flow::flow_for_stock(&cfg.flow, &latent, cfg.n_days, cfg.seed, s);
        let mut rng = stream_rng(cfg.seed, Stream::Orders, s as u64);
        let tier = cfg.tranche_of(s).map_or(0.0, |(t, _)| t as f64 - (cfg.tranches.len() as f64 - 1.0) / 2.0);
        let spread = Normal::new(0.0, cfg.volume_dispersion).expect("validated");
        let base = cfg.base_volume * 4f64.powf(tier) * spread.sample(&mut rng).exp();
        let vols = orders::day_volumes(base, cfg.daily_volume_noise, cfg.n_days, &mut rng);
        let ords = orders::orders_for_stock(&fs, &cfg.flow, &cfg.execution, &mut rng);
        (fs, vols, ords)
    });
    let mut out = OrderFlow { flows: Vec::new(), volumes: Vec::new(), orders: Vec::new(), latent_autocorr: rho };
    for (f, v, o) in per_stock {
        out.flows.push(f);
        out.volumes.push(v);
        out.orders.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedViolation {
    /// Position in the panel's metaorder list.
    pub index: usize,
    pub stock_id: String,
    pub day: NaiveDate,
    pub filter: String,
}

/// Everything a test harness needs to score an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub version: String,
    pub seed: u64,
    pub config: SimConfig,
    pub seed_rule: String,
    /// Probability that a stock-day has any metaorder.
    pub active_probability: f64,
    /// Target autocorrelation of the signed square-root flow, lags 0..=50.
    pub flow_autocorr: Vec<f64>,
    /// Latent Gaussian correlations used to reach it.
    pub latent_autocorr: Vec<f64>,
    /// Explicit lag kernel actually applied, if any.
    pub kernel: Option<Vec<f64>>,
    /// Its cumulative sum divided by the lag-0 value.
    pub kernel_normalized: Option<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub n_metaorders: usize,
    pub violations: Vec<InjectedViolation>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: Panel,
    pub truth: GroundTruth,
}

fn market_series(cfg: &SimConfig) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, Stream::Market, 0);
    let n = Normal::new(0.0, cfg.market_vol).expect("validated");
    (0..cfg.n_days).map(|_| n.sample(&mut rng)).collect()
}

/// Market-adjusted signed square-root flow, as the deconvolution sees it,
/// with the configured market beta.
fn adjusted_flow(cfg: &SimConfig, flow: &OrderFlow) -> Result<Grid> {
    let roots: Grid = (0..cfg.n_stocks)
        .map(|s| {
            let mut net = vec![0.0; cfg.n_days];
            for o in &flow.orders[s] {
                let q = o.phi * flow.volumes[s][o.day];
                net[o.day] += f64::from(o.sign) * (q / flow.volumes[s][o.day]);
            }
            net.iter().map(|x| Some(x.signum() * x.abs().sqrt())).collect()
        })
        .collect();
    let betas = vec![vec![cfg.capm_beta; cfg.n_days]; cfg.n_stocks];
    cross_sectional_adjust(&roots, &betas)
}

/// Attach prices to generated orders and assemble the panel.
pub fn simulate_prices(flow: &OrderFlow, cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    if flow.volumes.len() != cfg.n_stocks || flow.volumes.iter().any(|v| v.len() != cfg.n_days) {
        return Err(Error::InvalidArgument("order flow does not match the configured panel shape".into()));
    }
    let kernel = cfg.applied_kernel();
    let adjusted = match kernel {
        Some(_) => Some(adjusted_flow(cfg, flow)?),
        None => None,
    };
    let market = market_series(cfg);
    let curve = volume_curve();
    let fracs: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let calendar = business_calendar(cfg.n_days);

    let per_stock = map_range(cfg.n_stocks, |s| {
        let mut rng = stream_rng(cfg.seed, Stream::Prices, s as u64);
        let sigma = cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * rng.random::<f64>();
        let common = prices::Common {
            sigma,
            volumes: &flow.volumes[s],
            checkpoints: &fracs,
            orders: &flow.orders[s],
            market: &market,
            capm_beta: cfg.capm_beta,
            noise: cfg.noise,
            gap_vol: cfg.gap_vol,
            initial_price: cfg.initial_price,
            y: cfg.propagator.y,
            beta: cfg.propagator.beta,
        };
        let path = match (&kernel, &adjusted) {
            (Some(g), Some(adj)) => {
                let f: Vec<f64> = adj[s].iter().map(|x| x.expect("every day has a bar")).collect();
                prices::explicit_path(&common, g, &f, &mut rng)
            }
            _ => prices::propagator_path(&common, cfg.carryover_days, &mut rng),
        };
        (sigma, path)
    });

    let mut stocks = Vec::with_capacity(cfg.n_stocks);
    let mut bars = Vec::with_capacity(cfg.n_stocks * cfg.n_days);
    let mut metaorders = Vec::new();
    let mut locations = Vec::new();
    let mut sigmas = Vec::with_capacity(cfg.n_stocks);
    for (s, (sigma, path)) in per_stock.into_iter().enumerate() {
        let id = stock_id(s);
        stocks.push(Stock { id: id.clone(), tranche: cfg.tranche_of(s).map(|t| t.1.to_string()) });
        sigmas.push(sigma);
        let mut day_bars = Vec::with_capacity(cfg.n_days);
        for (d, b) in path.bars.iter().enumerate() {
            let v = flow.volumes[s][d];
            day_bars.push(DailyBar {
                stock_id: id.clone(),
                day: calendar[d],
                open: b.open,
                high: b.high,
                low: b.low,
                close: b.close,
                total_volume: v,
                checkpoints: curve.iter().map(|(t, f)| (*t, f * v)).collect(),
            });
        }
        for (o, (ps, pe)) in flow.orders[s].iter().zip(&path.order_prices) {
            let bar = &day_bars[o.day];
            let v = bar.total_volume;
            let (vs, ve) = (o.start * v, (o.start + o.duration) * v);
            locations.push((s, o.day));
            metaorders.push(Metaorder {
                stock_id: id.clone(),
                day: calendar[o.day],
                sign: o.sign,
                volume: o.phi * v,
                start_time: bar.time_at_volume(vs).expect("checkpoints present"),
                end_time: bar.time_at_volume(ve).expect("checkpoints present"),
                vol_at_start: vs,
                vol_at_end: ve,
                price_at_start: Some(*ps),
                price_at_end: Some(*pe),
            });
        }
        bars.extend(day_bars);
    }
    let violations = inject_violations(cfg, &mut metaorders, &locations, &bars);
    let n_metaorders = metaorders.len();
    let panel = Panel::new(calendar, stocks, bars, metaorders, MarketSeries { returns: market })?;

    let applied = cfg.applied_kernel();
    let normalized = applied.as_ref().map(|g| {
        let mut acc = 0.0;
        g.iter()
            .map(|v| {
                acc += v;
                acc / g[0]
            })
            .collect()
    });
    let truth = GroundTruth {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        seed_rule: "ChaCha8 keyed by splitmix(seed, stream tag), ChaCha stream = stock index; \
                    streams: flow=1 orders=2 prices=3 market=4 violations=5"
            .into(),
        active_probability: cfg.flow.active_probability(),
        flow_autocorr: (0..=50).map(|l| if l == 0 { 1.0 } else { cfg.flow.target_autocorr(l) }).collect(),
        latent_autocorr: flow.latent_autocorr.clone(),
        kernel: applied,
        kernel_normalized: normalized,
        sigma: sigmas,
        n_metaorders,
        violations,
    };
    Ok(Simulation { panel, truth })
}

/// Corrupt a fixed fraction of records so that each is caught by exactly one
/// cleaning filter at default thresholds.
fn inject_violations(
    cfg: &SimConfig,
    orders: &mut [Metaorder],
    locations: &[(usize, usize)],
    bars: &[DailyBar],
) -> Vec<InjectedViolation> {
    let n = orders.len();
    let k = (cfg.violation_rate * n as f64).round() as usize;
    if k == 0 {
        return Vec::new();
    }
    const KINDS: [Filter; 5] =
        [Filter::InvalidRecord, Filter::ZeroDuration, Filter::ParticipationOverflow, Filter::EtaCap, Filter::DurationFloor];
    let mut rng = stream_rng(cfg.seed, Stream::Violations, 0);
    let mut picks = sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    let mut out = Vec::with_capacity(k);
    for (j, &i) in picks.iter().enumerate() {
        let kind = KINDS[j % KINDS.len()];
        let (s, d) = locations[i];
        let bar = &bars[s * cfg.n_days + d];
        let m = &mut orders[i];
        match kind {
            Filter::InvalidRecord => m.sign = 0,
            Filter::ZeroDuration => {
                m.vol_at_end = m.vol_at_start;
                m.end_time = m.start_time;
            }
            Filter::ParticipationOverflow => m.volume = 1.5 * m.interval_volume(),
            Filter::EtaCap => m.volume = 0.75 * m.interval_volume(),
            _ => {
                m.vol_at_start = m.vol_at_start.min(0.5 * bar.total_volume);
                m.start_time = bar.time_at_volume(m.vol_at_start).unwrap();
                m.vol_at_end = m.vol_at_start + 5e-5 * bar.total_volume;
                m.end_time = bar.time_at_volume(m.vol_at_end).unwrap();
                if m.end_time == m.start_time {
                    m.end_time += chrono::Duration::microseconds(1);
                }
                m.volume = 0.25 * m.interval_volume();
            }
        }
        out.push(InjectedViolation { index: i, stock_id: m.stock_id.clone(), day: m.day, filter: kind.name().to_string() });
    }
    out
}

/// Full generation: flow, orders, prices, violations.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    let flow = generate_metaorders(cfg)?;
    simulate_prices(&flow, cfg)
}

/// Panel CSVs plus `ground_truth.json`.
pub fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    write_panel(dir, &sim.panel)?;
    let f = BufWriter::new(File::create(dir.join(GROUND_TRUTH_FILE))?);
    serde_json::to_writer_pretty(f, &sim.truth)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{clean_panel, CleaningConfig};
    use crate::deconvolution::{deconvolve, DeconvConfig};
    use crate::impact::order_impacts;

    fn small() -> SimConfig {
        SimConfig { n_stocks: 12, n_days: 60, seed: 4, ..Default::default() }
    }

    #[test]
    fn default_noise_gives_unit_mean_range() {
        assert!((RANGE_CONSISTENT_NOISE - (std::f64::consts::PI / 8.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_panel() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        assert_eq!(a.panel.metaorders(), b.panel.metaorders());
        assert!(a.panel.all_bars().eq(b.panel.all_bars()));
        assert_eq!(a.truth, b.truth);
        let c = simulate(&SimConfig { seed: 5, ..small() }).unwrap();
        assert_ne!(a.panel.metaorders(), c.panel.metaorders());
    }

    #[test]
    fn generated_records_pass_cleaning() {
        for kernel in [KernelSpec::Propagator, KernelSpec::Explicit { lags: vec![0.5, -0.1, -0.05] }] {
            let sim = simulate(&SimConfig { kernel, ..small() }).unwrap();
            let c = clean_panel(&sim.panel, &CleaningConfig::default()).unwrap();
            assert_eq!(c.report.total_rejected(), 0, "{:?}", c.report.counts());
        }
    }

    #[test]
    fn order_count_matches_intensity() {
        let cfg = SimConfig {
            n_stocks: 100,
            n_days: 100,
            flow: FlowParams { a: 0.0, intensity: 1.0, max_orders_per_day: 1000, ..Default::default() },
            ..Default::default()
        };
        let flow = generate_metaorders(&cfg).unwrap();
        let n: usize = flow.orders.iter().map(Vec::len).sum();
        assert!((n as f64 - 1e4).abs() < 4.0 * 100.0, "{n}");
    }

    #[test]
    fn injected_violations_are_exactly_rejected() {
        let sim = simulate(&SimConfig { violation_rate: 0.05, ..small() }).unwrap();
        let c = clean_panel(&sim.panel, &CleaningConfig::default()).unwrap();
        let truth: Vec<(usize, String)> = sim.truth.violations.iter().map(|v| (v.index, v.filter.clone())).collect();
        let got: Vec<(usize, String)> = c.report.rejected.iter().map(|(i, f)| (*i, f.name().to_string())).collect();
        assert_eq!(got, truth);
        let expected = (0.05 * sim.truth.n_metaorders as f64).round() as usize;
        assert_eq!(truth.len(), expected);
    }

    #[test]
    fn phi_tail_exponent_from_rank_size() {
        // isolated carriers only, so every order's size is a raw draw
        let flow = FlowParams { a: 0.0, phi_min: 1e-4, phi_max: 0.2, max_orders_per_day: 1, ..Default::default() };
        let cfg = SimConfig { n_stocks: 50, n_days: 400, flow, ..Default::default() };
        let of = generate_metaorders(&cfg).unwrap();
        let mut phi: Vec<f64> = of.orders.iter().flatten().map(|o| o.phi).collect();
        phi.sort_by(|a, b| b.total_cmp(a));
        // log rank against log size over the body, away from the upper cutoff
        let pts: Vec<(f64, f64)> = phi
            .iter()
            .enumerate()
            .filter(|(_, p)| **p < 0.01)
            .map(|(i, p)| (p.ln(), ((i + 1) as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = -sxy / sxx;
        assert!((slope - 0.5).abs() < 0.1, "{slope}");
    }

    #[test]
    fn noiseless_isolated_orders_follow_closed_form() {
        let cfg = SimConfig {
            n_stocks: 40,
            n_days: 1,
            noise: 0.0,
            market_vol: 0.0,
            flow: FlowParams { a: 0.0, intensity: 30.0, max_orders_per_day: 1, ..Default::default() },
            ..Default::default()
        };
        let sim = simulate(&cfg).unwrap();
        let imp = order_impacts(&sim.panel);
        assert_eq!(imp.len(), 40);
        for o in &imp {
            // bar sigma equals the stock's sigma, so rescaled peak is Y sqrt(phi)
            let peak = 0.5 * o.phi.sqrt();
            assert!((o.start_end / peak - 1.0).abs() < 1e-10, "{} vs {peak}", o.start_end);
            let want = crate::impact::propagator_decay(o.z, 0.22).unwrap();
            assert!((o.start_close / o.start_end - want).abs() < 1e-10);
        }
    }

    #[test]
    fn white_flow_explicit_kernel_is_identified_exactly() {
        let lags = vec![0.5, -0.1, -0.05, 0.02, -0.01];
        let cfg = SimConfig {
            n_stocks: 20,
            n_days: 120,
            noise: 0.0,
            gap_vol: 0.005,
            kernel: KernelSpec::Explicit { lags: lags.clone() },
            flow: FlowParams { a: 0.0, ..Default::default() },
            ..Default::default()
        };
        let sim = simulate(&cfg).unwrap();
        let dc = DeconvConfig { horizon: 4, replicates: 0, fixed_beta: Some(1.0), ..Default::default() };
        let out = deconvolve(&sim.panel, &dc).unwrap();
        for (l, g) in lags.iter().enumerate() {
            assert!((out.kernel.coefficients[l] - g).abs() < 1e-10, "lag {l}: {}", out.kernel.coefficients[l]);
        }
    }

    #[test]
    fn kernel_longer_than_spec_is_rejected() {
        let cfg = SimConfig { kernel: KernelSpec::Explicit { lags: vec![0.5, 0.1] }, return_lags: Some(3), ..small() };
        assert!(matches!(simulate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn modified_propagator_kernel_normalizes_to_the_model() {
        let k = KernelSpec::ModifiedPropagator { amplitude: 0.5, i_inf: 0.7, b: 0.038, beta: 0.22, horizon: 10 };
        let g = k.coefficients().unwrap();
        let cum: f64 = g.iter().sum::<f64>() / g[0];
        assert!((cum - modified_propagator(10.0, 0.7, 0.038, 0.22)).abs() < 1e-14);
    }

    #[test]
    fn tranches_are_contiguous_blocks() {
        let sim = simulate(&small()).unwrap();
        let labels: Vec<&str> = sim.panel.stocks().iter().map(|s| s.tranche.as_deref().unwrap()).collect();
        assert_eq!(labels[0], "small");
        assert_eq!(labels[11], "large");
        assert_eq!(labels.iter().filter(|l| **l == "mid").count(), 4);
    }

    #[test]
    fn writes_ground_truth() {
        let dir = std::env::temp_dir().join(format!("metaimpact-sim-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let sim = simulate(&small()).unwrap();
        write_simulation(&dir, &sim).unwrap();
        let back: GroundTruth = serde_json::from_reader(File::open(dir.join(GROUND_TRUTH_FILE)).unwrap()).unwrap();
        assert_eq!(back, sim.truth);
        let panel = crate::datamodel::read_panel(&dir).unwrap();
        assert_eq!(panel.metaorders(), sim.panel.metaorders());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
