//! Deconvolution of daily returns against lagged order-flow imbalance:
//! market adjustment, pooled lag regression, cumulative kernel, asymptote
//! fits, the bare response function, and a stock-level bootstrap.

mod beta;
mod bootstrap;
mod design;
mod fit;
mod kernel;
mod response;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::Panel;
use crate::error::{Error, Result};
use crate::flowstats::{cross_sectional_adjust, daily_imbalance, DailyFlows, Grid};

pub use beta::{residual_returns, rolling_beta, rolling_beta_from, BetaSeries, MIN_BETA_OBS};
pub use bootstrap::bootstrap_blocks;
pub use design::{build_design, Design, StockRows};
pub use fit::{
    fit_kernel_asymptote, modified_propagator, modified_propagator_gradient, AsymptoteOptions, FitMode,
    KernelFitParams, DEFAULT_PROPAGATOR_BETA, DEFAULT_TRUNCATION,
};
pub use kernel::{solve_kernel, BootstrapBands, KernelEstimate};
pub use response::{response_function, ResponseFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvConfig {
    /// Largest flow lag H.
    pub horizon: usize,
    /// Zero skips the bootstrap.
    pub replicates: usize,
    /// Rolling beta window is `[t - w, t + w]`.
    pub beta_half_width: usize,
    /// Use this beta everywhere instead of the rolling estimate.
    pub fixed_beta: Option<f64>,
    /// Add lagged residual returns as regressors.
    pub alpha: bool,
    pub alpha_lags: Vec<usize>,
    pub seed: u64,
    /// Ridge on the flow-lag coefficients; off by default.
    pub ridge: Option<f64>,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            replicates: 200,
            beta_half_width: 20,
            fixed_beta: None,
            alpha: false,
            alpha_lags: (1..=5).collect(),
            seed: 0,
            ridge: None,
        }
    }
}

impl DeconvConfig {
    pub fn validate(&self, n_days: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.horizon >= n_days {
            return Err(Error::Config(format!("horizon {} does not fit a {n_days}-day panel", self.horizon)));
        }
        if self.alpha && (self.alpha_lags.is_empty() || self.alpha_lags.contains(&0)) {
            return Err(Error::Config("alpha lags must be non-empty and start at 1".into()));
        }
        if let Some(b) = self.fixed_beta {
            if !b.is_finite() {
                return Err(Error::Config("fixed beta must be finite".into()));
            }
        }
        if let Some(l) = self.ridge {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("ridge must be positive, got {l}")));
            }
        }
        Ok(())
    }

    fn lags(&self) -> &[usize] {
        if self.alpha {
            &self.alpha_lags
        } else {
            &[]
        }
    }
}

/// Every intermediate series of the pipeline, for inspection and reuse.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub betas: BetaSeries,
    pub flows: DailyFlows,
    /// Market-adjusted signed square-root imbalance.
    pub adjusted: Grid,
    pub residual: Grid,
    pub sigmas: Grid,
    pub design: Design,
}

pub fn prepare(panel: &Panel, cfg: &DeconvConfig) -> Result<Prepared> {
    cfg.validate(panel.n_days())?;
    let betas = match cfg.fixed_beta {
        Some(b) => BetaSeries::constant(panel.n_stocks(), panel.n_days(), b),
        None => rolling_beta(panel, cfg.beta_half_width)?,
    };
    let flows = daily_imbalance(panel);
    let adjusted = cross_sectional_adjust(&flows.roots(), &betas.beta)?;
    let returns: Grid = (0..panel.n_stocks()).map(|s| panel.stock_returns(s)).collect();
    let residual = residual_returns(&returns, &panel.market().returns, &betas);
    let sigmas: Grid = (0..panel.n_stocks()).map(|s| panel.sigmas(s)).collect();
    let design = build_design(&adjusted, &residual, &sigmas, cfg.horizon, cfg.lags())?;
    Ok(Prepared { betas, flows, adjusted, residual, sigmas, design })
}

/// Stock-level bootstrap bands of the normalized kernel.
pub fn bootstrap_kernel(panel: &Panel, cfg: &DeconvConfig) -> Result<BootstrapBands> {
    let prep = prepare(panel, cfg)?;
    bootstrap_blocks(&prep.design.compress()?, cfg.horizon, cfg.replicates.max(1), cfg.seed, cfg.ridge)
}

#[derive(Debug, Clone)]
pub struct Deconvolution {
    pub kernel: KernelEstimate,
    pub response: ResponseFunction,
    pub beta_fallbacks: usize,
    pub prepared: Prepared,
}

/// Full pipeline: kernel with bootstrap bands (when `replicates > 0`) and the
/// bare response function over the same horizon.
pub fn deconvolve(panel: &Panel, cfg: &DeconvConfig) -> Result<Deconvolution> {
    let prep = prepare(panel, cfg)?;
    let blocks = prep.design.compress()?;
    let mut kernel = kernel::solve_factors(&blocks, cfg.horizon, prep.design.columns(), cfg.ridge)?;
    if !kernel.normalized[0].is_finite() {
        return Err(Error::Data("lag-0 kernel coefficient is zero".into()));
    }
    if cfg.replicates > 0 {
        kernel.bands = Some(bootstrap_blocks(&blocks, cfg.horizon, cfg.replicates, cfg.seed, cfg.ridge)?);
    }
    let response = response_function(&prep.adjusted, &prep.residual, cfg.horizon)?;
    Ok(Deconvolution { kernel, response, beta_fallbacks: prep.betas.fallback_count(), prepared: prep })
}

/// `tau,G_cum,G_norm,reg_err,boot_lo,boot_hi`; `reg_err` is the cumulated
/// regression error on the normalized scale, bands are 5 and 95 percentiles
/// (empty without a bootstrap).
pub fn write_kernel_csv<W: Write>(w: W, k: &KernelEstimate) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["tau", "G_cum", "G_norm", "reg_err", "boot_lo", "boot_hi"])?;
    for t in 0..=k.horizon {
        let (lo, hi) = match &k.bands {
            Some(b) => (b.p05[t].to_string(), b.p95[t].to_string()),
            None => (String::new(), String::new()),
        };
        wtr.write_record([
            t.to_string(),
            k.cumulative[t].to_string(),
            k.normalized[t].to_string(),
            k.normalized_se[t].to_string(),
            lo,
            hi,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `tau,R_norm`.
pub fn write_response_csv<W: Write>(w: W, r: &ResponseFunction) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["tau", "R_norm"])?;
    for (t, v) in r.normalized.iter().enumerate() {
        wtr.write_record([t.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
