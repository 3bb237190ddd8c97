use serde::{Deserialize, Serialize};

use crate::datamodel::Panel;
use crate::error::{Error, Result};
use crate::flowstats::Grid;
use crate::par::map_range;

/// Fewer observations than this in a window fall back to beta = 1.
pub const MIN_BETA_OBS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSeries {
    pub beta: Vec<Vec<f64>>,
    /// True where the window was too short or the market flat.
    pub fallback: Vec<Vec<bool>>,
}

impl BetaSeries {
    pub fn constant(n_stocks: usize, n_days: usize, value: f64) -> Self {
        Self { beta: vec![vec![value; n_days]; n_stocks], fallback: vec![vec![false; n_days]; n_stocks] }
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().flatten().filter(|f| **f).count()
    }
}

fn window_beta(stock: &[Option<f64>], market: &[f64], lo: usize, hi: usize) -> Option<f64> {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for t in lo..=hi {
        if let Some(y) = stock[t] {
            n += 1;
            sx += market[t];
            sy += y;
        }
    }
    if n < MIN_BETA_OBS {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for t in lo..=hi {
        if let Some(y) = stock[t] {
            sxx += (market[t] - mx).powi(2);
            sxy += (market[t] - mx) * (y - my);
        }
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// OLS slope (with intercept) of stock on market return over the centered
/// window `[t - w, t + w]`, truncated at the panel edges.
pub fn rolling_beta_from(returns: &Grid, market: &[f64], half_width: usize) -> BetaSeries {
    let n_days = market.len();
    let rows = map_range(returns.len(), |s| {
        (0..n_days)
            .map(|t| {
                let lo = t.saturating_sub(half_width);
                let hi = (t + half_width).min(n_days - 1);
                window_beta(&returns[s], market, lo, hi)
            })
            .collect::<Vec<_>>()
    });
    BetaSeries {
        beta: rows.iter().map(|r| r.iter().map(|b| b.unwrap_or(1.0)).collect()).collect(),
        fallback: rows.iter().map(|r| r.iter().map(Option::is_none).collect()).collect(),
    }
}

pub fn rolling_beta(panel: &Panel, half_width: usize) -> Result<BetaSeries> {
    if panel.n_days() == 0 {
        return Err(Error::Data("empty calendar".into()));
    }
    let returns: Grid = (0..panel.n_stocks()).map(|s| panel.stock_returns(s)).collect();
    Ok(rolling_beta_from(&returns, &panel.market().returns, half_width))
}

/// `r - beta * r_M`.
pub fn residual_returns(returns: &Grid, market: &[f64], betas: &BetaSeries) -> Grid {
    returns
        .iter()
        .zip(&betas.beta)
        .map(|(row, b)| row.iter().enumerate().map(|(t, r)| r.map(|r| r - b[t] * market[t])).collect())
        .collect()
}
