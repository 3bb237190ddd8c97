use nalgebra::{DMatrix, DVector};

use crate::curvefit::CompressedBlock;
use crate::error::{Error, Result};
use crate::flowstats::Grid;
use crate::par::map_range;

/// Rows contributed by one stock.
#[derive(Debug, Clone)]
pub struct StockRows {
    pub stock: usize,
    /// Response day of each row.
    pub days: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Pooled regression of residual returns on lagged, volatility-scaled flow.
/// Columns `0..=horizon` are the flow lags; the rest are lagged residual
/// returns when alpha regressors are on.
#[derive(Debug, Clone)]
pub struct Design {
    pub horizon: usize,
    pub alpha_lags: Vec<usize>,
    pub stocks: Vec<StockRows>,
}

impl Design {
    pub fn columns(&self) -> usize {
        self.horizon + 1 + self.alpha_lags.len()
    }

    pub fn rows(&self) -> usize {
        self.stocks.iter().map(|s| s.days.len()).sum()
    }

    /// Per-stock triangular factors; the bootstrap restacks these.
    pub fn compress(&self) -> Result<Vec<CompressedBlock>> {
        map_range(self.stocks.len(), |i| CompressedBlock::new(&self.stocks[i].x, &self.stocks[i].y))
            .into_iter()
            .collect()
    }
}

/// Build the pooled system. Row `(s, t)` is kept only when the response and
/// every lagged regressor are available (no zero padding at the edges).
pub fn build_design(
    flows: &Grid,
    residual: &Grid,
    sigmas: &Grid,
    horizon: usize,
    alpha_lags: &[usize],
) -> Result<Design> {
    let n_stocks = flows.len();
    if residual.len() != n_stocks || sigmas.len() != n_stocks {
        return Err(Error::InvalidArgument("flow, return and sigma grids disagree in shape".into()));
    }
    if alpha_lags.contains(&0) {
        return Err(Error::InvalidArgument("alpha lags start at 1".into()));
    }
    let cols = horizon + 1 + alpha_lags.len();
    let max_back = alpha_lags.iter().copied().max().unwrap_or(0).max(horizon);
    let stocks: Vec<StockRows> = map_range(n_stocks, |s| {
        let n_days = flows[s].len();
        let reg: Vec<Option<f64>> = (0..n_days).map(|t| Some(flows[s][t]? * sigmas[s][t]?)).collect();
        let mut days = Vec::new();
        let mut data = Vec::new();
        let mut y = Vec::new();
        for t in max_back..n_days {
            let Some(resp) = residual[s][t] else { continue };
            let lags: Option<Vec<f64>> = (0..=horizon).map(|l| reg[t - l]).collect();
            let Some(mut row) = lags else { continue };
            let alpha: Option<Vec<f64>> = alpha_lags.iter().map(|&k| residual[s][t - k]).collect();
            let Some(alpha) = alpha else { continue };
            row.extend(alpha);
            days.push(t);
            data.extend(row);
            y.push(resp);
        }
        let n = days.len();
        StockRows { stock: s, days, x: DMatrix::from_row_slice(n, cols, &data), y: DVector::from_vec(y) }
    })
    .into_iter()
    .filter(|r| !r.days.is_empty())
    .collect();
    let design = Design { horizon, alpha_lags: alpha_lags.to_vec(), stocks };
    if design.rows() < cols {
        return Err(Error::RankDeficient { columns: (design.rows()..cols).collect() });
    }
    Ok(design)
}
