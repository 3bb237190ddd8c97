//! Domain types, CSV ingestion, cleaning filters and the elementary
//! metaorder descriptors (participation rate, duration, daily fraction).

mod clean;
mod io;

use std::collections::HashMap;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub use clean::{clean_panel, CleanedPanel, CleaningConfig, Filter, RejectionReport};
pub use io::{
    read_bars, read_market, read_metaorders, read_panel, read_stocks, write_bars, write_market,
    write_metaorders, write_panel, write_stocks, BARS_FILE, MARKET_FILE, METAORDERS_FILE, STOCKS_FILE,
};

/// `sign(x) * sqrt(|x|)`.
pub fn signed_sqrt(x: f64) -> Result<f64> {
    let x = ensure_finite(x)?;
    Ok(if x == 0.0 { 0.0 } else { x.signum() * x.abs().sqrt() })
}

/// `log(price) / sigma_d`.
pub fn rescaled_log_price(price: f64, sigma_d: f64) -> Result<f64> {
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::InvalidArgument(format!("price must be positive, got {price}")));
    }
    if !(sigma_d > 0.0) || !sigma_d.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_d must be positive, got {sigma_d}")));
    }
    Ok(price.ln() / sigma_d)
}

/// One metaorder: same-direction executions by one investor on one stock
/// within one day, treated as a single order of `volume` shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metaorder {
    pub stock_id: String,
    pub day: NaiveDate,
    /// +1 buy, -1 sell.
    pub sign: i8,
    /// Q, shares.
    pub volume: f64,
    pub start_time: NaiveTime,
    pub end_time: NaiveTime,
    /// Cumulative market volume V(t_s).
    pub vol_at_start: f64,
    /// Cumulative market volume V(t_e).
    pub vol_at_end: f64,
    /// Mid price at t_s, if recorded.
    pub price_at_start: Option<f64>,
    /// Mid price at t_e, if recorded.
    pub price_at_end: Option<f64>,
}

impl Metaorder {
    pub fn epsilon(&self) -> f64 {
        f64::from(self.sign)
    }

    /// Market volume traded during execution, `V(t_e) - V(t_s)`.
    pub fn interval_volume(&self) -> f64 {
        self.vol_at_end - self.vol_at_start
    }

    /// Record-level invariants (independent of the bar).
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.sign != 1 && self.sign != -1 {
            return Err(format!("sign {} not in {{-1, +1}}", self.sign));
        }
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(format!("volume {} not positive", self.volume));
        }
        if self.start_time > self.end_time {
            return Err("start after end".into());
        }
        if !self.vol_at_start.is_finite() || !self.vol_at_end.is_finite() || self.vol_at_start < 0.0 {
            return Err("bad cumulative volume".into());
        }
        if self.vol_at_end < self.vol_at_start {
            return Err("V(t_e) < V(t_s)".into());
        }
        for p in [self.price_at_start, self.price_at_end].into_iter().flatten() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(format!("price {p} not positive"));
            }
        }
        Ok(())
    }
}

/// Participation rate, duration in volume time, and daily fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaorderStats {
    pub eta: f64,
    pub duration: f64,
    pub phi: f64,
}

/// `eta = Q / (V(t_e) - V(t_s))`, `D = (V(t_e) - V(t_s)) / V_d`, `phi = Q / V_d`.
pub fn metaorder_stats(m: &Metaorder, bar: &DailyBar) -> Result<MetaorderStats> {
    let interval = m.interval_volume();
    if !(interval > 0.0) {
        return Err(Error::DegenerateExecution);
    }
    if !(bar.total_volume > 0.0) {
        return Err(Error::Data(format!("non-positive day volume for {} {}", bar.stock_id, bar.day)));
    }
    let eta = m.volume / interval;
    if eta > 1.0 {
        return Err(Error::ParticipationOverflow { eta });
    }
    Ok(MetaorderStats { eta, duration: interval / bar.total_volume, phi: m.volume / bar.total_volume })
}

/// Per-stock per-day OHLC bar with total volume and an intraday
/// cumulative-volume curve given as piecewise-linear checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub stock_id: String,
    pub day: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    /// V_d, shares.
    pub total_volume: f64,
    /// (time, cumulative shares), strictly increasing in time. May be empty.
    pub checkpoints: Vec<(NaiveTime, f64)>,
}

impl DailyBar {
    /// `(high - low) / open`.
    pub fn sigma(&self) -> f64 {
        (self.high - self.low) / self.open
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err("non-positive price".into());
        }
        if self.high < self.open.max(self.close) || self.low > self.open.min(self.close) {
            return Err("high/low do not bracket open/close".into());
        }
        if !(self.total_volume > 0.0) || !self.total_volume.is_finite() {
            return Err("non-positive total volume".into());
        }
        for w in self.checkpoints.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err("volume curve not increasing".into());
            }
        }
        if let Some(last) = self.checkpoints.last() {
            if last.1 != self.total_volume {
                return Err("volume curve does not end at the day volume".into());
            }
        }
        Ok(())
    }

    /// Cumulative volume at `t` by linear interpolation of the checkpoints.
    pub fn volume_at(&self, t: NaiveTime) -> Option<f64> {
        let cp = &self.checkpoints;
        let first = cp.first()?;
        let last = cp.last()?;
        if t <= first.0 {
            return Some(first.1);
        }
        if t >= last.0 {
            return Some(last.1);
        }
        let i = cp.partition_point(|(ti, _)| *ti <= t);
        let (t0, v0) = cp[i - 1];
        let (t1, v1) = cp[i];
        let f = seconds(t - t0) / seconds(t1 - t0);
        Some(v0 + f * (v1 - v0))
    }

    /// Inverse of [`volume_at`](Self::volume_at): earliest time at which the
    /// cumulative volume reaches `v`.
    pub fn time_at_volume(&self, v: f64) -> Option<NaiveTime> {
        let cp = &self.checkpoints;
        let first = cp.first()?;
        let last = cp.last()?;
        if v <= first.1 {
            return Some(first.0);
        }
        if v >= last.1 {
            return Some(last.0);
        }
        let i = cp.partition_point(|(_, vi)| *vi < v);
        let (t0, v0) = cp[i - 1];
        let (t1, v1) = cp[i];
        let f = (v - v0) / (v1 - v0);
        let secs = seconds(t1 - t0) * f;
        Some(t0 + chrono::Duration::microseconds((secs * 1e6).round() as i64))
    }

    /// Time of the last checkpoint, taken as the close.
    pub fn close_time(&self) -> Option<NaiveTime> {
        self.checkpoints.last().map(|c| c.0)
    }

    /// Session length in seconds according to the checkpoints.
    pub fn session_seconds(&self) -> Option<f64> {
        Some(seconds(self.checkpoints.last()?.0 - self.checkpoints.first()?.0))
    }
}

pub(crate) fn seconds(d: chrono::TimeDelta) -> f64 {
    d.num_microseconds().map(|us| us as f64 * 1e-6).unwrap_or(f64::NAN)
}

/// Day-indexed market close-to-close returns, aligned with the panel calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stock {
    pub id: String,
    /// Optional market-cap tranche label.
    pub tranche: Option<String>,
}

/// Stocks, a common calendar, per-stock bars, metaorders and the market series.
///
/// Immutable after construction; estimators borrow it read-only.
#[derive(Debug, Clone)]
pub struct Panel {
    calendar: Vec<NaiveDate>,
    stocks: Vec<Stock>,
    /// `bars[stock][day]`
    bars: Vec<Vec<Option<DailyBar>>>,
    metaorders: Vec<Metaorder>,
    /// `(stock, day)` index of each metaorder
    locations: Vec<(usize, usize)>,
    market: MarketSeries,
    stock_index: HashMap<String, usize>,
}

impl Panel {
    /// Assemble a panel; every metaorder and bar must resolve to a known
    /// stock and calendar day.
    pub fn new(
        calendar: Vec<NaiveDate>,
        stocks: Vec<Stock>,
        bars: Vec<DailyBar>,
        metaorders: Vec<Metaorder>,
        market: MarketSeries,
    ) -> Result<Self> {
        if calendar.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("calendar is not strictly increasing".into()));
        }
        if market.returns.len() != calendar.len() {
            return Err(Error::Data(format!(
                "market series has {} values for {} calendar days",
                market.returns.len(),
                calendar.len()
            )));
        }
        let day_index: HashMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut stock_index = HashMap::new();
        for (i, s) in stocks.iter().enumerate() {
            if stock_index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate stock {}", s.id)));
            }
        }
        let mut grid: Vec<Vec<Option<DailyBar>>> = vec![vec![None; calendar.len()]; stocks.len()];
        for bar in bars {
            let s = *stock_index
                .get(&bar.stock_id)
                .ok_or_else(|| Error::Data(format!("bar for unknown stock {}", bar.stock_id)))?;
            let d = *day_index
                .get(&bar.day)
                .ok_or_else(|| Error::Data(format!("bar day {} not in calendar", bar.day)))?;
            if grid[s][d].is_some() {
                return Err(Error::Data(format!("duplicate bar {} {}", bar.stock_id, bar.day)));
            }
            grid[s][d] = Some(bar);
        }
        let mut locations = Vec::with_capacity(metaorders.len());
        for m in &metaorders {
            let s = stock_index.get(&m.stock_id).copied();
            let d = day_index.get(&m.day).copied();
            match (s, d) {
                (Some(s), Some(d)) if grid[s][d].is_some() => locations.push((s, d)),
                _ => {
                    return Err(Error::Data(format!("metaorder {} {} has no daily bar", m.stock_id, m.day)))
                }
            }
        }
        Ok(Self { calendar, stocks, bars: grid, metaorders, locations, market, stock_index })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn stocks(&self) -> &[Stock] {
        &self.stocks
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn stock_position(&self, id: &str) -> Option<usize> {
        self.stock_index.get(id).copied()
    }

    pub fn bar(&self, stock: usize, day: usize) -> Option<&DailyBar> {
        self.bars.get(stock)?.get(day)?.as_ref()
    }

    pub fn bars_of(&self, stock: usize) -> &[Option<DailyBar>] {
        &self.bars[stock]
    }

    pub fn all_bars(&self) -> impl Iterator<Item = &DailyBar> {
        self.bars.iter().flatten().flatten()
    }

    pub fn metaorders(&self) -> &[Metaorder] {
        &self.metaorders
    }

    /// `(stock, day)` position of metaorder `i`.
    pub fn location(&self, i: usize) -> (usize, usize) {
        self.locations[i]
    }

    pub fn market(&self) -> &MarketSeries {
        &self.market
    }

    /// Daily log returns, close to previous close. The first day uses its
    /// open as the previous close. `None` where either bar is missing.
    pub fn stock_returns(&self, stock: usize) -> Vec<Option<f64>> {
        let bars = &self.bars[stock];
        (0..bars.len())
            .map(|d| {
                let cur = bars[d].as_ref()?;
                let prev_close = if d == 0 { cur.open } else { bars[d - 1].as_ref()?.close };
                Some((cur.close / prev_close).ln())
            })
            .collect()
    }

    /// `sigma_d` per day; `None` without a bar.
    pub fn sigmas(&self, stock: usize) -> Vec<Option<f64>> {
        self.bars[stock].iter().map(|b| b.as_ref().map(DailyBar::sigma)).collect()
    }

    /// Keep only stocks carrying `label`.
    pub fn restrict_to_tranche(&self, label: &str) -> Result<Panel> {
        self.retain_stocks(|s| s.tranche.as_deref() == Some(label))
    }

    /// Keep the stocks for which `keep` holds, with their bars and metaorders.
    pub fn retain_stocks<F: Fn(&Stock) -> bool>(&self, keep: F) -> Result<Panel> {
        let stocks: Vec<Stock> = self.stocks.iter().filter(|s| keep(s)).cloned().collect();
        if stocks.is_empty() {
            return Err(Error::Config("stock filter selects no stocks".into()));
        }
        let kept: std::collections::HashSet<&str> = stocks.iter().map(|s| s.id.as_str()).collect();
        let bars = self.all_bars().filter(|b| kept.contains(b.stock_id.as_str())).cloned().collect();
        let orders = self.metaorders.iter().filter(|m| kept.contains(m.stock_id.as_str())).cloned().collect();
        Panel::new(self.calendar.clone(), stocks, bars, orders, self.market.clone())
    }

    /// Decompose into owned parts (calendar, stocks, bars, metaorders, market).
    pub fn into_parts(self) -> (Vec<NaiveDate>, Vec<Stock>, Vec<DailyBar>, Vec<Metaorder>, MarketSeries) {
        let bars = self.bars.into_iter().flatten().flatten().collect();
        (self.calendar, self.stocks, bars, self.metaorders, self.market)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn date(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i as i64)
    }

    pub fn time(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    pub fn bar(stock: &str, day: u32, open: f64, close: f64, sigma: f64, volume: f64) -> DailyBar {
        let hi = open.max(close);
        let lo = hi - sigma * open;
        DailyBar {
            stock_id: stock.into(),
            day: date(day),
            open,
            high: hi,
            low: lo.min(open.min(close)),
            close,
            total_volume: volume,
            checkpoints: vec![(time(9, 30), 0.0), (time(16, 0), volume)],
        }
    }

    pub fn order(stock: &str, day: u32, sign: i8, q: f64, vs: f64, ve: f64) -> Metaorder {
        Metaorder {
            stock_id: stock.into(),
            day: date(day),
            sign,
            volume: q,
            start_time: time(10, 0),
            end_time: time(11, 0),
            vol_at_start: vs,
            vol_at_end: ve,
            price_at_start: Some(10.0),
            price_at_end: Some(10.1),
        }
    }
}
