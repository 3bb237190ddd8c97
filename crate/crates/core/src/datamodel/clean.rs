use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{metaorder_stats, Panel};
use crate::error::{Error, Result};

/// Thresholds for [`clean_panel`]. The defaults are this crate's choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub max_eta: f64,
    pub max_phi: f64,
    pub min_duration: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self { max_eta: 0.5, max_phi: 1.0, min_duration: 1e-4 }
    }
}

/// Reason a metaorder was removed. Filters are applied in declaration order
/// and each record is charged to the first one it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    InvalidRecord,
    InvalidBar,
    ZeroSigmaDay,
    ZeroDuration,
    ParticipationOverflow,
    EtaCap,
    PhiCap,
    DurationFloor,
}

impl Filter {
    pub const ALL: [Filter; 8] = [
        Filter::InvalidRecord,
        Filter::InvalidBar,
        Filter::ZeroSigmaDay,
        Filter::ZeroDuration,
        Filter::ParticipationOverflow,
        Filter::EtaCap,
        Filter::PhiCap,
        Filter::DurationFloor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Filter::InvalidRecord => "invalid_record",
            Filter::InvalidBar => "invalid_bar",
            Filter::ZeroSigmaDay => "zero_sigma_day",
            Filter::ZeroDuration => "zero_duration",
            Filter::ParticipationOverflow => "participation_overflow",
            Filter::EtaCap => "eta_cap",
            Filter::PhiCap => "phi_cap",
            Filter::DurationFloor => "duration_floor",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    /// Rejected metaorders per filter (every filter listed, zeros included).
    pub metaorders: BTreeMap<String, usize>,
    /// Dropped stock-days: `zero_sigma` and `invalid`.
    pub bars: BTreeMap<String, usize>,
    /// Input row index and filter of each rejected metaorder.
    #[serde(skip)]
    pub rejected: Vec<(usize, Filter)>,
    pub thresholds: CleaningConfig,
}

impl RejectionReport {
    pub fn total_rejected(&self) -> usize {
        self.rejected.len()
    }

    /// Flat `filter_name -> count` map (metaorder filters, then `bars_*`).
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = self.metaorders.clone();
        for (k, v) in &self.bars {
            m.insert(format!("bars_{k}"), *v);
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct CleanedPanel {
    pub panel: Panel,
    pub report: RejectionReport,
    /// Input row index of every kept metaorder, in output order.
    pub kept: Vec<usize>,
}

fn classify(panel: &Panel, i: usize, cfg: &CleaningConfig) -> Option<Filter> {
    let m = &panel.metaorders()[i];
    if m.check().is_err() {
        return Some(Filter::InvalidRecord);
    }
    let (s, d) = panel.location(i);
    let bar = panel.bar(s, d).expect("panel resolves every metaorder");
    if bar.check().is_err() {
        return Some(Filter::InvalidBar);
    }
    if !(bar.sigma() > 0.0) {
        return Some(Filter::ZeroSigmaDay);
    }
    if m.start_time == m.end_time || !(m.interval_volume() > 0.0) {
        return Some(Filter::ZeroDuration);
    }
    let stats = match metaorder_stats(m, bar) {
        Ok(s) => s,
        Err(Error::ParticipationOverflow { .. }) => return Some(Filter::ParticipationOverflow),
        Err(_) => return Some(Filter::InvalidRecord),
    };
    if stats.eta > cfg.max_eta {
        return Some(Filter::EtaCap);
    }
    if stats.phi > cfg.max_phi {
        return Some(Filter::PhiCap);
    }
    if stats.duration < cfg.min_duration {
        return Some(Filter::DurationFloor);
    }
    None
}

/// Remove metaorders violating invariants or thresholds, and stock-days
/// whose bar is invalid or has `sigma_d = 0`. Idempotent.
pub fn clean_panel(raw: &Panel, cfg: &CleaningConfig) -> Result<CleanedPanel> {
    let mut report = RejectionReport {
        metaorders: Filter::ALL.iter().map(|f| (f.name().to_string(), 0)).collect(),
        bars: [("invalid".to_string(), 0), ("zero_sigma".to_string(), 0)].into_iter().collect(),
        rejected: Vec::new(),
        thresholds: *cfg,
    };
    let mut kept = Vec::new();
    for i in 0..raw.metaorders().len() {
        match classify(raw, i, cfg) {
            Some(f) => {
                *report.metaorders.get_mut(f.name()).unwrap() += 1;
                report.rejected.push((i, f));
            }
            None => kept.push(i),
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mut bars = Vec::new();
    for b in raw.all_bars() {
        if b.check().is_err() {
            *report.bars.get_mut("invalid").unwrap() += 1;
        } else if !(b.sigma() > 0.0) {
            *report.bars.get_mut("zero_sigma").unwrap() += 1;
        } else {
            bars.push(b.clone());
        }
    }
    let orders = kept.iter().map(|&i| raw.metaorders()[i].clone()).collect();
    let panel = Panel::new(
        raw.calendar().to_vec(),
        raw.stocks().to_vec(),
        bars,
        orders,
        raw.market().clone(),
    )?;
    Ok(CleanedPanel { panel, report, kept })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{MarketSeries, Stock};
    use super::*;

    fn panel(orders: Vec<super::super::Metaorder>, bars: Vec<super::super::DailyBar>) -> Panel {
        let cal = vec![date(0), date(1)];
        let stocks = vec![Stock { id: "A".into(), tranche: None }];
        Panel::new(cal, stocks, bars, orders, MarketSeries { returns: vec![0.0, 0.0] }).unwrap()
    }

    #[test]
    fn zero_duration_order_is_removed_and_counted() {
        let mut z = order("A", 0, 1, 10.0, 500.0, 500.0);
        z.end_time = z.start_time;
        let good = order("A", 0, -1, 100.0, 1000.0, 2000.0);
        let p = panel(vec![z, good.clone()], vec![bar("A", 0, 10.0, 10.1, 0.02, 1e5)]);
        let c = clean_panel(&p, &CleaningConfig::default()).unwrap();
        assert_eq!(c.panel.metaorders(), &[good]);
        assert_eq!(c.report.metaorders["zero_duration"], 1);
        assert_eq!(c.report.rejected, vec![(0, Filter::ZeroDuration)]);
    }

    #[test]
    fn all_valid_input_is_unchanged() {
        let orders = vec![order("A", 0, 1, 100.0, 0.0, 1000.0), order("A", 1, -1, 50.0, 10.0, 5000.0)];
        let bars = vec![bar("A", 0, 10.0, 10.1, 0.02, 1e5), bar("A", 1, 10.1, 10.0, 0.03, 2e5)];
        let p = panel(orders.clone(), bars.clone());
        let c = clean_panel(&p, &CleaningConfig::default()).unwrap();
        assert_eq!(c.panel.metaorders(), orders.as_slice());
        assert_eq!(c.panel.all_bars().cloned().collect::<Vec<_>>(), bars);
        assert_eq!(c.report.total_rejected(), 0);
    }

    #[test]
    fn each_filter_fires() {
        let cfg = CleaningConfig::default();
        let mut bad_sign = order("A", 0, 1, 100.0, 0.0, 1000.0);
        bad_sign.sign = 0;
        let cases = vec![
            (bad_sign, Filter::InvalidRecord),
            (order("A", 0, 1, 100.0, 500.0, 500.0), Filter::ZeroDuration),
            (order("A", 0, 1, 2000.0, 0.0, 1000.0), Filter::ParticipationOverflow),
            (order("A", 0, 1, 600.0, 0.0, 1000.0), Filter::EtaCap),
            (order("A", 0, 1, 1.0, 0.0, 5.0), Filter::DurationFloor),
            (order("A", 1, 1, 10.0, 0.0, 1000.0), Filter::ZeroSigmaDay),
        ];
        let flat = {
            let mut b = bar("A", 1, 10.0, 10.0, 0.0, 1e5);
            b.high = 10.0;
            b.low = 10.0;
            b
        };
        let bars = vec![bar("A", 0, 10.0, 10.1, 0.02, 1e5), flat];
        let p = panel(cases.iter().map(|c| c.0.clone()).collect(), bars);
        let keep = order("A", 0, 1, 100.0, 0.0, 1000.0);
        let mut with_keep = p.metaorders().to_vec();
        with_keep.push(keep);
        let (cal, st, bars, _, mkt) = p.into_parts();
        let p = Panel::new(cal, st, bars, with_keep, mkt).unwrap();
        let c = clean_panel(&p, &cfg).unwrap();
        let got: Vec<Filter> = c.report.rejected.iter().map(|r| r.1).collect();
        assert_eq!(got, cases.iter().map(|c| c.1).collect::<Vec<_>>());
        assert_eq!(c.report.bars["zero_sigma"], 1);
        assert_eq!(c.panel.n_stocks(), 1);
        assert!(c.panel.bar(0, 1).is_none());
        let counts = c.report.counts();
        assert_eq!(counts["bars_zero_sigma"], 1);
        assert_eq!(counts["eta_cap"], 1);
    }

    #[test]
    fn phi_cap_applies_when_configured_below_one() {
        let cfg = CleaningConfig { max_phi: 0.001, ..Default::default() };
        let p = panel(vec![order("A", 0, 1, 200.0, 0.0, 1000.0)], vec![bar("A", 0, 10.0, 10.1, 0.02, 1e5)]);
        assert!(matches!(clean_panel(&p, &cfg), Err(Error::EmptyPanel)));
    }

    #[test]
    fn cleaning_is_idempotent() {
        let orders = vec![
            order("A", 0, 1, 100.0, 0.0, 1000.0),
            order("A", 0, 1, 900.0, 0.0, 1000.0),
            order("A", 1, -1, 50.0, 10.0, 5000.0),
        ];
        let bars = vec![bar("A", 0, 10.0, 10.1, 0.02, 1e5), bar("A", 1, 10.1, 10.0, 0.03, 2e5)];
        let once = clean_panel(&panel(orders, bars), &CleaningConfig::default()).unwrap();
        let twice = clean_panel(&once.panel, &CleaningConfig::default()).unwrap();
        assert_eq!(once.panel.metaorders(), twice.panel.metaorders());
        assert_eq!(twice.report.total_rejected(), 0);
    }
}
