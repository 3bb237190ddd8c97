//! CSV schemas.
//!
//! ```text
//! metaorders.csv  stock_id,day,sign,volume,start_time,end_time,vol_at_start,vol_at_end[,price_at_start,price_at_end]
//! bars.csv        stock_id,day,open,high,low,close,total_volume[,checkpoints]
//! market.csv      day,index_return
//! stocks.csv      stock_id,tranche          (optional)
//! ```
//!
//! `checkpoints` is a `;`-separated list of `time:cumvol` pairs, e.g.
//! `"09:30:00:0;10:00:00:81250.5"`; the pair is split at its last colon.
//! Floats are written in shortest round-trip form, so write-then-read is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use super::{DailyBar, MarketSeries, Metaorder, Panel, Stock};
use crate::error::{Error, Result};

pub const METAORDERS_FILE: &str = "metaorders.csv";
pub const BARS_FILE: &str = "bars.csv";
pub const MARKET_FILE: &str = "market.csv";
pub const STOCKS_FILE: &str = "stocks.csv";

#[derive(Serialize, Deserialize)]
struct MetaorderRow {
    stock_id: String,
    day: NaiveDate,
    sign: i8,
    volume: f64,
    start_time: NaiveTime,
    end_time: NaiveTime,
    vol_at_start: f64,
    vol_at_end: f64,
    #[serde(default)]
    price_at_start: Option<f64>,
    #[serde(default)]
    price_at_end: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct BarRow {
    stock_id: String,
    day: NaiveDate,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    total_volume: f64,
    #[serde(default)]
    checkpoints: String,
}

#[derive(Serialize, Deserialize)]
struct MarketRow {
    day: NaiveDate,
    index_return: f64,
}

#[derive(Serialize, Deserialize)]
struct StockRow {
    stock_id: String,
    #[serde(default)]
    tranche: Option<String>,
}

fn format_checkpoints(cp: &[(NaiveTime, f64)]) -> String {
    cp.iter().map(|(t, v)| format!("{}:{}", t.format("%H:%M:%S%.f"), v)).collect::<Vec<_>>().join(";")
}

fn parse_checkpoints(s: &str) -> Result<Vec<(NaiveTime, f64)>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let (t, v) = pair
                .rsplit_once(':')
                .ok_or_else(|| Error::Data(format!("bad checkpoint '{pair}'")))?;
            let t = NaiveTime::parse_from_str(t.trim(), "%H:%M:%S%.f")
                .map_err(|e| Error::Data(format!("bad checkpoint time '{t}': {e}")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Data(format!("bad checkpoint volume '{v}'")))?;
            Ok((t, v))
        })
        .collect()
}

pub fn read_metaorders<R: Read>(r: R) -> Result<Vec<Metaorder>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rdr.deserialize::<MetaorderRow>()
        .map(|row| {
            let row = row?;
            Ok(Metaorder {
                stock_id: row.stock_id,
                day: row.day,
                sign: row.sign,
                volume: row.volume,
                start_time: row.start_time,
                end_time: row.end_time,
                vol_at_start: row.vol_at_start,
                vol_at_end: row.vol_at_end,
                price_at_start: row.price_at_start,
                price_at_end: row.price_at_end,
            })
        })
        .collect()
}

pub fn write_metaorders<W: Write>(w: W, orders: &[Metaorder]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for m in orders {
        wtr.serialize(MetaorderRow {
            stock_id: m.stock_id.clone(),
            day: m.day,
            sign: m.sign,
            volume: m.volume,
            start_time: m.start_time,
            end_time: m.end_time,
            vol_at_start: m.vol_at_start,
            vol_at_end: m.vol_at_end,
            price_at_start: m.price_at_start,
            price_at_end: m.price_at_end,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_bars<R: Read>(r: R) -> Result<Vec<DailyBar>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rdr.deserialize::<BarRow>()
        .map(|row| {
            let row = row?;
            Ok(DailyBar {
                stock_id: row.stock_id,
                day: row.day,
                open: row.open,
                high: row.high,
                low: row.low,
                close: row.close,
                total_volume: row.total_volume,
                checkpoints: parse_checkpoints(&row.checkpoints)?,
            })
        })
        .collect()
}

pub fn write_bars<'a, W: Write, I: IntoIterator<Item = &'a DailyBar>>(w: W, bars: I) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for b in bars {
        wtr.serialize(BarRow {
            stock_id: b.stock_id.clone(),
            day: b.day,
            open: b.open,
            high: b.high,
            low: b.low,
            close: b.close,
            total_volume: b.total_volume,
            checkpoints: format_checkpoints(&b.checkpoints),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Market file: returns the calendar and the aligned index returns.
pub fn read_market<R: Read>(r: R) -> Result<(Vec<NaiveDate>, MarketSeries)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut days = Vec::new();
    let mut returns = Vec::new();
    for row in rdr.deserialize::<MarketRow>() {
        let row = row?;
        days.push(row.day);
        returns.push(row.index_return);
    }
    Ok((days, MarketSeries { returns }))
}

pub fn write_market<W: Write>(w: W, calendar: &[NaiveDate], market: &MarketSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (day, r) in calendar.iter().zip(&market.returns) {
        wtr.serialize(MarketRow { day: *day, index_return: *r })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_stocks<R: Read>(r: R) -> Result<Vec<Stock>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rdr.deserialize::<StockRow>()
        .map(|row| {
            let row = row?;
            Ok(Stock { id: row.stock_id, tranche: row.tranche.filter(|t| !t.is_empty()) })
        })
        .collect()
}

pub fn write_stocks<W: Write>(w: W, stocks: &[Stock]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in stocks {
        wtr.serialize(StockRow { stock_id: s.id.clone(), tranche: s.tranche.clone() })?;
    }
    wtr.flush()?;
    Ok(())
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Read a panel directory. Stocks come from `stocks.csv` when present,
/// otherwise from the bars in order of first appearance.
pub fn read_panel(dir: &Path) -> Result<Panel> {
    let (calendar, market) = read_market(open(dir, MARKET_FILE)?)?;
    let bars = read_bars(open(dir, BARS_FILE)?)?;
    let orders = read_metaorders(open(dir, METAORDERS_FILE)?)?;
    let stocks = if dir.join(STOCKS_FILE).exists() {
        read_stocks(open(dir, STOCKS_FILE)?)?
    } else {
        let mut seen = std::collections::HashSet::new();
        bars.iter()
            .filter(|b| seen.insert(b.stock_id.clone()))
            .map(|b| Stock { id: b.stock_id.clone(), tranche: None })
            .collect()
    };
    Panel::new(calendar, stocks, bars, orders, market)
}

/// Write all four files into `dir` (which must exist).
pub fn write_panel(dir: &Path, panel: &Panel) -> Result<()> {
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    write_metaorders(create(METAORDERS_FILE)?, panel.metaorders())?;
    write_bars(create(BARS_FILE)?, panel.all_bars())?;
    write_market(create(MARKET_FILE)?, panel.calendar(), panel.market())?;
    write_stocks(create(STOCKS_FILE)?, panel.stocks())?;
    Ok(())
}
