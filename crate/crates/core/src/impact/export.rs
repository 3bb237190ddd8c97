//! Plot-ready CSV: `bin_center,value,stderr,count`.

use std::io::Write;

use serde::Serialize;

use super::{DecayPoint, ImpactCurve, RatioBin};
use crate::error::Result;

#[derive(Serialize)]
struct Row {
    bin_center: f64,
    value: f64,
    stderr: f64,
    count: usize,
}

fn write_rows<W: Write>(w: W, rows: impl Iterator<Item = Row>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut any = false;
    for r in rows {
        wtr.serialize(r)?;
        any = true;
    }
    if !any {
        wtr.write_record(["bin_center", "value", "stderr", "count"])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_impact_csv<W: Write>(w: W, curve: &ImpactCurve) -> Result<()> {
    write_rows(
        w,
        curve.bins.iter().map(|b| Row { bin_center: b.center, value: b.mean, stderr: b.stderr, count: b.count }),
    )
}

pub fn write_ratio_csv<W: Write>(w: W, bins: &[RatioBin]) -> Result<()> {
    write_rows(w, bins.iter().map(|b| Row { bin_center: b.center, value: b.ratio, stderr: b.stderr, count: b.count }))
}

pub fn write_decay_csv<W: Write>(w: W, points: &[DecayPoint]) -> Result<()> {
    write_rows(w, points.iter().map(|p| Row { bin_center: p.z, value: p.value, stderr: p.stderr, count: p.count }))
}
