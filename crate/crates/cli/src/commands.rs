use std::path::{Path, PathBuf};

use log::{info, warn};
use metaimpact::datamodel::{
    clean_panel, read_panel, Panel, RejectionReport, BARS_FILE, MARKET_FILE, METAORDERS_FILE, STOCKS_FILE,
};
use metaimpact::deconvolution::{deconvolve, fit_kernel_asymptote, write_kernel_csv, write_response_csv, AsymptoteOptions};
use metaimpact::flowstats::{daily_imbalance, fit_autocorr, flow_autocorrelation, write_autocorr_csv, AutocorrCurve};
use metaimpact::impact::{
    conditional_next_close, decay_curve, fit_decay_exponent, fit_plateau, impact_curve, loglog_slope, mean_ratio,
    order_impacts, ratio_curve, write_decay_csv, write_impact_csv, write_ratio_csv, zeta_from_autocorr, DecayOptions,
    DecayPoint, Horizon, OrderImpact, PricePair,
};
use metaimpact::simulator::{simulate as run_simulation, write_simulation, GROUND_TRUTH_FILE};
use metaimpact::{Error, ErrorKind, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::{envelope, merge, outcome, OutDir};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub input: Vec<PathBuf>,
    pub force: bool,
    pub tranche: Option<String>,
}

/// A command that finished writing its outputs, possibly with fits that did
/// not converge.
#[derive(Debug, PartialEq)]
pub enum Status {
    Done,
    FitsFailed(Vec<String>),
}

/// Names of fits whose outcome was a convergence failure.
#[derive(Default)]
struct FitLog(Vec<String>);

impl FitLog {
    fn record<T>(&mut self, name: &str, r: &Result<T>) {
        if let Err(e) = r {
            warn!("{name}: {e}");
            if e.kind() == ErrorKind::Convergence {
                self.0.push(name.to_string());
            }
        }
    }

    fn status(self) -> Status {
        if self.0.is_empty() {
            Status::Done
        } else {
            Status::FitsFailed(self.0)
        }
    }
}

fn resolve(inv: &Invocation) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(inv.config.as_deref())?;
    cfg.apply_seed(inv.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn single_input(inv: &Invocation) -> Result<&Path> {
    match inv.input.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::Config("--input <panel dir> is required".into())),
        _ => Err(Error::Config("this command takes exactly one --input".into())),
    }
}

struct Loaded {
    panel: Panel,
    rejections: RejectionReport,
    raw_metaorders: usize,
}

fn load(inv: &Invocation, cfg: &RunConfig) -> Result<Loaded> {
    let dir = single_input(inv)?;
    let raw = read_panel(dir)?;
    if raw.metaorders().is_empty() {
        return Err(Error::Data(format!("{} holds no metaorders", dir.display())));
    }
    let raw = match &inv.tranche {
        Some(label) => raw.restrict_to_tranche(label)?,
        None => raw,
    };
    let raw_metaorders = raw.metaorders().len();
    let cleaned = clean_panel(&raw, &cfg.cleaning)?;
    info!(
        "{}: {} stocks, {} days, {} of {raw_metaorders} metaorders kept",
        dir.display(),
        cleaned.panel.n_stocks(),
        cleaned.panel.n_days(),
        cleaned.panel.metaorders().len()
    );
    Ok(Loaded { panel: cleaned.panel, rejections: cleaned.report, raw_metaorders })
}

fn header(command: &str, inv: &Invocation, cfg: &RunConfig) -> Value {
    envelope(command, cfg, (!inv.input.is_empty()).then_some(inv.input.as_slice()), inv.tranche.as_deref())
}

fn impacts_of(panel: &Panel) -> Result<Vec<OrderImpact>> {
    let imp = order_impacts(panel);
    if imp.is_empty() {
        return Err(Error::Data("no metaorder has prices at start and end".into()));
    }
    Ok(imp)
}

fn signed_root_autocorr(panel: &Panel, max_lag: usize) -> Result<AutocorrCurve> {
    flow_autocorrelation(&daily_imbalance(panel).roots(), max_lag)
}

/// Points the exponent fit accepts (values in (0, 1]) and how many were left out.
fn fit_exponent(points: &[DecayPoint], name: &str, log: &mut FitLog) -> Value {
    let usable: Vec<DecayPoint> = points.iter().copied().filter(|p| p.value > 0.0 && p.value <= 1.0).collect();
    let r = fit_decay_exponent(&usable);
    log.record(name, &r);
    json!({ "fit": outcome(&r), "points_used": usable.len(), "points_dropped": points.len() - usable.len() })
}

// ---------------------------------------------------------------- simulate

pub fn simulate(inv: &Invocation) -> Result<Status> {
    if inv.tranche.is_some() {
        return Err(Error::Config("--tranche applies to analysis commands; set tranches in the simulate block".into()));
    }
    let cfg = resolve(inv)?;
    let out = OutDir::prepare(
        &inv.out,
        inv.force,
        &[METAORDERS_FILE, BARS_FILE, MARKET_FILE, STOCKS_FILE, GROUND_TRUTH_FILE, "simulate.json"],
    )?;
    let sim = run_simulation(&cfg.simulate)?;
    write_simulation(out.path(), &sim)?;
    info!("wrote {} metaorders to {}", sim.panel.metaorders().len(), out.path().display());
    let summary = json!({
        "metaorders": sim.panel.metaorders().len(),
        "stocks": sim.panel.n_stocks(),
        "days": sim.panel.n_days(),
        "injected_violations": sim.truth.violations.len(),
        "active_probability": sim.truth.active_probability,
    });
    out.json("simulate.json", &merge(header("simulate", inv, &cfg), json!({ "summary": summary })))?;
    Ok(Status::Done)
}

// ---------------------------------------------------------------- estimate

const ESTIMATE_FILES: [&str; 8] = [
    "impact_start_end.csv",
    "impact_start_close.csv",
    "impact_start_next_close.csv",
    "ratio.csv",
    "decay.csv",
    "autocorr.csv",
    "rejections.csv",
    "estimate.json",
];

fn write_rejections(out: &OutDir, r: &RejectionReport) -> Result<()> {
    use std::io::Write;
    let mut w = out.create("rejections.csv")?;
    writeln!(w, "filter,count")?;
    for (k, v) in r.counts() {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimate(inv: &Invocation) -> Result<Status> {
    let cfg = resolve(inv)?;
    let e = &cfg.estimate;
    let loaded = load(inv, &cfg)?;
    let out = OutDir::prepare(&inv.out, inv.force, &ESTIMATE_FILES)?;
    let p = &loaded.panel;
    let imp = impacts_of(p)?;
    let mut log = FitLog::default();

    let se = impact_curve(p, &imp, PricePair::StartEnd, e.n_bins)?;
    let sc = impact_curve(p, &imp, PricePair::StartClose, e.n_bins)?;
    out.csv("impact_start_end.csv", |w| write_impact_csv(w, &se))?;
    out.csv("impact_start_close.csv", |w| write_impact_csv(w, &sc))?;
    let snc = impact_curve(p, &imp, PricePair::StartNextClose, e.n_bins);
    if let Ok(c) = &snc {
        out.csv("impact_start_next_close.csv", |w| write_impact_csv(w, c))?;
    }
    let ratio = ratio_curve(p, &imp, e.ratio_bins)?;
    out.csv("ratio.csv", |w| write_ratio_csv(w, &ratio))?;
    let (ratio_mean, ratio_se) = mean_ratio(&ratio);

    let slope = loglog_slope(&se, e.slope_phi_min, e.slope_phi_max);
    let slope_json = match &slope {
        Ok((s, err)) => json!({ "ok": { "slope": s, "stderr": err, "phi_min": e.slope_phi_min, "phi_max": e.slope_phi_max } }),
        Err(_) => outcome(&slope),
    };

    let opts = DecayOptions { n_bins: e.decay_bins, z_max: e.decay_z_max, ..Default::default() };
    let decay = decay_curve(&imp, &opts)?;
    out.csv("decay.csv", |w| write_decay_csv(w, &decay))?;
    let exponent = fit_exponent(&decay, "decay exponent", &mut log);

    let ac = signed_root_autocorr(p, e.max_lag)?;
    out.csv("autocorr.csv", |w| write_autocorr_csv(w, &ac))?;
    let ac_fit = fit_autocorr(&ac, e.gamma);
    log.record("autocorrelation", &ac_fit);
    let zeta = zeta_from_autocorr(ac.mean[0]);
    let next = conditional_next_close(&imp, e.next_close_bins);
    log.record("next-close regression", &next);

    write_rejections(&out, &loaded.rejections)?;
    let body = json!({
        "counts": {
            "metaorders_in": loaded.raw_metaorders,
            "metaorders_kept": p.metaorders().len(),
            "with_impact": imp.len(),
            "stocks": p.n_stocks(),
            "days": p.n_days(),
        },
        "rejections": loaded.rejections,
        "sqrt_law": slope_json,
        "mean_ratio": { "value": ratio_mean, "stderr": ratio_se },
        "start_next_close_curve": if snc.is_ok() { json!("written") } else { outcome(&snc) },
        "decay_exponent": exponent,
        "autocorr_fit": outcome(&ac_fit),
        "zeta": outcome(&zeta),
        "next_close": outcome(&next),
    });
    out.json("estimate.json", &merge(header("estimate", inv, &cfg), body))?;
    Ok(log.status())
}

// ---------------------------------------------------------------- decay

pub fn decay(inv: &Invocation) -> Result<Status> {
    let cfg = resolve(inv)?;
    let d = &cfg.decay;
    let loaded = load(inv, &cfg)?;
    let out = OutDir::prepare(&inv.out, inv.force, &["decay_same_day.csv", "decay_next_day.csv", "decay.json"])?;
    let p = &loaded.panel;
    let imp = impacts_of(p)?;
    let mut log = FitLog::default();

    let same_opts = DecayOptions { n_bins: d.n_bins, clock: d.clock, z_max: d.z_max, ..Default::default() };
    let same = decay_curve(&imp, &same_opts)?;
    out.csv("decay_same_day.csv", |w| write_decay_csv(w, &same))?;
    let same_fit = fit_exponent(&same, "same-day decay exponent", &mut log);
    let plateaus: Vec<Value> = d
        .plateau_windows
        .iter()
        .map(|&w| {
            let r = fit_plateau(&same, w);
            log.record(&format!("plateau z <= {w}"), &r);
            json!({ "z_max": w, "fit": outcome(&r) })
        })
        .collect();

    let (zeta, zeta_source) = match d.zeta {
        Some(z) => (z, "config"),
        None => (zeta_from_autocorr(signed_root_autocorr(p, 1)?.mean[0])?, "lag-1 flow autocorrelation"),
    };
    let next_opts = DecayOptions { horizon: Horizon::NextDay, zeta, ..same_opts };
    let next = decay_curve(&imp, &next_opts);
    let next_fit = match &next {
        Ok(points) => {
            out.csv("decay_next_day.csv", |w| write_decay_csv(w, points))?;
            fit_exponent(points, "next-day decay exponent", &mut log)
        }
        Err(_) => outcome(&next),
    };
    let body = json!({
        "orders": imp.len(),
        "same_day": { "exponent": same_fit, "plateaus": plateaus },
        "next_day": { "zeta": zeta, "zeta_source": zeta_source, "exponent": next_fit },
    });
    out.json("decay.json", &merge(header("decay", inv, &cfg), body))?;
    Ok(log.status())
}

// ---------------------------------------------------------------- deconvolve

pub fn deconvolve_cmd(inv: &Invocation) -> Result<Status> {
    let cfg = resolve(inv)?;
    let loaded = load(inv, &cfg)?;
    cfg.deconvolve.validate(loaded.panel.n_days())?;
    let out = OutDir::prepare(&inv.out, inv.force, &["kernel.csv", "response.csv", "deconvolve.json"])?;
    let mut log = FitLog::default();
    let d = deconvolve(&loaded.panel, &cfg.deconvolve)?;
    let k = &d.kernel;
    out.csv("kernel.csv", |w| write_kernel_csv(w, k))?;
    out.csv("response.csv", |w| write_response_csv(w, &d.response))?;

    // bootstrap spread when available, regression error otherwise
    let (errors, error_source) = match &k.bands {
        Some(b) => (b.std.clone(), "bootstrap"),
        None => (k.normalized_se.clone(), "regression"),
    };
    let a = &cfg.asymptote;
    let fits: Vec<Value> = a
        .modes
        .iter()
        .map(|&mode| {
            let opts = AsymptoteOptions { mode, b_fixed: a.b_fixed, beta_fixed: a.beta_fixed };
            let r = fit_kernel_asymptote(&k.normalized, Some(&errors), &opts);
            log.record(&format!("asymptote {mode:?}"), &r);
            json!({ "mode": mode, "fit": outcome(&r) })
        })
        .collect();
    let body = json!({
        "stocks": loaded.panel.n_stocks(),
        "days": loaded.panel.n_days(),
        "beta_fallbacks": d.beta_fallbacks,
        "kernel": k,
        "response": d.response,
        "asymptote": { "errors": error_source, "fits": fits },
    });
    out.json("deconvolve.json", &merge(header("deconvolve", inv, &cfg), body))?;
    Ok(log.status())
}

// ---------------------------------------------------------------- report

const REPORTS: [&str; 4] = ["simulate.json", "estimate.json", "decay.json", "deconvolve.json"];

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn num(v: &Value, pointer: &str) -> Option<f64> {
    v.pointer(pointer).and_then(Value::as_f64)
}

struct Row {
    quantity: String,
    source: &'static str,
    estimate: f64,
    stderr: Option<f64>,
    truth: Option<f64>,
}

impl Row {
    fn z(&self) -> Option<f64> {
        match (self.stderr, self.truth) {
            (Some(se), Some(t)) if se > 0.0 => Some((self.estimate - t) / se),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "quantity": self.quantity,
            "source": self.source,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "truth": self.truth,
            "z": self.z(),
        })
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.5}"))
}

pub fn report(inv: &Invocation) -> Result<Status> {
    if inv.input.is_empty() {
        return Err(Error::Config("report needs at least one --input directory".into()));
    }
    let cfg = resolve(inv)?;
    let out = OutDir::prepare(&inv.out, inv.force, &["summary.json", "summary.txt"])?;
    let mut found: Vec<(&'static str, Value)> = Vec::new();
    let mut truth: Option<Value> = None;
    for dir in &inv.input {
        for name in REPORTS {
            let p = dir.join(name);
            if p.exists() {
                found.push((name, read_json(&p)?));
            }
        }
        let gt = dir.join(GROUND_TRUTH_FILE);
        if truth.is_none() && gt.exists() {
            truth = Some(read_json(&gt)?);
        }
    }
    if found.is_empty() {
        return Err(Error::Data("no reports found in the input directories".into()));
    }
    let t = truth.as_ref();
    let tnum = |p: &str| t.and_then(|t| num(t, p));
    let mut rows = Vec::new();
    for (name, v) in &found {
        match *name {
            "estimate.json" => {
                if let Some(s) = num(v, "/sqrt_law/ok/slope") {
                    let truth = t.map(|_| 0.5);
                    rows.push(Row { quantity: "square-root slope".into(), source: name, estimate: s, stderr: num(v, "/sqrt_law/ok/stderr"), truth });
                }
                if let Some(b) = num(v, "/decay_exponent/fit/ok/beta") {
                    rows.push(Row { quantity: "decay exponent".into(), source: name, estimate: b, stderr: num(v, "/decay_exponent/fit/ok/stderr"), truth: tnum("/config/propagator/beta") });
                }
                for (key, label) in [("a", "flow autocorrelation a"), ("b", "flow autocorrelation b"), ("gamma", "flow autocorrelation gamma")] {
                    if let Some(x) = num(v, &format!("/autocorr_fit/ok/{key}")) {
                        let stderr = num(v, &format!("/autocorr_fit/ok/{key}_stderr")).filter(|s| s.is_finite());
                        rows.push(Row { quantity: label.into(), source: name, estimate: x, stderr, truth: tnum(&format!("/config/flow/{key}")) });
                    }
                }
                if let Some(r) = num(v, "/mean_ratio/value") {
                    rows.push(Row { quantity: "mean I_SC / I_SE".into(), source: name, estimate: r, stderr: num(v, "/mean_ratio/stderr"), truth: None });
                }
            }
            "decay.json" => {
                if let Some(b) = num(v, "/same_day/exponent/fit/ok/beta") {
                    rows.push(Row { quantity: "same-day decay exponent".into(), source: name, estimate: b, stderr: num(v, "/same_day/exponent/fit/ok/stderr"), truth: tnum("/config/propagator/beta") });
                }
                if let Some(b) = num(v, "/next_day/exponent/fit/ok/beta") {
                    rows.push(Row { quantity: "next-day decay exponent".into(), source: name, estimate: b, stderr: num(v, "/next_day/exponent/fit/ok/stderr"), truth: None });
                }
            }
            "deconvolve.json" => {
                let modified = t.and_then(|t| t.pointer("/config/kernel/mode")).and_then(Value::as_str) == Some("modified_propagator");
                if let Some(fits) = v.pointer("/asymptote/fits").and_then(Value::as_array) {
                    for f in fits {
                        let mode = f["mode"].as_str().unwrap_or("?");
                        if let Some(x) = num(f, "/fit/ok/i_inf") {
                            let truth = if modified { tnum("/config/kernel/i_inf") } else { None };
                            rows.push(Row { quantity: format!("kernel asymptote ({mode})"), source: name, estimate: x, stderr: num(f, "/fit/ok/i_inf_stderr").filter(|s| s.is_finite()), truth });
                        }
                    }
                }
                let est = v.pointer("/kernel/normalized").and_then(Value::as_array);
                let sd = v.pointer("/kernel/bands/std").and_then(Value::as_array);
                let tk = t.and_then(|t| t.pointer("/kernel_normalized")).and_then(Value::as_array);
                if let (Some(est), Some(sd), Some(tk)) = (est, sd, tk) {
                    let worst = (1..est.len())
                        .filter_map(|i| {
                            let truth = tk.get(i.min(tk.len() - 1))?.as_f64()?;
                            let (e, s) = (est[i].as_f64()?, sd[i].as_f64()?);
                            (s > 0.0).then(|| ((e - truth) / s).abs())
                        })
                        .fold(0.0, f64::max);
                    rows.push(Row { quantity: "kernel worst |error| / bootstrap sd".into(), source: name, estimate: worst, stderr: None, truth: None });
                }
            }
            _ => {}
        }
    }
    let body = json!({
        "reports": found.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        "ground_truth": truth.is_some(),
        "rows": rows.iter().map(Row::to_json).collect::<Vec<_>>(),
    });
    out.json("summary.json", &merge(header("report", inv, &cfg), body))?;

    let mut text = format!("{:<38} {:<16} {:>10} {:>10} {:>10} {:>8}\n", "quantity", "source", "estimate", "stderr", "truth", "z");
    for r in &rows {
        text.push_str(&format!(
            "{:<38} {:<16} {:>10.5} {:>10} {:>10} {:>8}\n",
            r.quantity,
            r.source,
            r.estimate,
            opt(r.stderr),
            opt(r.truth),
            r.z().map_or("-".into(), |z| format!("{z:.2}"))
        ));
    }
    use std::io::Write;
    let mut w = out.create("summary.txt")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(Status::Done)
}
