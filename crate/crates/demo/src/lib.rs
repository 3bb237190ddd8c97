//! Browser bindings. Three operations back the page in `www/`: the
//! propagator relaxation curve, the modified-propagator kernel, and a small
//! simulate-then-deconvolve run that shows kernel recovery against truth.

use metaimpact::deconvolution::{deconvolve, fit_kernel_asymptote, modified_propagator, AsymptoteOptions, DeconvConfig};
use metaimpact::impact::propagator_decay;
use metaimpact::simulator::{simulate, KernelSpec, SimConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: metaimpact::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `I_prop(z)` at `points` evenly spaced z in `[0, z_max]`.
#[wasm_bindgen]
pub fn relaxation_curve(beta: f64, z_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    if points < 2 || !(z_max > 0.0) {
        return Err(JsError::new("need at least 2 points and z_max > 0"));
    }
    (0..points)
        .map(|k| propagator_decay(z_max * k as f64 / (points - 1) as f64, beta).map_err(js_err))
        .collect()
}

/// Normalized cumulative kernel model at `tau = 0..=horizon`.
#[wasm_bindgen]
pub fn kernel_model(i_inf: f64, b: f64, beta: f64, horizon: usize) -> Vec<f64> {
    (0..=horizon).map(|t| modified_propagator(t as f64, i_inf, b, beta)).collect()
}

/// Simulate a panel whose kernel follows the modified propagator with
/// asymptote `i_inf`, deconvolve it, and return a JSON object with the true
/// and estimated normalized kernels, bootstrap bands, the bare response and
/// the one-parameter asymptote fit.
#[wasm_bindgen]
pub fn kernel_oracle(n_stocks: usize, n_days: usize, seed: u64, i_inf: f64, replicates: usize) -> Result<String, JsError> {
    const HORIZON: usize = 20;
    let cfg = SimConfig {
        n_stocks,
        n_days,
        seed,
        kernel: KernelSpec::ModifiedPropagator { amplitude: 0.5, i_inf, b: 0.038, beta: 0.22, horizon: HORIZON },
        ..Default::default()
    };
    let sim = simulate(&cfg).map_err(js_err)?;
    let dc = DeconvConfig { horizon: HORIZON, replicates, seed, ..Default::default() };
    let out = deconvolve(&sim.panel, &dc).map_err(js_err)?;
    let k = &out.kernel;
    let errors = k.bands.as_ref().map_or_else(|| k.normalized_se.clone(), |b| b.std.clone());
    let fit = fit_kernel_asymptote(&k.normalized, Some(&errors), &AsymptoteOptions::default());
    let body = json!({
        "truth": sim.truth.kernel_normalized,
        "estimate": k.normalized,
        "lo": k.bands.as_ref().map(|b| &b.p05),
        "hi": k.bands.as_ref().map(|b| &b.p95),
        "response": out.response.normalized,
        "metaorders": sim.panel.metaorders().len(),
        "fit": match fit {
            Ok(f) => json!({ "i_inf": f.i_inf, "stderr": f.i_inf_stderr }),
            Err(e) => json!({ "error": e.to_string() }),
        },
    });
    Ok(body.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relaxation_starts_at_one_and_decays() {
        let c = relaxation_curve(0.22, 10.0, 11).unwrap();
        assert_eq!(c[0], 1.0);
        assert!(c.windows(2).all(|w| w[1] < w[0]));
        assert!((c[1] - (2f64.powf(0.78) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kernel_model_is_normalized() {
        let k = kernel_model(0.42, 0.038, 0.22, 50);
        assert_eq!(k.len(), 51);
        assert_eq!(k[0], 1.0);
        assert!(k[50] > 0.42 && k[50] < 1.0);
    }

    #[test]
    fn oracle_returns_matching_lengths() {
        let v: serde_json::Value = serde_json::from_str(&kernel_oracle(20, 200, 1, 0.6, 10).unwrap()).unwrap();
        let n = v["estimate"].as_array().unwrap().len();
        assert_eq!(n, 21);
        assert_eq!(v["truth"].as_array().unwrap().len(), n);
        assert_eq!(v["hi"].as_array().unwrap().len(), n);
        assert_eq!(v["estimate"][0], 1.0);
    }
}
