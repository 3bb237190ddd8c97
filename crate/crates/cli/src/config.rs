//! Run configuration: one JSON file with a block per module. Every block and
//! every field is optional; command-line flags override the file.

use std::path::Path;

use metaimpact::datamodel::CleaningConfig;
use metaimpact::deconvolution::{DeconvConfig, FitMode, DEFAULT_PROPAGATOR_BETA, DEFAULT_TRUNCATION};
use metaimpact::flowstats::GammaMode;
use metaimpact::impact::Clock;
use metaimpact::simulator::SimConfig;
use metaimpact::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Wins over the per-module seeds below; `--seed` wins over it.
    pub seed: Option<u64>,
    pub simulate: SimConfig,
    pub cleaning: CleaningConfig,
    pub estimate: EstimateParams,
    pub decay: DecayParams,
    pub deconvolve: DeconvConfig,
    pub asymptote: AsymptoteParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateParams {
    /// Equal-population phi bins of the impact curves.
    pub n_bins: usize,
    pub ratio_bins: usize,
    /// Window of the log-log square-root fit.
    pub slope_phi_min: f64,
    pub slope_phi_max: f64,
    pub decay_bins: usize,
    pub decay_z_max: Option<f64>,
    pub max_lag: usize,
    pub gamma: GammaMode,
    pub next_close_bins: usize,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self {
            n_bins: 20,
            ratio_bins: 20,
            slope_phi_min: 1e-3,
            slope_phi_max: 1e-1,
            decay_bins: 20,
            decay_z_max: None,
            max_lag: 50,
            gamma: GammaMode::default(),
            next_close_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayParams {
    pub n_bins: usize,
    pub clock: Clock,
    pub z_max: Option<f64>,
    /// Next-day scale; taken from the lag-1 flow autocorrelation when absent.
    pub zeta: Option<f64>,
    /// Upper z of each plateau fit on the same-day curve.
    pub plateau_windows: Vec<f64>,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self { n_bins: 20, clock: Clock::Volume, z_max: None, zeta: None, plateau_windows: vec![2.0, 20.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoteParams {
    pub modes: Vec<FitMode>,
    pub b_fixed: f64,
    pub beta_fixed: f64,
}

impl Default for AsymptoteParams {
    fn default() -> Self {
        Self { modes: FitMode::ALL.to_vec(), b_fixed: DEFAULT_TRUNCATION, beta_fixed: DEFAULT_PROPAGATOR_BETA }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolve the master seed (flag, then file, then the simulator's own
    /// seed) and push it into every module that draws random numbers.
    pub fn apply_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(self.simulate.seed);
        self.seed = Some(seed);
        self.simulate.seed = seed;
        self.deconvolve.seed = seed;
        seed
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.estimate;
        if e.n_bins == 0 || e.ratio_bins == 0 || e.decay_bins < 2 || e.next_close_bins < 2 {
            return Err(Error::Config("estimate bin counts must be positive (decay and next-close at least 2)".into()));
        }
        if !(e.slope_phi_min > 0.0 && e.slope_phi_min < e.slope_phi_max) {
            return Err(Error::Config("slope window needs 0 < slope_phi_min < slope_phi_max".into()));
        }
        if e.max_lag == 0 {
            return Err(Error::Config("max_lag must be positive".into()));
        }
        if self.decay.n_bins < 2 {
            return Err(Error::Config("decay.n_bins must be at least 2".into()));
        }
        if let Some(z) = self.decay.zeta {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!("decay.zeta must be positive, got {z}")));
            }
        }
        if self.asymptote.modes.is_empty() {
            return Err(Error::Config("asymptote.modes is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_optional_and_unknown_keys_rejected() {
        let c: RunConfig = serde_json::from_str(r#"{"deconvolve": {"horizon": 10}}"#).unwrap();
        assert_eq!(c.deconvolve.horizon, 10);
        assert_eq!(c.estimate, EstimateParams::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"estimat": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"estimate": {"bins": 3}}"#).is_err());
    }

    #[test]
    fn seed_precedence() {
        let mut c = RunConfig::default();
        c.simulate.seed = 5;
        assert_eq!(c.apply_seed(None), 5);
        c.seed = Some(9);
        assert_eq!(c.apply_seed(None), 9);
        assert_eq!(c.apply_seed(Some(11)), 11);
        assert_eq!((c.simulate.seed, c.deconvolve.seed, c.seed), (11, 11, Some(11)));
    }

    #[test]
    fn resolved_config_roundtrips() {
        let mut c = RunConfig::default();
        c.apply_seed(Some(3));
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
