use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tlsdetect::detector::{NoiseCalibrationOptions, ThresholdOptions};
use tlsdetect::io::read_toml;
use tlsdetect::physics::{bias_plan, Scenario};
use tlsdetect::stats::{CutRule, DEFAULT_ALPHA};

/// Bias sweep shared by every simulated resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "start_mA")]
    pub start_ma: f64,
    #[serde(rename = "end_mA")]
    pub end_ma: f64,
    /// Number of bias points; alternatively bound the step with `max_step_kappa`.
    #[serde(default)]
    pub count: Option<usize>,
    /// Largest frequency step between biases, in linewidths.
    #[serde(default)]
    pub max_step_kappa: Option<f64>,
    /// Window width in linewidths.
    #[serde(default = "default_span")]
    pub span_kappa: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
}

fn default_span() -> f64 {
    12.0
}

fn default_points() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSettings {
    /// Inclusive bias-index range used for noise calibration.
    pub calibration_interval: (usize, usize),
    #[serde(default)]
    pub noise: NoiseCalibrationOptions,
    #[serde(default)]
    pub threshold: ThresholdOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateSettings {
    /// Morphology table, relative to the config file.
    #[serde(default)]
    pub morphology: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub significance: f64,
    /// Fixed ridge penalty; chosen by leave-one-out when absent.
    #[serde(default)]
    pub ridge_alpha: Option<f64>,
    #[serde(default)]
    pub cut_rule: CutRule,
    #[serde(default = "default_repeats")]
    pub permutation_repeats: usize,
    /// Treatments to pool, e.g. `{ "A+A'" = ["A", "A'"] }`.
    #[serde(default)]
    pub pool: std::collections::BTreeMap<String, Vec<String>>,
}

impl Default for CorrelateSettings {
    fn default() -> Self {
        CorrelateSettings {
            morphology: None,
            significance: DEFAULT_ALPHA,
            ridge_alpha: None,
            cut_rule: CutRule::default(),
            permutation_repeats: default_repeats(),
            pool: Default::default(),
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_repeats() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorEntry {
    pub id: String,
    pub treatment: String,
    /// Scenario file for simulated data.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Directory of measured trace CSVs, read in file-name order.
    #[serde(default)]
    pub traces: Option<PathBuf>,
    /// Junction area (um^2).
    pub area_um2: f64,
    /// Extra bias-index ranges to exclude (collisions).
    #[serde(default)]
    pub exclusions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub detect: DetectSettings,
    #[serde(default)]
    pub correlate: CorrelateSettings,
    #[serde(default)]
    pub resonators: Vec<ResonatorEntry>,
}

/// A config with its paths resolved and scenarios loaded.
#[derive(Debug, Clone, Serialize)]
pub struct LoadedConfig {
    #[serde(skip)]
    pub base_dir: PathBuf,
    pub config: PipelineConfig,
    pub scenarios: Vec<Option<Scenario>>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: PipelineConfig = read_toml(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut scenarios = Vec::with_capacity(config.resonators.len());
        for r in &config.resonators {
            scenarios.push(match &r.scenario {
                Some(p) => Some(
                    tlsdetect::io::read_scenario(&base_dir.join(p))
                        .with_context(|| format!("resonator `{}`: scenario {}", r.id, p.display()))?,
                ),
                None => None,
            });
        }
        let loaded = LoadedConfig { base_dir, config, scenarios };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.resonators.is_empty() {
            bail!(invalid("config lists no resonators"));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &c.resonators {
            if r.id.is_empty() || r.id.contains(['/', '\\']) || r.id.starts_with('.') {
                bail!(invalid(format!("resonator id `{}` is not a plain name", r.id)));
            }
            if !ids.insert(&r.id) {
                bail!(invalid(format!("duplicate resonator id `{}`", r.id)));
            }
            if r.scenario.is_some() == r.traces.is_some() {
                bail!(invalid(format!("resonator `{}` needs exactly one of `scenario` or `traces`", r.id)));
            }
            if !(r.area_um2 > 0.0) || !r.area_um2.is_finite() {
                bail!(invalid(format!("resonator `{}`: area_um2 must be positive", r.id)));
            }
            if let Some(t) = &r.traces {
                if !self.resolve(t).is_dir() {
                    bail!(invalid(format!("resonator `{}`: trace directory {} not found", r.id, t.display())));
                }
            }
        }
        if self.scenarios.iter().any(Option::is_some) {
            if c.seed.is_none() {
                bail!(invalid("synthetic runs need a `seed`"));
            }
            let Some(s) = &c.sweep else {
                bail!(invalid("synthetic runs need a [sweep] table"));
            };
            if s.count.is_some() == s.max_step_kappa.is_some() {
                bail!(invalid("[sweep] needs exactly one of `count` or `max_step_kappa`"));
            }
            if !(s.span_kappa > 0.0) || s.n_points < tlsdetect::fitting::MIN_TRACE_POINTS {
                bail!(invalid("[sweep] span_kappa must be positive and n_points at least 16"));
            }
        }
        if !(c.correlate.significance > 0.0 && c.correlate.significance < 1.0) {
            bail!(invalid("correlate.significance must lie in (0, 1)"));
        }
        if let Some(m) = &c.correlate.morphology {
            if !self.resolve(m).is_file() {
                bail!(invalid(format!("morphology file {} not found", m.display())));
            }
        }
        Ok(())
    }

    /// Bias currents for a simulated resonator.
    pub fn bias_currents(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let s = self.config.sweep.as_ref().expect("validated");
        match (s.count, s.max_step_kappa) {
            (Some(n), _) => {
                if n < 2 {
                    bail!(invalid("[sweep] count must be at least 2"));
                }
                Ok((0..n).map(|k| s.start_ma + (s.end_ma - s.start_ma) * k as f64 / (n - 1) as f64).collect())
            }
            (None, Some(step)) => {
                let kappa = scenario.tuned_params(s.start_ma).kappa();
                Ok(bias_plan(&scenario.flux, s.start_ma, s.end_ma, step * kappa)?)
            }
            (None, None) => unreachable!("validated"),
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> tlsdetect::Error {
    tlsdetect::Error::InvalidParameter(msg.into())
}
