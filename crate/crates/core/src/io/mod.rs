//! File formats: CSV tables, JSON documents and TOML scenarios, with atomic
//! writes and row-level error reports.

mod tables;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayes::{DensityEstimate, DetectorRates, InferenceInput, PosteriorDensity};
use crate::error::{Error, Result};
use crate::physics::Scenario;

pub use tables::*;

/// Write `bytes` to `path` via a temporary file in the same directory and a
/// rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1) as u64).unwrap_or(0);
        Error::Record { path: path.to_path_buf(), line, message: e.message().to_string() }
    })
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let scenario: Scenario = read_toml(path)?;
    scenario.validate()?;
    Ok(scenario)
}

/// What the inference step needs from a detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceFile {
    pub n_detected: usize,
    #[serde(rename = "B")]
    pub n_bins: usize,
    /// Base single-trace error rates, when known.
    #[serde(default)]
    pub fp: Option<f64>,
    #[serde(default, rename = "fn")]
    pub fn_: Option<f64>,
    /// Per-bin rates.
    #[serde(default, rename = "FP")]
    pub false_pos: Option<f64>,
    #[serde(default, rename = "FN")]
    pub false_neg: Option<f64>,
    /// Swept frequency range (GHz).
    pub delta_f_ghz: f64,
    /// Junction area (um^2).
    pub area_um2: f64,
}

impl InferenceFile {
    pub fn new(input: &InferenceInput, delta_f_ghz: f64, area_um2: f64) -> Self {
        let known = |v: f64| v.is_finite().then_some(v);
        InferenceFile {
            n_detected: input.n_detected,
            n_bins: input.n_bins,
            fp: known(input.rates.fp),
            fn_: known(input.rates.fn_),
            false_pos: Some(input.rates.false_pos),
            false_neg: Some(input.rates.false_neg),
            delta_f_ghz,
            area_um2,
        }
    }

    pub fn to_input(&self) -> Result<InferenceInput> {
        let (Some(false_pos), Some(false_neg)) = (self.false_pos, self.false_neg) else {
            return Err(Error::InvalidInput(
                "detector rates FP and FN are missing; run `detect` first or add them to the inference file".into(),
            ));
        };
        let mut rates = DetectorRates::from_bin_rates(false_pos, false_neg)?;
        rates.fp = self.fp.unwrap_or(f64::NAN);
        rates.fn_ = self.fn_.unwrap_or(f64::NAN);
        let input = InferenceInput { n_detected: self.n_detected, n_bins: self.n_bins, rates };
        input.validate()?;
        Ok(input)
    }
}

/// Density estimate of one resonator as written by `infer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    /// /GHz/um^2.
    pub rho: f64,
    pub ci68: (f64, f64),
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub lambda_star: f64,
    pub mean_count: f64,
    pub count_ci68: (f64, f64),
    pub n_detected: usize,
    #[serde(rename = "B")]
    pub n_bins: usize,
    pub delta_f_ghz: f64,
    pub area_um2: f64,
}

impl EstimateFile {
    pub fn new(input: &InferenceInput, post: &PosteriorDensity, est: &DensityEstimate) -> Self {
        EstimateFile {
            rho: est.rho,
            ci68: est.ci68,
            sigma_plus: est.sigma_plus(),
            sigma_minus: est.sigma_minus(),
            lambda_star: post.lambda_star,
            mean_count: post.mean_count,
            count_ci68: post.ci68,
            n_detected: input.n_detected,
            n_bins: input.n_bins,
            delta_f_ghz: est.delta_f,
            area_um2: est.area,
        }
    }
}

/// One file format, for `--schema`.
#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub name: &'static str,
    pub kind: &'static str,
    pub columns: &'static [&'static str],
    pub description: &'static str,
}

pub const SCHEMAS: &[Schema] = &[
    Schema {
        name: "traces",
        kind: "csv",
        columns: TRACE_COLUMNS,
        description: "One complex S21 sweep at a single bias current; one file per bias point.",
    },
    Schema {
        name: "fits",
        kind: "csv",
        columns: FIT_COLUMNS,
        description: "Hanger fit per trace. Qe is |Q_e|; theta in rad; converged is true/false.",
    },
    Schema {
        name: "exclusions",
        kind: "csv",
        columns: EXCLUSION_COLUMNS,
        description: "Excluded bias-index ranges (inclusive); reason is collision, past-maximum or manual.",
    },
    Schema {
        name: "residuals",
        kind: "csv",
        columns: RESIDUAL_COLUMNS,
        description: "Residual metric on the uniform kappa/4 shift axis; excluded points carry 0.",
    },
    Schema {
        name: "events",
        kind: "csv",
        columns: EVENT_COLUMNS,
        description: "Detected TLS peaks after merging.",
    },
    Schema {
        name: "posterior",
        kind: "csv",
        columns: POSTERIOR_COLUMNS,
        description: "Posterior probability of each true TLS count.",
    },
    Schema {
        name: "densities",
        kind: "csv",
        columns: DENSITY_COLUMNS,
        description: "Per-resonator TLS density (/GHz/um^2) with its 68.27% credible bounds.",
    },
    Schema {
        name: "morphology",
        kind: "csv",
        columns: MORPHOLOGY_COLUMNS,
        description: "One row per device: microstructure metrics (nm) and TLS density (/GHz/um^2).",
    },
    Schema {
        name: "inference",
        kind: "json",
        columns: &["n_detected", "B", "fp", "fn", "FP", "FN", "delta_f_ghz", "area_um2"],
        description: "Input of `infer`. fp/fn are optional base rates; FP/FN are per-bin rates.",
    },
    Schema {
        name: "estimate",
        kind: "json",
        columns: &[
            "rho", "ci68", "sigma_plus", "sigma_minus", "lambda_star", "mean_count", "count_ci68", "n_detected",
            "B", "delta_f_ghz", "area_um2",
        ],
        description: "Output of `infer`: density, credible interval and empirical-Bayes rate.",
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{density, posterior, true_rates};

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn inference_file_round_trip() {
        let input = InferenceInput { n_detected: 3, n_bins: 40, rates: true_rates(0.02, 0.1).unwrap() };
        let file = InferenceFile::new(&input, 0.5, 12.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inference.json");
        write_json(&path, &file).unwrap();
        let back: InferenceFile = read_json(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_input().unwrap(), input);

        let post = posterior(&input).unwrap();
        let est = density(&post, 0.5, 12.0).unwrap();
        let e = EstimateFile::new(&input, &post, &est);
        assert_eq!(e.rho, est.rho);
        assert!(e.ci68.0 <= e.rho && e.rho <= e.ci68.1);
    }

    #[test]
    fn missing_rates_give_a_hint() {
        let text = r#"{"n_detected": 1, "B": 10, "delta_f_ghz": 0.1, "area_um2": 1.0}"#;
        let file: InferenceFile = serde_json::from_str(text).unwrap();
        let err = file.to_input().unwrap_err().to_string();
        assert!(err.contains("run `detect` first"), "{err}");
    }

    #[test]
    fn malformed_json_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\n\"n_detected\": 1,\n\"B\": oops\n}").unwrap();
        match read_json::<InferenceFile>(&path) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scenario_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(
            &path,
            r#"
noise_sigma = 0.01

[resonator]
f_r = 7.0
q_loaded = 2000.0
q_ext_mag = 4000.0
theta = 0.1
amplitude = 1.0
alpha = 0.0
phase_slope = 0.0
phase_offset = 0.0

[flux]
f_bare = 7.0
n_islands = 70
flux_per_current = 1.0

[[defects]]
f_tls = 6.9
g = 0.002
gamma = 0.003
temperature = 0.02
"#,
        )
        .unwrap();
        let s = read_scenario(&path).unwrap();
        assert_eq!(s.defects.len(), 1);
        assert_eq!(s.rng_seed, 0);

        std::fs::write(&path, "noise_sigma = \"loud\"\n").unwrap();
        match read_scenario(&path) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
