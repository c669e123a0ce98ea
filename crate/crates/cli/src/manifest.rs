use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tlsdetect::io::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory (or to the config for external inputs).
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    #[serde(default)]
    pub inputs: Vec<FileRecord>,
    #[serde(default)]
    pub outputs: Vec<FileRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Forward slashes, so manifests do not depend on the platform.
pub fn portable(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

pub fn file_record(root: &Path, rel: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(root.join(rel)).with_context(|| format!("reading {}", root.join(rel).display()))?;
    Ok(FileRecord { path: portable(rel), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

impl RunManifest {
    pub fn new(config_sha256: String, seed: Option<u64>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: FORMAT_VERSION,
            config_sha256,
            seed,
            stages: BTreeMap::new(),
        }
    }

    /// The manifest in `out`, or a fresh one when none exists. An existing
    /// manifest from another config or seed is an error.
    pub fn open(out: &Path, config_sha256: &str, seed: Option<u64>) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_sha256.to_string(), seed));
        }
        let m: RunManifest = read_json(&path)?;
        if m.config_sha256 != config_sha256 || m.seed != seed {
            bail!(crate::config::invalid(format!(
                "{} belongs to a different config or seed; use a fresh output directory",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST_FILE), self)?;
        Ok(())
    }

    /// Outputs of `stage` under `prefix`, after checking each checksum.
    pub fn verified_outputs(&self, out: &Path, stage: &str, prefix: &str) -> Result<Vec<PathBuf>> {
        let Some(record) = self.stages.get(stage) else {
            bail!(crate::config::invalid(format!("no `{stage}` stage in the manifest; run `tlsdetect {stage}` first")));
        };
        let mut paths = Vec::new();
        for f in record.outputs.iter().filter(|f| f.path.starts_with(prefix)) {
            let now = file_record(out, Path::new(&f.path))?;
            if now.sha256 != f.sha256 {
                bail!(crate::config::invalid(format!("{} changed since `{stage}` wrote it", f.path)));
            }
            paths.push(out.join(&f.path));
        }
        Ok(paths)
    }

    pub fn output_record(&self, stage: &str, path: &str) -> Option<&FileRecord> {
        self.stages.get(stage)?.outputs.iter().find(|f| f.path == path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn tampered_outputs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        std::fs::create_dir_all(out.join("simulate")).unwrap();
        std::fs::write(out.join("simulate/a.csv"), "x").unwrap();
        let mut m = RunManifest::new("h".into(), Some(1));
        let rec = file_record(out, Path::new("simulate/a.csv")).unwrap();
        m.stages.insert("simulate".into(), StageRecord { outputs: vec![rec], ..Default::default() });
        m.save(out).unwrap();
        let m = RunManifest::open(out, "h", Some(1)).unwrap();
        assert_eq!(m.verified_outputs(out, "simulate", "simulate/").unwrap().len(), 1);
        std::fs::write(out.join("simulate/a.csv"), "y").unwrap();
        assert!(m.verified_outputs(out, "simulate", "simulate/").is_err());
        assert!(m.verified_outputs(out, "detect", "").is_err());
        assert!(RunManifest::open(out, "other", Some(1)).is_err());
    }
}
