//! Provenance manifest written next to every artifact.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use predmpc_core::{PipelineConfig, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Artifact> {
        Ok(Artifact { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    /// Configuration after command-line overrides, as TOML.
    pub effective_config: String,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    /// Hash over the effective config and every input hash.
    pub inputs_sha256: String,
    pub outputs: Vec<Artifact>,
    pub summary: serde_json::Value,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Manifest path for an artifact: `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub struct ManifestBuilder<'a> {
    pub command: &'a str,
    pub config_path: Option<&'a Path>,
    pub config: &'a PipelineConfig,
    pub inputs: Vec<&'a Path>,
    pub outputs: Vec<&'a Path>,
    pub summary: serde_json::Value,
}

impl ManifestBuilder<'_> {
    pub fn write(self, to: &Path) -> Result<Manifest> {
        let effective_config = self.config.to_toml_string();
        let inputs = self.inputs.iter().map(|p| Artifact::of(p)).collect::<Result<Vec<_>>>()?;
        let mut combined = effective_config.clone();
        for a in &inputs {
            combined.push_str(&a.sha256);
        }
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: "predmpc",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: self.config_path.map(Path::to_path_buf),
            effective_config,
            seed: self.config.seed,
            inputs_sha256: sha256_hex(combined.as_bytes()),
            inputs,
            outputs: self.outputs.iter().map(|p| Artifact::of(p)).collect::<Result<Vec<_>>>()?,
            summary: self.summary,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        fs::write(to, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}
