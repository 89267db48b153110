use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Provenance record written next to every artifact set: which config
/// (by content hash) and seed produced which files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub deterministic: bool,
    pub tool_version: String,
    pub artifacts: Vec<String>,
}

pub fn config_hash(run: &RunConfig) -> Result<String> {
    let canonical = toml::to_string(run)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_manifest(
    command: &str,
    run: &RunConfig,
    artifacts: &[PathBuf],
    out_dir: &Path,
) -> Result<PathBuf> {
    let manifest = Manifest {
        command: command.to_owned(),
        config_sha256: config_hash(run)?,
        seed: run.seed,
        deterministic: run.deterministic,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        artifacts: artifacts
            .iter()
            .map(|p| {
                p.strip_prefix(out_dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed = 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn manifest_lists_relative_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunConfig::default();
        let artifacts = vec![dir.path().join("metrics.csv")];
        let path = write_manifest("eval", &run, &artifacts, dir.path()).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(manifest.artifacts, vec!["metrics.csv".to_owned()]);
    }
}
