use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunArtifacts;
use crate::measurement::{export, ExportError, ExportFormat};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Summary of a run directory. Holds no timestamps or absolute paths, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub platform: String,
    pub start_episode: u32,
    /// Exclusive; the first episode not run.
    pub end_episode: u32,
    pub episodes_per_day: u32,
    pub complete: bool,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Exports `formats` and writes `manifest.json` listing them with hashes.
/// `error` records why a run ended early.
pub fn write_outputs(
    artifacts: &RunArtifacts,
    out_dir: &Path,
    formats: &[ExportFormat],
    error: Option<String>,
) -> Result<RunManifest, ExportError> {
    let written = export(artifacts, out_dir, formats)?;
    let mut entries = Vec::with_capacity(written.len());
    for rel in written {
        let full = out_dir.join(&rel);
        let sha256 = sha256_file(&full).map_err(|source| ExportError::Io { path: full.clone(), source })?;
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        entries.push(ArtifactEntry { path, sha256 });
    }
    let manifest = RunManifest {
        config_hash: artifacts.config.content_hash(),
        seed: artifacts.config.seed,
        backend: artifacts.backend_identity.clone(),
        platform: artifacts.platform_identity.clone(),
        start_episode: artifacts.analytics.first().map_or(artifacts.next_episode, |a| a.episode),
        end_episode: artifacts.next_episode,
        episodes_per_day: artifacts.config.episodes_per_day,
        complete: artifacts.is_complete() && error.is_none(),
        error,
        artifacts: entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| ExportError::Io { path, source })?;
    Ok(manifest)
}

/// Recomputes every listed artifact hash; returns the mismatches.
pub fn verify_manifest(out_dir: &Path) -> Result<Vec<String>, ExportError> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| ExportError::Io { path: path.clone(), source })?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| ExportError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let mut bad = Vec::new();
    for entry in &manifest.artifacts {
        match sha256_file(&out_dir.join(&entry.path)) {
            Ok(h) if h == entry.sha256 => {}
            Ok(_) => bad.push(format!("{}: hash mismatch", entry.path)),
            Err(e) => bad.push(format!("{}: {e}", entry.path)),
        }
    }
    Ok(bad)
}
