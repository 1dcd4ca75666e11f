use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::RunArtifacts;
use crate::SimError;

pub const CHECKPOINT_FORMAT: &str = "mastosim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format: &'static str,
    version: u32,
    sha256: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format: String,
    version: u32,
    sha256: String,
    payload: Box<RawValue>,
}

/// Serializes the run state under a versioned envelope whose `sha256`
/// covers the exact payload text. The file is replaced atomically.
pub fn write_checkpoint(path: &Path, artifacts: &RunArtifacts) -> Result<(), SimError> {
    let payload = serde_json::to_string(artifacts).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    let sha256 = hex::encode(Sha256::digest(payload.as_bytes()));
    let raw = RawValue::from_string(payload).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    let envelope = EnvelopeOut { format: CHECKPOINT_FORMAT, version: CHECKPOINT_VERSION, sha256, payload: &raw };
    let text = serde_json::to_string(&envelope).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| SimError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| SimError::io(format!("renaming to {}", path.display()), e))
}

pub fn read_checkpoint(path: &Path) -> Result<RunArtifacts, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(format!("reading {}", path.display()), e))?;
    let envelope: EnvelopeIn =
        serde_json::from_str(&text).map_err(|e| SimError::Checkpoint(format!("{}: {e}", path.display())))?;
    if envelope.format != CHECKPOINT_FORMAT {
        return Err(SimError::Checkpoint(format!("not a checkpoint (format `{}`)", envelope.format)));
    }
    if envelope.version != CHECKPOINT_VERSION {
        return Err(SimError::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            envelope.version
        )));
    }
    let actual = hex::encode(Sha256::digest(envelope.payload.get().as_bytes()));
    if actual != envelope.sha256 {
        return Err(SimError::Checkpoint(format!(
            "integrity check failed: payload hashes to {actual}, header says {}",
            envelope.sha256
        )));
    }
    serde_json::from_str(envelope.payload.get()).map_err(|e| SimError::Checkpoint(format!("payload: {e}")))
}
