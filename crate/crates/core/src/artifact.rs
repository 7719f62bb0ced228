//! Versioned JSON snapshots.
//!
//! Every on-disk artifact is wrapped in a small envelope naming its kind and
//! format version, so a stale or mismatched file fails loudly instead of
//! deserializing into nonsense.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    artifact: String,
    version: u32,
    payload: T,
}

/// Writes `value` at `path` under a `{kind, version}` envelope.
pub fn save_json<T: Serialize>(path: &Path, kind: &str, version: u32, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let envelope = Envelope {
        artifact: kind.to_string(),
        version,
        payload: value,
    };
    serde_json::to_writer(BufWriter::new(file), &envelope)?;
    Ok(())
}

/// Reads a `{kind, version}` envelope back, rejecting mismatches.
pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let envelope: Envelope<T> = serde_json::from_reader(BufReader::new(file))?;
    if envelope.artifact != kind || envelope.version != version {
        return Err(Error::BadArtifact {
            path: path.display().to_string(),
            expected: format!("{kind} v{version}"),
            found: format!("{} v{}", envelope.artifact, envelope.version),
        });
    }
    Ok(envelope.payload)
}
