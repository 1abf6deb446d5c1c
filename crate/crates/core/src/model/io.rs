//! Versioned JSON model files. Layout is described in `docs/model-format.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GenerativeModel;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct FileRef<'a> {
    format_version: u32,
    model: &'a GenerativeModel,
}

#[derive(Deserialize)]
struct FileOwned {
    model: GenerativeModel,
}

pub fn to_json(model: &GenerativeModel) -> Result<String> {
    serde_json::to_string_pretty(&FileRef {
        format_version: FORMAT_VERSION,
        model,
    })
    .map_err(|e| Error::Corrupt(format!("cannot serialize model: {e}")))
}

pub fn from_json(text: &str) -> Result<GenerativeModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let file: FileOwned = serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
    let model = file.model;
    model
        .validate()
        .and_then(|_| model.network.validate())
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(model)
}

/// Atomic write: temporary file in the target directory, then rename.
pub fn save(model: &GenerativeModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::atomic_write(path, to_json(model)?.as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<GenerativeModel> {
    from_json(&fs::read_to_string(path)?)
}
