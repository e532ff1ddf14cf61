//! Atomic file writes and JSON artifact helpers.
//!
//! Every artifact write goes through a temp-file-then-rename so readers
//! never observe a half-written document.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to `path` atomically: the data lands in a temporary
/// file in the same directory and is renamed into place. Parent
/// directories are created as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    if !parent.as_os_str().is_empty() {
        fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("path {} has no file name", path.display())))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_string(path: &Path, s: &str) -> Result<()> {
    atomic_write(path, s.as_bytes())
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Serializes a value as pretty-printed JSON (with a trailing newline)
/// and writes it atomically.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))?;
    json.push('\n');
    write_string(path, &json)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: Some(e.line()),
        message: e.to_string(),
    })
}
