//! Output files. Traces are named by the SHA-256 of their contents, so
//! writing the same trace twice is idempotent.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn content_name(contents: &str) -> String {
    format!("{}.jsonl", hex::encode(Sha256::digest(contents.as_bytes())))
}

/// Writes `contents` to `dir/<hash>.jsonl` and returns the path.
pub fn write_addressed(dir: &Path, contents: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(content_name(contents));
    if !path.exists() {
        fs::write(&path, contents)?;
    }
    Ok(path)
}

/// Appends one JSON line to `path`.
pub fn append_line(path: &Path, line: &serde_json::Value) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")
}
