//! Line-oriented JSON helpers shared by every file format in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads a JSONL file, yielding `(line_number, value)` for every non-blank
/// line. Line numbers are 1-based.
pub fn read_values(path: &Path) -> Result<Vec<(usize, serde_json::Value)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("invalid JSON: {e}")))?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Reads a JSONL file of homogeneous records.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_values(path)?
        .into_iter()
        .map(|(line, value)| from_value(path, line, value))
        .collect()
}

pub(crate) fn from_value<T: DeserializeOwned>(
    path: &Path,
    line: usize,
    value: serde_json::Value,
) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::parse(path, line, e.to_string()))
}

/// Writes one JSON document per line with LF endings.
pub fn write<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for record in records {
        write_line(&mut w, path, record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub(crate) fn write_line<W: Write, T: Serialize>(w: &mut W, path: &Path, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Writes a pretty-printed JSON document followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}
