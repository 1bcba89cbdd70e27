//! Versioned line-delimited JSON container shared by the corpus and
//! corrector files: a mandatory header line `{"format": .., "version": .., ..}`
//! followed by one record per line.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub fn write_header<W: Write>(
    w: &mut W,
    format: &str,
    version: u32,
    meta: Map<String, Value>,
) -> Result<()> {
    let mut header = Map::new();
    header.insert("format".into(), Value::from(format));
    header.insert("version".into(), Value::from(version));
    header.extend(meta);
    serde_json::to_writer(&mut *w, &Value::Object(header))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_record<W: Write, T: Serialize>(w: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads and checks the header line, returning its remaining fields.
pub fn read_header<R: BufRead>(
    lines: &mut std::io::Lines<R>,
    format: &'static str,
    version: u32,
) -> Result<Map<String, Value>> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{format}: missing header line")))??;
    let mut header: Map<String, Value> = serde_json::from_str(&line)
        .map_err(|e| Error::Format(format!("{format}: bad header: {e}")))?;
    match header.remove("format") {
        Some(Value::String(f)) if f == format => {}
        other => {
            return Err(Error::Format(format!(
                "expected format {format:?}, found {other:?}"
            )))
        }
    }
    let found = header
        .remove("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format(format!("{format}: header lacks a version")))?;
    if found != version as u64 {
        return Err(Error::Version {
            what: format,
            found: found as u32,
            expected: version,
        });
    }
    Ok(header)
}

/// Parses the next non-empty record line, if any.
pub fn next_record<R: BufRead, T: DeserializeOwned>(
    lines: &mut std::io::Lines<R>,
    what: &str,
) -> Result<Option<T>> {
    for (n, line) in lines.by_ref().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str(&line)
            .map(Some)
            .map_err(|e| Error::Format(format!("{what}: record {}: {e}", n + 1)));
    }
    Ok(None)
}
