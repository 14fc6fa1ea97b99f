//! JSONL tag cache: a header line naming the tagger kind and configuration
//! hash, then one annotation per line in instance-id order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, ErrorKind, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TagAnnotation, TagError};

const CACHE_FORMAT: &str = "finrel-tag-cache";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Disabled,
    Missing,
    Hit,
    Stale,
    Corrupt,
    Incomplete,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    tagger: String,
    config_hash: String,
}

pub(crate) enum CacheReadError {
    Stale,
    Corrupt(String),
}

pub(crate) fn read_cache(
    path: &Path,
    kind: &str,
    config_hash: &str,
) -> Result<Option<BTreeMap<String, TagAnnotation>>, CacheReadError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CacheReadError::Corrupt(e.to_string())),
    };
    let mut lines = text.lines();
    let header: Header = lines
        .next()
        .ok_or_else(|| CacheReadError::Corrupt("empty file".into()))
        .and_then(|line| serde_json::from_str(line).map_err(|e| CacheReadError::Corrupt(format!("header: {e}"))))?;
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(CacheReadError::Corrupt("unrecognised header".into()));
    }
    if header.tagger != kind || header.config_hash != config_hash {
        return Err(CacheReadError::Stale);
    }
    if !text.ends_with('\n') {
        return Err(CacheReadError::Corrupt("truncated final record".into()));
    }
    let mut annotations = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let ann: TagAnnotation =
            serde_json::from_str(line).map_err(|e| CacheReadError::Corrupt(format!("record {}: {e}", i + 1)))?;
        annotations.insert(ann.instance_id.clone(), ann);
    }
    Ok(Some(annotations))
}

pub(crate) fn write_cache(
    path: &Path,
    kind: &str,
    config_hash: &str,
    annotations: &BTreeMap<String, TagAnnotation>,
) -> Result<(), TagError> {
    let err = |e: std::io::Error| TagError::Cache { path: path.display().to_string(), message: e.to_string() };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(err)?);
    let header = Header {
        format: CACHE_FORMAT.into(),
        version: CACHE_VERSION,
        tagger: kind.into(),
        config_hash: config_hash.into(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(err)?;
    for ann in annotations.values() {
        writeln!(out, "{}", serde_json::to_string(ann).expect("annotation serializes")).map_err(err)?;
    }
    out.flush().map_err(err)
}

/// Reads annotations from a cache file without checking which tagger wrote it.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, TagAnnotation>, TagError> {
    let text = fs::read_to_string(path)
        .map_err(|e| TagError::Cache { path: path.display().to_string(), message: e.to_string() })?;
    let mut annotations = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        if i == 0 && serde_json::from_str::<Header>(line).is_ok() {
            continue;
        }
        let ann: TagAnnotation = serde_json::from_str(line).map_err(|e| TagError::Cache {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?;
        annotations.insert(ann.instance_id.clone(), ann);
    }
    Ok(annotations)
}
