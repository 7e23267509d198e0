//! On-disk checkpoints: a JSON manifest plus a little-endian f64 blob.
//!
//! Any serializable model works. Every `{shape, data}` tensor inside it is
//! moved into the blob and replaced in the manifest's `model` tree by a
//! `{"$param": name}` reference; everything else stays in JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &str = "TNER1";
const PARAM_KEY: &str = "$param";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub kind: String,
    pub params: Vec<ParamEntry>,
    pub model: Value,
}

/// Blob file paired with a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn is_tensor(m: &Map<String, Value>) -> bool {
    m.len() == 2 && m.get("shape").is_some_and(Value::is_array) && m.get("data").is_some_and(Value::is_array)
}

fn extract(v: &mut Value, path: &str, params: &mut Vec<ParamEntry>, blob: &mut Vec<u8>) -> Result<()> {
    match v {
        Value::Object(m) if is_tensor(m) => {
            let shape: Vec<usize> = serde_json::from_value(m["shape"].take())?;
            let data: Vec<f64> = serde_json::from_value(m["data"].take())?;
            params.push(ParamEntry {
                name: path.to_string(),
                shape,
                offset: blob.len() / 8,
            });
            for x in data {
                blob.extend_from_slice(&x.to_le_bytes());
            }
            *v = serde_json::json!({ PARAM_KEY: path });
        }
        Value::Object(m) => {
            for (k, child) in m.iter_mut() {
                extract(child, &join(path, k), params, blob)?;
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter_mut().enumerate() {
                extract(child, &join(path, &i.to_string()), params, blob)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn restore(v: &mut Value, entries: &[ParamEntry], blob: &[f64], file: &Path) -> Result<()> {
    match v {
        Value::Object(m) if m.len() == 1 && m.contains_key(PARAM_KEY) => {
            let name = m[PARAM_KEY].as_str().unwrap_or_default().to_string();
            let entry = entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::format(file, format!("parameter {name} missing from manifest")))?;
            let n: usize = entry.shape.iter().product();
            let data = blob
                .get(entry.offset..entry.offset + n)
                .ok_or_else(|| Error::format(file, format!("parameter {name} runs past the blob")))?;
            *v = serde_json::json!({ "shape": entry.shape, "data": data });
        }
        Value::Object(m) => {
            for child in m.values_mut() {
                restore(child, entries, blob, file)?;
            }
        }
        Value::Array(items) => {
            for child in items {
                restore(child, entries, blob, file)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Writes `path` (manifest) and its `.bin` blob.
pub fn save<T: Serialize>(model: &T, kind: &str, path: &Path) -> Result<()> {
    let mut tree = serde_json::to_value(model)?;
    let mut params = Vec::new();
    let mut blob = Vec::new();
    extract(&mut tree, "", &mut params, &mut blob)?;
    let manifest = Manifest {
        magic: MAGIC.to_string(),
        kind: kind.to_string(),
        params,
        model: tree,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let bin = blob_path(path);
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", manifest.magic)));
    }
    Ok(manifest)
}

/// Loads a checkpoint written by [`save`], checking that its kind matches.
pub fn load<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T> {
    let manifest = read_manifest(path)?;
    if manifest.kind != kind {
        return Err(Error::format(path, format!("expected a {kind} checkpoint, found {}", manifest.kind)));
    }
    let bin = blob_path(path);
    if !bin.exists() {
        return Err(Error::MissingArtifact(bin));
    }
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&bin, "blob length is not a multiple of 8"));
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut tree = manifest.model;
    restore(&mut tree, &manifest.params, &blob, path)?;
    serde_json::from_value(tree).map_err(|e| Error::format(path, e.to_string()))
}
