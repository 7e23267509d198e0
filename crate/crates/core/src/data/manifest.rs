//! Manifest CSV (`path,label,split,condition`) plus EVF1 frame files.
//! Paths are relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frame::{read_frame, write_frame};
use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
    #[serde(default)]
    pub condition: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Allow calibration entries that also appear in the training split.
    pub calib_from_train: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Values pulled back into `[0, 1]`.
    pub clamped: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Loads every entry in manifest order, validating shape, labels and values.
pub fn load_dataset(manifest: &Path, shape: [usize; 3], num_classes: usize, opts: LoadOptions) -> Result<Loaded> {
    let entries = read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for e in &entries {
        if let Some(&prev) = seen.get(e.path.as_str()) {
            let allowed = opts.calib_from_train
                && matches!((prev, e.split), (Split::Train, Split::Calib) | (Split::Calib, Split::Train));
            if !allowed {
                return Err(Error::format(manifest, format!("{} is listed in both {prev:?} and {:?}", e.path, e.split)));
            }
        }
        seen.insert(&e.path, e.split);
    }
    let mut clamped = 0;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let file = root.join(&e.path);
        if e.label >= num_classes {
            return Err(Error::format(&file, format!("label {} out of range for {num_classes} classes", e.label)));
        }
        let mut frame = read_frame(&file, shape)?;
        for v in frame.data_mut() {
            if !v.is_finite() {
                return Err(Error::format(&file, "non-finite value"));
            }
            if !(0.0..=1.0).contains(v) {
                *v = v.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
        samples.push(Sample {
            frame,
            label: e.label,
            split: e.split,
            condition: (!e.condition.is_empty()).then(|| e.condition.clone()),
        });
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} values into [0, 1]", manifest.display());
    }
    Ok(Loaded {
        dataset: Dataset {
            shape,
            num_classes,
            samples,
        },
        clamped,
    })
}

/// Writes `frames/NNNNNN.evf` and `manifest.csv` under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::format(&manifest, e.to_string()))?;
    for (i, s) in data.samples.iter().enumerate() {
        let rel = format!("frames/{i:06}.evf");
        write_frame(&dir.join(&rel), &s.frame)?;
        w.serialize(ManifestEntry {
            path: rel,
            label: s.label,
            split: s.split,
            condition: s.condition.clone().unwrap_or_default(),
        })
        .map_err(|e| Error::format(&manifest, e.to_string()))?;
    }
    if data.is_empty() {
        w.write_record(["path", "label", "split", "condition"])
            .map_err(|e| Error::format(&manifest, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
