//! Videos, the dataset manifest and its on-disk layout.

pub mod formats;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::seq::{check_labels, FeatureSeq};

pub use formats::{
    read_features, read_labels, read_mask, read_probs, write_features, write_labels, write_mask, write_probs,
};
pub use synth::{generate_dataset, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureSeq,
    pub labels: Vec<usize>,
    /// Generator-side ground truth of blended frames; diagnostics only.
    pub hard_mask: Option<Vec<bool>>,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub features: String,
    pub labels: String,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(rename = "C")]
    pub classes: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub videos: BTreeMap<String, VideoEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
}

impl DatasetManifest {
    /// Number of training videos.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<_> = self.train.iter().collect();
        if let Some(dup) = self.test.iter().find(|id| train.contains(id)) {
            return Err(Error::invalid(format!(
                "video {dup:?} is in both train and test splits"
            )));
        }
        if let Some(missing) = self
            .train
            .iter()
            .chain(&self.test)
            .find(|id| !self.videos.contains_key(*id))
        {
            return Err(Error::invalid(format!("split references unknown video {missing:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub dim: usize,
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
    pub generator: Option<SynthConfig>,
}

impl Dataset {
    pub fn manifest(&self) -> DatasetManifest {
        let mut videos = BTreeMap::new();
        for v in self.train.iter().chain(&self.test) {
            videos.insert(
                v.id.clone(),
                VideoEntry {
                    features: format!("videos/{}.mspf", v.id),
                    labels: format!("videos/{}.labels", v.id),
                    frames: v.frames(),
                    hard_mask: v.hard_mask.as_ref().map(|_| format!("videos/{}.hard", v.id)),
                },
            );
        }
        DatasetManifest {
            version: MANIFEST_VERSION,
            classes: self.classes,
            dim: self.dim,
            train: self.train.iter().map(|v| v.id.clone()).collect(),
            test: self.test.iter().map(|v| v.id.clone()).collect(),
            videos,
            generator: self.generator.clone(),
        }
    }

    /// Writes `manifest.json` plus per-video files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let manifest = self.manifest();
        for v in self.train.iter().chain(&self.test) {
            let e = &manifest.videos[&v.id];
            write_features(&dir.join(&e.features), &v.features)?;
            write_labels(&dir.join(&e.labels), &v.labels)?;
            if let (Some(path), Some(mask)) = (&e.hard_mask, &v.hard_mask) {
                write_mask(&dir.join(path), mask)?;
            }
        }
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.train.iter().chain(&self.test).find(|v| v.id == id)
    }
}

/// Accepts either a dataset directory or a path to its `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(path);
    let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&raw).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", m.version),
        ));
    }
    m.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(m)
}

fn load_video(root: &Path, id: &str, entry: &VideoEntry, m: &DatasetManifest) -> Result<VideoRecord> {
    let fpath = root.join(&entry.features);
    let lpath = root.join(&entry.labels);
    let features = read_features(&fpath)?;
    let labels = read_labels(&lpath)?;
    if features.dim() != m.dim {
        return Err(Error::format(
            &fpath,
            format!("feature dim {} but manifest says {}", features.dim(), m.dim),
        ));
    }
    if labels.len() != features.frames() || entry.frames != features.frames() {
        return Err(Error::format(
            &lpath,
            format!(
                "length mismatch: {} labels, {} feature frames, manifest T={}",
                labels.len(),
                features.frames(),
                entry.frames
            ),
        ));
    }
    if let Some((t, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= m.classes) {
        return Err(Error::format(
            &lpath,
            format!("label {l} at frame {t} out of range [0, {})", m.classes),
        ));
    }
    let hard_mask = match &entry.hard_mask {
        Some(p) => {
            let mp = root.join(p);
            let mask = read_mask(&mp)?;
            if mask.len() != labels.len() {
                return Err(Error::format(&mp, "length mismatch between hard mask and labels"));
            }
            Some(mask)
        }
        None => None,
    };
    check_labels(&labels, features.frames(), m.classes)?;
    Ok(VideoRecord {
        id: id.to_owned(),
        features,
        labels,
        hard_mask,
    })
}

/// Loads every video named in the manifest, checking headers and lengths.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mpath = manifest_path(path);
    let manifest = read_manifest(&mpath)?;
    let root = mpath.parent().unwrap_or(Path::new("."));
    let load_split = |ids: &[String]| -> Result<Vec<VideoRecord>> {
        ids.iter()
            .map(|id| load_video(root, id, &manifest.videos[id], &manifest))
            .collect()
    };
    Ok(Dataset {
        classes: manifest.classes,
        dim: manifest.dim,
        train: load_split(&manifest.train)?,
        test: load_split(&manifest.test)?,
        generator: manifest.generator.clone(),
    })
}

/// Generates the synthetic benchmark and writes it to `dir`.
pub fn generate_synthetic(cfg: &SynthConfig, dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let ds = generate_dataset(cfg)?;
    let manifest = ds.write(dir)?;
    Ok((ds, manifest))
}
