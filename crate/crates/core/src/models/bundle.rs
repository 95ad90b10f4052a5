//! On-disk model bundle: `model.json` (architecture + provenance) next to `weights.msck`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::models::multistage::MultiStageModel;
use crate::models::predictor::{PredictorConfig, PredictorModel};
use crate::models::refiner::{RefinerConfig, RefinerModel};
use crate::nncore::{read_checkpoint, write_checkpoint, ParamSet};

pub const BUNDLE_SPEC_FILE: &str = "model.json";
pub const BUNDLE_WEIGHTS_FILE: &str = "weights.msck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub version: u32,
    pub predictor: Option<PredictorConfig>,
    pub refiner: Option<RefinerConfig>,
    /// Free-form training provenance (dataset hash, videos seen, seeds).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Whatever a bundle directory holds: a predictor, a refiner, or both.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub predictor: Option<PredictorModel>,
    pub refiner: Option<RefinerModel>,
    pub provenance: serde_json::Value,
}

fn merged(bundle: &ModelBundle) -> Result<ParamSet> {
    let mut all = ParamSet::new();
    if let Some(p) = &bundle.predictor {
        all.extend_prefixed("predictor.", p.params.clone())?;
    }
    if let Some(r) = &bundle.refiner {
        all.extend_prefixed("refiner.", r.params.clone())?;
    }
    Ok(all)
}

fn split(all: &ParamSet, prefix: &str) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for p in all.iter() {
        if let Some(rest) = p.name.strip_prefix(prefix) {
            out.add(rest, p.value.clone())?;
        }
    }
    Ok(out)
}

impl ModelBundle {
    pub fn from_multistage(m: &MultiStageModel, provenance: serde_json::Value) -> Self {
        ModelBundle {
            predictor: Some(m.predictor.clone()),
            refiner: m.refiner.clone(),
            provenance,
        }
    }

    pub fn spec(&self) -> BundleSpec {
        BundleSpec {
            version: 1,
            predictor: self.predictor.as_ref().map(|p| p.config),
            refiner: self.refiner.as_ref().map(|r| r.config),
            provenance: self.provenance.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let spec = serde_json::to_vec_pretty(&self.spec())?;
        write_checkpoint(&dir.join(BUNDLE_WEIGHTS_FILE), &merged(self)?)?;
        write_atomic(&dir.join(BUNDLE_SPEC_FILE), &spec)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(BUNDLE_SPEC_FILE);
        let raw = std::fs::read(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: BundleSpec = serde_json::from_slice(&raw).map_err(|e| Error::format(&spec_path, e.to_string()))?;
        let weights_path: PathBuf = dir.join(BUNDLE_WEIGHTS_FILE);
        let all = read_checkpoint(&weights_path)?;
        let wrap = |e: Error| Error::format(&weights_path, e.to_string());
        let predictor = spec
            .predictor
            .map(|c| PredictorModel::from_params(c, &split(&all, "predictor.")?).map_err(wrap))
            .transpose()?;
        let refiner = spec
            .refiner
            .map(|c| RefinerModel::from_params(c, &split(&all, "refiner.")?).map_err(wrap))
            .transpose()?;
        Ok(ModelBundle {
            predictor,
            refiner,
            provenance: spec.provenance,
        })
    }

    /// Rounds weights through `f32` so in-memory inference matches a reloaded bundle.
    pub fn quantize(&mut self) {
        if let Some(p) = &mut self.predictor {
            p.params.quantize_f32();
        }
        if let Some(r) = &mut self.refiner {
            r.params.quantize_f32();
        }
    }
}
