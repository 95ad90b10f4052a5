//! Experiment configuration (JSON). Every section has defaults, so `{}` is a
//! valid config describing the default benchmark run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stagewise::dataset::SynthConfig;
use stagewise::disturb::{HardFrameConfig, Provenance};
use stagewise::models::{PredictorConfig, RefinerConfig, RefinerVariant};
use stagewise::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

/// Benchmark size class; selects the default stack count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Large,
    #[default]
    Small,
}

impl Profile {
    pub fn default_stacks(self) -> usize {
        match self {
            Profile::Large => 3,
            Profile::Small => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Generate a synthetic benchmark with these parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Or use an existing dataset directory / manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            synth: Some(SynthConfig::default()),
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub filters: usize,
    pub layers: usize,
    pub kernel: usize,
    pub train: TrainConfig,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let p = PredictorConfig::new(1, 2);
        PredictorSection {
            filters: p.filters,
            layers: p.layers,
            kernel: p.kernel,
            train: TrainConfig::default(),
        }
    }
}

impl PredictorSection {
    pub fn model_config(&self, features: usize, classes: usize) -> PredictorConfig {
        PredictorConfig {
            features,
            classes,
            filters: self.filters,
            layers: self.layers,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbSection {
    pub types: Vec<Provenance>,
    pub k: usize,
    /// Random-mask rate; defaults to the measured hard-frame fraction.
    pub mask_ratio: Option<f64>,
    /// Constant written over masked feature vectors.
    pub mask_value: f64,
    pub hard_frames: HardFrameConfig,
}

impl Default for DisturbSection {
    fn default() -> Self {
        DisturbSection {
            types: vec![Provenance::CrossValidate, Provenance::MaskHardFrame],
            k: 10,
            mask_ratio: None,
            mask_value: 0.0,
            hard_frames: HardFrameConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerSection {
    pub variant: RefinerVariant,
    /// Defaults by profile: 3 for `large`, 2 for `small`.
    pub stacks: Option<usize>,
    pub hidden: usize,
    pub filters: usize,
    pub layers: usize,
    pub kernel: usize,
    pub train: TrainConfig,
}

impl Default for RefinerSection {
    fn default() -> Self {
        let r = RefinerConfig::new(RefinerVariant::Gru, 2, 1);
        RefinerSection {
            variant: RefinerVariant::Gru,
            stacks: None,
            hidden: r.hidden,
            filters: r.filters,
            layers: r.layers,
            kernel: r.kernel,
            train: TrainConfig {
                epochs: 25,
                ..TrainConfig::default()
            },
        }
    }
}

impl RefinerSection {
    pub fn model_config(&self, classes: usize, stacks: usize) -> RefinerConfig {
        RefinerConfig {
            variant: self.variant,
            classes,
            stacks,
            hidden: self.hidden,
            filters: self.filters,
            layers: self.layers,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub dataset: DatasetSection,
    pub predictor: PredictorSection,
    pub disturb: DisturbSection,
    pub refiner: RefinerSection,
    /// Joint-training schedule for the E2E baseline; defaults to the predictor's.
    pub e2e_train: Option<TrainConfig>,
    /// Extra refiners trained on other disturb-type combinations, e.g. `"cv+rm"`.
    pub ablation: Vec<String>,
    /// Extra refiners with these stack counts, trained on `disturb.types`.
    pub stack_sweep: Vec<usize>,
    /// One replicate per seed. A synthetic dataset is regenerated per seed.
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            profile: Profile::default(),
            dataset: DatasetSection::default(),
            predictor: PredictorSection::default(),
            disturb: DisturbSection::default(),
            refiner: RefinerSection::default(),
            e2e_train: None,
            ablation: Vec::new(),
            stack_sweep: Vec::new(),
            seeds: vec![0],
            out: None,
        }
    }
}

/// Parses `"cv+mhf"` or `"cv,mhf"` into a deduplicated, sorted type list.
pub fn parse_types(s: &str) -> CliResult<Vec<Provenance>> {
    let mut out = Vec::new();
    for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
        let p: Provenance = part
            .parse()
            .map_err(|e: stagewise::Error| CliError::config(e.to_string()))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(CliError::config(format!("no disturb types in {s:?}")));
    }
    out.sort();
    Ok(out)
}

pub fn types_label(types: &[Provenance]) -> String {
    types.iter().map(|p| p.tag()).collect::<Vec<_>>().join("+")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::config(format!("config file not found: {}", path.display())),
            _ => CliError::config(format!("cannot read config {}: {e}", path.display())),
        })?;
        let cfg: Self =
            serde_json::from_slice(&raw).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stacks(&self) -> usize {
        self.refiner.stacks.unwrap_or_else(|| self.profile.default_stacks())
    }

    pub fn e2e_schedule(&self) -> &TrainConfig {
        self.e2e_train.as_ref().unwrap_or(&self.predictor.train)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::config(m));
        match (&self.dataset.synth, &self.dataset.manifest) {
            (Some(s), None) => s.validate().map_err(|e| CliError::config(e.to_string()))?,
            (None, Some(_)) => {}
            _ => return bad("dataset section needs exactly one of `synth` or `manifest`".into()),
        }
        if self.disturb.types.is_empty() {
            return bad("disturb.types must name at least one of cv, mhf, rm".into());
        }
        if self.disturb.k < 2 {
            return bad(format!("disturb.k must be at least 2, got {}", self.disturb.k));
        }
        if let Some(r) = self.disturb.mask_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("disturb.mask_ratio must be in [0, 1], got {r}"));
            }
        }
        if self.stacks() == 0 || self.stack_sweep.contains(&0) {
            return bad("stack counts must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        for a in &self.ablation {
            parse_types(a)?;
        }
        for t in [&self.predictor.train, &self.refiner.train, self.e2e_schedule()] {
            t.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        hex::encode(Sha256::digest(
            serde_json::to_vec(&canonical).expect("config serializes"),
        ))
    }
}
