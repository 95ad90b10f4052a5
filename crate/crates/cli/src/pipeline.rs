//! Pipeline steps shared by the individual subcommands and `experiment`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagewise::dataset::{load_dataset, manifest_path, Dataset, VideoRecord};
use stagewise::disturb::{
    audit_cross_validate, detect_hard_frames, gen_cross_validate, gen_mask_hard_frame, gen_random_mask, hard_fraction,
    read_disturbed, write_disturbed, DisturbedSample, FoldRecord, HardFrameMask, Provenance,
};
use stagewise::eval::{aggregate, MetricsReport, VideoMetrics};
use stagewise::models::bundle::BUNDLE_WEIGHTS_FILE;
use stagewise::models::{ModelBundle, MultiStageModel, PredictorModel, RefinerModel};
use stagewise::trainer::{train_e2e, train_predictor, train_refiner, TrainConfig, TrainHistory};

use crate::config::{types_label, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::ledger::sha256_file;

pub const HISTORY_FILE: &str = "history.jsonl";

pub struct LoadedData {
    pub dataset: Dataset,
    pub manifest: PathBuf,
    pub sha256: String,
}

pub fn load_data(path: &Path) -> CliResult<LoadedData> {
    let manifest = manifest_path(path);
    let dataset = load_dataset(&manifest)?;
    let sha256 = sha256_file(&manifest)?;
    Ok(LoadedData {
        dataset,
        manifest,
        sha256,
    })
}

pub fn load_bundle(dir: &Path) -> CliResult<(ModelBundle, String)> {
    let bundle = ModelBundle::load(dir)?;
    let sha = sha256_file(&dir.join(BUNDLE_WEIGHTS_FILE))?;
    Ok((bundle, sha))
}

pub fn bundle_predictor(bundle: &ModelBundle, dir: &Path) -> CliResult<PredictorModel> {
    bundle
        .predictor
        .clone()
        .ok_or_else(|| CliError::dependency(format!("model at {} has no predictor stage", dir.display())))
}

pub fn bundle_model(bundle: &ModelBundle, dir: &Path) -> CliResult<MultiStageModel> {
    Ok(MultiStageModel::new(
        bundle_predictor(bundle, dir)?,
        bundle.refiner.clone(),
    )?)
}

fn ids(videos: &[VideoRecord]) -> Vec<String> {
    videos.iter().map(|v| v.id.clone()).collect()
}

fn with_seed(t: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..t.clone() }
}

fn save_history(dir: &Path, history: &TrainHistory) -> CliResult<()> {
    stagewise::io_util::write_atomic(&dir.join(HISTORY_FILE), history.to_jsonl().as_bytes())?;
    Ok(())
}

/// Trains the predictor on the training split and saves it as a bundle.
pub fn predictor_step(cfg: &ExperimentConfig, data: &LoadedData, seed: u64, out: &Path) -> CliResult<PredictorModel> {
    let ds = &data.dataset;
    let pcfg = cfg.predictor.model_config(ds.dim, ds.classes);
    let (model, history) = train_predictor(&ds.train, pcfg, &with_seed(&cfg.predictor.train, seed))?;
    let provenance = serde_json::json!({
        "kind": "predictor",
        "dataset_sha256": data.sha256,
        "seed": seed,
        "trained_on": ids(&ds.train),
    });
    let mut bundle = ModelBundle {
        predictor: Some(model),
        refiner: None,
        provenance,
    };
    bundle.quantize();
    bundle.save(out)?;
    save_history(out, &history)?;
    Ok(bundle.predictor.expect("predictor present"))
}

/// Per-run measurements reported next to the disturbed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbDiagnostics {
    /// Frame disagreement of cv inputs with ground truth.
    pub cv_disagreement: Option<f64>,
    /// Frame disagreement of the full predictor on its own training split.
    pub predictor_train_disagreement: Option<f64>,
    pub hard_fraction: Option<f64>,
    pub mask_ratio: Option<f64>,
    pub samples: usize,
    pub warnings: Vec<String>,
}

pub struct DisturbOutput {
    pub samples: Vec<DisturbedSample>,
    pub folds: Vec<FoldRecord>,
    pub hard: Vec<HardFrameMask>,
    pub diagnostics: DisturbDiagnostics,
}

fn disagreement<'a>(pairs: impl Iterator<Item = (Vec<usize>, &'a [usize])>) -> f64 {
    let (mut wrong, mut total) = (0usize, 0usize);
    for (pred, gt) in pairs {
        wrong += pred.iter().zip(gt).filter(|(p, g)| p != g).count();
        total += gt.len();
    }
    wrong as f64 / total.max(1) as f64
}

/// Generates the requested disturbed sample types. `predictor` is the fully
/// trained predictor (needed for mhf and rm).
pub fn disturb_step(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    predictor: Option<(&PredictorModel, &str)>,
    types: &[Provenance],
    seed: u64,
    out: &Path,
) -> CliResult<DisturbOutput> {
    let ds = &data.dataset;
    let d = &cfg.disturb;
    let mut samples = Vec::new();
    let mut folds = Vec::new();
    let mut hard = Vec::new();
    let mut diag = DisturbDiagnostics {
        cv_disagreement: None,
        predictor_train_disagreement: None,
        hard_fraction: None,
        mask_ratio: None,
        samples: 0,
        warnings: Vec::new(),
    };
    let need_predictor =
        || predictor.ok_or_else(|| CliError::dependency("mhf and rm samples need a trained predictor (pass --model)"));

    if types.contains(&Provenance::CrossValidate) {
        let pcfg = cfg.predictor.model_config(ds.dim, ds.classes);
        let cv =
            gen_cross_validate(&ds.train, d.k, pcfg, &with_seed(&cfg.predictor.train, seed)).map_err(|e| match e {
                stagewise::Error::InvalidArgument(m) => CliError::config(m),
                other => other.into(),
            })?;
        audit_cross_validate(&cv.samples, &cv.records)?;
        diag.cv_disagreement = Some(disagreement(
            cv.samples.iter().map(|s| (s.input.argmax(), s.target.as_slice())),
        ));
        samples.extend(cv.samples);
        folds = cv.records;
    }
    if let Some((p, _)) = predictor {
        let preds = ds
            .train
            .iter()
            .map(|v| p.forward(&v.features).map(|q| q.argmax()))
            .collect::<Result<Vec<_>, _>>()?;
        diag.predictor_train_disagreement = Some(disagreement(
            preds.into_iter().zip(ds.train.iter().map(|v| v.labels.as_slice())),
        ));
    }
    let needs_mask = types.iter().any(|t| *t != Provenance::CrossValidate);
    if needs_mask {
        hard = detect_hard_frames(&ds.train, ds.classes, seed, d.hard_frames)?;
        diag.hard_fraction = Some(hard_fraction(&hard));
    }
    if types.contains(&Provenance::MaskHardFrame) {
        let (p, _) = need_predictor()?;
        let m = gen_mask_hard_frame(&ds.train, p, &hard, d.mask_value)?;
        diag.warnings.extend(m.warnings);
        samples.extend(m.samples);
    }
    if types.contains(&Provenance::RandomMask) {
        let (p, _) = need_predictor()?;
        let ratio = d.mask_ratio.unwrap_or_else(|| hard_fraction(&hard));
        diag.mask_ratio = Some(ratio);
        let m = gen_random_mask(&ds.train, p, ratio, seed, d.mask_value)?;
        diag.warnings.extend(m.warnings);
        samples.extend(m.samples);
    }
    diag.samples = samples.len();
    let meta = serde_json::json!({
        "dataset_sha256": data.sha256,
        "predictor_sha256": predictor.map(|(_, sha)| sha),
        "types": types_label(types),
        "seed": seed,
        "k": d.k,
        "diagnostics": diag,
    });
    write_disturbed(out, &samples, &folds, meta)?;
    Ok(DisturbOutput {
        samples,
        folds,
        hard,
        diagnostics: diag,
    })
}

/// Loads disturbed samples of the given types, checking they match `predictor_sha`.
pub fn load_disturbed(dir: &Path, types: &[Provenance], predictor_sha: &str) -> CliResult<Vec<DisturbedSample>> {
    let (index, samples) = read_disturbed(dir, Some(types))?;
    if samples.is_empty() {
        return Err(CliError::dependency(format!(
            "{} holds no samples of type {}",
            dir.display(),
            types_label(types)
        )));
    }
    let uses_predictor = types.iter().any(|t| *t != Provenance::CrossValidate);
    if let Some(sha) = index.meta.get("predictor_sha256").and_then(|v| v.as_str()) {
        if uses_predictor && sha != predictor_sha {
            return Err(CliError::dependency(format!(
                "disturbed samples in {} were generated with a different predictor",
                dir.display()
            )));
        }
    }
    audit_cross_validate(&samples, &index.folds)?;
    Ok(samples)
}

pub fn select(samples: &[DisturbedSample], types: &[Provenance]) -> Vec<DisturbedSample> {
    samples
        .iter()
        .filter(|s| types.contains(&s.provenance))
        .cloned()
        .collect()
}

/// Trains a refiner on `samples` and saves it together with `predictor`.
pub fn refiner_step(
    cfg: &ExperimentConfig,
    predictor: &PredictorModel,
    predictor_sha: &str,
    samples: &[DisturbedSample],
    stacks: usize,
    seed: u64,
    out: &Path,
) -> CliResult<(MultiStageModel, TrainHistory)> {
    let rcfg = cfg.refiner.model_config(predictor.config.classes, stacks);
    let (refiner, history) = train_refiner(samples, rcfg, &with_seed(&cfg.refiner.train, seed))?;
    let mut types: Vec<Provenance> = samples.iter().map(|s| s.provenance).collect();
    types.sort();
    types.dedup();
    let provenance = serde_json::json!({
        "kind": "non-e2e",
        "predictor_sha256": predictor_sha,
        "seed": seed,
        "refiner_types": types_label(&types),
        "refiner_samples": samples.len(),
    });
    save_multistage(predictor.clone(), Some(refiner), provenance, out, &history)
}

fn save_multistage(
    predictor: PredictorModel,
    refiner: Option<RefinerModel>,
    provenance: serde_json::Value,
    out: &Path,
    history: &TrainHistory,
) -> CliResult<(MultiStageModel, TrainHistory)> {
    let mut bundle = ModelBundle {
        predictor: Some(predictor),
        refiner,
        provenance,
    };
    bundle.quantize();
    bundle.save(out)?;
    save_history(out, history)?;
    let model = MultiStageModel::new(bundle.predictor.expect("predictor present"), bundle.refiner)?;
    Ok((model, history.clone()))
}

/// Joint training of predictor and refiner on raw training data.
pub fn e2e_step(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    stacks: usize,
    seed: u64,
    out: &Path,
) -> CliResult<(MultiStageModel, TrainHistory)> {
    let ds = &data.dataset;
    let pcfg = cfg.predictor.model_config(ds.dim, ds.classes);
    let rcfg = cfg.refiner.model_config(ds.classes, stacks);
    let (model, history) = train_e2e(&ds.train, pcfg, Some(rcfg), &with_seed(cfg.e2e_schedule(), seed))?;
    let provenance = serde_json::json!({
        "kind": "e2e",
        "dataset_sha256": data.sha256,
        "seed": seed,
        "trained_on": ids(&ds.train),
    });
    save_multistage(model.predictor, model.refiner, provenance, out, &history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

pub fn split_videos(ds: &Dataset, split: Split) -> Vec<&VideoRecord> {
    match split {
        Split::Train => ds.train.iter().collect(),
        Split::Test => ds.test.iter().collect(),
        Split::All => ds.train.iter().chain(&ds.test).collect(),
    }
}

pub fn check_compatible(model: &MultiStageModel, ds: &Dataset) -> CliResult<()> {
    let p = &model.predictor.config;
    if p.features != ds.dim || p.classes != ds.classes {
        return Err(CliError::dependency(format!(
            "model expects D={} C={}, dataset has D={} C={}",
            p.features, p.classes, ds.dim, ds.classes
        )));
    }
    Ok(())
}

pub fn evaluate(model: &MultiStageModel, videos: &[&VideoRecord]) -> CliResult<MetricsReport> {
    let metrics = videos
        .iter()
        .map(|v| {
            let inf = model.infer(&v.features)?;
            VideoMetrics::compute(v.id.clone(), &inf.labels, &v.labels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(metrics)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    stagewise::io_util::write_atomic(path, &bytes)?;
    Ok(())
}
