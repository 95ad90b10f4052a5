//! Disturbed prediction sequences for training the refinement stage.
//!
//! * cross-validate (`cv`): K-fold held-out predictions, so every video's
//!   sequence comes from a predictor that never trained on it.
//! * mask-hard-frame (`mhf`): hard frames' features are replaced by a mask
//!   vector before running the fully trained predictor.
//! * random-mask (`rm`): as `mhf`, but the masked frames are drawn uniformly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_labels, read_probs, write_labels, write_probs, VideoRecord};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::models::{PredictorConfig, PredictorModel};
use crate::nncore::rng::mix;
use crate::nncore::{
    linear_backward, linear_forward, softmax_rows, AdamConfig, AdamState, ParamSet, RngStream, Tensor,
};
use crate::seq::{FeatureSeq, ProbSeq};
use crate::trainer::{train_predictor, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "cv")]
    CrossValidate,
    #[serde(rename = "mhf")]
    MaskHardFrame,
    #[serde(rename = "rm")]
    RandomMask,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::CrossValidate => "cv",
            Provenance::MaskHardFrame => "mhf",
            Provenance::RandomMask => "rm",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv" => Ok(Provenance::CrossValidate),
            "mhf" => Ok(Provenance::MaskHardFrame),
            "rm" => Ok(Provenance::RandomMask),
            other => Err(Error::invalid(format!(
                "unknown disturb type {other:?} (expected cv, mhf or rm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbedSample {
    pub video_id: String,
    pub input: ProbSeq,
    pub target: Vec<usize>,
    pub provenance: Provenance,
    /// Fold whose model produced the sample (cv only).
    pub fold: Option<usize>,
    /// Mask rate requested (rm only).
    pub mask_ratio: Option<f64>,
    pub masked_frames: usize,
}

/// Rounds probabilities to `f32`, the precision they are stored at.
fn stored_precision(p: ProbSeq) -> ProbSeq {
    let mut t = p.into_tensor();
    t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    ProbSeq::new(t).expect("f32 rounding keeps rows normalized within tolerance")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Video id → fold index.
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in self.folds.values() {
            s[f] += 1;
        }
        s
    }
}

/// Uniformly random split of `ids` into `k` groups whose sizes differ by at most one.
pub fn partition_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = ids.len();
    if k < 2 {
        return Err(Error::invalid(format!("K must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the {n} training videos; use leave-one-out by setting K = N"
        )));
    }
    let unique: BTreeSet<_> = ids.iter().collect();
    if unique.len() != n {
        return Err(Error::invalid("duplicate video ids"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::derive(seed, 0xF01D).shuffle(&mut order);
    let folds = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (ids[i].clone(), pos % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

/// Which videos trained, and which were predicted by, one fold model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub seed: u64,
    pub trained_on: Vec<String>,
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CrossValidateOutput {
    pub samples: Vec<DisturbedSample>,
    pub assignment: FoldAssignment,
    pub records: Vec<FoldRecord>,
    pub models: Vec<PredictorModel>,
    pub histories: Vec<TrainHistory>,
}

/// Training seed of fold `fold`, independent of execution order.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    mix(seed, fold as u64)
}

/// Cross-validate type: one held-out prediction per training video.
pub fn gen_cross_validate(
    train: &[VideoRecord],
    k: usize,
    pcfg: PredictorConfig,
    tcfg: &TrainConfig,
) -> Result<CrossValidateOutput> {
    let ids: Vec<String> = train.iter().map(|v| v.id.clone()).collect();
    let assignment = partition_folds(&ids, k, tcfg.seed)?;
    let mut samples = Vec::with_capacity(train.len());
    let mut records = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    for fold in 0..k {
        let (held, rest): (Vec<&VideoRecord>, Vec<&VideoRecord>) =
            train.iter().partition(|v| assignment.folds[&v.id] == fold);
        let rest: Vec<VideoRecord> = rest.into_iter().cloned().collect();
        let cfg = TrainConfig {
            seed: fold_seed(tcfg.seed, fold),
            checkpoint_dir: None,
            ..tcfg.clone()
        };
        let (mut model, history) = train_predictor(&rest, pcfg, &cfg).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("fold {fold}: {msg}")),
            other => other,
        })?;
        model.params.quantize_f32();
        for v in &held {
            samples.push(DisturbedSample {
                video_id: v.id.clone(),
                input: stored_precision(model.forward(&v.features)?),
                target: v.labels.clone(),
                provenance: Provenance::CrossValidate,
                fold: Some(fold),
                mask_ratio: None,
                masked_frames: 0,
            });
        }
        records.push(FoldRecord {
            fold,
            seed: cfg.seed,
            trained_on: rest.iter().map(|v| v.id.clone()).collect(),
            predicted: held.iter().map(|v| v.id.clone()).collect(),
        });
        models.push(model);
        histories.push(history);
    }
    // Restore training-split order.
    let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    samples.sort_by_key(|s| pos[s.video_id.as_str()]);
    Ok(CrossValidateOutput {
        samples,
        assignment,
        records,
        models,
        histories,
    })
}

/// Checks that no cv sample came from a model trained on its own video.
pub fn audit_cross_validate(samples: &[DisturbedSample], records: &[FoldRecord]) -> Result<()> {
    for s in samples.iter().filter(|s| s.provenance == Provenance::CrossValidate) {
        let fold = s
            .fold
            .ok_or_else(|| Error::invalid(format!("cv sample {} lacks a fold", s.video_id)))?;
        let rec = records
            .iter()
            .find(|r| r.fold == fold)
            .ok_or_else(|| Error::invalid(format!("no training record for fold {fold}")))?;
        if rec.trained_on.contains(&s.video_id) {
            return Err(Error::invalid(format!(
                "leakage: video {} was in the training set of fold {fold}",
                s.video_id
            )));
        }
        if !rec.predicted.contains(&s.video_id) {
            return Err(Error::invalid(format!(
                "video {} not predicted by fold {fold}",
                s.video_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardFrameMask {
    pub video_id: String,
    pub hard: Vec<bool>,
}

impl HardFrameMask {
    pub fn count(&self) -> usize {
        self.hard.iter().filter(|&&h| h).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardFrameConfig {
    /// Full-batch optimizer steps of the frame classifier.
    pub steps: usize,
    pub lr: f64,
}

impl Default for HardFrameConfig {
    fn default() -> Self {
        HardFrameConfig { steps: 300, lr: 0.05 }
    }
}

/// Linear softmax classifier on single frames (no temporal context).
#[derive(Debug, Clone)]
pub struct FrameClassifier {
    params: ParamSet,
}

impl FrameClassifier {
    pub fn fit(train: &[VideoRecord], classes: usize, seed: u64, cfg: HardFrameConfig) -> Result<Self> {
        let dim = train
            .first()
            .map(|v| v.features.dim())
            .ok_or_else(|| Error::invalid("training split is empty"))?;
        let present: BTreeSet<usize> = train.iter().flat_map(|v| v.labels.iter().copied()).collect();
        if present.len() < 2 {
            return Err(Error::invalid(
                "hard-frame detection needs at least two phases in the training split",
            ));
        }
        let frames: usize = train.iter().map(VideoRecord::frames).sum();
        let mut x = Vec::with_capacity(frames * dim);
        let mut y = Vec::with_capacity(frames);
        for v in train {
            x.extend_from_slice(v.features.tensor().data());
            y.extend_from_slice(&v.labels);
        }
        let x = Tensor::from_vec(&[frames, dim], x)?;

        let mut rng = RngStream::derive(seed, 0x4A4D);
        let mut params = ParamSet::new();
        let bound = 1.0 / (dim as f64).sqrt();
        let mut w = Tensor::zeros(&[dim, classes]);
        w.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform_range(-bound, bound));
        let wid = params.add("w", w)?;
        let bid = params.add("b", Tensor::zeros(&[classes]))?;
        let mut adam = AdamState::new(
            &params,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        for _ in 0..cfg.steps {
            let logits = linear_forward(&x, params.value(wid), params.value(bid))?;
            let mut d = softmax_rows(&logits)?;
            for (r, &c) in y.iter().enumerate() {
                d.row_mut(r)[c] -= 1.0;
            }
            d.data_mut().iter_mut().for_each(|g| *g /= frames as f64);
            let [pw, pb] = params.many_mut([wid, bid]);
            linear_backward(&x, &pw.value, &d, &mut pw.grad, &mut pb.grad)?;
            adam.update(&mut params)?;
        }
        Ok(FrameClassifier { params })
    }

    pub fn predict(&self, features: &FeatureSeq) -> Result<Vec<usize>> {
        let w = self.params.value(self.params.id("w").expect("w"));
        let b = self.params.value(self.params.id("b").expect("b"));
        let logits = linear_forward(features.tensor(), w, b)?;
        Ok((0..logits.rows()).map(|r| crate::seq::argmax(logits.row(r))).collect())
    }
}

/// A frame is hard when a context-free frame classifier gets it wrong.
pub fn detect_hard_frames(
    train: &[VideoRecord],
    classes: usize,
    seed: u64,
    cfg: HardFrameConfig,
) -> Result<Vec<HardFrameMask>> {
    let clf = FrameClassifier::fit(train, classes, seed, cfg)?;
    train
        .iter()
        .map(|v| {
            let pred = clf.predict(&v.features)?;
            Ok(HardFrameMask {
                video_id: v.id.clone(),
                hard: pred.iter().zip(&v.labels).map(|(p, l)| p != l).collect(),
            })
        })
        .collect()
}

/// Fraction of training frames flagged hard.
pub fn hard_fraction(masks: &[HardFrameMask]) -> f64 {
    let total: usize = masks.iter().map(|m| m.hard.len()).sum();
    let hard: usize = masks.iter().map(HardFrameMask::count).sum();
    if total == 0 {
        0.0
    } else {
        hard as f64 / total as f64
    }
}

fn masked_sample(
    v: &VideoRecord,
    predictor: &PredictorModel,
    mask: &[bool],
    mask_value: f64,
    provenance: Provenance,
    ratio: Option<f64>,
) -> Result<DisturbedSample> {
    if mask.len() != v.frames() {
        return Err(Error::invalid(format!(
            "mask length {} differs from video {} length",
            mask.len(),
            v.id
        )));
    }
    let mut features = v.features.clone();
    let mut masked = 0;
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        features
            .tensor_mut()
            .row_mut(t)
            .iter_mut()
            .for_each(|x| *x = mask_value);
        masked += 1;
    }
    Ok(DisturbedSample {
        video_id: v.id.clone(),
        input: stored_precision(predictor.forward(&features)?),
        target: v.labels.clone(),
        provenance,
        fold: None,
        mask_ratio: ratio,
        masked_frames: masked,
    })
}

/// Samples plus human-readable warnings (e.g. a fully masked video).
#[derive(Debug, Clone)]
pub struct MaskOutput {
    pub samples: Vec<DisturbedSample>,
    pub warnings: Vec<String>,
}

fn warn_full(samples: &[DisturbedSample]) -> Vec<String> {
    samples
        .iter()
        .filter(|s| s.masked_frames == s.target.len() && !s.target.is_empty())
        .map(|s| format!("every frame of video {} is masked", s.video_id))
        .collect()
}

/// Mask-hard-frame type. `predictor` must be trained on the unperturbed training split.
pub fn gen_mask_hard_frame(
    train: &[VideoRecord],
    predictor: &PredictorModel,
    masks: &[HardFrameMask],
    mask_value: f64,
) -> Result<MaskOutput> {
    let by_id: BTreeMap<&str, &HardFrameMask> = masks.iter().map(|m| (m.video_id.as_str(), m)).collect();
    let samples = train
        .iter()
        .map(|v| {
            let m = by_id
                .get(v.id.as_str())
                .ok_or_else(|| Error::invalid(format!("no hard-frame mask for video {}", v.id)))?;
            masked_sample(v, predictor, &m.hard, mask_value, Provenance::MaskHardFrame, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskOutput {
        warnings: warn_full(&samples),
        samples,
    })
}

/// Random-mask type: `round(ratio · T)` frames per video, chosen uniformly.
pub fn gen_random_mask(
    train: &[VideoRecord],
    predictor: &PredictorModel,
    ratio: f64,
    seed: u64,
    mask_value: f64,
) -> Result<MaskOutput> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio must be in [0, 1], got {ratio}")));
    }
    let samples = train
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mask = random_mask(v.frames(), ratio, RngStream::derive(seed, 0x524D_0000 + i as u64));
            masked_sample(v, predictor, &mask, mask_value, Provenance::RandomMask, Some(ratio))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskOutput {
        warnings: warn_full(&samples),
        samples,
    })
}

fn random_mask(t: usize, ratio: f64, mut rng: RngStream) -> Vec<bool> {
    let n = ((ratio * t as f64).round() as usize).min(t);
    let mut idx: Vec<usize> = (0..t).collect();
    rng.shuffle(&mut idx);
    let mut mask = vec![false; t];
    for &i in &idx[..n] {
        mask[i] = true;
    }
    mask
}

pub const DISTURBED_INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub provenance: Provenance,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
    pub masked_frames: usize,
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbedIndex {
    pub version: u32,
    pub classes: usize,
    pub entries: Vec<IndexEntry>,
    /// Fold training provenance for cv samples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldRecord>,
    /// Free-form metadata (dataset hash, generating config).
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Persists samples as `MSPP` inputs plus label targets, with an index.
pub fn write_disturbed(
    dir: &Path,
    samples: &[DisturbedSample],
    folds: &[FoldRecord],
    meta: serde_json::Value,
) -> Result<DisturbedIndex> {
    let classes = samples.first().map_or(0, |s| s.input.classes());
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = format!("{}_{}", s.provenance.tag(), s.video_id);
        let input = format!("{stem}.mspp");
        let target = format!("{stem}.labels");
        write_probs(&dir.join(&input), &s.input)?;
        write_labels(&dir.join(&target), &s.target)?;
        entries.push(IndexEntry {
            provenance: s.provenance,
            video_id: s.video_id.clone(),
            fold: s.fold,
            mask_ratio: s.mask_ratio,
            masked_frames: s.masked_frames,
            input,
            target,
        });
    }
    let index = DisturbedIndex {
        version: 1,
        classes,
        entries,
        folds: folds.to_vec(),
        meta,
    };
    write_atomic(&dir.join(DISTURBED_INDEX_FILE), &serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

pub fn read_disturbed_index(dir: &Path) -> Result<DisturbedIndex> {
    let path = dir.join(DISTURBED_INDEX_FILE);
    let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads samples, optionally keeping only the given provenance types.
pub fn read_disturbed(dir: &Path, keep: Option<&[Provenance]>) -> Result<(DisturbedIndex, Vec<DisturbedSample>)> {
    let index = read_disturbed_index(dir)?;
    let mut samples = Vec::new();
    for e in &index.entries {
        if keep.is_some_and(|k| !k.contains(&e.provenance)) {
            continue;
        }
        let input = read_probs(&dir.join(&e.input))?;
        let target = read_labels(&dir.join(&e.target))?;
        if target.len() != input.frames() {
            return Err(Error::format(
                dir.join(&e.target),
                "length mismatch between sample input and target",
            ));
        }
        samples.push(DisturbedSample {
            video_id: e.video_id.clone(),
            input,
            target,
            provenance: e.provenance,
            fold: e.fold,
            mask_ratio: e.mask_ratio,
            masked_frames: e.masked_frames,
        });
    }
    Ok((index, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn ten_into_ten() {
        let a = partition_folds(&ids(10), 10, 3).unwrap();
        assert!(a.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn twenty_seven_into_ten() {
        let a = partition_folds(&ids(27), 10, 3).unwrap();
        let mut sizes = a.sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 3, 3, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn folds_deterministic_and_seed_sensitive() {
        let a = partition_folds(&ids(20), 4, 9).unwrap();
        assert_eq!(a, partition_folds(&ids(20), 4, 9).unwrap());
        assert_ne!(a, partition_folds(&ids(20), 4, 10).unwrap());
    }

    #[test]
    fn k_above_n_rejected() {
        let err = partition_folds(&ids(5), 6, 0).unwrap_err().to_string();
        assert!(err.contains("K = N"), "{err}");
        assert!(partition_folds(&ids(5), 1, 0).is_err());
    }

    #[test]
    fn random_mask_counts() {
        let m = random_mask(50, 0.2, RngStream::new(1));
        assert_eq!(m.iter().filter(|&&b| b).count(), 10);
        assert!(random_mask(7, 0.0, RngStream::new(1)).iter().all(|&b| !b));
        assert!(random_mask(7, 1.0, RngStream::new(1)).iter().all(|&b| b));
    }
}
