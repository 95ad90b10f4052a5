//! Training loops. One optimizer step per video (the whole sequence is the batch).
//!
//! * [`train_predictor`]: predictor on raw features with the smoothed CE loss.
//! * [`train_refiner`]: refinement stack on disturbed probability sequences only.
//! * [`train_e2e`]: both stages jointly, supervision on every stage output.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::VideoRecord;
use crate::disturb::DisturbedSample;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_dp, predictor_loss_dp, refinement_loss, LossValue};
use crate::models::{MultiStageModel, PredictorConfig, PredictorModel, RefinerConfig, RefinerModel};
use crate::nncore::{softmax_rows_backward, AdamConfig, AdamState, ParamSet, RngStream, Tensor};
use crate::seq::ProbSeq;

const SALT_PREDICTOR_INIT: u64 = 0x11;
const SALT_REFINER_INIT: u64 = 0x22;
const SALT_ORDER: u64 = 0x33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the smoothing term in the predictor loss.
    pub lambda: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Write `epoch_NNN.msck` every this many epochs into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-3,
            lambda: 1.0,
            seed: 0,
            shuffle: true,
            checkpoint_every: None,
            checkpoint_dir: None,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_losses: Vec<f64>,
    /// Predictor-stage accuracy when training several stages jointly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Adam over one or more parameter sets with an optional global-norm clip.
struct Optimizer {
    states: Vec<AdamState>,
    clip: Option<f64>,
}

impl Optimizer {
    fn new(sets: &[&ParamSet], cfg: &TrainConfig) -> Self {
        Optimizer {
            states: sets.iter().map(|p| AdamState::new(p, cfg.adam())).collect(),
            clip: cfg.clip_grad_norm,
        }
    }

    fn step(&mut self, sets: &mut [&mut ParamSet]) -> Result<()> {
        if let Some(max) = self.clip {
            let norm = sets.iter().map(|s| s.grad_norm().powi(2)).sum::<f64>().sqrt();
            if norm > max {
                let scale = max / norm;
                for s in sets.iter_mut() {
                    s.iter_mut()
                        .for_each(|p| p.grad.data_mut().iter_mut().for_each(|g| *g *= scale));
                }
            }
        }
        for (st, set) in self.states.iter_mut().zip(sets.iter_mut()) {
            st.update(set)?;
        }
        Ok(())
    }
}

fn epoch_order(n: usize, epoch: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        RngStream::derive(cfg.seed ^ SALT_ORDER, epoch as u64).shuffle(&mut order);
    }
    order
}

fn correct(p: &ProbSeq, labels: &[usize]) -> usize {
    p.argmax().iter().zip(labels).filter(|(a, b)| a == b).count()
}

fn ensure_finite(loss: f64, epoch: usize, id: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss {loss} at epoch {} on video {id}",
            epoch + 1
        )))
    }
}

/// Tags a non-finite error raised inside a training step with its location.
fn located(epoch: usize, id: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at epoch {} on video {id}", epoch + 1)),
        other => other,
    }
}

fn maybe_checkpoint(cfg: &TrainConfig, epoch: usize, sets: &[(&str, &ParamSet)]) -> Result<()> {
    let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) else {
        return Ok(());
    };
    if every == 0 || (epoch + 1) % every != 0 {
        return Ok(());
    }
    let mut all = ParamSet::new();
    for (prefix, set) in sets {
        all.extend_prefixed(prefix, (*set).clone())?;
    }
    crate::nncore::write_checkpoint(&dir.join(format!("epoch_{:03}.msck", epoch + 1)), &all)
}

pub fn predictor_init_stream(seed: u64) -> RngStream {
    RngStream::derive(seed, SALT_PREDICTOR_INIT)
}

pub fn refiner_init_stream(seed: u64) -> RngStream {
    RngStream::derive(seed, SALT_REFINER_INIT)
}

fn check_videos(videos: &[VideoRecord], pcfg: &PredictorConfig) -> Result<()> {
    if videos.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    for v in videos {
        if v.features.dim() != pcfg.features {
            return Err(Error::shape("train", &[v.features.dim()], &[pcfg.features]));
        }
        if v.frames() == 0 {
            return Err(Error::invalid(format!("video {} has no frames", v.id)));
        }
    }
    Ok(())
}

/// Trains the predictor stage on raw features.
pub fn train_predictor(
    videos: &[VideoRecord],
    pcfg: PredictorConfig,
    cfg: &TrainConfig,
) -> Result<(PredictorModel, TrainHistory)> {
    cfg.validate()?;
    check_videos(videos, &pcfg)?;
    let mut model = PredictorModel::new(pcfg, &mut predictor_init_stream(cfg.seed))?;
    let mut opt = Optimizer::new(&[&model.params], cfg);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut loss_sum, mut hits, mut frames) = (0.0, 0usize, 0usize);
        for i in epoch_order(videos.len(), epoch, cfg) {
            let v = &videos[i];
            let step = e2e_gradients(&mut model, None, v, cfg.lambda).map_err(located(epoch, &v.id))?;
            ensure_finite(step.total, epoch, &v.id)?;
            opt.step(&mut [&mut model.params])?;
            loss_sum += step.total;
            hits += correct(&step.initial, &v.labels);
            frames += v.frames();
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / videos.len() as f64,
            train_acc: hits as f64 / frames as f64,
            seconds: start.elapsed().as_secs_f64(),
            stage_losses: Vec::new(),
            predictor_acc: None,
        });
        maybe_checkpoint(cfg, epoch, &[("predictor.", &model.params)])?;
    }
    Ok((model, history))
}

/// Trains a refinement stack on disturbed probability sequences.
///
/// Only the sample inputs (predictor probabilities) and targets are read; the
/// per-stage cross-entropies are summed.
pub fn train_refiner(
    samples: &[DisturbedSample],
    rcfg: RefinerConfig,
    cfg: &TrainConfig,
) -> Result<(RefinerModel, TrainHistory)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no disturbed samples to train on"));
    }
    if let Some(s) = samples.iter().find(|s| s.input.classes() != rcfg.classes) {
        return Err(Error::invalid(format!(
            "sample {} has {} classes but refiner expects {}",
            s.video_id,
            s.input.classes(),
            rcfg.classes
        )));
    }
    let mut model = RefinerModel::new(rcfg, &mut refiner_init_stream(cfg.seed))?;
    let mut opt = Optimizer::new(&[&model.params], cfg);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut stage_sum = vec![0.0; rcfg.stacks];
        let (mut hits, mut frames) = (0usize, 0usize);
        for i in epoch_order(samples.len(), epoch, cfg) {
            let s = &samples[i];
            let (loss, last) =
                refiner_gradients(&mut model, s.input.tensor(), &s.target).map_err(located(epoch, &s.video_id))?;
            ensure_finite(loss.total, epoch, &s.video_id)?;
            opt.step(&mut [&mut model.params])?;
            loss_sum += loss.total;
            stage_sum.iter_mut().zip(&loss.per_stage).for_each(|(a, b)| *a += b);
            hits += correct(&last, &s.target);
            frames += s.target.len();
        }
        let n = samples.len() as f64;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / n,
            train_acc: hits as f64 / frames as f64,
            seconds: start.elapsed().as_secs_f64(),
            stage_losses: stage_sum.into_iter().map(|v| v / n).collect(),
            predictor_acc: None,
        });
        maybe_checkpoint(cfg, epoch, &[("refiner.", &model.params)])?;
    }
    Ok((model, history))
}

/// Accumulates refiner gradients for one sample; returns the loss and the last stage output.
pub(crate) fn refiner_gradients(
    model: &mut RefinerModel,
    input: &Tensor,
    target: &[usize],
) -> Result<(LossValue, ProbSeq)> {
    let pass = model.forward_train(input)?;
    let loss = refinement_loss(&pass.outputs, target)?;
    let dps = pass
        .outputs
        .iter()
        .map(|p| cross_entropy_dp(p, target))
        .collect::<Result<Vec<_>>>()?;
    model.backward(&pass, &dps)?;
    let last = pass.outputs.last().expect("stacks >= 1").clone();
    Ok((loss, last))
}

pub(crate) struct JointStep {
    pub total: f64,
    pub stage_losses: Vec<f64>,
    pub initial: ProbSeq,
    pub last: ProbSeq,
}

/// Accumulates joint gradients of predictor and refiner for one video.
pub(crate) fn e2e_gradients(
    predictor: &mut PredictorModel,
    refiner: Option<&mut RefinerModel>,
    v: &VideoRecord,
    lambda: f64,
) -> Result<JointStep> {
    let (p, cache) = predictor.forward_train(v.features.tensor())?;
    let (p_loss, mut dp) = predictor_loss_dp(&p, &v.labels, lambda)?;
    let mut step = JointStep {
        total: p_loss.total,
        stage_losses: Vec::new(),
        initial: p.clone(),
        last: p,
    };
    if let Some(r) = refiner {
        let pass = r.forward_train(step.initial.tensor())?;
        let r_loss = refinement_loss(&pass.outputs, &v.labels)?;
        step.total += r_loss.total;
        step.stage_losses = r_loss.per_stage;
        let dps = pass
            .outputs
            .iter()
            .map(|o| cross_entropy_dp(o, &v.labels))
            .collect::<Result<Vec<Tensor>>>()?;
        dp.add_assign(&r.backward(&pass, &dps)?)?;
        step.last = pass.outputs.last().expect("stacks >= 1").clone();
    }
    let dlogits = softmax_rows_backward(step.initial.tensor(), &dp);
    predictor.backward(&cache, &dlogits)?;
    Ok(step)
}

/// Joint training: predictor loss on the first stage plus cross-entropy on every
/// refinement stage, unit weights, gradients flowing through all stages.
/// With `rcfg = None` this is plain predictor training.
pub fn train_e2e(
    videos: &[VideoRecord],
    pcfg: PredictorConfig,
    rcfg: Option<RefinerConfig>,
    cfg: &TrainConfig,
) -> Result<(MultiStageModel, TrainHistory)> {
    cfg.validate()?;
    check_videos(videos, &pcfg)?;
    let mut predictor = PredictorModel::new(pcfg, &mut predictor_init_stream(cfg.seed))?;
    let mut refiner = rcfg
        .map(|r| RefinerModel::new(r, &mut refiner_init_stream(cfg.seed)))
        .transpose()?;
    if let Some(r) = &refiner {
        if r.config.classes != pcfg.classes {
            return Err(Error::invalid("refiner class count differs from predictor"));
        }
    }
    let mut opt = {
        let mut sets = vec![&predictor.params];
        sets.extend(refiner.as_ref().map(|r| &r.params));
        Optimizer::new(&sets, cfg)
    };
    let stacks = refiner.as_ref().map_or(0, |r| r.config.stacks);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut stage_sum = vec![0.0; stacks];
        let (mut hits, mut p_hits, mut frames) = (0usize, 0usize, 0usize);
        for i in epoch_order(videos.len(), epoch, cfg) {
            let v = &videos[i];
            let step = e2e_gradients(&mut predictor, refiner.as_mut(), v, cfg.lambda).map_err(located(epoch, &v.id))?;
            ensure_finite(step.total, epoch, &v.id)?;
            stage_sum.iter_mut().zip(&step.stage_losses).for_each(|(a, b)| *a += b);
            p_hits += correct(&step.initial, &v.labels);
            let total = step.total;
            let final_hits = correct(&step.last, &v.labels);
            match refiner.as_mut() {
                Some(r) => opt.step(&mut [&mut predictor.params, &mut r.params])?,
                None => opt.step(&mut [&mut predictor.params])?,
            }
            loss_sum += total;
            hits += final_hits;
            frames += v.frames();
        }
        let n = videos.len() as f64;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / n,
            train_acc: hits as f64 / frames as f64,
            seconds: start.elapsed().as_secs_f64(),
            stage_losses: stage_sum.into_iter().map(|v| v / n).collect(),
            predictor_acc: refiner.as_ref().map(|_| p_hits as f64 / frames as f64),
        });
        let mut sets: Vec<(&str, &ParamSet)> = vec![("predictor.", &predictor.params)];
        if let Some(r) = &refiner {
            sets.push(("refiner.", &r.params));
        }
        maybe_checkpoint(cfg, epoch, &sets)?;
    }
    Ok((MultiStageModel::new(predictor, refiner)?, history))
}
