//! Seeded synthetic workflow benchmark.
//!
//! Each video walks through the phases in increasing order (some skipped).
//! A frame's feature is its phase prototype plus noise; frames near a phase
//! boundary may instead be a convex blend with the neighbouring phase's
//! prototype, and those frames are flagged as hard. Optionally, short
//! distractor bursts inside a phase look mostly like some other phase; those
//! frames are flagged hard as well.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::nncore::{RngStream, Tensor};
use crate::seq::FeatureSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Log-normal phase duration parameters, in frames.
    pub duration_log_mean: f64,
    pub duration_log_sd: f64,
    pub min_phase_len: usize,
    pub max_phase_len: usize,
    pub phase_skip_prob: f64,
    pub noise_sd: f64,
    /// AR(1) coefficient of the per-frame noise; 0 gives white noise.
    pub noise_corr: f64,
    /// Standard deviation of a per-video constant offset added to every frame.
    pub video_shift_sd: f64,
    pub ambiguity_window: usize,
    pub ambiguity_prob: f64,
    pub blend_min: f64,
    pub blend_max: f64,
    /// Per-frame probability of a distractor burst starting mid-phase.
    pub distractor_rate: f64,
    pub distractor_min_len: usize,
    pub distractor_max_len: usize,
    /// Weight of the true prototype inside a burst; the rest goes to the distractor.
    pub distractor_alpha: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 7,
            dim: 16,
            train_videos: 40,
            test_videos: 14,
            duration_log_mean: 4.2,
            duration_log_sd: 0.5,
            min_phase_len: 20,
            max_phase_len: 400,
            phase_skip_prob: 0.05,
            noise_sd: 0.3,
            noise_corr: 0.0,
            video_shift_sd: 0.3,
            ambiguity_window: 8,
            ambiguity_prob: 0.6,
            blend_min: 0.3,
            blend_max: 0.7,
            distractor_rate: 0.0,
            distractor_min_len: 3,
            distractor_max_len: 12,
            distractor_alpha: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Noiseless, unambiguous variant of this config.
    pub fn clean(mut self) -> Self {
        self.noise_sd = 0.0;
        self.video_shift_sd = 0.0;
        self.ambiguity_prob = 0.0;
        self.distractor_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        prob("phase_skip_prob", self.phase_skip_prob)?;
        prob("ambiguity_prob", self.ambiguity_prob)?;
        prob("blend_min", self.blend_min)?;
        prob("blend_max", self.blend_max)?;
        prob("distractor_rate", self.distractor_rate)?;
        prob("distractor_alpha", self.distractor_alpha)?;
        if self.distractor_min_len == 0 || self.distractor_min_len > self.distractor_max_len {
            return Err(Error::invalid("distractor lengths must satisfy 0 < min <= max"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.classes > self.dim {
            return Err(Error::invalid(format!(
                "cannot build {} orthogonal prototypes in {} dimensions; raise dim to at least {}",
                self.classes, self.dim, self.classes
            )));
        }
        if self.blend_min > self.blend_max {
            return Err(Error::invalid("blend_min exceeds blend_max"));
        }
        if self.min_phase_len == 0 || self.min_phase_len > self.max_phase_len {
            return Err(Error::invalid("phase length bounds must satisfy 0 < min <= max"));
        }
        if !(0.0..1.0).contains(&self.noise_corr) {
            return Err(Error::invalid("noise_corr must be in [0, 1)"));
        }
        if self.noise_sd < 0.0 || self.video_shift_sd < 0.0 {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        Ok(())
    }
}

/// Orthonormal per-phase prototype vectors, `[C, D]`.
pub fn prototypes(cfg: &SynthConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (c, d) = (cfg.classes, cfg.dim);
    let mut rng = RngStream::derive(cfg.seed, 0x5052_4f54);
    let mut protos = Tensor::zeros(&[c, d]);
    for i in 0..c {
        for _attempt in 0..8 {
            let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            for j in 0..i {
                let pj = protos.row(j);
                let proj: f64 = v.iter().zip(pj).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(pj).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                protos.row_mut(i).iter_mut().zip(&v).for_each(|(p, a)| *p = a / norm);
                break;
            }
        }
        if protos.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("prototype construction failed; raise dim"));
        }
    }
    Ok(protos)
}

fn phase_plan(cfg: &SynthConfig, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut plan = Vec::new();
    for phase in 0..cfg.classes {
        let skip = rng.bernoulli(cfg.phase_skip_prob);
        let len = (cfg.duration_log_mean + cfg.duration_log_sd * rng.normal())
            .exp()
            .round()
            .clamp(cfg.min_phase_len as f64, cfg.max_phase_len as f64) as usize;
        if !skip {
            plan.push((phase, len));
        }
    }
    if plan.is_empty() {
        let phase = rng.below(cfg.classes);
        plan.push((phase, cfg.min_phase_len));
    }
    plan
}

/// Generates one video. `index` selects an independent random stream.
pub fn generate_video(cfg: &SynthConfig, protos: &Tensor, id: &str, index: u64) -> VideoRecord {
    let mut rng = RngStream::derive(cfg.seed, 0x1000 + index);
    let plan = phase_plan(cfg, &mut rng);
    let t_total: usize = plan.iter().map(|p| p.1).sum();
    let d = cfg.dim;
    let shift: Vec<f64> = (0..d).map(|_| cfg.video_shift_sd * rng.normal()).collect();
    let innov = (1.0 - cfg.noise_corr * cfg.noise_corr).sqrt();
    let mut noise = vec![0.0; d];
    for v in noise.iter_mut() {
        *v = rng.normal();
    }

    let mut feats = Tensor::zeros(&[t_total, d]);
    let mut labels = Vec::with_capacity(t_total);
    let mut hard = Vec::with_capacity(t_total);
    let w = cfg.ambiguity_window;
    let mut burst: Option<(usize, usize)> = None;
    let mut t = 0;
    for (seg, &(phase, len)) in plan.iter().enumerate() {
        for k in 0..len {
            if t > 0 {
                for v in noise.iter_mut() {
                    *v = cfg.noise_corr * *v + innov * rng.normal();
                }
            }
            // Neighbouring phase whose boundary is within the ambiguity window.
            let from_start = k;
            let to_end = len - 1 - k;
            let near_start = seg > 0 && from_start < w;
            let near_end = seg + 1 < plan.len() && to_end < w;
            let neighbour = match (near_start, near_end) {
                (true, true) if from_start <= to_end => Some(plan[seg - 1].0),
                (true, false) => Some(plan[seg - 1].0),
                (_, true) => Some(plan[seg + 1].0),
                (false, false) => None,
            };
            let mut blend = match neighbour {
                Some(other) if rng.bernoulli(cfg.ambiguity_prob) => {
                    Some((other, rng.uniform_range(cfg.blend_min, cfg.blend_max)))
                }
                _ => None,
            };
            if k == 0 {
                burst = None;
            }
            if neighbour.is_none() && cfg.distractor_rate > 0.0 {
                if burst.is_none() && cfg.classes > 1 && rng.bernoulli(cfg.distractor_rate) {
                    let len = cfg.distractor_min_len + rng.below(cfg.distractor_max_len - cfg.distractor_min_len + 1);
                    let other = (phase + 1 + rng.below(cfg.classes - 1)) % cfg.classes;
                    burst = Some((other, len));
                }
                if let Some((other, left)) = burst {
                    blend = Some((other, cfg.distractor_alpha));
                    burst = (left > 1).then_some((other, left - 1));
                }
            }
            let row = feats.row_mut(t);
            let own = protos.row(phase);
            match blend {
                Some((other, alpha)) => {
                    let oth = protos.row(other);
                    for j in 0..d {
                        row[j] = alpha * own[j] + (1.0 - alpha) * oth[j];
                    }
                }
                None => row.copy_from_slice(own),
            }
            for j in 0..d {
                row[j] += shift[j] + cfg.noise_sd * noise[j];
                row[j] = row[j] as f32 as f64;
            }
            labels.push(phase);
            hard.push(blend.is_some());
            t += 1;
        }
    }
    VideoRecord {
        id: id.to_owned(),
        features: FeatureSeq::new(feats).expect("rank-2 features"),
        labels,
        hard_mask: Some(hard),
    }
}

pub fn train_id(i: usize) -> String {
    format!("train_{i:03}")
}

pub fn test_id(i: usize) -> String {
    format!("test_{i:03}")
}

/// Generates the full benchmark in memory.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let protos = prototypes(cfg)?;
    let train = (0..cfg.train_videos)
        .map(|i| generate_video(cfg, &protos, &train_id(i), i as u64))
        .collect();
    let test = (0..cfg.test_videos)
        .map(|i| generate_video(cfg, &protos, &test_id(i), (cfg.train_videos + i) as u64))
        .collect();
    Ok(Dataset {
        classes: cfg.classes,
        dim: cfg.dim,
        train,
        test,
        generator: Some(cfg.clone()),
    })
}

/// Frames lying within `w` frames of a phase change, per video.
pub fn near_boundary(labels: &[usize], w: usize) -> Vec<bool> {
    let n = labels.len();
    let mut near = vec![false; n];
    for b in 1..n {
        if labels[b] != labels[b - 1] {
            let lo = b.saturating_sub(w);
            let hi = (b + w).min(n);
            near[lo..hi].iter_mut().for_each(|v| *v = true);
        }
    }
    near
}
