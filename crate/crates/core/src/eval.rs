//! Frame-wise metrics: accuracy, per-phase Jaccard and per-phase recall.
//!
//! Per-phase scores are averaged within a video over the phases present in its
//! ground truth; reports then give mean and population std across videos.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::VideoRecord;
use crate::error::{Error, Result};
use crate::models::MultiStageModel;

fn check_pair(pred: &[usize], gt: &[usize]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::invalid("empty label sequence"));
    }
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "length mismatch: prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_pair(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Per phase present in `gt`: (intersection, union, gt count).
fn phase_counts(pred: &[usize], gt: &[usize]) -> BTreeMap<usize, (usize, usize, usize)> {
    let phases: BTreeSet<usize> = gt.iter().copied().collect();
    phases
        .into_iter()
        .map(|c| {
            let (mut inter, mut union, mut support) = (0, 0, 0);
            for (&p, &g) in pred.iter().zip(gt) {
                inter += usize::from(p == c && g == c);
                union += usize::from(p == c || g == c);
                support += usize::from(g == c);
            }
            (c, (inter, union, support))
        })
        .collect()
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

pub fn phase_jaccard(pred: &[usize], gt: &[usize]) -> Result<(BTreeMap<usize, f64>, f64)> {
    check_pair(pred, gt)?;
    let per: BTreeMap<usize, f64> = phase_counts(pred, gt)
        .into_iter()
        .map(|(c, (i, u, _))| (c, i as f64 / u as f64))
        .collect();
    let m = mean(per.values().copied());
    Ok((per, m))
}

pub fn phase_recall(pred: &[usize], gt: &[usize]) -> Result<(BTreeMap<usize, f64>, f64)> {
    check_pair(pred, gt)?;
    let per: BTreeMap<usize, f64> = phase_counts(pred, gt)
        .into_iter()
        .map(|(c, (i, _, s))| (c, i as f64 / s as f64))
        .collect();
    let m = mean(per.values().copied());
    Ok((per, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    pub jacc: f64,
    pub rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub id: String,
    pub acc: f64,
    pub jacc: f64,
    pub rec: f64,
    pub per_phase: BTreeMap<usize, PhaseScore>,
}

impl VideoMetrics {
    pub fn compute(id: impl Into<String>, pred: &[usize], gt: &[usize]) -> Result<Self> {
        let acc = accuracy(pred, gt)?;
        let (pj, jacc) = phase_jaccard(pred, gt)?;
        let (pr, rec) = phase_recall(pred, gt)?;
        let per_phase = pj
            .iter()
            .map(|(&c, &j)| (c, PhaseScore { jacc: j, rec: pr[&c] }))
            .collect();
        Ok(VideoMetrics {
            id: id.into(),
            acc,
            jacc,
            rec,
            per_phase,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: MeanStd,
    pub jacc: MeanStd,
    pub rec: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub videos: Vec<VideoMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,acc,jacc,rec\n");
        for v in &self.videos {
            out.push_str(&format!("{},{},{},{}\n", v.id, v.acc, v.jacc, v.rec));
        }
        out
    }
}

/// Builds a report with videos sorted by id.
pub fn aggregate(videos: Vec<VideoMetrics>) -> Result<MetricsReport> {
    if videos.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of videos"));
    }
    let mut videos = videos;
    videos.sort_by(|a, b| a.id.cmp(&b.id));
    let col = |f: fn(&VideoMetrics) -> f64| MeanStd::of(&videos.iter().map(f).collect::<Vec<_>>());
    let aggregate = Aggregate {
        acc: col(|v| v.acc),
        jacc: col(|v| v.jacc),
        rec: col(|v| v.rec),
    };
    Ok(MetricsReport { videos, aggregate })
}

/// Final-stage predictions of `model` scored against each video's labels.
pub fn evaluate_model(model: &MultiStageModel, videos: &[VideoRecord]) -> Result<MetricsReport> {
    let metrics = videos
        .iter()
        .map(|v| {
            let inf = model.infer(&v.features)?;
            VideoMetrics::compute(v.id.clone(), &inf.labels, &v.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub acc: f64,
    pub jacc: f64,
    pub rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedVideo {
    pub id: String,
    /// `b − a` for this video.
    pub delta: MetricDeltas,
    /// `"a"`, `"b"` or `"tie"` by accuracy.
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Differences of means, `b − a`.
    pub delta: MetricDeltas,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub videos: Vec<PairedVideo>,
}

pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison> {
    let ids = |r: &MetricsReport| r.videos.iter().map(|v| v.id.clone()).collect::<BTreeSet<_>>();
    if ids(a) != ids(b) {
        return Err(Error::invalid("reports cover different video id sets"));
    }
    let bmap: BTreeMap<&str, &VideoMetrics> = b.videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut videos = Vec::with_capacity(a.videos.len());
    let (mut wins_a, mut wins_b, mut ties) = (0, 0, 0);
    for va in &a.videos {
        let vb = bmap[va.id.as_str()];
        let delta = MetricDeltas {
            acc: vb.acc - va.acc,
            jacc: vb.jacc - va.jacc,
            rec: vb.rec - va.rec,
        };
        let winner = if delta.acc > 0.0 {
            wins_b += 1;
            "b"
        } else if delta.acc < 0.0 {
            wins_a += 1;
            "a"
        } else {
            ties += 1;
            "tie"
        };
        videos.push(PairedVideo {
            id: va.id.clone(),
            delta,
            winner: winner.to_string(),
        });
    }
    let (ga, gb) = (&a.aggregate, &b.aggregate);
    Ok(Comparison {
        delta: MetricDeltas {
            acc: gb.acc.mean - ga.acc.mean,
            jacc: gb.jacc.mean - ga.jacc.mean,
            rec: gb.rec.mean - ga.rec.mean,
        },
        wins_a,
        wins_b,
        ties,
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let (p, g) = ([0, 0, 1, 1], [0, 1, 1, 1]);
        assert_eq!(accuracy(&p, &g).unwrap(), 0.75);
        let (pj, j) = phase_jaccard(&p, &g).unwrap();
        assert!((pj[&0] - 0.5).abs() < 1e-15 && (pj[&1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((j - 7.0 / 12.0).abs() < 1e-15);
        let (_, r) = phase_recall(&p, &g).unwrap();
        assert!((r - 5.0 / 6.0).abs() < 1e-15);
        let (_, j2) = phase_jaccard(&[0, 0], &[0, 1]).unwrap();
        assert!((j2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn two_video_aggregate() {
        let v = |id: &str, acc| VideoMetrics {
            id: id.into(),
            acc,
            jacc: acc,
            rec: acc,
            per_phase: BTreeMap::new(),
        };
        let r = aggregate(vec![v("b", 1.0), v("a", 0.8)]).unwrap();
        assert!((r.aggregate.acc.mean - 0.9).abs() < 1e-12);
        assert!((r.aggregate.acc.std - 0.1).abs() < 1e-12);
        assert_eq!(r.videos[0].id, "a");
        assert!(aggregate(vec![]).is_err());
    }
}
