//! Predictor-stage loss (cross-entropy plus probability smoothing) and the
//! refinement-stage cross-entropy summed over stacked stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{softmax_rows_backward, Tensor};
use crate::seq::{check_labels, ProbSeq};

/// Probabilities are clamped below at this value before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub ce_term: f64,
    pub smooth_term: f64,
    pub lambda: f64,
    /// Cross-entropy of each refinement stage; empty for the predictor loss.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_stage: Vec<f64>,
}

fn validate(p: &ProbSeq, labels: &[usize]) -> Result<()> {
    if p.frames() == 0 {
        return Err(Error::invalid("loss over an empty sequence"));
    }
    check_labels(labels, p.frames(), p.classes())
}

fn mean_ce(p: &ProbSeq, labels: &[usize]) -> f64 {
    let t = p.frames() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(r, &c)| -p.row(r)[c].max(PROB_CLAMP).ln())
        .sum::<f64>()
        / t
}

fn smooth(p: &ProbSeq) -> f64 {
    let (t, c) = (p.frames(), p.classes());
    let mut acc = 0.0;
    for r in 0..t.saturating_sub(1) {
        for (a, b) in p.row(r).iter().zip(p.row(r + 1)) {
            acc += (a - b) * (a - b);
        }
    }
    acc / (t * c) as f64
}

/// `(1/T) Σ -log p[t, c_t] + λ (1/(TC)) Σ_m Σ_{t<T-1} (p[t,m] - p[t+1,m])²`.
pub fn predictor_loss(p: &ProbSeq, labels: &[usize], lambda: f64) -> Result<LossValue> {
    validate(p, labels)?;
    let ce_term = mean_ce(p, labels);
    let smooth_term = smooth(p);
    Ok(LossValue {
        total: ce_term + lambda * smooth_term,
        ce_term,
        smooth_term,
        lambda,
        per_stage: Vec::new(),
    })
}

/// `dL/dp` of the mean cross-entropy, honoring the clamp.
fn ce_dp(p: &ProbSeq, labels: &[usize], dp: &mut Tensor) {
    let t = p.frames() as f64;
    for (r, &c) in labels.iter().enumerate() {
        let pc = p.row(r)[c];
        if pc > PROB_CLAMP {
            dp.row_mut(r)[c] -= 1.0 / (t * pc);
        }
    }
}

fn smooth_dp(p: &ProbSeq, scale: f64, dp: &mut Tensor) {
    let (t, c) = (p.frames(), p.classes());
    let k = 2.0 * scale / (t * c) as f64;
    for r in 0..t.saturating_sub(1) {
        for m in 0..c {
            let d = k * (p.row(r)[m] - p.row(r + 1)[m]);
            dp.row_mut(r)[m] += d;
            dp.row_mut(r + 1)[m] -= d;
        }
    }
}

/// Loss value and `dL/dp` (gradient w.r.t. the probabilities themselves).
pub fn predictor_loss_dp(p: &ProbSeq, labels: &[usize], lambda: f64) -> Result<(LossValue, Tensor)> {
    let value = predictor_loss(p, labels, lambda)?;
    let mut dp = Tensor::zeros(p.tensor().shape());
    ce_dp(p, labels, &mut dp);
    smooth_dp(p, lambda, &mut dp);
    Ok((value, dp))
}

/// Loss value and gradient w.r.t. the pre-softmax logits that produced `p`.
pub fn predictor_loss_grad(p: &ProbSeq, labels: &[usize], lambda: f64) -> Result<(LossValue, Tensor)> {
    let (value, dp) = predictor_loss_dp(p, labels, lambda)?;
    Ok((value, softmax_rows_backward(p.tensor(), &dp)))
}

/// Sum over stages of the mean frame cross-entropy.
pub fn refinement_loss(stage_outputs: &[ProbSeq], labels: &[usize]) -> Result<LossValue> {
    if stage_outputs.is_empty() {
        return Err(Error::invalid("refinement loss needs at least one stage output"));
    }
    let mut per_stage = Vec::with_capacity(stage_outputs.len());
    for p in stage_outputs {
        validate(p, labels)?;
        per_stage.push(mean_ce(p, labels));
    }
    let total = per_stage.iter().sum();
    Ok(LossValue {
        total,
        ce_term: total,
        smooth_term: 0.0,
        lambda: 0.0,
        per_stage,
    })
}

/// `dL/dp` for one stage's mean cross-entropy.
pub fn cross_entropy_dp(p: &ProbSeq, labels: &[usize]) -> Result<Tensor> {
    validate(p, labels)?;
    let mut dp = Tensor::zeros(p.tensor().shape());
    ce_dp(p, labels, &mut dp);
    Ok(dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(rows: &[Vec<f64>]) -> ProbSeq {
        ProbSeq::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn single_uniform_frame() {
        let l = predictor_loss(&ps(&[vec![0.5, 0.5]]), &[0], 1.0).unwrap();
        assert!((l.ce_term - 2f64.ln()).abs() < 1e-12);
        assert_eq!(l.smooth_term, 0.0);
        assert!((l.total - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn constant_rows() {
        let l = predictor_loss(&ps(&[vec![0.9, 0.1], vec![0.9, 0.1]]), &[0, 0], 1.0).unwrap();
        assert!((l.total - 0.105361).abs() < 1e-6);
        assert_eq!(l.smooth_term, 0.0);
    }

    #[test]
    fn switching_rows() {
        let l = predictor_loss(&ps(&[vec![0.9, 0.1], vec![0.1, 0.9]]), &[0, 1], 1.0).unwrap();
        assert!((l.ce_term - 0.105361).abs() < 1e-6);
        assert!((l.smooth_term - 0.32).abs() < 1e-12);
        assert!((l.total - 0.425361).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_labels_and_empty() {
        assert!(predictor_loss(&ps(&[vec![0.5, 0.5]]), &[2], 1.0).is_err());
        assert!(predictor_loss(&ps(&[vec![0.5, 0.5]]), &[0, 0], 1.0).is_err());
        let empty = ProbSeq::new(Tensor::zeros(&[0, 2])).unwrap();
        assert!(predictor_loss(&empty, &[], 1.0).is_err());
    }

    #[test]
    fn refinement_examples() {
        let perfect = ProbSeq::one_hot(&[0, 2, 1], 3).unwrap();
        let l = refinement_loss(&[perfect], &[0, 2, 1]).unwrap();
        assert!(l.total <= 1e-9);

        let uniform = ps(&[vec![0.25; 4], vec![0.25; 4]]);
        let l = refinement_loss(&[uniform.clone()], &[3, 1]).unwrap();
        assert!((l.total - 4f64.ln()).abs() < 1e-12);

        let one = refinement_loss(&[uniform.clone()], &[0, 1]).unwrap().total;
        let three = refinement_loss(&[uniform.clone(), uniform.clone(), uniform], &[0, 1]).unwrap();
        assert!((three.total - 3.0 * one).abs() < 1e-12);
        assert_eq!(three.per_stage.len(), 3);
        assert!(refinement_loss(&[], &[0]).is_err());
    }
}
