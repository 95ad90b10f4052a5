//! Per-video sequence types shared across stages.

use crate::error::{Error, Result};
use crate::nncore::Tensor;

/// Tolerance on row sums for a valid probability sequence.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Per-frame feature vectors, `[T, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq(Tensor);

impl FeatureSeq {
    pub fn new(t: Tensor) -> Result<Self> {
        t.expect_rank2("FeatureSeq")?;
        Ok(FeatureSeq(t))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    /// First `len` frames.
    pub fn prefix(&self, len: usize) -> FeatureSeq {
        let d = self.dim();
        FeatureSeq(Tensor::from_vec(&[len, d], self.0.data()[..len * d].to_vec()).expect("prefix of valid tensor"))
    }
}

/// Per-frame class probabilities, `[T, C]`; every row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeq(Tensor);

impl ProbSeq {
    pub fn new(t: Tensor) -> Result<Self> {
        let (rows, c) = t.expect_rank2("ProbSeq")?;
        if c == 0 {
            return Err(Error::invalid("probability sequence needs at least one class"));
        }
        for r in 0..rows {
            let row = t.row(r);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("frame {r}: probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("frame {r}: row sums to {s}")));
            }
        }
        Ok(ProbSeq(t))
    }

    /// Wraps softmax output without re-validating.
    pub(crate) fn from_softmax(t: Tensor) -> Self {
        debug_assert!(ProbSeq::new(t.clone()).is_ok());
        ProbSeq(t)
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    /// Per-frame argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.frames()).map(|t| argmax(self.row(t))).collect()
    }

    /// One-hot rows for the given labels.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut t = Tensor::zeros(&[labels.len(), classes]);
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
            }
            t.row_mut(r)[l] = 1.0;
        }
        Ok(ProbSeq(t))
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_labels(labels: &[usize], frames: usize, classes: usize) -> Result<()> {
    if labels.len() != frames {
        return Err(Error::invalid(format!(
            "length mismatch: {} labels for {frames} frames",
            labels.len()
        )));
    }
    if let Some((t, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::invalid(format!(
            "label {l} at frame {t} out of range [0, {classes})"
        )));
    }
    Ok(())
}
