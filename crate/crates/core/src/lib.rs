//! Multi-stage online phase recognition: a causal TCN predictor followed by
//! refinement stages trained separately on disturbed prediction sequences.

pub mod dataset;
pub mod disturb;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod losses;
pub mod models;
pub mod nncore;
pub mod seq;
pub mod trainer;

pub use error::{Error, Result};
pub use seq::{FeatureSeq, ProbSeq};
