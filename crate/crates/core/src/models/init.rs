use crate::nncore::{RngStream, Tensor};

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    t
}
