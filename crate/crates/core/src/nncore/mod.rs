//! Dense numerics: tensors, layer primitives with hand-written backward passes,
//! Adam, seeded randomness and a finite-difference gradient checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use gru::{gru_sequence_backward, gru_sequence_forward, gru_step, GruCache, GruGrads, GruWeights};
pub use ops::{
    acausal_dilated_conv1d, causal_dilated_conv1d, conv1d_backward, conv1d_forward, linear_backward, linear_forward,
    relu, relu_backward, softmax_rows, softmax_rows_backward, Padding,
};
pub use params::{Param, ParamId, ParamSet};
pub use rng::RngStream;
pub use tensor::Tensor;
