//! Predictor stage, refinement stages and multi-stage inference (batch and online).

pub mod bundle;
pub mod gru_net;
mod init;
pub mod multistage;
pub mod predictor;
pub mod refiner;
pub mod tcn;

pub use bundle::{BundleSpec, ModelBundle};
pub use multistage::{multistage_infer, streaming_infer, FrameOutput, Inference, MultiStageModel, OnlineSession};
pub use predictor::{predictor_forward, PredictorConfig, PredictorModel};
pub use refiner::{refiner_forward, RefinerConfig, RefinerModel, RefinerVariant};
pub use tcn::{TcnConfig, TcnNet};
