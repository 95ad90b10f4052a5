use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::tcn::{TcnCache, TcnConfig, TcnNet, TcnStream};
use crate::nncore::{softmax_rows, ParamSet, RngStream, Tensor};
use crate::seq::{FeatureSeq, ProbSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub features: usize,
    pub classes: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_filters() -> usize {
    16
}
fn default_layers() -> usize {
    8
}
fn default_kernel() -> usize {
    3
}

impl PredictorConfig {
    pub fn new(features: usize, classes: usize) -> Self {
        PredictorConfig {
            features,
            classes,
            filters: default_filters(),
            layers: default_layers(),
            kernel: default_kernel(),
        }
    }

    fn tcn(&self) -> TcnConfig {
        TcnConfig {
            in_dim: self.features,
            filters: self.filters,
            layers: self.layers,
            kernel: self.kernel,
            classes: self.classes,
            causal: true,
        }
    }
}

/// Causal TCN mapping frame features to initial phase probabilities.
#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub params: ParamSet,
    net: TcnNet,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig, rng: &mut RngStream) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = TcnNet::init(config.tcn(), "", &mut params, rng)?;
        Ok(PredictorModel { config, params, net })
    }

    /// Rebuilds the model around previously trained parameters.
    pub fn from_params(config: PredictorConfig, trained: &ParamSet) -> Result<Self> {
        let mut m = PredictorModel::new(config, &mut RngStream::new(0))?;
        m.params.load_values(trained)?;
        Ok(m)
    }

    fn check(&self, features: &Tensor) -> Result<()> {
        if features.cols() != self.config.features {
            return Err(Error::shape(
                "predictor_forward",
                features.shape(),
                &[features.rows(), self.config.features],
            ));
        }
        Ok(())
    }

    pub fn forward(&self, features: &FeatureSeq) -> Result<ProbSeq> {
        self.check(features.tensor())?;
        let (logits, _) = self.net.forward(&self.params, features.tensor())?;
        Ok(ProbSeq::from_softmax(softmax_rows(&logits)?))
    }

    pub(crate) fn forward_train(&self, features: &Tensor) -> Result<(ProbSeq, TcnCache)> {
        self.check(features)?;
        let (logits, cache) = self.net.forward(&self.params, features)?;
        Ok((ProbSeq::from_softmax(softmax_rows(&logits)?), cache))
    }

    /// Takes `dL/dlogits`, accumulates gradients, returns `dL/dfeatures`.
    pub(crate) fn backward(&mut self, cache: &TcnCache, dlogits: &Tensor) -> Result<Tensor> {
        self.net.backward(&mut self.params, cache, dlogits)
    }

    pub(crate) fn stream(&self) -> Result<TcnStream> {
        self.net.stream()
    }

    pub(crate) fn step(&self, state: &mut TcnStream, x_t: &[f64]) -> Result<Vec<f64>> {
        self.net.step(&self.params, state, x_t)
    }
}

/// Runs the predictor stage over one video.
pub fn predictor_forward(features: &FeatureSeq, model: &PredictorModel) -> Result<ProbSeq> {
    model.forward(features)
}
