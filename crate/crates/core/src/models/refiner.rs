use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::gru_net::{GruNet, GruNetCache, GruNetConfig};
use crate::models::tcn::{TcnCache, TcnConfig, TcnNet, TcnStream};
use crate::nncore::ops::softmax_in_place;
use crate::nncore::{softmax_rows, softmax_rows_backward, ParamSet, RngStream, Tensor};
use crate::seq::ProbSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefinerVariant {
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "causal-tcn")]
    CausalTcn,
    /// Offline: reads future frames.
    #[serde(rename = "tcn")]
    Tcn,
}

impl RefinerVariant {
    pub fn is_causal(self) -> bool {
        !matches!(self, RefinerVariant::Tcn)
    }

    pub fn name(self) -> &'static str {
        match self {
            RefinerVariant::Gru => "gru",
            RefinerVariant::CausalTcn => "causal-tcn",
            RefinerVariant::Tcn => "tcn",
        }
    }
}

impl fmt::Display for RefinerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefinerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(RefinerVariant::Gru),
            "causal-tcn" => Ok(RefinerVariant::CausalTcn),
            "tcn" => Ok(RefinerVariant::Tcn),
            other => Err(Error::invalid(format!(
                "unknown refiner variant {other:?} (expected gru, causal-tcn or tcn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerConfig {
    pub variant: RefinerVariant,
    pub classes: usize,
    #[serde(default = "default_stacks")]
    pub stacks: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_stacks() -> usize {
    1
}
fn default_hidden() -> usize {
    32
}
fn default_filters() -> usize {
    16
}
fn default_layers() -> usize {
    6
}
fn default_kernel() -> usize {
    3
}

impl RefinerConfig {
    pub fn new(variant: RefinerVariant, classes: usize, stacks: usize) -> Self {
        RefinerConfig {
            variant,
            classes,
            stacks,
            hidden: default_hidden(),
            filters: default_filters(),
            layers: default_layers(),
            kernel: default_kernel(),
        }
    }
}

#[derive(Debug, Clone)]
enum StageNet {
    Gru(GruNet),
    Tcn(TcnNet),
}

#[derive(Debug, Clone)]
pub(crate) enum StageCache {
    Gru(GruNetCache),
    Tcn(TcnCache),
}

#[derive(Debug, Clone)]
pub(crate) enum StageStream {
    Gru(Vec<f64>),
    Tcn(TcnStream),
}

impl StageNet {
    fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, StageCache)> {
        Ok(match self {
            StageNet::Gru(n) => {
                let (l, c) = n.forward(params, x)?;
                (l, StageCache::Gru(c))
            }
            StageNet::Tcn(n) => {
                let (l, c) = n.forward(params, x)?;
                (l, StageCache::Tcn(c))
            }
        })
    }

    fn backward(&self, params: &mut ParamSet, cache: &StageCache, dlogits: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (StageNet::Gru(n), StageCache::Gru(c)) => n.backward(params, c, dlogits),
            (StageNet::Tcn(n), StageCache::Tcn(c)) => n.backward(params, c, dlogits),
            _ => unreachable!("stage cache variant matches its network"),
        }
    }
}

/// A stack of `n` refinement stages sharing an architecture but not weights.
#[derive(Debug, Clone)]
pub struct RefinerModel {
    pub config: RefinerConfig,
    pub params: ParamSet,
    stages: Vec<StageNet>,
}

/// Per-stage outputs and caches from a training forward pass.
pub(crate) struct RefinerPass {
    pub outputs: Vec<ProbSeq>,
    caches: Vec<StageCache>,
}

impl RefinerModel {
    pub fn new(config: RefinerConfig, rng: &mut RngStream) -> Result<Self> {
        if config.stacks == 0 {
            return Err(Error::invalid("refiner needs at least one stage"));
        }
        if config.classes == 0 {
            return Err(Error::invalid("refiner needs at least one class"));
        }
        let mut params = ParamSet::new();
        let mut stages = Vec::with_capacity(config.stacks);
        for s in 0..config.stacks {
            let prefix = format!("stage{s}.");
            let stage = match config.variant {
                RefinerVariant::Gru => StageNet::Gru(GruNet::init(
                    GruNetConfig {
                        in_dim: config.classes,
                        hidden: config.hidden,
                        classes: config.classes,
                    },
                    &prefix,
                    &mut params,
                    rng,
                )?),
                RefinerVariant::CausalTcn | RefinerVariant::Tcn => StageNet::Tcn(TcnNet::init(
                    TcnConfig {
                        in_dim: config.classes,
                        filters: config.filters,
                        layers: config.layers,
                        kernel: config.kernel,
                        classes: config.classes,
                        causal: config.variant.is_causal(),
                    },
                    &prefix,
                    &mut params,
                    rng,
                )?),
            };
            stages.push(stage);
        }
        Ok(RefinerModel { config, params, stages })
    }

    pub fn from_params(config: RefinerConfig, trained: &ParamSet) -> Result<Self> {
        let mut m = RefinerModel::new(config, &mut RngStream::new(0))?;
        m.params.load_values(trained)?;
        Ok(m)
    }

    pub fn is_causal(&self) -> bool {
        self.config.variant.is_causal()
    }

    fn check(&self, p: &Tensor) -> Result<()> {
        if p.cols() != self.config.classes {
            return Err(Error::shape(
                "refiner_forward",
                p.shape(),
                &[p.rows(), self.config.classes],
            ));
        }
        Ok(())
    }

    /// One output per stage; the last one is the refined prediction.
    pub fn forward(&self, p: &ProbSeq) -> Result<Vec<ProbSeq>> {
        Ok(self.forward_train(p.tensor())?.outputs)
    }

    pub(crate) fn forward_train(&self, p: &Tensor) -> Result<RefinerPass> {
        self.check(p)?;
        let mut outputs: Vec<ProbSeq> = Vec::with_capacity(self.stages.len());
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let input = outputs.last().map_or(p, ProbSeq::tensor);
            let (logits, cache) = stage.forward(&self.params, input)?;
            outputs.push(ProbSeq::from_softmax(softmax_rows(&logits)?));
            caches.push(cache);
        }
        Ok(RefinerPass { outputs, caches })
    }

    /// `stage_dp[s]` is `dL/dp_s` from that stage's own loss. Returns `dL/dinput`.
    pub(crate) fn backward(&mut self, pass: &RefinerPass, stage_dp: &[Tensor]) -> Result<Tensor> {
        let mut carry: Option<Tensor> = None;
        for s in (0..self.stages.len()).rev() {
            let mut dp = stage_dp[s].clone();
            if let Some(c) = &carry {
                dp.add_assign(c)?;
            }
            let dlogits = softmax_rows_backward(pass.outputs[s].tensor(), &dp);
            carry = Some(self.stages[s].backward(&mut self.params, &pass.caches[s], &dlogits)?);
        }
        Ok(carry.expect("at least one stage"))
    }

    pub(crate) fn stream(&self) -> Result<Vec<StageStream>> {
        self.stages
            .iter()
            .map(|s| match s {
                StageNet::Gru(n) => Ok(StageStream::Gru(n.initial_state())),
                StageNet::Tcn(n) => n.stream().map(StageStream::Tcn),
            })
            .collect()
    }

    /// Feeds one probability row through every stage; returns each stage's row.
    pub(crate) fn step(&self, state: &mut [StageStream], p_t: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.stages.len());
        for (stage, st) in self.stages.iter().zip(state.iter_mut()) {
            let input = rows.last().map_or(p_t, Vec::as_slice);
            let mut logits = match (stage, st) {
                (StageNet::Gru(n), StageStream::Gru(h)) => n.step(&self.params, h, input)?,
                (StageNet::Tcn(n), StageStream::Tcn(s)) => n.step(&self.params, s, input)?,
                _ => unreachable!("stream state matches its network"),
            };
            softmax_in_place(&mut logits);
            rows.push(logits);
        }
        Ok(rows)
    }
}

/// Runs every refinement stage in sequence over `p`.
pub fn refiner_forward(p: &ProbSeq, model: &RefinerModel) -> Result<Vec<ProbSeq>> {
    model.forward(p)
}
