use crate::error::{Error, Result};
use crate::models::predictor::PredictorModel;
use crate::models::refiner::{RefinerModel, StageStream};
use crate::models::tcn::TcnStream;
use crate::nncore::ops::softmax_in_place;
use crate::seq::{argmax, FeatureSeq, ProbSeq};

/// Predictor stage followed by an optional refinement stack.
#[derive(Debug, Clone)]
pub struct MultiStageModel {
    pub predictor: PredictorModel,
    pub refiner: Option<RefinerModel>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub labels: Vec<usize>,
    /// Predictor output.
    pub initial: ProbSeq,
    /// One entry per refinement stage.
    pub stages: Vec<ProbSeq>,
}

impl Inference {
    pub fn final_probs(&self) -> &ProbSeq {
        self.stages.last().unwrap_or(&self.initial)
    }
}

impl MultiStageModel {
    pub fn new(predictor: PredictorModel, refiner: Option<RefinerModel>) -> Result<Self> {
        if let Some(r) = &refiner {
            if r.config.classes != predictor.config.classes {
                return Err(Error::invalid(format!(
                    "predictor emits {} classes but refiner expects {}",
                    predictor.config.classes, r.config.classes
                )));
            }
        }
        Ok(MultiStageModel { predictor, refiner })
    }

    pub fn classes(&self) -> usize {
        self.predictor.config.classes
    }

    pub fn infer(&self, features: &FeatureSeq) -> Result<Inference> {
        let initial = self.predictor.forward(features)?;
        let stages = match &self.refiner {
            Some(r) => r.forward(&initial)?,
            None => Vec::new(),
        };
        let labels = stages.last().unwrap_or(&initial).argmax();
        Ok(Inference {
            labels,
            initial,
            stages,
        })
    }

    /// Frame-by-frame session. Fails for offline refiners.
    pub fn stream(&self) -> Result<OnlineSession<'_>> {
        let refiner = match &self.refiner {
            Some(r) if !r.is_causal() => return Err(Error::OfflineStreaming),
            Some(r) => Some(r.stream()?),
            None => None,
        };
        Ok(OnlineSession {
            model: self,
            predictor: self.predictor.stream()?,
            refiner,
            frames: 0,
        })
    }
}

/// Batch inference over a whole video; labels are the argmax of the last stage.
pub fn multistage_infer(features: &FeatureSeq, model: &MultiStageModel) -> Result<Inference> {
    model.infer(features)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub label: usize,
    pub initial: Vec<f64>,
    /// Output row of each refinement stage.
    pub stages: Vec<Vec<f64>>,
}

impl FrameOutput {
    pub fn final_probs(&self) -> &[f64] {
        self.stages.last().unwrap_or(&self.initial)
    }
}

/// Online inference state: TCN history buffers and GRU hidden states.
pub struct OnlineSession<'m> {
    model: &'m MultiStageModel,
    predictor: TcnStream,
    refiner: Option<Vec<StageStream>>,
    frames: usize,
}

impl OnlineSession<'_> {
    pub fn push(&mut self, features: &[f64]) -> Result<FrameOutput> {
        let mut initial = self.model.predictor.step(&mut self.predictor, features)?;
        softmax_in_place(&mut initial);
        let stages = match (&self.model.refiner, &mut self.refiner) {
            (Some(r), Some(state)) => r.step(state, &initial)?,
            _ => Vec::new(),
        };
        let label = argmax(stages.last().unwrap_or(&initial));
        let out = FrameOutput {
            frame: self.frames,
            label,
            initial,
            stages,
        };
        self.frames += 1;
        Ok(out)
    }

    pub fn frames_seen(&self) -> usize {
        self.frames
    }
}

/// Runs a causal model over a frame stream, yielding one output per frame.
pub fn streaming_infer<'a, I>(frames: I, model: &MultiStageModel) -> Result<Vec<FrameOutput>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut session = model.stream()?;
    frames.into_iter().map(|f| session.push(f)).collect()
}
