//! Single GRU refinement stage: `GRU(C → H)` followed by a linear head `H → C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::init::uniform_fan_in;
use crate::nncore::tensor::matmul_acc;
use crate::nncore::{
    gru_sequence_backward, gru_sequence_forward, gru_step, linear_backward, linear_forward, GruCache, GruGrads,
    GruWeights, ParamId, ParamSet, RngStream, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruNetConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct GruNet {
    pub config: GruNetConfig,
    w: ParamId,
    u: ParamId,
    b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct GruNetCache {
    input: Tensor,
    gru: GruCache,
    hidden: Tensor,
}

impl GruNet {
    pub fn init(config: GruNetConfig, prefix: &str, params: &mut ParamSet, rng: &mut RngStream) -> Result<Self> {
        let GruNetConfig {
            in_dim: d,
            hidden: h,
            classes: c,
        } = config;
        if d == 0 || h == 0 || c == 0 {
            return Err(Error::invalid(format!("degenerate GRU config {config:?}")));
        }
        let mut add = |name: &str, t: Tensor| params.add(format!("{prefix}{name}"), t);
        Ok(GruNet {
            config,
            w: add("gru.w", uniform_fan_in(&[d, 3 * h], h, rng))?,
            u: add("gru.u", uniform_fan_in(&[h, 3 * h], h, rng))?,
            b: add("gru.b", uniform_fan_in(&[3 * h], h, rng))?,
            head_w: add("head.w", uniform_fan_in(&[h, c], h, rng))?,
            head_b: add("head.b", uniform_fan_in(&[c], h, rng))?,
        })
    }

    fn weights<'a>(&self, params: &'a ParamSet) -> GruWeights<'a> {
        GruWeights {
            w: params.value(self.w),
            u: params.value(self.u),
            b: params.value(self.b),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, GruNetCache)> {
        let (hidden, gru) = gru_sequence_forward(x, self.weights(params))?;
        let logits = linear_forward(&hidden, params.value(self.head_w), params.value(self.head_b))?;
        Ok((
            logits,
            GruNetCache {
                input: x.clone(),
                gru,
                hidden,
            },
        ))
    }

    pub fn backward(&self, params: &mut ParamSet, cache: &GruNetCache, dlogits: &Tensor) -> Result<Tensor> {
        let dh = {
            let [w, b] = params.many_mut([self.head_w, self.head_b]);
            linear_backward(&cache.hidden, &w.value, dlogits, &mut w.grad, &mut b.grad)?
        };
        let [w, u, b] = params.many_mut([self.w, self.u, self.b]);
        gru_sequence_backward(
            &cache.input,
            GruWeights {
                w: &w.value,
                u: &u.value,
                b: &b.value,
            },
            &cache.gru,
            &dh,
            GruGrads {
                w: &mut w.grad,
                u: &mut u.grad,
                b: &mut b.grad,
            },
        )
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden]
    }

    /// Advances the hidden state by one frame and returns that frame's logits.
    pub fn step(&self, params: &ParamSet, h: &mut Vec<f64>, x_t: &[f64]) -> Result<Vec<f64>> {
        *h = gru_step(x_t, h, self.weights(params))?;
        let mut logits = params.value(self.head_b).data().to_vec();
        matmul_acc(
            h,
            params.value(self.head_w).data(),
            &mut logits,
            1,
            self.config.hidden,
            self.config.classes,
        );
        Ok(logits)
    }
}
