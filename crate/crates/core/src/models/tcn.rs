//! Dilated residual temporal convolution network.
//!
//! `x → 1×1 (in→F) → L × [ y = x + 1×1(relu(dilconv_l(x))) ] → 1×1 (F→C) → logits`
//! with dilation `2^l` at depth `l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::init::uniform_fan_in;
use crate::nncore::tensor::matmul_acc;
use crate::nncore::{
    conv1d_backward, conv1d_forward, linear_backward, linear_forward, relu, relu_backward, Padding, ParamId, ParamSet,
    RngStream, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub in_dim: usize,
    pub filters: usize,
    pub layers: usize,
    pub kernel: usize,
    pub classes: usize,
    pub causal: bool,
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.filters == 0 || self.kernel == 0 || self.classes == 0 {
            return Err(Error::invalid(format!("degenerate TCN config {self:?}")));
        }
        Ok(())
    }

    pub fn padding(&self) -> Padding {
        if self.causal {
            Padding::Causal
        } else {
            Padding::Symmetric
        }
    }

    /// Frames of history one output depends on (causal case).
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * ((1usize << self.layers) - 1)
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv_k: ParamId,
    conv_b: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    dilation: usize,
}

/// Parameter layout of one TCN inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct TcnNet {
    pub config: TcnConfig,
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<Block>,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct TcnCache {
    input: Tensor,
    /// Input to each block, plus the final block output at the end.
    block_in: Vec<Tensor>,
    /// Post-ReLU activation of each block.
    hidden: Vec<Tensor>,
}

impl TcnNet {
    /// Registers freshly initialized parameters under `prefix`.
    pub fn init(config: TcnConfig, prefix: &str, params: &mut ParamSet, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let TcnConfig {
            in_dim,
            filters: f,
            kernel: k,
            classes: c,
            ..
        } = config;
        let mut add = |name: String, t: Tensor| params.add(format!("{prefix}{name}"), t);
        let in_w = add("in.w".into(), uniform_fan_in(&[in_dim, f], in_dim, rng))?;
        let in_b = add("in.b".into(), uniform_fan_in(&[f], in_dim, rng))?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            blocks.push(Block {
                conv_k: add(format!("block{l}.conv.k"), uniform_fan_in(&[k, f, f], k * f, rng))?,
                conv_b: add(format!("block{l}.conv.b"), uniform_fan_in(&[f], k * f, rng))?,
                mix_w: add(format!("block{l}.mix.w"), uniform_fan_in(&[f, f], f, rng))?,
                mix_b: add(format!("block{l}.mix.b"), uniform_fan_in(&[f], f, rng))?,
                dilation: 1 << l,
            });
        }
        let out_w = add("out.w".into(), uniform_fan_in(&[f, c], f, rng))?;
        let out_b = add("out.b".into(), uniform_fan_in(&[c], f, rng))?;
        Ok(TcnNet {
            config,
            in_w,
            in_b,
            blocks,
            out_w,
            out_b,
        })
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, TcnCache)> {
        if x.shape().len() != 2 || x.cols() != self.config.in_dim {
            return Err(Error::shape("tcn forward", x.shape(), &[0, self.config.in_dim]));
        }
        let pad = self.config.padding();
        let mut cur = linear_forward(x, params.value(self.in_w), params.value(self.in_b))?;
        let mut block_in = Vec::with_capacity(self.blocks.len() + 1);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pre = conv1d_forward(&cur, params.value(b.conv_k), params.value(b.conv_b), b.dilation, pad)?;
            let h = relu(&pre);
            let mut next = linear_forward(&h, params.value(b.mix_w), params.value(b.mix_b))?;
            next.add_assign(&cur)?;
            block_in.push(cur);
            hidden.push(h);
            cur = next;
        }
        let logits = linear_forward(&cur, params.value(self.out_w), params.value(self.out_b))?;
        block_in.push(cur);
        Ok((
            logits,
            TcnCache {
                input: x.clone(),
                block_in,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, params: &mut ParamSet, cache: &TcnCache, dlogits: &Tensor) -> Result<Tensor> {
        let pad = self.config.padding();
        let last = cache.block_in.last().expect("cache holds the final activation");
        let mut dcur = {
            let [w, b] = params.many_mut([self.out_w, self.out_b]);
            linear_backward(last, &w.value, dlogits, &mut w.grad, &mut b.grad)?
        };
        for (l, blk) in self.blocks.iter().enumerate().rev() {
            let dh = {
                let [w, b] = params.many_mut([blk.mix_w, blk.mix_b]);
                linear_backward(&cache.hidden[l], &w.value, &dcur, &mut w.grad, &mut b.grad)?
            };
            let dpre = relu_backward(&cache.hidden[l], &dh);
            let dx = {
                let [k, b] = params.many_mut([blk.conv_k, blk.conv_b]);
                conv1d_backward(
                    &cache.block_in[l],
                    &k.value,
                    &dpre,
                    blk.dilation,
                    pad,
                    &mut k.grad,
                    &mut b.grad,
                )?
            };
            dcur.add_assign(&dx)?;
        }
        let [w, b] = params.many_mut([self.in_w, self.in_b]);
        linear_backward(&cache.input, &w.value, &dcur, &mut w.grad, &mut b.grad)
    }

    /// Frame-by-frame state for online inference. Requires a causal config.
    pub fn stream(&self) -> Result<TcnStream> {
        if !self.config.causal {
            return Err(Error::OfflineStreaming);
        }
        Ok(TcnStream {
            history: self
                .blocks
                .iter()
                .map(|b| History::new((self.config.kernel - 1) * b.dilation + 1, self.config.filters))
                .collect(),
        })
    }

    /// Logits for the next frame given its input row.
    pub fn step(&self, params: &ParamSet, state: &mut TcnStream, x_t: &[f64]) -> Result<Vec<f64>> {
        let f = self.config.filters;
        if x_t.len() != self.config.in_dim {
            return Err(Error::shape("tcn step", &[x_t.len()], &[self.config.in_dim]));
        }
        let mut cur = params.value(self.in_b).data().to_vec();
        matmul_acc(x_t, params.value(self.in_w).data(), &mut cur, 1, x_t.len(), f);
        let k = self.config.kernel;
        for (blk, hist) in self.blocks.iter().zip(&mut state.history) {
            hist.push(&cur);
            let kernel = params.value(blk.conv_k).data();
            let mut pre = params.value(blk.conv_b).data().to_vec();
            for j in 0..k {
                if let Some(row) = hist.back(j * blk.dilation) {
                    matmul_acc(row, &kernel[j * f * f..(j + 1) * f * f], &mut pre, 1, f, f);
                }
            }
            pre.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut next = params.value(blk.mix_b).data().to_vec();
            matmul_acc(&pre, params.value(blk.mix_w).data(), &mut next, 1, f, f);
            for (n, c) in next.iter_mut().zip(&cur) {
                *n += c;
            }
            cur = next;
        }
        let c = self.config.classes;
        let mut logits = params.value(self.out_b).data().to_vec();
        matmul_acc(&cur, params.value(self.out_w).data(), &mut logits, 1, f, c);
        Ok(logits)
    }
}

/// Ring buffer of the most recent block inputs.
#[derive(Debug, Clone)]
struct History {
    rows: Vec<f64>,
    width: usize,
    cap: usize,
    /// Number of rows pushed so far.
    count: usize,
}

impl History {
    fn new(cap: usize, width: usize) -> Self {
        History {
            rows: vec![0.0; cap * width],
            width,
            cap,
            count: 0,
        }
    }

    fn push(&mut self, row: &[f64]) {
        let slot = self.count % self.cap;
        self.rows[slot * self.width..(slot + 1) * self.width].copy_from_slice(row);
        self.count += 1;
    }

    /// Row pushed `lag` steps before the latest one.
    fn back(&self, lag: usize) -> Option<&[f64]> {
        if lag >= self.count || lag >= self.cap {
            return None;
        }
        let slot = (self.count - 1 - lag) % self.cap;
        Some(&self.rows[slot * self.width..(slot + 1) * self.width])
    }
}

#[derive(Debug, Clone)]
pub struct TcnStream {
    history: Vec<History>,
}
