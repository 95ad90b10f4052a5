//! Gated recurrent unit with the gate convention
//! `h' = (1 - z) ⊙ h̃ + z ⊙ h_prev`.
//!
//! Weights are packed gate-major: `w: [D, 3H]`, `u: [H, 3H]`, `b: [3H]`,
//! columns ordered update (z), reset (r), candidate (h̃).

use crate::error::{Error, Result};
use crate::nncore::ops::sigmoid;
use crate::nncore::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'a> {
    pub w: &'a Tensor,
    pub u: &'a Tensor,
    pub b: &'a Tensor,
}

impl GruWeights<'_> {
    /// Returns `(input dim, hidden dim)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (d, h3) = self.w.expect_rank2("gru")?;
        let h = h3 / 3;
        if h3 % 3 != 0 || self.u.shape() != [h, h3] || self.b.shape() != [h3] {
            return Err(Error::shape("gru", self.w.shape(), self.u.shape()));
        }
        Ok((d, h))
    }
}

/// Gate activations for a single step, written into `gates` as `[z | r | h̃]`.
fn step_into(xw: &[f64], h_prev: &[f64], u: &[f64], h: usize, gates: &mut [f64], rh: &mut [f64], h_out: &mut [f64]) {
    let h3 = 3 * h;
    gates.copy_from_slice(xw);
    for (i, &hv) in h_prev.iter().enumerate() {
        if hv == 0.0 {
            continue;
        }
        let ur = &u[i * h3..i * h3 + 2 * h];
        for (g, &uv) in gates[..2 * h].iter_mut().zip(ur) {
            *g += hv * uv;
        }
    }
    for g in &mut gates[..2 * h] {
        *g = sigmoid(*g);
    }
    for i in 0..h {
        rh[i] = gates[h + i] * h_prev[i];
    }
    for (i, &rv) in rh.iter().enumerate() {
        if rv == 0.0 {
            continue;
        }
        let ur = &u[i * h3 + 2 * h..(i + 1) * h3];
        for (g, &uv) in gates[2 * h..].iter_mut().zip(ur) {
            *g += rv * uv;
        }
    }
    for g in &mut gates[2 * h..] {
        *g = g.tanh();
    }
    for i in 0..h {
        let z = gates[i];
        h_out[i] = (1.0 - z) * gates[2 * h + i] + z * h_prev[i];
    }
}

/// One recurrent step.
pub fn gru_step(x_t: &[f64], h_prev: &[f64], p: GruWeights<'_>) -> Result<Vec<f64>> {
    let (d, h) = p.dims()?;
    if x_t.len() != d || h_prev.len() != h {
        return Err(Error::shape("gru_step", &[x_t.len(), h_prev.len()], &[d, h]));
    }
    let mut xw = p.b.data().to_vec();
    matmul_acc(x_t, p.w.data(), &mut xw, 1, d, 3 * h);
    let mut gates = vec![0.0; 3 * h];
    let mut rh = vec![0.0; h];
    let mut out = vec![0.0; h];
    step_into(&xw, h_prev, p.u.data(), h, &mut gates, &mut rh, &mut out);
    Ok(out)
}

/// Saved activations of a full-sequence forward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    /// `[T, 3H]` post-activation gates.
    gates: Vec<f64>,
    /// `[T, H]` reset-gated previous state.
    rh: Vec<f64>,
    /// `[T+1, H]`: initial state followed by every output.
    states: Vec<f64>,
    t: usize,
    h: usize,
}

impl GruCache {
    /// Hidden states `[T, H]` (excludes the initial state).
    pub fn outputs(&self) -> Tensor {
        Tensor::from_vec(&[self.t, self.h], self.states[self.h..].to_vec()).expect("gru states are finite")
    }
}

/// Runs the recurrence over `x: [T, D]` from a zero initial state.
pub fn gru_sequence_forward(x: &Tensor, p: GruWeights<'_>) -> Result<(Tensor, GruCache)> {
    let (d, h) = p.dims()?;
    let (t, xd) = x.expect_rank2("gru_sequence_forward")?;
    if xd != d {
        return Err(Error::shape("gru_sequence_forward", x.shape(), p.w.shape()));
    }
    let h3 = 3 * h;
    let mut xw = vec![0.0; t * h3];
    for r in 0..t {
        xw[r * h3..(r + 1) * h3].copy_from_slice(p.b.data());
    }
    matmul_acc(x.data(), p.w.data(), &mut xw, t, d, h3);

    let mut gates = vec![0.0; t * h3];
    let mut rh = vec![0.0; t * h];
    let mut states = vec![0.0; (t + 1) * h];
    for s in 0..t {
        let (prev, next) = states.split_at_mut((s + 1) * h);
        step_into(
            &xw[s * h3..(s + 1) * h3],
            &prev[s * h..],
            p.u.data(),
            h,
            &mut gates[s * h3..(s + 1) * h3],
            &mut rh[s * h..(s + 1) * h],
            &mut next[..h],
        );
    }
    let cache = GruCache {
        gates,
        rh,
        states,
        t,
        h,
    };
    Ok((cache.outputs(), cache))
}

/// Gradient accumulators for the packed GRU parameters.
pub struct GruGrads<'a> {
    pub w: &'a mut Tensor,
    pub u: &'a mut Tensor,
    pub b: &'a mut Tensor,
}

/// Backpropagation through time. Accumulates parameter gradients, returns `dx: [T, D]`.
pub fn gru_sequence_backward(
    x: &Tensor,
    p: GruWeights<'_>,
    cache: &GruCache,
    dout: &Tensor,
    grads: GruGrads<'_>,
) -> Result<Tensor> {
    let (d, h) = p.dims()?;
    let t = cache.t;
    if dout.shape() != [t, h] {
        return Err(Error::shape("gru_sequence_backward", dout.shape(), &[t, h]));
    }
    let h3 = 3 * h;
    let u = p.u.data();
    let du = grads.u.data_mut();
    let mut dpre = vec![0.0; t * h3];
    let mut dh_next = vec![0.0; h];
    let mut drh = vec![0.0; h];

    for s in (0..t).rev() {
        let g = &cache.gates[s * h3..(s + 1) * h3];
        let h_prev = &cache.states[s * h..(s + 1) * h];
        let rh = &cache.rh[s * h..(s + 1) * h];
        let da = &mut dpre[s * h3..(s + 1) * h3];

        let mut dh_prev = vec![0.0; h];
        for i in 0..h {
            let dh = dout.data()[s * h + i] + dh_next[i];
            let (z, n) = (g[i], g[2 * h + i]);
            da[i] = dh * (h_prev[i] - n) * z * (1.0 - z);
            da[2 * h + i] = dh * (1.0 - z) * (1.0 - n * n);
            dh_prev[i] = dh * z;
        }
        // candidate path through (r ⊙ h_prev) · U_h
        for i in 0..h {
            let ur = &u[i * h3 + 2 * h..(i + 1) * h3];
            drh[i] = ur.iter().zip(&da[2 * h..]).map(|(a, b)| a * b).sum();
            let gr = &mut du[i * h3 + 2 * h..(i + 1) * h3];
            for (gv, &dv) in gr.iter_mut().zip(&da[2 * h..]) {
                *gv += rh[i] * dv;
            }
        }
        for i in 0..h {
            let r = g[h + i];
            da[h + i] = drh[i] * h_prev[i] * r * (1.0 - r);
            dh_prev[i] += drh[i] * r;
        }
        // update and reset gates through h_prev · U_{z,r}
        for i in 0..h {
            let ur = &u[i * h3..i * h3 + 2 * h];
            dh_prev[i] += ur.iter().zip(&da[..2 * h]).map(|(a, b)| a * b).sum::<f64>();
            let hv = h_prev[i];
            if hv != 0.0 {
                let gr = &mut du[i * h3..i * h3 + 2 * h];
                for (gv, &dv) in gr.iter_mut().zip(&da[..2 * h]) {
                    *gv += hv * dv;
                }
            }
        }
        dh_next = dh_prev;
    }

    for s in 0..t {
        for (gb, dv) in grads.b.data_mut().iter_mut().zip(&dpre[s * h3..(s + 1) * h3]) {
            *gb += dv;
        }
    }
    matmul_tn_acc(x.data(), &dpre, grads.w.data_mut(), t, d, h3);
    let mut dx = Tensor::zeros(&[t, d]);
    matmul_nt_acc(&dpre, p.w.data(), dx.data_mut(), t, d, h3);
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(d: usize, h: usize) -> (Tensor, Tensor, Tensor) {
        (
            Tensor::zeros(&[d, 3 * h]),
            Tensor::zeros(&[h, 3 * h]),
            Tensor::zeros(&[3 * h]),
        )
    }

    #[test]
    fn zero_weights_halve_state() {
        let (w, u, b) = zeros(2, 3);
        let h = gru_step(&[1.0, -4.0], &[0.2, -0.6, 1.0], GruWeights { w: &w, u: &u, b: &b }).unwrap();
        assert_eq!(h, vec![0.1, -0.3, 0.5]);
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let (mut w, mut u, mut b) = zeros(2, 3);
        w.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        u.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64 * 0.11).cos());
        b.data_mut()[..3].iter_mut().for_each(|v| *v = 20.0);
        let prev = [0.3, -0.7, 0.9];
        let h = gru_step(&[0.5, 1.5], &prev, GruWeights { w: &w, u: &u, b: &b }).unwrap();
        for (a, e) in h.iter().zip(prev) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let (d, hd) = (3, 4);
        let (mut w, mut u, mut b) = zeros(d, hd);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        for (i, v) in u.data_mut().iter_mut().enumerate() {
            *v = ((i * 5 % 13) as f64 - 6.0) * 0.07;
        }
        b.data_mut()[0] = 0.2;
        let x = Tensor::from_vec(&[5, d], (0..15).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let p = GruWeights { w: &w, u: &u, b: &b };
        let (out, _) = gru_sequence_forward(&x, p).unwrap();
        let mut h = vec![0.0; hd];
        for s in 0..5 {
            h = gru_step(x.row(s), &h, p).unwrap();
            for (a, e) in out.row(s).iter().zip(&h) {
                assert!((a - e).abs() < 1e-14);
            }
        }
    }
}
