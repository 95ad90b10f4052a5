//! Differentiable layer primitives. Sequences are frame-major `[T, D]` matrices.

use crate::error::{Error, Result};
use crate::nncore::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// `out[t] = x[t]·W + b` with `x: [T, D_in]`, `W: [D_in, D_out]`, `b: [D_out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (t, din) = x.expect_rank2("linear_forward")?;
    let (wi, dout) = w.expect_rank2("linear_forward")?;
    if wi != din {
        return Err(Error::shape("linear_forward", x.shape(), w.shape()));
    }
    if b.shape() != [dout] {
        return Err(Error::shape("linear_forward", w.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[t, dout]);
    for r in 0..t {
        out.row_mut(r).copy_from_slice(b.data());
    }
    matmul_acc(x.data(), w.data(), out.data_mut(), t, din, dout);
    Ok(out)
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dout: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Result<Tensor> {
    let (t, din) = x.expect_rank2("linear_backward")?;
    let n = w.cols();
    if dout.shape() != [t, n] {
        return Err(Error::shape("linear_backward", dout.shape(), &[t, n]));
    }
    matmul_tn_acc(x.data(), dout.data(), dw.data_mut(), t, din, n);
    for r in 0..t {
        for (g, d) in db.data_mut().iter_mut().zip(dout.row(r)) {
            *g += d;
        }
    }
    let mut dx = Tensor::zeros(&[t, din]);
    matmul_nt_acc(dout.data(), w.data(), dx.data_mut(), t, din, n);
    Ok(dx)
}

/// Zero padding placement for a dilated convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Tap `j` reads frame `t - j·dilation`; nothing from the future.
    Causal,
    /// Tap `j` reads frame `t + (j - (k-1)/2)·dilation`.
    Symmetric,
}

impl Padding {
    fn offset(self, tap: usize, k: usize, dilation: usize) -> isize {
        match self {
            Padding::Causal => -((tap * dilation) as isize),
            Padding::Symmetric => (tap as isize - ((k - 1) / 2) as isize) * dilation as isize,
        }
    }
}

/// Frame range `[lo, hi)` whose shifted index `t + off` stays inside `[0, len)`.
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

fn check_conv(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<(usize, usize, usize, usize)> {
    if dilation == 0 {
        return Err(Error::invalid("dilation must be positive"));
    }
    let (t, din) = x.expect_rank2("conv1d")?;
    if kernel.shape().len() != 3 || kernel.shape()[1] != din || kernel.shape()[0] == 0 {
        return Err(Error::shape("conv1d", x.shape(), kernel.shape()));
    }
    let (k, dout) = (kernel.shape()[0], kernel.shape()[2]);
    if bias.shape() != [dout] {
        return Err(Error::shape("conv1d", kernel.shape(), bias.shape()));
    }
    Ok((t, din, k, dout))
}

/// Dilated 1-D convolution over frames.
///
/// `x: [T, D_in]`, `kernel: [k, D_in, D_out]` (one `D_in×D_out` matrix per tap), `bias: [D_out]`.
/// Out-of-range taps read zeros.
pub fn conv1d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize, padding: Padding) -> Result<Tensor> {
    let (t, din, k, dout) = check_conv(x, kernel, bias, dilation)?;
    let mut out = Tensor::zeros(&[t, dout]);
    for r in 0..t {
        out.row_mut(r).copy_from_slice(bias.data());
    }
    let tap_len = din * dout;
    for j in 0..k {
        let off = padding.offset(j, k, dilation);
        let (lo, hi) = valid_range(t, off);
        if lo >= hi {
            continue;
        }
        let src = (lo as isize + off) as usize;
        matmul_acc(
            &x.data()[src * din..(src + hi - lo) * din],
            &kernel.data()[j * tap_len..(j + 1) * tap_len],
            &mut out.data_mut()[lo * dout..hi * dout],
            hi - lo,
            din,
            dout,
        );
    }
    Ok(out)
}

/// Accumulates kernel and bias gradients and returns `dx`.
pub fn conv1d_backward(
    x: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
    dilation: usize,
    padding: Padding,
    dkernel: &mut Tensor,
    dbias: &mut Tensor,
) -> Result<Tensor> {
    let (t, din) = x.expect_rank2("conv1d_backward")?;
    let k = kernel.shape()[0];
    let n = kernel.shape()[2];
    if dout.shape() != [t, n] {
        return Err(Error::shape("conv1d_backward", dout.shape(), &[t, n]));
    }
    for r in 0..t {
        for (g, d) in dbias.data_mut().iter_mut().zip(dout.row(r)) {
            *g += d;
        }
    }
    let mut dx = Tensor::zeros(&[t, din]);
    let tap_len = din * n;
    for j in 0..k {
        let off = padding.offset(j, k, dilation);
        let (lo, hi) = valid_range(t, off);
        if lo >= hi {
            continue;
        }
        let src = (lo as isize + off) as usize;
        let rows = hi - lo;
        matmul_tn_acc(
            &x.data()[src * din..(src + rows) * din],
            &dout.data()[lo * n..hi * n],
            &mut dkernel.data_mut()[j * tap_len..(j + 1) * tap_len],
            rows,
            din,
            n,
        );
        matmul_nt_acc(
            &dout.data()[lo * n..hi * n],
            &kernel.data()[j * tap_len..(j + 1) * tap_len],
            &mut dx.data_mut()[src * din..(src + rows) * din],
            rows,
            din,
            n,
        );
    }
    Ok(dx)
}

pub fn causal_dilated_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    conv1d_forward(x, kernel, bias, dilation, Padding::Causal)
}

pub fn acausal_dilated_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    conv1d_forward(x, kernel, bias, dilation, Padding::Symmetric)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given its forward output.
pub fn relu_backward(out: &Tensor, dout: &Tensor) -> Tensor {
    let mut dx = dout.clone();
    for (g, &o) in dx.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (t, c) = m.expect_rank2("softmax_rows")?;
    if m.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in softmax input".into()));
    }
    let mut out = m.clone();
    for r in 0..t {
        softmax_in_place(out.row_mut(r));
    }
    debug_assert_eq!(out.cols(), c);
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient w.r.t. softmax inputs given the softmax output `p` and `dL/dp`.
pub fn softmax_rows_backward(p: &Tensor, dp: &Tensor) -> Tensor {
    let mut dz = dp.clone();
    for r in 0..p.rows() {
        let pr = p.row(r);
        let s: f64 = pr.iter().zip(dp.row(r)).map(|(a, b)| a * b).sum();
        for (g, &pv) in dz.row_mut(r).iter_mut().zip(pr) {
            *g = pv * (*g - s);
        }
    }
    dz
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
