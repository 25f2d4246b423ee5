//! STFT and iSTFT as differentiable tensor operations. Both are linear, so
//! their backward passes are the exact adjoints of the forward maps.

use std::rc::Rc;

use super::{StftConfig, StftKernel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// STFT of a 1-D signal `[N]`, packed as `[2, F, T]` (real, imaginary).
pub fn stft_tensor(x: &Tensor, config: &StftConfig) -> Result<Tensor> {
    if x.ndim() != 1 {
        return Err(Error::shape("stft", format!("expected a 1-D signal, got {:?}", x.shape())));
    }
    let kernel = Rc::new(StftKernel::new(*config)?);
    let len = x.numel();
    let (re, im) = kernel.analyze(x.data());
    let (bins, frames) = (config.bins(), config.num_frames(len));
    let mut data = re;
    data.extend(im);
    let k = kernel.clone();
    Tensor::ok_op(
        "stft",
        data,
        vec![2, bins, frames],
        vec![x.clone()],
        Box::new(move |g, _| {
            let (g_re, g_im) = g.split_at(bins * frames);
            vec![Some(k.analyze_adjoint(g_re, g_im, len))]
        }),
    )
}

/// Inverse STFT of a packed `[2, F, T]` spectrum to `out_len` samples. The
/// imaginary DC and Nyquist entries do not contribute (their gradient is 0).
pub fn istft_tensor(packed: &Tensor, config: &StftConfig, out_len: usize) -> Result<Tensor> {
    let s = packed.shape();
    if s.len() != 3 || s[0] != 2 || s[1] != config.bins() {
        return Err(Error::shape(
            "istft",
            format!("expected [2, {}, T] for frame length {}, got {s:?}", config.bins(), config.frame_len),
        ));
    }
    if out_len == 0 {
        return Err(Error::invalid("istft output length must be positive"));
    }
    let kernel = Rc::new(StftKernel::new(*config)?);
    let (bins, frames) = (s[1], s[2]);
    let (re, im) = packed.data().split_at(bins * frames);
    let data = kernel.synthesize(re, im, frames, out_len);
    let k = kernel.clone();
    Tensor::ok_op(
        "istft",
        data,
        vec![out_len],
        vec![packed.clone()],
        Box::new(move |g, _| {
            let (mut g_re, g_im) = k.synthesize_adjoint(g, frames);
            g_re.extend(g_im);
            vec![Some(g_re)]
        }),
    )
}

/// Stacks real and imaginary `[F, T]` tensors into `[2, F, T]`.
pub fn pack_ri_tensors(real: &Tensor, imag: &Tensor) -> Result<Tensor> {
    if real.ndim() != 2 || real.shape() != imag.shape() {
        return Err(Error::shape("pack_ri", format!("real {:?} and imaginary {:?} must both be [F, T]", real.shape(), imag.shape())));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(real.shape());
    Tensor::concat(&[real.reshape(&shape)?, imag.reshape(&shape)?], 0)
}
