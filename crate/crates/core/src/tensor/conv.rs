use super::shape::inverse_perm;
use super::linalg_gemm as gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Hyper-parameters of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    /// Zero padding applied on both ends.
    pub padding: usize,
    pub groups: usize,
}

impl Conv1dSpec {
    /// Stride 1, "same" padding for an odd kernel.
    pub fn same(kernel: usize, groups: usize) -> Self {
        Conv1dSpec {
            stride: 1,
            padding: kernel / 2,
            groups,
        }
    }
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Conv1dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Output positions `l` whose tap `l*stride + kk - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(kk: usize, pad: usize, stride: usize, len: usize, lout: usize) -> (usize, usize) {
    // l*stride + kk >= pad
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    // l*stride + kk - pad <= len - 1
    let hi = if len + pad > kk {
        ((len + pad - kk - 1) / stride + 1).min(lout)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Clone, Copy)]
struct Geom {
    nb: usize,
    cin: usize,
    len: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    g: usize,
    s: usize,
    pad: usize,
    lout: usize,
}

impl Geom {
    /// Lowering to a matrix product pays off once each output mixes several
    /// input taps and there are several outputs per group.
    fn use_gemm(&self) -> bool {
        self.cin_g * self.k >= 6 && self.cout_g >= 2
    }

    /// Columns `[cin_g·k, lout]` of batch `n`, group `grp`.
    fn im2col(&self, x: &[f64], n: usize, grp: usize, cols: &mut [f64]) {
        cols.fill(0.0);
        for ci in 0..self.cin_g {
            let xrow = &x[(n * self.cin + grp * self.cin_g + ci) * self.len..][..self.len];
            for kk in 0..self.k {
                let (lo, hi) = valid_range(kk, self.pad, self.s, self.len, self.lout);
                let crow = &mut cols[(ci * self.k + kk) * self.lout..][..self.lout];
                for l in lo..hi {
                    crow[l] = xrow[l * self.s + kk - self.pad];
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], n: usize, grp: usize, gx: &mut [f64]) {
        for ci in 0..self.cin_g {
            let xrow = &mut gx[(n * self.cin + grp * self.cin_g + ci) * self.len..][..self.len];
            for kk in 0..self.k {
                let (lo, hi) = valid_range(kk, self.pad, self.s, self.len, self.lout);
                let crow = &cols[(ci * self.k + kk) * self.lout..][..self.lout];
                for l in lo..hi {
                    xrow[l * self.s + kk - self.pad] += crow[l];
                }
            }
        }
    }

    fn forward_gemm(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        let rows = self.cin_g * self.k;
        let mut cols = vec![0.0; rows * self.lout];
        for n in 0..self.nb {
            for grp in 0..self.g {
                self.im2col(x, n, grp, &mut cols);
                let o = &mut out[(n * self.cout + grp * self.cout_g) * self.lout..][..self.cout_g * self.lout];
                if let Some(b) = bias {
                    for (co, orow) in o.chunks_exact_mut(self.lout).enumerate() {
                        orow.fill(b[grp * self.cout_g + co]);
                    }
                }
                let wg = &w[grp * self.cout_g * rows..][..self.cout_g * rows];
                gemm(self.cout_g, rows, self.lout, wg, false, &cols, false, o, bias.is_some());
            }
        }
    }

    fn backward_gemm(&self, x: &[f64], w: &[f64], gout: &[f64], mut gx: Option<&mut Vec<f64>>, mut gw: Option<&mut Vec<f64>>) {
        let rows = self.cin_g * self.k;
        let mut cols = vec![0.0; rows * self.lout];
        for n in 0..self.nb {
            for grp in 0..self.g {
                let go = &gout[(n * self.cout + grp * self.cout_g) * self.lout..][..self.cout_g * self.lout];
                let wg = &w[grp * self.cout_g * rows..][..self.cout_g * rows];
                if let Some(gw) = gw.as_deref_mut() {
                    self.im2col(x, n, grp, &mut cols);
                    let gwg = &mut gw[grp * self.cout_g * rows..][..self.cout_g * rows];
                    // dW = dOut · colsᵀ
                    gemm(self.cout_g, self.lout, rows, go, false, &cols, true, gwg, true);
                }
                if let Some(gx) = gx.as_deref_mut() {
                    // dCols = Wᵀ · dOut
                    gemm(rows, self.cout_g, self.lout, wg, true, go, false, &mut cols, false);
                    self.col2im_add(&cols, n, grp, gx);
                }
            }
        }
    }
}

impl Tensor {
    /// Grouped 1-D convolution of `[N, C_in, L]` with a kernel
    /// `[C_out, C_in / groups, K]` and optional bias `[C_out]`.
    pub fn conv1d(&self, weight: &Tensor, bias: Option<&Tensor>, spec: Conv1dSpec) -> Result<Tensor> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("expected input [N, C, L] and kernel [C_out, C_in/g, K], got {xs:?} and {ws:?}")));
        }
        let (nb, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
        let g = spec.groups;
        if g == 0 || cin % g != 0 || cout % g != 0 {
            return Err(Error::shape(
                "conv1d",
                format!("groups {g} must divide input channels {cin} and output channels {cout}"),
            ));
        }
        if cin / g != cin_g {
            return Err(Error::shape(
                "conv1d",
                format!("input {xs:?} with {g} groups needs kernel with {} input channels, got {ws:?}", cin / g),
            ));
        }
        if spec.stride == 0 {
            return Err(Error::invalid("conv1d: stride must be positive"));
        }
        if len + 2 * spec.padding < k {
            return Err(Error::shape("conv1d", format!("input length {len} (+2·{} padding) shorter than kernel {k}", spec.padding)));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(Error::shape("conv1d", format!("bias {:?} for {cout} output channels", b.shape())));
            }
        }
        let lout = (len + 2 * spec.padding - k) / spec.stride + 1;
        let cout_g = cout / g;
        let (s, pad) = (spec.stride, spec.padding);
        let x = self.data();
        let w = weight.data();
        let mut out = vec![0.0; nb * cout * lout];
        let geom = Geom { nb, cin, len, cout, cin_g, cout_g, k, g, s: spec.stride, pad: spec.padding, lout };
        if geom.use_gemm() {
            geom.forward_gemm(x, w, bias.map(|b| b.data()), &mut out);
        } else {
        for n in 0..nb {
            for co in 0..cout {
                let grp = co / cout_g;
                let orow = &mut out[(n * cout + co) * lout..(n * cout + co + 1) * lout];
                if let Some(b) = bias {
                    orow.fill(b.data()[co]);
                }
                for ci in 0..cin_g {
                    let xrow = &x[(n * cin + grp * cin_g + ci) * len..][..len];
                    for kk in 0..k {
                        let wv = w[(co * cin_g + ci) * k + kk];
                        let (lo, hi) = valid_range(kk, pad, s, len, lout);
                        if s == 1 {
                            let off = kk as isize - pad as isize;
                            let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                            for (o, &xv) in orow[lo..hi].iter_mut().zip(src) {
                                *o += wv * xv;
                            }
                        } else {
                            for l in lo..hi {
                                orow[l] += wv * xrow[l * s + kk - pad];
                            }
                        }
                    }
                }
            }
        }
        }
        let (xc, wc) = (self.clone(), weight.clone());
        let bias_grad = bias.map(|b| b.requires_grad());
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::ok_op(
            "conv1d",
            out,
            vec![nb, cout, lout],
            parents,
            Box::new(move |gout, _| {
                let x = xc.data();
                let w = wc.data();
                let mut gx = xc.requires_grad().then(|| vec![0.0; x.len()]);
                let mut gw = wc.requires_grad().then(|| vec![0.0; w.len()]);
                if geom.use_gemm() {
                    geom.backward_gemm(x, w, gout, gx.as_mut(), gw.as_mut());
                } else {
                for n in 0..nb {
                    for co in 0..cout {
                        let grp = co / cout_g;
                        let grow = &gout[(n * cout + co) * lout..(n * cout + co + 1) * lout];
                        for ci in 0..cin_g {
                            let xoff = (n * cin + grp * cin_g + ci) * len;
                            for kk in 0..k {
                                let widx = (co * cin_g + ci) * k + kk;
                                let (lo, hi) = valid_range(kk, pad, s, len, lout);
                                if let Some(gx) = gx.as_mut() {
                                    let wv = w[widx];
                                    for l in lo..hi {
                                        gx[xoff + l * s + kk - pad] += wv * grow[l];
                                    }
                                }
                                if let Some(gw) = gw.as_mut() {
                                    let mut acc = 0.0;
                                    for l in lo..hi {
                                        acc += x[xoff + l * s + kk - pad] * grow[l];
                                    }
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                }
                let mut res = vec![gx, gw];
                if let Some(needs) = bias_grad {
                    res.push(needs.then(|| {
                        let mut gb = vec![0.0; cout];
                        for n in 0..nb {
                            for (co, gbv) in gb.iter_mut().enumerate() {
                                *gbv += gout[(n * cout + co) * lout..(n * cout + co + 1) * lout].iter().sum::<f64>();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }

    /// Grouped convolution along `length_axis`, with `channel_axis` as the
    /// channel dimension and every other axis treated as batch.
    pub fn conv1d_along(
        &self,
        channel_axis: usize,
        length_axis: usize,
        weight: &Tensor,
        bias: Option<&Tensor>,
        spec: Conv1dSpec,
    ) -> Result<Tensor> {
        let nd = self.ndim();
        if channel_axis >= nd || length_axis >= nd || channel_axis == length_axis {
            return Err(Error::shape(
                "conv1d",
                format!("invalid channel/length axes ({channel_axis}, {length_axis}) for {:?}", self.shape()),
            ));
        }
        let mut perm: Vec<usize> = (0..nd).filter(|&a| a != channel_axis && a != length_axis).collect();
        perm.push(channel_axis);
        perm.push(length_axis);
        let moved = self.permute(&perm)?;
        let batch_dims: Vec<usize> = moved.shape()[..nd - 2].to_vec();
        let nb: usize = batch_dims.iter().product();
        let (c, l) = (moved.shape()[nd - 2], moved.shape()[nd - 1]);
        let y = moved.reshape(&[nb, c, l])?.conv1d(weight, bias, spec)?;
        let mut out_shape = batch_dims;
        out_shape.extend_from_slice(&y.shape()[1..]);
        y.reshape(&out_shape)?.permute(&inverse_perm(&perm))
    }
}
