use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Layer normalization over the contiguous axes `axes` (given as a range
    /// of axis indices), followed by the affine map `γ·x̂ + β`. `gamma` and
    /// `beta` have the extents of the normalized axes.
    pub fn layer_norm(&self, axes: std::ops::Range<usize>, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let shape = self.shape();
        if axes.start >= axes.end || axes.end > shape.len() {
            return Err(Error::shape("layer_norm", format!("invalid axis range {axes:?} for {shape:?}")));
        }
        let norm_shape = &shape[axes.clone()];
        let m: usize = norm_shape.iter().product();
        if gamma.numel() != m || beta.numel() != m {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "affine parameters {:?}/{:?} do not match normalized extents {norm_shape:?} of {shape:?}",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let outer: usize = shape[..axes.start].iter().product();
        let inner: usize = shape[axes.end..].iter().product();
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let mf = m as f64;
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * m + j) * inner + i;
                let mean = (0..m).map(|j| x[idx(j)]).sum::<f64>() / mf;
                let var = (0..m).map(|j| (x[idx(j)] - mean).powi(2)).sum::<f64>() / mf;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for j in 0..m {
                    let h = (x[idx(j)] - mean) * r;
                    xhat[idx(j)] = h;
                    out[idx(j)] = gm[j] * h + bt[j];
                }
            }
        }
        let (xc, gc, bc) = (self.clone(), gamma.clone(), beta.clone());
        Tensor::ok_op(
            "layer_norm",
            out,
            shape.to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let gm = gc.data();
                let mut gx = xc.requires_grad().then(|| vec![0.0; xhat.len()]);
                let mut gg = gc.requires_grad().then(|| vec![0.0; m]);
                let mut gb = bc.requires_grad().then(|| vec![0.0; m]);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * m + j) * inner + i;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..m {
                            let d = g[idx(j)] * gm[j];
                            s1 += d;
                            s2 += d * xhat[idx(j)];
                        }
                        let r = inv_std[o * inner + i];
                        for j in 0..m {
                            let k = idx(j);
                            if let Some(gx) = gx.as_mut() {
                                let d = g[k] * gm[j];
                                gx[k] = r * (d - s1 / mf - xhat[k] * s2 / mf);
                            }
                            if let Some(gg) = gg.as_mut() {
                                gg[j] += g[k] * xhat[k];
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[j] += g[k];
                            }
                        }
                    }
                }
                vec![gx, gg, gb]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let n = *self.shape().last().unwrap();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        Tensor::ok_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; y.len()];
                for ((grow, yrow), gxrow) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in gxrow.iter_mut().zip(grow).zip(yrow) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Numerically stable `log(softmax(x))` over the last axis.
    pub fn log_softmax_lastdim(&self) -> Result<Tensor> {
        let n = *self.shape().last().unwrap();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        Tensor::ok_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; y.len()];
                for ((grow, yrow), gxrow) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let gs: f64 = grow.iter().sum();
                    for ((o, &gi), &yi) in gxrow.iter_mut().zip(grow).zip(yrow) {
                        *o = gi - yi.exp() * gs;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
