use super::Tensor;
use crate::error::{Error, Result};

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
/// With `ta`, `a` is stored `k×m`; with `tb`, `b` is stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices have exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulPlan {
    batch: Vec<usize>,
    nbatch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn plan(op: &'static str, a: &[usize], b: &[usize], tb: bool) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape(op, format!("operands must be at least 2-D, got {a:?} and {b:?}")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = if tb {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != kb {
        return Err(Error::shape(op, format!("inner dimensions differ: {a:?} and {b:?}")));
    }
    let (ba, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = if ba == bb || bb.is_empty() {
        ba.to_vec()
    } else if ba.is_empty() {
        bb.to_vec()
    } else {
        return Err(Error::shape(op, format!("batch dimensions differ: {a:?} and {b:?}")));
    };
    Ok(MatmulPlan {
        nbatch: batch.iter().product(),
        batch,
        a_batched: !ba.is_empty(),
        b_batched: !bb.is_empty(),
        m,
        k,
        n,
    })
}

fn matmul_impl(a: &Tensor, b: &Tensor, tb: bool) -> Result<Tensor> {
    let op = if tb { "matmul_t" } else { "matmul" };
    let p = plan(op, a.shape(), b.shape(), tb)?;
    let (m, k, n) = (p.m, p.k, p.n);
    let mut data = vec![0.0; p.nbatch * m * n];
    for i in 0..p.nbatch {
        let ao = if p.a_batched { i * m * k } else { 0 };
        let bo = if p.b_batched { i * k * n } else { 0 };
        gemm(m, k, n, &a.data()[ao..ao + m * k], false, &b.data()[bo..bo + k * n], tb, &mut data[i * m * n..(i + 1) * m * n], false);
    }
    let mut shape = p.batch.clone();
    shape.extend([m, n]);
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::ok_op(
        op,
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; ac.numel()];
                for i in 0..p.nbatch {
                    let ao = if p.a_batched { i * m * k } else { 0 };
                    let bo = if p.b_batched { i * k * n } else { 0 };
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let bs = &bc.data()[bo..bo + k * n];
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, gs, false, bs, !tb, &mut ga[ao..ao + m * k], true);
                }
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; bc.numel()];
                for i in 0..p.nbatch {
                    let ao = if p.a_batched { i * m * k } else { 0 };
                    let bo = if p.b_batched { i * k * n } else { 0 };
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let as_ = &ac.data()[ao..ao + m * k];
                    if tb {
                        // B stored n×k: dB = dCᵀ · A
                        gemm(n, m, k, gs, true, as_, false, &mut gb[bo..bo + k * n], true);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, as_, true, gs, false, &mut gb[bo..bo + k * n], true);
                    }
                }
                gb
            });
            vec![ga, gb]
        }),
    )
}

impl Tensor {
    /// Batched matrix product `[..., m, k] · [..., k, n]`. Either operand may
    /// drop its batch dimensions and is then shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_impl(self, other, false)
    }

    /// `self · otherᵀ` on the last two axes.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        matmul_impl(self, other, true)
    }

    /// Affine map on the last axis: `x · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        if weight.ndim() != 2 {
            return Err(Error::shape("linear", format!("weight must be [out, in], got {:?}", weight.shape())));
        }
        let inp = *self.shape().last().unwrap_or(&0);
        if weight.shape()[1] != inp {
            return Err(Error::shape(
                "linear",
                format!("input {:?} does not match weight {:?}", self.shape(), weight.shape()),
            ));
        }
        let out = weight.shape()[0];
        if let Some(b) = bias {
            if b.numel() != out {
                return Err(Error::shape("linear", format!("bias {:?} for weight {:?}", b.shape(), weight.shape())));
            }
        }
        let rows = self.numel() / inp;
        let mut data = vec![0.0; rows * out];
        if let Some(b) = bias {
            for r in 0..rows {
                data[r * out..(r + 1) * out].copy_from_slice(b.data());
            }
        }
        gemm(rows, inp, out, self.data(), false, weight.data(), true, &mut data, bias.is_some());
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let (xc, wc) = (self.clone(), weight.clone());
        let bias_grad = bias.map(|b| b.requires_grad());
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::ok_op(
            "linear",
            data,
            shape,
            parents,
            Box::new(move |g, _| {
                let gx = xc.requires_grad().then(|| {
                    let mut gx = vec![0.0; rows * inp];
                    gemm(rows, out, inp, g, false, wc.data(), false, &mut gx, false);
                    gx
                });
                let gw = wc.requires_grad().then(|| {
                    let mut gw = vec![0.0; out * inp];
                    gemm(out, rows, inp, g, true, xc.data(), false, &mut gw, false);
                    gw
                });
                let mut res = vec![gx, gw];
                if let Some(needs) = bias_grad {
                    res.push(needs.then(|| {
                        let mut gb = vec![0.0; out];
                        for r in 0..rows {
                            for (o, v) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *o += v;
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let ta = Tensor::new(a.clone(), &[2, 3]).unwrap();
        let tb = Tensor::new(b.clone(), &[3, 4]).unwrap();
        let c = ta.matmul(&tb).unwrap();
        let want = naive(&a, &b, 2, 3, 4);
        for (x, y) in c.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn inner_dim_mismatch_errors() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[4, 2]).unwrap();
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn linear_with_bias() {
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let w = Tensor::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        let b = Tensor::new(vec![0.5, 0.5, 0.5], &[3]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[1.5, 2.5, 3.5]);
    }
}
