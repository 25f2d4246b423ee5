use super::shape::{check_axis, inverse_perm, permute_data, split_at_axis};
use super::{numel, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", format!("cannot reshape {:?} into {shape:?}", self.shape())));
        }
        Tensor::ok_op(
            "reshape",
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of the axes of {:?}", self.shape())));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let (data, shape) = permute_data(self.data(), self.shape(), perm);
        let inv = inverse_perm(perm);
        Tensor::ok_op(
            "permute",
            data,
            shape.clone(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(permute_data(g, &shape, &inv).0)]),
        )
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis("transpose", a.max(b), self.ndim())?;
        let mut perm: Vec<usize> = (0..self.ndim()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        check_axis("concat", axis, first.ndim())?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape())));
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::ok_op(
            "concat",
            data,
            shape,
            parts.to_vec(),
            Box::new(move |g, _| {
                let mut grads: Vec<Option<Vec<f64>>> = needs
                    .iter()
                    .zip(&extents)
                    .map(|(&n, &e)| n.then(|| Vec::with_capacity(outer * e * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &e) in grads.iter_mut().zip(&extents) {
                        if let Some(gp) = gp.as_mut() {
                            gp.extend_from_slice(&g[pos..pos + e * inner]);
                        }
                        pos += e * inner;
                    }
                }
                grads
            }),
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", axis, self.ndim())?;
        let (outer, m, inner) = split_at_axis(self.shape(), axis);
        if start >= end || end > m {
            return Err(Error::shape("slice", format!("range {start}..{end} invalid for axis {axis} of {:?}", self.shape())));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data()[(o * m + start) * inner..(o * m + end) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = w;
        Tensor::ok_op(
            "slice",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * m * inner];
                for o in 0..outer {
                    gx[(o * m + start) * inner..(o * m + end) * inner].copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Nearest-neighbour upsampling: every element along `axis` is repeated
    /// `factor` times.
    pub fn upsample_nearest(&self, axis: usize, factor: usize) -> Result<Tensor> {
        check_axis("upsample_nearest", axis, self.ndim())?;
        if factor == 0 {
            return Err(Error::invalid("upsample_nearest: factor must be positive"));
        }
        let (outer, m, inner) = split_at_axis(self.shape(), axis);
        let mut data = Vec::with_capacity(self.numel() * factor);
        for o in 0..outer {
            for j in 0..m {
                let row = &self.data()[(o * m + j) * inner..(o * m + j + 1) * inner];
                for _ in 0..factor {
                    data.extend_from_slice(row);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m * factor;
        Tensor::ok_op(
            "upsample_nearest",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * m * inner];
                for o in 0..outer {
                    for j in 0..m {
                        let dst = &mut gx[(o * m + j) * inner..(o * m + j + 1) * inner];
                        for r in 0..factor {
                            let src = &g[((o * m + j) * factor + r) * inner..][..inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Adds rows of a position table to a channel-first tensor: with `self`
    /// of shape `[C, ..., T]` and `table` of shape `[P, C]`, element
    /// `(c, ..., t)` receives `table[offset + t, c]`.
    pub fn embedding_add(&self, table: &Tensor, offset: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 2 || table.ndim() != 2 || table.shape()[1] != s[0] {
            return Err(Error::shape("embedding_add", format!("input {s:?} with table {:?}", table.shape())));
        }
        let (c, t) = (s[0], s[s.len() - 1]);
        let p = table.shape()[0];
        if offset + t > p {
            return Err(Error::shape(
                "embedding_add",
                format!("offset {offset} + length {t} exceeds table of {p} positions"),
            ));
        }
        let mid = self.numel() / (c * t);
        let tab = table.data();
        let mut data = self.data().to_vec();
        for ch in 0..c {
            for m in 0..mid {
                let row = &mut data[(ch * mid + m) * t..(ch * mid + m + 1) * t];
                for (ti, v) in row.iter_mut().enumerate() {
                    *v += tab[(offset + ti) * c + ch];
                }
            }
        }
        let table_grad = table.requires_grad();
        Tensor::ok_op(
            "embedding_add",
            data,
            s.to_vec(),
            vec![self.clone(), table.clone()],
            Box::new(move |g, _| {
                let gt = table_grad.then(|| {
                    let mut gt = vec![0.0; p * c];
                    for ch in 0..c {
                        for m in 0..mid {
                            for ti in 0..t {
                                gt[(offset + ti) * c + ch] += g[(ch * mid + m) * t + ti];
                            }
                        }
                    }
                    gt
                });
                vec![Some(g.to_vec()), gt]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_concat_invert() {
        let x = Tensor::new((0..12).map(f64::from).collect(), &[2, 6]).unwrap();
        let a = x.slice(1, 0, 2).unwrap();
        let b = x.slice(1, 2, 6).unwrap();
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn upsample_repeats() {
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        assert_eq!(x.upsample_nearest(1, 2).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_add_rejects_overflow() {
        let x = Tensor::zeros(&[2, 1, 5]).unwrap();
        let table = Tensor::zeros(&[6, 2]).unwrap();
        assert!(x.embedding_add(&table, 1).is_ok());
        assert!(x.embedding_add(&table, 2).is_err());
    }
}
