use super::shape::{check_axis, split_at_axis};
use super::Tensor;
use crate::error::Result;

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![1], vec![self.clone()], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, scale: f64, sorted: bool) -> Result<Tensor> {
        check_axis(op, axis, self.ndim())?;
        let (outer, m, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        let mut buf = Vec::with_capacity(m);
        for o in 0..outer {
            let base = o * m * inner;
            if sorted {
                for i in 0..inner {
                    buf.clear();
                    buf.extend((0..m).map(|j| x[base + j * inner + i]));
                    buf.sort_by(f64::total_cmp);
                    out[o * inner + i] = buf.iter().sum::<f64>() * scale;
                }
            } else {
                let orow = &mut out[o * inner..(o + 1) * inner];
                for j in 0..m {
                    for (ov, &xv) in orow.iter_mut().zip(&x[base + j * inner..base + (j + 1) * inner]) {
                        *ov += xv;
                    }
                }
                orow.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::ok_op(
            op,
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * m * inner];
                for o in 0..outer {
                    for j in 0..m {
                        let dst = &mut gx[(o * m + j) * inner..(o * m + j + 1) * inner];
                        for (d, &gv) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d = gv * scale;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("sum_axis", axis, 1.0, false)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let m = self.shape().get(axis).copied().unwrap_or(1);
        self.reduce_axis("mean_axis", axis, 1.0 / m as f64, false)
    }

    /// Mean over one axis whose result does not depend on the order of the
    /// elements along that axis (values are summed in sorted order).
    pub fn mean_axis_order_invariant(&self, axis: usize) -> Result<Tensor> {
        let m = self.shape().get(axis).copied().unwrap_or(1);
        self.reduce_axis("mean_axis", axis, 1.0 / m as f64, true)
    }
}
