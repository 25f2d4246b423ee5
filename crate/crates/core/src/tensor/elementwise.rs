use super::shape::{broadcast_map, broadcast_shapes, check_axis, split_at_axis};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

fn sum_into(len: usize, map: Option<&[usize]>, vals: impl Iterator<Item = f64>) -> Vec<f64> {
    match map {
        None => vals.collect(),
        Some(map) => {
            let mut out = vec![0.0; len];
            for (&i, v) in map.iter().zip(vals) {
                out[i] += v;
            }
            out
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: Binary) -> Result<Tensor> {
    let op = kind.name();
    let out_shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let map_a = (a.shape() != out_shape.as_slice()).then(|| broadcast_map(&out_shape, a.shape()));
    let map_b = (b.shape() != out_shape.as_slice()).then(|| broadcast_map(&out_shape, b.shape()));
    let n: usize = out_shape.iter().product();
    let data: Vec<f64> = match (&map_a, &map_b) {
        (None, None) => ad.iter().zip(bd).map(|(&x, &y)| kind.apply(x, y)).collect(),
        _ => (0..n)
            .map(|i| {
                let x = ad[map_a.as_ref().map_or(i, |m| m[i])];
                let y = bd[map_b.as_ref().map_or(i, |m| m[i])];
                kind.apply(x, y)
            })
            .collect(),
    };
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::ok_op(
        op,
        data,
        out_shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
            let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
            let (ad, bd) = (ac.data(), bc.data());
            let ga = ac.requires_grad().then(|| {
                let vals = g.iter().enumerate().map(|(i, &gi)| match kind {
                    Binary::Add | Binary::Sub => gi,
                    Binary::Mul => gi * bd[ib(i)],
                    Binary::Div => gi / bd[ib(i)],
                });
                sum_into(ad.len(), map_a.as_deref(), vals)
            });
            let gb = bc.requires_grad().then(|| {
                let vals = g.iter().enumerate().map(|(i, &gi)| match kind {
                    Binary::Add => gi,
                    Binary::Sub => -gi,
                    Binary::Mul => gi * ad[ia(i)],
                    Binary::Div => {
                        let y = bd[ib(i)];
                        -gi * ad[ia(i)] / (y * y)
                    }
                });
                sum_into(bd.len(), map_b.as_deref(), vals)
            });
            vec![ga, gb]
        }),
    )
}

impl Tensor {
    pub(crate) fn ok_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: super::BackwardFn,
    ) -> Result<Tensor> {
        Ok(Tensor::from_op(op, data, shape, parents, backward))
    }

    /// Element-wise sum with broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Sub)
    }

    /// Element-wise product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Div)
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            op,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, y| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(y)
                    .map(|((&gi, &xi), &yi)| gi * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn log10(&self) -> Tensor {
        self.unary("log10", f64::log10, |x, _| 1.0 / (x * std::f64::consts::LN_10))
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `x · σ(x)`.
    pub fn silu(&self) -> Tensor {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// Parametric ReLU with one slope per entry of `channel_axis`.
    pub fn prelu(&self, slope: &Tensor, channel_axis: usize) -> Result<Tensor> {
        check_axis("prelu", channel_axis, self.ndim())?;
        let (outer, c, inner) = split_at_axis(self.shape(), channel_axis);
        if slope.numel() != c {
            return Err(Error::shape(
                "prelu",
                format!("input {:?} has {c} channels on axis {channel_axis} but slope has shape {:?}", self.shape(), slope.shape()),
            ));
        }
        let (x, a) = (self.data(), slope.data());
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let v = x[i];
                    data[i] = if v > 0.0 { v } else { a[ch] * v };
                }
            }
        }
        let (xc, ac) = (self.clone(), slope.clone());
        Tensor::ok_op(
            "prelu",
            data,
            self.shape().to_vec(),
            vec![self.clone(), slope.clone()],
            Box::new(move |g, _| {
                let (x, a) = (xc.data(), ac.data());
                let mut gx = xc.requires_grad().then(|| vec![0.0; x.len()]);
                let mut ga = ac.requires_grad().then(|| vec![0.0; c]);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            let v = x[i];
                            if let Some(gx) = gx.as_mut() {
                                gx[i] = if v > 0.0 { g[i] } else { a[ch] * g[i] };
                            }
                            if let Some(ga) = ga.as_mut() {
                                if v <= 0.0 {
                                    ga[ch] += g[i] * v;
                                }
                            }
                        }
                    }
                }
                vec![gx, ga]
            }),
        )
    }

    /// Gated linear unit: the first half of `axis` is the value, the second
    /// half the gate, `out = value · σ(gate)`.
    pub fn glu(&self, axis: usize) -> Result<Tensor> {
        check_axis("glu", axis, self.ndim())?;
        let (outer, c2, inner) = split_at_axis(self.shape(), axis);
        if c2 % 2 != 0 {
            return Err(Error::shape("glu", format!("axis {axis} of {:?} has odd extent", self.shape())));
        }
        let c = c2 / 2;
        let x = self.data();
        let mut data = Vec::with_capacity(x.len() / 2);
        for o in 0..outer {
            let vbase = o * c2 * inner;
            let gbase = vbase + c * inner;
            for i in 0..c * inner {
                data.push(x[vbase + i] * sigmoid(x[gbase + i]));
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = c;
        let xc = self.clone();
        Tensor::ok_op(
            "glu",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let x = xc.data();
                let mut gx = vec![0.0; x.len()];
                for o in 0..outer {
                    let vbase = o * c2 * inner;
                    let gbase = vbase + c * inner;
                    let obase = o * c * inner;
                    for i in 0..c * inner {
                        let s = sigmoid(x[gbase + i]);
                        let gi = g[obase + i];
                        gx[vbase + i] = gi * s;
                        gx[gbase + i] = gi * x[vbase + i] * s * (1.0 - s);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glu_hand_value() {
        let x = Tensor::new(vec![2.0, 0.0], &[2]).unwrap();
        assert_eq!(x.glu(0).unwrap().data(), &[1.0]);
    }

    #[test]
    fn broadcast_add_bias() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::param(vec![10.0, 20.0], &[2, 1]).unwrap();
        let y = x.add(&b).unwrap();
        assert_eq!(y.data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[4]).unwrap();
        let msg = a.mul(&b).unwrap_err().to_string();
        assert!(msg.contains("mul") && msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn prelu_negative_side_uses_slope() {
        let x = Tensor::new(vec![-2.0, 3.0], &[2, 1]).unwrap();
        let a = Tensor::new(vec![0.25, 0.25], &[2]).unwrap();
        assert_eq!(x.prelu(&a, 0).unwrap().data(), &[-0.5, 3.0]);
    }
}
