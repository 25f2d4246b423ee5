//! Central finite differences, used as the independent oracle for every
//! backward kernel.

use super::Tensor;
use crate::error::{Error, Result};

/// Worst element of one input.
#[derive(Debug, Clone)]
pub struct GradRow {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// One differentiation target.
#[derive(Debug, Clone)]
pub struct GradInput {
    pub name: String,
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GradInput {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Self {
        GradInput {
            name: name.into(),
            data,
            shape: shape.to_vec(),
        }
    }
}

/// Gradients smaller than this are compared on an absolute scale: a true
/// zero measured by central differences is round-off, not signal.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub(crate) fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

fn eval_scalar(t: &Tensor, what: impl FnOnce() -> String) -> Result<f64> {
    let v = t.item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(what()));
    }
    Ok(v)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], shape: &[usize], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid(format!("finite_diff_grad: eps must be positive, got {eps}")));
    }
    let mut buf = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        buf[i] = x[i] + eps;
        let fp = eval_scalar(&f(&Tensor::new(buf.clone(), shape)?)?, || format!("f(x + eps·e_{i})"))?;
        buf[i] = x[i] - eps;
        let fm = eval_scalar(&f(&Tensor::new(buf.clone(), shape)?)?, || format!("f(x - eps·e_{i})"))?;
        buf[i] = x[i];
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` with central differences for
/// every element of every input.
pub fn check_gradients<F>(f: F, inputs: &[GradInput], eps: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|i| Tensor::param(i.data.clone(), &i.shape))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&leaves)?;
    eval_scalar(&loss, || "loss at the unperturbed point".into())?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut consts = inputs
        .iter()
        .map(|i| Tensor::new(i.data.clone(), &i.shape))
        .collect::<Result<Vec<_>>>()?;
    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let mut worst = GradRow {
            name: input.name.clone(),
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_err: -1.0,
        };
        let mut buf = input.data.clone();
        for i in 0..buf.len() {
            let orig = buf[i];
            let mut eval_at = |v: f64, consts: &mut Vec<Tensor>| -> Result<f64> {
                buf[i] = v;
                consts[k] = Tensor::new(buf.clone(), &input.shape)?;
                let r = f(consts)?;
                eval_scalar(&r, || format!("{}[{i}] perturbed to {v}", input.name))
            };
            let fp = eval_at(orig + eps, &mut consts)?;
            let fm = eval_at(orig - eps, &mut consts)?;
            buf[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[k][i];
            let re = rel_err(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if re > worst.rel_err {
                worst = GradRow {
                    name: input.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: re,
                };
            }
        }
        consts[k] = Tensor::new(input.data.clone(), &input.shape)?;
        report.max_rel_err = report.max_rel_err.max(worst.rel_err);
        report.rows.push(worst);
    }
    Ok(report)
}
