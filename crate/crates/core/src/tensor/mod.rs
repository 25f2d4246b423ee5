//! A small dense-array engine with reverse-mode differentiation.
//!
//! Every [`Tensor`] owns a row-major `f64` buffer and, when any of its inputs
//! requires a gradient, a record of the operation that produced it. Calling
//! [`Tensor::backward`] on a scalar walks those records in reverse creation
//! order and leaves `∂loss/∂x` on every tensor that participated.
//!
//! Kernels are deliberately coarse (matmul, grouped conv, layer norm, ...) so
//! that a network forward pass records a few hundred nodes, not millions.

mod elementwise;
mod gradcheck;
mod linalg;
mod conv;
pub use conv::Conv1dSpec;
pub(crate) use linalg::gemm as linalg_gemm;
mod norm;
mod reduce;
mod shape_ops;
pub(crate) mod shape;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{check_gradients, finite_diff_grad, GradInput, GradReport, GradRow, REL_ERR_FLOOR};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Receives the gradient of the output and the output values; returns one
/// optional gradient per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: RefCell<Option<GradFn>>,
    /// Set once the graph below this node has been released by a backward pass.
    released: Cell<bool>,
}

/// Differentiable dense array.
///
/// Cloning is cheap and shares the underlying node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.borrow().as_ref().map(|g| g.op);
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &op)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: RefCell::new(grad_fn),
            released: Cell::new(false),
        }))
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor; `requires_grad` marks it as a differentiation target.
    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("new", format!("extents must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} holds {} elements but data has {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::from_node(shape.to_vec(), data, requires_grad, None))
    }

    /// Differentiable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_node(vec![1], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Result<Self> {
        Self::new(vec![v; numel(shape)], shape)
    }

    /// Result of an operation. Records `backward` only when some parent
    /// requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents,
            backward,
        });
        Self::from_node(shape, data, requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("expected one element, got shape {:?}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    /// Gradient left by the most recent backward pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode pass from a scalar; releases the graph afterwards.
    pub fn backward(&self) -> Result<()> {
        self.run_backward(false)
    }

    /// Like [`Tensor::backward`] but keeps the graph so a second pass can be
    /// run. Each pass recomputes gradients from scratch.
    pub fn backward_retain(&self) -> Result<()> {
        self.run_backward(true)
    }

    fn run_backward(&self, retain: bool) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.0.released.get() {
            return Err(Error::Graph(
                "graph already consumed by a previous backward pass; rerun forward (or use backward_retain)".into(),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::Graph("loss does not depend on any tensor requiring grad".into()));
        }

        // Topological order: parents are always created before children, so
        // descending id is a valid reverse order.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.insert(t.0.id, ()).is_some() {
                continue;
            }
            if let Some(gf) = t.0.grad_fn.borrow().as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !seen.contains_key(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in &nodes {
            let g = pending
                .remove(&node.0.id)
                .unwrap_or_else(|| vec![0.0; node.numel()]);
            if let Some(gf) = node.0.grad_fn.borrow().as_ref() {
                let parent_grads = (gf.backward)(&g, &node.0.data);
                debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.op);
                for (p, pg) in gf.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "{} parent grad", gf.op);
                    match pending.get_mut(&p.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.0.id, pg);
                        }
                    }
                }
            }
            *node.0.grad.borrow_mut() = Some(g);
        }

        if !retain {
            for node in &nodes {
                node.0.grad_fn.borrow_mut().take();
                node.0.released.set(true);
            }
        }
        Ok(())
    }
}
