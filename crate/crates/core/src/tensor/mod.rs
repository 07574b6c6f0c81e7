//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable node in a differentiation graph. Ops build new
//! nodes that remember their parents and a closure mapping the upstream
//! gradient to gradients for each parent. [`Tensor::backward`] walks the graph
//! in reverse creation order and accumulates gradients into leaves.
//!
//! Graphs are single-threaded (`Rc` links). Values live behind `Arc` so that
//! parameter storage can be shared by leaves built on several threads.

mod complex;
pub mod fft;
mod ops;
pub mod profile;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{dim_err, Error, Result};

pub use complex::ComplexTensor;
pub use ops::{gelu_scalar, Padding, GELU_COEFF, GELU_SQRT_2_OVER_PI};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    retain_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f64` tensor participating in a differentiation graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool, grad_fn: Option<GradFn>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            retain_grad: Cell::new(false),
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Leaf tensor. Fails when `data.len()` differs from the product of `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(dim_err!("zero extent in shape {shape:?}"));
        }
        if numel(shape) != data.len() {
            return Err(dim_err!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()));
        }
        Ok(Tensor::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Leaf sharing an existing buffer.
    pub fn from_shared(data: Arc<Vec<f64>>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(dim_err!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()));
        }
        Ok(Tensor::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![1], Arc::new(vec![value]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), Arc::new(vec![0.0; numel(shape)]), false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), Arc::new(vec![value; numel(shape)]), false, None)
    }

    /// Marks a leaf as trainable. Returns a fresh leaf sharing the buffer.
    pub fn requires_grad(self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn shared_data(&self) -> Arc<Vec<f64>> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient (leaves, or nodes marked with [`Tensor::retain_grad`]).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Keep the gradient of an intermediate node after `backward`.
    pub fn retain_grad(&self) {
        self.0.retain_grad.set(true);
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Builds an op output. `backward` receives the upstream gradient and
    /// returns one optional gradient per parent (same order).
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: &[&Tensor],
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let tracked = parents.iter().any(|p| p.0.requires_grad);
        let grad_fn = tracked.then(|| GradFn {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Tensor::build(shape, Arc::new(data), tracked, grad_fn)
    }

    /// Reverse-mode sweep from a one-element loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.requires_grad {
            return Ok(());
        }

        // Parents are always created before children, so descending ids is a
        // valid reverse topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.insert(t.0.id, ()).is_some() {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.0.requires_grad && !seen.contains_key(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for node in &order {
            let Some(g) = grads.remove(&node.0.id) else { continue };
            match &node.0.grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.0.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                    if node.0.retain_grad.get() {
                        accumulate(&node.0.grad, &g);
                    }
                }
                None => accumulate(&node.0.grad, &g),
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &RefCell<Option<Vec<f64>>>, g: &[f64]) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::new(vec![3.0], &[1]).unwrap().requires_grad();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap().requires_grad();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = (x + x) * x -> df/dx = 4x
        let x = Tensor::new(vec![1.5], &[1]).unwrap().requires_grad();
        let s = x.add(&x).unwrap();
        let f = s.mul(&x).unwrap();
        f.backward().unwrap();
        assert!((x.grad().unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::new(vec![2.0], &[1]).unwrap().requires_grad();
        let y = x.mul(&x).unwrap().detach().mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }
}
