//! Dense f64 tensors with reverse-mode gradient tracking.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) onto a node of the computation
//! graph. Operations on tensors that require grad record a backward closure
//! together with their parents; [`Tensor::backward`] walks that graph in
//! reverse topological order and accumulates `d loss / d node` into every
//! node that requires grad.
//!
//! Values are stored row-major. Leaf data may be overwritten in place (by an
//! optimizer step or a finite-difference probe); everything else is
//! immutable once built.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod gradcheck;
pub mod nn;
mod ops;
pub mod optim;

pub use gradcheck::{check_gradients, finite_diff_grad, GradCheckReport};
pub use nn::{Ffn, LinearLayer, Module};
pub use optim::sgd_step;

/// Computes the gradient contribution for each parent given the gradient of
/// the node's output. `None` means the parent receives nothing.
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &*self.0.data.borrow())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a constant tensor. Fails if `data` does not fill `shape` or
    /// holds a non-finite value.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Builds a trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self::raw(data, shape.to_vec(), requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(vec![0.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        Self::raw(vec![value; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[], value)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::raw(data, vec![n, n], false, None)
    }

    fn raw(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Result of an op. Records the backward closure only when some parent
    /// tracks gradients.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: &[&Tensor],
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Self::raw(data, shape, requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Mutable access to a leaf's values. Panics on non-leaf tensors, whose
    /// values are fixed by the graph that produced them.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        assert!(self.is_leaf(), "only leaf tensors can be modified in place");
        self.0.data.borrow_mut()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data.borrow()[0])
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.0.data.borrow()[flat]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor> {
        self.grad()
            .map(|g| Self::raw(g, self.shape().to_vec(), false, None))
    }

    pub fn zero_grad(&self) {
        if self.requires_grad() {
            *self.0.grad.borrow_mut() = Some(vec![0.0; self.numel()]);
        }
    }

    pub(crate) fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn grad_mut(&self) -> RefMut<'_, Option<Vec<f64>>> {
        self.0.grad.borrow_mut()
    }

    /// Constant copy that shares no graph history.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.to_vec(), self.shape().to_vec(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// every reachable node that requires grad.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(Error::NoGradTracking);
        }

        let order = self.topo_order();
        // Gradients flowing during this sweep, indexed like `order`.
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        let position: std::collections::HashMap<*const Node, usize> =
            order.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();
        pending[order.len() - 1] = Some(vec![1.0]);

        for i in (0..order.len()).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &order[i];
            {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g.clone()),
                }
            }
            let Some(grad_fn) = &node.0.grad_fn else { continue };
            let contributions = (grad_fn.backward)(&g);
            for (parent, contrib) in grad_fn.parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                let j = position[&parent.key()];
                match pending[j].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    None => pending[j] = Some(c),
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through grad-tracking edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        // (node, children already pushed)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl Drop for Node {
    // Long op chains would otherwise drop recursively, one frame per node.
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else { return };
        let mut stack = gf.parents;
        drop(gf.backward);
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(gf) = node.grad_fn.take() {
                    stack.extend(gf.parents);
                }
            }
        }
    }
}
