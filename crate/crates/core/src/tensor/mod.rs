//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A dynamic operation graph is recorded per forward pass and freed after
//! `backward()`. Parameters are long-lived `requires_grad` tensors whose
//! gradients survive graph teardown; everything else is transient.
//!
//! No general broadcasting: only bias-add and row-wise ops broadcast, all
//! other shape mismatches are errors.

mod ops;
mod optim;

pub use optim::AdamW;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient contribution per parent, in parent order. `None` means no
/// gradient flows to that parent (e.g. a constant input).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Inner<T>) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Inner<T: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    /// True when a gradient must flow through this node.
    pub(crate) track: bool,
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: Option<BackwardFn<T>>,
}

/// A dense n-dimensional array participating in a dynamic autodiff graph.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: None,
                requires_grad,
                track: requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::new_inner(shape.to_vec(), data, false))
    }

    pub fn scalar(v: T) -> Self {
        Self::new_inner(vec![1], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![T::zero(); numel], false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![v; numel], false)
    }

    /// Truncated-normal init (values beyond 2 std are redrawn).
    pub fn randn<R: rand::Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        use rand::distributions::Distribution;
        let normal = rand_distr_standard();
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                data.push(T::of_f64(z * std));
            }
        }
        Self::new_inner(shape.to_vec(), data, false)
    }

    /// A trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        t.inner.borrow_mut().track = true;
        Ok(t)
    }

    pub fn set_requires_grad(&self, flag: bool) {
        let mut inner = self.inner.borrow_mut();
        inner.requires_grad = flag;
        inner.track = flag || inner.parents.iter().any(|p| p.inner.borrow().track);
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn data(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    /// Mutates raw data in place (optimizer use). Detached from any graph.
    pub fn with_data_mut<F: FnOnce(&mut [T])>(&self, f: F) {
        f(&mut self.inner.borrow_mut().data);
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = parents.iter().any(|p| p.inner.borrow().track);
        let t = Self::new_inner(shape, data, false);
        if track {
            let mut inner = t.inner.borrow_mut();
            inner.track = true;
            inner.parents = parents;
            inner.backward = Some(backward);
        }
        t
    }

    /// Reverse-mode backprop from a scalar loss. Frees the recorded graph;
    /// gradients persist only on `requires_grad` tensors.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(
                "backward() requires a scalar loss tensor".into(),
            ));
        }
        // Post-order DFS: parents precede children, so the reversed order
        // visits each node before its parents.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            let id = node.inner.borrow().id;
            if child_idx == 0 {
                if seen.contains(&id) {
                    continue;
                }
                seen.insert(id);
            }
            let parent = {
                let inner = node.inner.borrow();
                inner.parents.get(child_idx).cloned()
            };
            match parent {
                Some(p) => {
                    stack.push((node, child_idx + 1));
                    if !seen.contains(&p.inner.borrow().id) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(node),
            }
        }

        self.inner.borrow_mut().grad = Some(vec![T::one()]);

        for node in order.iter().rev() {
            let contributions = {
                let inner = node.inner.borrow();
                if inner.grad.is_none() || inner.backward.is_none() {
                    continue;
                }
                let f = inner.backward.as_ref().unwrap();
                f(&inner)
            };
            let parents = node.inner.borrow().parents.clone();
            for (parent, contrib) in parents.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                let mut pi = parent.inner.borrow_mut();
                if !pi.track {
                    continue;
                }
                debug_assert_eq!(contrib.len(), pi.data.len());
                match &mut pi.grad {
                    Some(g) => {
                        for (gi, ci) in g.iter_mut().zip(&contrib) {
                            *gi += *ci;
                        }
                    }
                    None => pi.grad = Some(contrib),
                }
            }
        }

        // Free the graph; drop transient gradients.
        for node in &order {
            let mut inner = node.inner.borrow_mut();
            inner.parents.clear();
            inner.backward = None;
            if !inner.requires_grad {
                inner.grad = None;
            }
        }
        Ok(())
    }
}

fn rand_distr_standard() -> impl rand::distributions::Distribution<f64> {
    // Box-Muller via two uniforms; avoids pulling in rand_distr.
    struct StdNormal;
    impl rand::distributions::Distribution<f64> for StdNormal {
        fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }
    StdNormal
}
