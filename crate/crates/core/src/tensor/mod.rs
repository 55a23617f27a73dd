//! Dense f32 tensors with a small reverse-mode differentiation tape.
//!
//! Every op produces a new immutable [`Tensor`]. When at least one input
//! requires a gradient, the output remembers its parents together with a
//! closure that maps the output gradient back onto them. [`Tensor::backward`]
//! walks that graph in reverse topological order and accumulates into the
//! `grad` slot of every leaf that asked for one.
//!
//! Feature maps are channels-first, `C×D×H×W`, without a batch axis.
//! Reductions and convolution inner loops accumulate in f64 in a fixed
//! row-major, kernel-major order, so identical inputs give bitwise-identical
//! results.

mod conv;
pub mod gradcheck;
mod ops;
mod pool;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv3d, ConvParams};
pub use ops::{
    add, add_scalar, concat_channels, div, mul, mul_broadcast, relu, scale, sigmoid,
    slice_channels, softmax_channels, sub, sum,
};
pub use pool::{global_avg_pool, max_pool3d, nearest_upsample};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct BackwardArgs<'a> {
    pub parents: &'a [Tensor],
    pub output: &'a [f32],
    pub grad: &'a [f32],
}

type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct Origin {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    origin: Option<Origin>,
}

/// An immutable N-D array of f32 values, optionally tracked for gradients.
///
/// Cloning is cheap: the values are shared.
#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.origin.as_ref().map(|o| o.op))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, origin: Option<Origin>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                origin,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.into_param())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Same values as a fresh gradient-tracked leaf.
    pub fn into_param(self) -> Self {
        let (shape, data) = match Arc::try_unwrap(self.node) {
            Ok(node) => (node.shape, node.data),
            Err(shared) => (shared.shape.clone(), shared.data.clone()),
        };
        Self::build(shape, data, true, None)
    }

    /// Same values, detached from any graph.
    pub fn detach(&self) -> Self {
        Self::build(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.origin.as_ref().map(|o| o.op)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Interprets a `C×D×H×W` tensor, returning `(C, [D, H, W])`.
    pub fn dims4(&self) -> Result<(usize, [usize; 3])> {
        match self.shape() {
            &[c, d, h, w] => Ok((c, [d, h, w])),
            other => Err(Error::shape(format!("expected C×D×H×W tensor, got {:?}", other))),
        }
    }

    /// Creates an op output; records the graph only if some parent needs a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: &[&Tensor],
        backward: BackwardFn,
    ) -> Self {
        #[cfg(debug_assertions)]
        {
            if parents.iter().all(|p| p.data().iter().all(|v| v.is_finite())) {
                debug_assert!(
                    data.iter().all(|v| v.is_finite()),
                    "{op} produced a non-finite value from finite inputs"
                );
            }
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let origin = requires_grad.then(|| Origin {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward,
        });
        Self::build(shape, data, requires_grad, origin)
    }

    /// Accumulates d(self)/d(leaf) into every gradient-tracked leaf.
    ///
    /// `self` must hold exactly one value.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        self.backward_with(&[1.0])
    }

    /// Vector-Jacobian product: propagates `seed` (same shape as `self`) back to the leaves.
    pub fn backward_with(&self, seed: &[f32]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(Error::shape(format!(
                "seed gradient has {} values, tensor has {}",
                seed.len(),
                self.numel()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.node.id, seed.to_vec());

        for t in order.iter().rev() {
            let Some(grad) = pending.remove(&t.node.id) else {
                continue;
            };
            match &t.node.origin {
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(origin) => {
                    let grads = (origin.backward)(&BackwardArgs {
                        parents: &origin.parents,
                        output: &t.node.data,
                        grad: &grad,
                    });
                    debug_assert_eq!(grads.len(), origin.parents.len());
                    for (parent, g) in origin.parents.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), parent.numel(), "{} grad size", origin.op);
                        match pending.get_mut(&parent.node.id) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.node.id, g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.node.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(origin) = &t.node.origin {
                for p in origin.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.node.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Requires a gradient for parent `i`.
pub(crate) fn wants(args: &BackwardArgs<'_>, i: usize) -> bool {
    args.parents[i].requires_grad()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_gives_ones() {
        let w = Tensor::param(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, 4.0]).unwrap();
        let loss = sum(&w);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_zero_scaled_gives_zeros() {
        let w = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = sum(&scale(&w, 0.0));
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = sum(&scale(&w, 2.0));
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0; 3]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = scale(&w, 2.0).backward().unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn shared_subexpression_accumulates_both_paths() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = add(&w, &w).unwrap();
        sum(&mul(&y, &w).unwrap()).backward().unwrap();
        // d/dw sum(2w * w) = 4w
        assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn constants_record_no_graph() {
        let a = Tensor::full(&[2], 1.0);
        let b = add(&a, &a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.op_name().is_none());
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(Tensor::new(&[2, 2], vec![0.0; 3]), Err(Error::Shape(_))));
    }
}
