//! Dense f32 tensors with a reverse-mode autograd tape.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Ops that see a
//! parent with `requires_grad` record a node holding the parents and a
//! backward closure mapping the upstream gradient to one gradient per parent.
//! [`Tensor::backward`] walks the recorded graph in reverse topological order
//! and accumulates into the `grad` slot of every leaf that requires grad.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any autograd nodes on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Mutex<Option<Vec<f32>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            d.field("op", &node.op);
        }
        if self.0.data.len() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: Mutex::new(None),
            requires_grad,
            node,
        }))
    }

    /// Creates a constant tensor. Fails if `data.len()` differs from the
    /// element count of `shape` or any dimension is zero.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Creates a leaf that collects gradients during [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Records the result of an op. A node is attached only when grad mode
    /// is on and at least one parent requires grad.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let node = track.then(|| Node {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, track, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Name of the op that produced this tensor, if it is tracked.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() needs a single-element tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// A copy with identical data that is cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Same data viewed under a different shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.0.data.clone(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into leaf
    /// tensors; callers reset them between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.lock().unwrap();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "op {}", node.op);
                        match grads.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over tracked tensors; iterative to survive deep graphs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape must be non-empty with positive dims, got {shape:?}"
        )));
    }
    if numel(shape) != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} holds {} elements but data has {len}",
            numel(shape)
        )));
    }
    Ok(())
}

pub(crate) fn expect_rank4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(Error::Dimension(format!("{what} expects a 4-D tensor, got {s:?}"))),
    }
}
