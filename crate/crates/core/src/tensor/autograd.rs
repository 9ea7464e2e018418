use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::Op;
use super::{Real, Result, Tensor, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

enum Record<T: Real> {
    Leaf,
    Op(Op<T>),
    Consumed,
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    record: RefCell<Record<T>>,
}

/// A tensor taking part in a computation graph.
///
/// Cloning is cheap and shares the node. Ids grow monotonically, so parents
/// always carry smaller ids than the nodes computed from them; the backward
/// pass walks recorded nodes in decreasing id order.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, record: Record<T>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            record: RefCell::new(record),
        }))
    }

    /// A leaf that receives a gradient on [`backward`].
    pub fn param(value: Tensor<T>) -> Self {
        Self::make(value, true, Record::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Record::Leaf)
    }

    /// Result of an operation; the record is kept only when some input
    /// requires a gradient.
    pub(crate) fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        if op.inputs().iter().any(|v| v.requires_grad()) {
            Self::make(value, true, Record::Op(op))
        } else {
            Self::constant(value)
        }
    }

    /// Result of a user-supplied differentiable map.
    ///
    /// `backward` receives the gradient of the output and returns one gradient
    /// per entry of `inputs`, in order.
    pub fn custom(
        value: Tensor<T>,
        inputs: Vec<Var<T>>,
        backward: impl Fn(&Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Self {
        Self::from_op(
            value,
            Op::Custom {
                inputs,
                backward: Box::new(backward),
            },
        )
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.0.value.data()[0]
    }
}

/// Gradients of a loss with respect to every leaf that required one.
#[derive(Debug, Default)]
pub struct Gradients<T: Real> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn accumulate<T: Real>(grads: &mut HashMap<u64, Tensor<T>>, id: u64, g: Tensor<T>) {
    match grads.get_mut(&id) {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => {
            grads.insert(id, g);
        }
    }
}

/// Reverse-mode pass from a single-element `loss`.
///
/// Every recorded operation reachable from the loss is visited exactly once
/// and its record is dropped afterwards, so a second call on the same graph
/// fails with [`TensorError::TapeConsumed`].
pub fn backward<T: Real>(loss: &Var<T>) -> Result<Gradients<T>> {
    if loss.value().numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    match &*loss.0.record.borrow() {
        Record::Leaf => return Err(TensorError::EmptyTape),
        Record::Consumed => return Err(TensorError::TapeConsumed),
        Record::Op(_) => {}
    }

    // collect recorded nodes reachable from the loss
    let mut order: Vec<Var<T>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![loss.clone()];
    let mut leaves: HashSet<u64> = HashSet::new();
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.id()) {
            continue;
        }
        match &*v.0.record.borrow() {
            Record::Op(op) => {
                for p in op.inputs() {
                    stack.push(p.clone());
                }
            }
            Record::Leaf => {
                leaves.insert(v.id());
            }
            Record::Consumed => return Err(TensorError::TapeConsumed),
        }
        order.push(v);
    }
    order.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(loss.id(), Tensor::full(loss.shape(), T::one()));
    for node in &order {
        let record = std::mem::replace(&mut *node.0.record.borrow_mut(), Record::Consumed);
        let op = match record {
            Record::Op(op) => op,
            Record::Leaf => {
                *node.0.record.borrow_mut() = Record::Leaf;
                continue;
            }
            Record::Consumed => unreachable!("checked while collecting"),
        };
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        for (input, gi) in op.backward(node.value(), &g) {
            if input.requires_grad() {
                accumulate(&mut grads, input.id(), gi);
            }
        }
    }

    grads.retain(|id, _| leaves.contains(id));
    let mut leaves: Vec<u64> = leaves.into_iter().collect();
    leaves.sort_unstable();
    for id in leaves {
        grads.entry(id).or_insert_with(|| {
            let leaf = order.iter().find(|v| v.id() == id).expect("leaf collected");
            Tensor::zeros(leaf.shape())
        });
    }
    Ok(Gradients { grads })
}
