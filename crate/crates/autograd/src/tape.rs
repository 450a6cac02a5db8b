use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::{Elem, Param, Tensor};

type BackFn<E> = Box<dyn Fn(&Tensor<E>) -> Vec<Option<Tensor<E>>>>;

struct Node<E> {
    parents: Vec<Option<usize>>,
    backward: Option<BackFn<E>>,
}

struct TapeInner<E> {
    nodes: Vec<Node<E>>,
    // Param identity (Rc pointer) -> leaf node, so re-registering a param
    // within one step reuses the same node and its gradients accumulate.
    leaves: HashMap<usize, usize>,
}

/// Records one step's computation graph for reverse-mode differentiation.
///
/// A tape is created per optimization step, operations append nodes, and
/// [`Var::backward`] walks the nodes in reverse. Dropping the tape releases
/// all saved activations.
pub struct Tape<E> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E> Clone for Tape<E> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                leaves: HashMap::new(),
            })),
        }
    }

    fn same_tape(&self, other: &Tape<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Register a parameter as a differentiable leaf and return its handle.
    pub fn leaf(&self, param: &Param<E>) -> Var<E> {
        let key = param.identity();
        let mut inner = self.inner.borrow_mut();
        let idx = match inner.leaves.get(&key) {
            Some(&idx) => idx,
            None => {
                let idx = inner.nodes.len();
                inner.nodes.push(Node {
                    parents: Vec::new(),
                    backward: None,
                });
                inner.leaves.insert(key, idx);
                idx
            }
        };
        Var {
            t: param.value(),
            node: Some((self.clone(), idx)),
        }
    }

    /// Register an input tensor as a differentiable leaf (used by tests that
    /// differentiate with respect to activations rather than parameters).
    pub fn input(&self, t: Tensor<E>) -> Var<E> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            t,
            node: Some((self.clone(), idx)),
        }
    }

    fn push(&self, parents: Vec<Option<usize>>, back: BackFn<E>) -> usize {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            parents,
            backward: Some(back),
        });
        idx
    }
}

/// A value in the computation graph: a tensor plus an optional tape node.
///
/// Constants (no node) flow through operations without recording anything,
/// which doubles as the inference mode.
#[derive(Clone)]
pub struct Var<E> {
    pub(crate) t: Tensor<E>,
    pub(crate) node: Option<(Tape<E>, usize)>,
}

impl<E: Elem> Var<E> {
    pub fn constant(t: Tensor<E>) -> Self {
        Var { t, node: None }
    }

    pub fn scalar(v: E) -> Self {
        Var::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.t
    }

    pub fn shape(&self) -> &[usize] {
        self.t.shape()
    }

    pub fn item(&self) -> E {
        self.t.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Handle to the tape this value is recorded on, if any.
    pub fn tape(&self) -> Option<Tape<E>> {
        self.node.as_ref().map(|(t, _)| t.clone())
    }

    /// Same value, detached from the graph.
    pub fn detach(&self) -> Var<E> {
        Var::constant(self.t.clone())
    }

    /// Register the result of an operation over `inputs`.
    ///
    /// `back` receives the output gradient and returns one optional gradient
    /// per input, in order. If no input is tracked the result is a constant
    /// and `back` is dropped without being stored.
    pub(crate) fn from_op(inputs: &[&Var<E>], out: Tensor<E>, back: BackFn<E>) -> Var<E> {
        let mut tape: Option<&Tape<E>> = None;
        for v in inputs {
            if let Some((t, _)) = &v.node {
                match tape {
                    None => tape = Some(t),
                    Some(prev) => assert!(prev.same_tape(t), "inputs recorded on different tapes"),
                }
            }
        }
        match tape {
            None => Var::constant(out),
            Some(tape) => {
                let parents = inputs
                    .iter()
                    .map(|v| v.node.as_ref().map(|(_, i)| *i))
                    .collect();
                let idx = tape.push(parents, back);
                Var {
                    t: out,
                    node: Some((tape.clone(), idx)),
                }
            }
        }
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node
    /// that participated in the computation of `self`.
    pub fn backward(&self) -> Grads<E> {
        let (tape, root) = self
            .node
            .as_ref()
            .map(|(t, i)| (t.clone(), *i))
            .expect("backward() on a constant");
        assert_eq!(self.t.numel(), 1, "backward() requires a scalar loss");

        let inner = tape.inner.borrow();
        let mut slots: Vec<Option<Tensor<E>>> = vec![None; inner.nodes.len()];
        slots[root] = Some(Tensor::scalar(E::ONE));

        for idx in (0..=root).rev() {
            let Some(grad) = slots[idx].take() else {
                continue;
            };
            let node = &inner.nodes[idx];
            if let Some(back) = &node.backward {
                let parent_grads = back(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let (Some(p), Some(pg)) = (parent, pg) else {
                        continue;
                    };
                    match &mut slots[*p] {
                        Some(acc) => {
                            let data = acc.make_mut();
                            for (a, b) in data.iter_mut().zip(pg.data()) {
                                *a += *b;
                            }
                        }
                        slot => *slot = Some(pg),
                    }
                }
                // Interior gradients are freed as soon as they are consumed.
            } else {
                // Leaf: keep the accumulated gradient for the caller.
                slots[idx] = Some(grad);
            }
        }

        drop(inner);
        Grads { tape, slots }
    }
}

/// Gradients produced by one backward pass.
pub struct Grads<E> {
    tape: Tape<E>,
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Grads<E> {
    /// Gradient of the loss with respect to a parameter, if the parameter
    /// participated in the step.
    pub fn of_param(&self, param: &Param<E>) -> Option<&Tensor<E>> {
        let inner = self.tape.inner.borrow();
        let idx = *inner.leaves.get(&param.identity())?;
        drop(inner);
        self.slots.get(idx).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a tracked variable (leaves only survive the
    /// backward pass; interior gradients are freed eagerly).
    pub fn of(&self, var: &Var<E>) -> Option<&Tensor<E>> {
        let (_, idx) = var.node.as_ref()?;
        self.slots.get(*idx).and_then(|g| g.as_ref())
    }
}
