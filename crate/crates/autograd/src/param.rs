use std::cell::RefCell;
use std::rc::Rc;

use crate::{Elem, Tensor};

/// A named trainable tensor. Cloning the handle shares the underlying
/// storage; two handles compare as the same leaf when they share it.
#[derive(Clone)]
pub struct Param<E> {
    name: String,
    value: Rc<RefCell<Tensor<E>>>,
}

impl<E: Elem> Param<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        Param {
            name: name.into(),
            value: Rc::new(RefCell::new(value)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<E> {
        self.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.borrow().shape().to_vec()
    }

    pub fn set(&self, t: Tensor<E>) {
        assert_eq!(
            self.value.borrow().shape(),
            t.shape(),
            "parameter {} shape changed",
            self.name
        );
        *self.value.borrow_mut() = t;
    }

    /// Stable identity of the storage, used as the tape leaf key.
    pub(crate) fn identity(&self) -> usize {
        Rc::as_ptr(&self.value) as usize
    }
}

/// An ordered collection of parameters with unique names.
///
/// Iteration order is insertion order everywhere (optimizer state, checkpoint
/// blobs), which keeps runs reproducible.
#[derive(Clone, Default)]
pub struct ParamSet<E> {
    items: Vec<Param<E>>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { items: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> Param<E> {
        let p = Param::new(name, value);
        assert!(
            self.items.iter().all(|q| q.name() != p.name()),
            "duplicate parameter name {}",
            p.name()
        );
        self.items.push(p.clone());
        p
    }

    /// Adopt an existing handle (e.g. when grouping several networks into one
    /// optimizer set).
    pub fn adopt(&mut self, p: &Param<E>) {
        assert!(
            self.items.iter().all(|q| q.name() != p.name()),
            "duplicate parameter name {}",
            p.name()
        );
        self.items.push(p.clone());
    }

    pub fn extend_from(&mut self, other: &ParamSet<E>) {
        for p in &other.items {
            self.adopt(p);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.items.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param<E>> {
        self.items.iter().find(|p| p.name() == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.items.iter().map(|p| p.value().numel()).sum()
    }

    /// Deep copy: fresh storage with identical names and values. The clone is
    /// an independent leaf set (used for per-path discriminator copies).
    pub fn deep_clone(&self) -> ParamSet<E> {
        let mut out = ParamSet::new();
        for p in &self.items {
            out.add(p.name().to_string(), p.value());
        }
        out
    }

    /// Copy values from another set with identical names and shapes.
    pub fn copy_values_from(&self, other: &ParamSet<E>) {
        assert_eq!(self.len(), other.len(), "parameter sets differ in size");
        for (a, b) in self.items.iter().zip(other.items.iter()) {
            assert_eq!(a.name(), b.name(), "parameter sets differ in layout");
            a.set(b.value());
        }
    }
}
