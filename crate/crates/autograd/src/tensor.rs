use std::sync::Arc;

use crate::Elem;

/// Dense tensor with a shared, immutable flat buffer in row-major order.
///
/// Clones are cheap (`Arc` bump). Mutation goes through [`Tensor::make_mut`],
/// which copies only when the buffer is shared.
#[derive(Clone, Debug)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Elem> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Tensor::from_vec(shape, vec![value; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, E::ZERO)
    }

    pub fn scalar(value: E) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the buffer, copying if it is shared.
    pub fn make_mut(&mut self) -> &mut [E] {
        let v: &mut Vec<E> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Single scalar value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E + Sync) -> Self {
        let out: Vec<E> = self.data.iter().map(|&v| f(v)).collect();
        Tensor::from_vec(&self.shape, out)
    }

    pub fn zip(&self, other: &Self, f: impl Fn(E, E) -> E + Sync) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in elementwise op");
        let out: Vec<E> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_vec(&self.shape, out)
    }

    pub fn sum(&self) -> E {
        // Fixed-order chunked sum: deterministic and less error-prone than a
        // single running accumulator on large buffers.
        let mut total = E::ZERO;
        for chunk in self.data.chunks(4096) {
            let mut s = E::ZERO;
            for &v in chunk {
                s += v;
            }
            total += s;
        }
        total
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert between element types (used by f64 gradient-check harnesses).
    pub fn cast<T: Elem>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &self.shape,
            self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        )
    }
}

impl<E: Elem> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64() == b.to_f64())
    }
}
