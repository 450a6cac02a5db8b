use crate::{Elem, Tensor};

/// Central finite-difference gradient of a scalar function of one tensor.
///
/// `f` must be a pure function of its input. Intended for f64 use in tests;
/// the default step `h = 1e-5` matches that precision.
pub fn numeric_gradient<E: Elem>(
    f: impl Fn(&Tensor<E>) -> f64,
    at: &Tensor<E>,
    h: f64,
) -> Tensor<E> {
    let mut grad = vec![E::ZERO; at.numel()];
    for i in 0..at.numel() {
        let mut plus = at.clone();
        plus.make_mut()[i] += E::from_f64(h);
        let mut minus = at.clone();
        minus.make_mut()[i] -= E::from_f64(h);
        grad[i] = E::from_f64((f(&plus) - f(&minus)) / (2.0 * h));
    }
    Tensor::from_vec(at.shape(), grad)
}

/// Largest per-component relative error between two gradients, with an
/// absolute floor so near-zero components compare absolutely.
pub fn max_rel_err<E: Elem>(analytic: &Tensor<E>, numeric: &Tensor<E>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| {
            let (a, b) = (a.to_f64(), b.to_f64());
            let denom = a.abs().max(b.abs()).max(1e-4);
            (a - b).abs() / denom
        })
        .fold(0.0, f64::max)
}
