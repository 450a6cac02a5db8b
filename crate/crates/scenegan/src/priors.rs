//! Sampling-side domain types: class priors, code bundles, image quads.
//!
//! Class indices are 1-based in this API (matching the two-level category
//! notation); tensor-side storage is 0-based.

use autograd::{Elem, Tensor, Var};

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// One-hot encoding with 1-based `index` in `[1, size]`.
pub fn onehot(index: usize, size: usize) -> Result<Vec<f32>> {
    if index == 0 || index > size {
        return Err(Error::validation(format!(
            "one-hot index {index} out of range [1, {size}]"
        )));
    }
    let mut v = vec![0.0; size];
    v[index - 1] = 1.0;
    Ok(v)
}

/// The four generation inputs for one instance, plus their class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBundle {
    /// Child class in `[1, N_C]`.
    pub phi_c: usize,
    /// Parent class in `[1, N_P]`.
    pub phi_p: usize,
    pub e_c: Vec<f32>,
    pub e_p: Vec<f32>,
    /// Background one-hot; always equal to `e_p`.
    pub e_bg: Vec<f32>,
    /// Pose code, one standard normal draw per coordinate.
    pub z: Vec<f32>,
}

impl PriorBundle {
    pub fn new(phi_c: usize, phi_p: usize, n_c: usize, n_p: usize, z: Vec<f32>) -> Result<Self> {
        let e_c = onehot(phi_c, n_c)?;
        let e_p = onehot(phi_p, n_p)?;
        Ok(PriorBundle {
            phi_c,
            phi_p,
            e_c,
            e_p: e_p.clone(),
            e_bg: e_p,
            z,
        })
    }

    /// 0-based child index for tensor-side lookups.
    pub fn child_index(&self) -> usize {
        self.phi_c - 1
    }

    pub fn parent_index(&self) -> usize {
        self.phi_p - 1
    }
}

/// Draw one prior bundle: classes uniform, pose standard normal.
pub fn sample_priors(hp: &HyperParams, rng: &mut Stream) -> PriorBundle {
    let phi_c = rng.below(hp.n_c) + 1;
    let phi_p = rng.below(hp.n_p) + 1;
    let z: Vec<f32> = (0..hp.d_z).map(|_| rng.normal() as f32).collect();
    PriorBundle::new(phi_c, phi_p, hp.n_c, hp.n_p, z).expect("indices in range by construction")
}

/// Draw a batch and pack the pose codes into an `(N, d_z)` tensor.
pub fn sample_prior_batch(hp: &HyperParams, n: usize, rng: &mut Stream) -> PriorBatch {
    let bundles: Vec<PriorBundle> = (0..n).map(|_| sample_priors(hp, rng)).collect();
    PriorBatch::from_bundles(hp, bundles)
}

/// A batch of priors with tensors ready for the generators.
#[derive(Clone, Debug)]
pub struct PriorBatch {
    pub bundles: Vec<PriorBundle>,
    /// `(N, d_z)`.
    pub z: Tensor<f32>,
}

impl PriorBatch {
    pub fn from_bundles(hp: &HyperParams, bundles: Vec<PriorBundle>) -> Self {
        let n = bundles.len();
        let mut z = Vec::with_capacity(n * hp.d_z);
        for b in &bundles {
            assert_eq!(b.z.len(), hp.d_z);
            z.extend_from_slice(&b.z);
        }
        PriorBatch {
            bundles,
            z: Tensor::from_vec(&[n, hp.d_z], z),
        }
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn child_indices(&self) -> Vec<usize> {
        self.bundles.iter().map(|b| b.child_index()).collect()
    }

    pub fn parent_indices(&self) -> Vec<usize> {
        self.bundles.iter().map(|b| b.parent_index()).collect()
    }

    pub fn z_as<E: Elem>(&self) -> Tensor<E> {
        self.z.cast()
    }
}

/// The three dense codes produced by the embedding tables.
pub struct CodeBundle<E> {
    pub v_bg: Var<E>,
    pub v_p: Var<E>,
    pub v_c: Var<E>,
}

/// Per-instance mixup coefficients; `beta0` blends codes, `beta1` blends the
/// foreground pre-image with the bypass.
#[derive(Clone, Debug, PartialEq)]
pub struct MixupCoeffs {
    pub beta0: Vec<f32>,
    pub beta1: Vec<f32>,
}

impl MixupCoeffs {
    pub fn new(beta0: Vec<f32>, beta1: Vec<f32>) -> Result<Self> {
        if beta0.len() != beta1.len() {
            return Err(Error::validation("beta0/beta1 length mismatch"));
        }
        for &b in &beta0 {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::validation(format!("beta0 {b} outside [0, 1]")));
            }
        }
        for &b in &beta1 {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::validation(format!("beta1 {b} outside [0, 1]")));
            }
        }
        Ok(MixupCoeffs { beta0, beta1 })
    }

    /// Sample one pair per instance from the configured ranges.
    pub fn sample(
        n: usize,
        beta0_range: (f64, f64),
        beta1_range: (f64, f64),
        rng: &mut Stream,
    ) -> Self {
        let beta0 = (0..n).map(|_| rng.uniform(beta0_range.0, beta0_range.1) as f32).collect();
        let beta1 = (0..n).map(|_| rng.uniform(beta1_range.0, beta1_range.1) as f32).collect();
        MixupCoeffs { beta0, beta1 }
    }

    /// Fixed coefficients for every instance (inference modes).
    pub fn constant(n: usize, beta0: f32, beta1: f32) -> Self {
        MixupCoeffs {
            beta0: vec![beta0; n],
            beta1: vec![beta1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.beta0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta0.is_empty()
    }
}

/// The four images of one forward pass, each `(N, C, H, W)`.
pub struct ImageQuad<E> {
    pub fg: Var<E>,
    pub bg: Var<E>,
    pub mask: Var<E>,
    pub composite: Var<E>,
}

impl<E: Elem> ImageQuad<E> {
    /// Largest deviation from the compositing identity
    /// `I = bg * (1 - m) + fg * m`.
    pub fn compositing_residual(&self) -> f64 {
        let fg = self.fg.value().data();
        let bg = self.bg.value().data();
        let m = self.mask.value().data();
        let out = self.composite.value().data();
        let shape = self.composite.value().shape();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let mut worst = 0.0f64;
        for i in 0..out.len() {
            let pix = i % hw;
            let inst = i / (c * hw);
            let mv = m[inst * hw + pix].to_f64();
            let expect = bg[i].to_f64() * (1.0 - mv) + fg[i].to_f64() * mv;
            worst = worst.max((out[i].to_f64() - expect).abs());
        }
        worst
    }
}
