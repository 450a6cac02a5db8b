use rayon::prelude::*;

use crate::{Elem, Tensor, Var};

const LN_EPS: f64 = 1e-5;

impl<E: Elem> Var<E> {
    /// Layer normalization over all non-batch dimensions of each instance,
    /// with per-channel scale and shift (`gamma`, `beta` of length
    /// `shape[1]`). For `(N, D)` inputs the channel axis is the feature axis.
    pub fn layer_norm(&self, gamma: &Var<E>, beta: &Var<E>) -> Var<E> {
        let shape = self.t.shape().to_vec();
        assert!(shape.len() >= 2, "layer_norm expects at least (N, C)");
        let n = shape[0];
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let group = c * inner;
        assert_eq!(gamma.t.shape(), &[c], "layer_norm gamma shape");
        assert_eq!(beta.t.shape(), &[c], "layer_norm beta shape");

        let x = self.t.clone();
        let gm = gamma.t.clone();
        let bt = beta.t.clone();
        let eps = E::from_f64(LN_EPS);
        let inv_group = E::from_f64(1.0 / group as f64);

        // Saved per instance: 1/sigma and mu, needed by the backward pass.
        let mut inv_sigma = vec![E::ZERO; n];
        let mut mu = vec![E::ZERO; n];
        let mut y = vec![E::ZERO; n * group];
        y.par_chunks_mut(group)
            .zip(inv_sigma.par_iter_mut())
            .zip(mu.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((yi, isig), mui))| {
                let xi = &x.data()[i * group..(i + 1) * group];
                let mut mean = E::ZERO;
                for &v in xi {
                    mean += v;
                }
                mean *= inv_group;
                let mut var = E::ZERO;
                for &v in xi {
                    let d = v - mean;
                    var += d * d;
                }
                var *= inv_group;
                let is = E::ONE / (var + eps).sqrt();
                *isig = is;
                *mui = mean;
                for ch in 0..c {
                    let g = gm.data()[ch];
                    let b = bt.data()[ch];
                    for k in 0..inner {
                        let j = ch * inner + k;
                        yi[j] = (xi[j] - mean) * is * g + b;
                    }
                }
            });
        let out = Tensor::from_vec(&shape, y);

        Var::from_op(&[self, gamma, beta], out, Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![E::ZERO; n * group];
            // Per-instance input gradient (parallel), then gamma/beta sums in
            // fixed order.
            dx.par_chunks_mut(group).enumerate().for_each(|(i, dxi)| {
                let xi = &x.data()[i * group..(i + 1) * group];
                let gi = &gd[i * group..(i + 1) * group];
                let is = inv_sigma[i];
                let mean = mu[i];
                // h = dy * gamma; dx = is * (h - mean(h) - xhat * mean(h*xhat))
                let mut sum_h = E::ZERO;
                let mut sum_hx = E::ZERO;
                for ch in 0..c {
                    let gmv = gm.data()[ch];
                    for k in 0..inner {
                        let j = ch * inner + k;
                        let h = gi[j] * gmv;
                        let xhat = (xi[j] - mean) * is;
                        sum_h += h;
                        sum_hx += h * xhat;
                    }
                }
                let mean_h = sum_h * inv_group;
                let mean_hx = sum_hx * inv_group;
                for ch in 0..c {
                    let gmv = gm.data()[ch];
                    for k in 0..inner {
                        let j = ch * inner + k;
                        let h = gi[j] * gmv;
                        let xhat = (xi[j] - mean) * is;
                        dxi[j] = is * (h - mean_h - xhat * mean_hx);
                    }
                }
            });
            let mut dgamma = vec![E::ZERO; c];
            let mut dbeta = vec![E::ZERO; c];
            for i in 0..n {
                let xi = &x.data()[i * group..(i + 1) * group];
                let gi = &gd[i * group..(i + 1) * group];
                let is = inv_sigma[i];
                let mean = mu[i];
                for ch in 0..c {
                    let mut sg = E::ZERO;
                    let mut sb = E::ZERO;
                    for k in 0..inner {
                        let j = ch * inner + k;
                        sg += gi[j] * (xi[j] - mean) * is;
                        sb += gi[j];
                    }
                    dgamma[ch] += sg;
                    dbeta[ch] += sb;
                }
            }
            vec![
                Some(Tensor::from_vec(x.shape(), dx)),
                Some(Tensor::from_vec(&[c], dgamma)),
                Some(Tensor::from_vec(&[c], dbeta)),
            ]
        }))
    }

    /// Gated linear unit with normalization on the content half only:
    /// split channels into (left, right), emit `sigmoid(right) * LN(left)`.
    pub fn glu_norm(&self, gamma: &Var<E>, beta: &Var<E>) -> Var<E> {
        let c = self.t.shape()[1];
        assert!(c % 2 == 0, "glu_norm requires an even channel count, got {c}");
        let left = self.slice1(0, c / 2);
        let right = self.slice1(c / 2, c);
        left.layer_norm(gamma, beta).mul(&right.sigmoid())
    }
}
