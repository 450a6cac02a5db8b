use crate::{Elem, Tensor, Var};

impl<E: Elem> Var<E> {
    /// Mean softmax cross-entropy of `(N, K)` logits against class indices.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Var<E> {
        let (n, k) = (self.t.shape()[0], self.t.shape()[1]);
        assert_eq!(labels.len(), n, "one label per row");
        for &l in labels {
            assert!(l < k, "label {l} out of range for {k} classes");
        }
        let x = self.t.clone();
        let labels = labels.to_vec();
        let inv_n = 1.0 / n as f64;

        let mut total = 0.0;
        let mut probs = vec![E::ZERO; n * k];
        for i in 0..n {
            let row = &x.data()[i * k..(i + 1) * k];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64()));
            let mut z = 0.0;
            for &v in row {
                z += (v.to_f64() - m).exp();
            }
            let lse = m + z.ln();
            total += lse - row[labels[i]].to_f64();
            for j in 0..k {
                probs[i * k + j] = E::from_f64(((row[j].to_f64() - m).exp()) / z);
            }
        }
        let out = Tensor::scalar(E::from_f64(total * inv_n));

        Var::from_op(&[self], out, Box::new(move |g| {
            let scale = E::from_f64(g.item().to_f64() * inv_n);
            let mut dx = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                dx[i * k + l] -= E::ONE;
            }
            for v in &mut dx {
                *v *= scale;
            }
            vec![Some(Tensor::from_vec(&[n, k], dx))]
        }))
    }

    /// Mean binary cross-entropy on logits against a constant target tensor
    /// of the same shape (stable formulation).
    pub fn bce_with_logits(&self, targets: &Tensor<E>) -> Var<E> {
        assert_eq!(self.t.shape(), targets.shape(), "bce target shape");
        let x = self.t.clone();
        let t = targets.clone();
        let n = x.numel();
        let inv_n = 1.0 / n as f64;

        let mut total = 0.0;
        for (&xv, &tv) in x.data().iter().zip(t.data()) {
            let xf = xv.to_f64();
            let tf = tv.to_f64();
            total += xf.max(0.0) - xf * tf + (-xf.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(E::from_f64(total * inv_n));

        Var::from_op(&[self], out, Box::new(move |g| {
            let scale = E::from_f64(g.item().to_f64() * inv_n);
            let dx: Vec<E> = x
                .data()
                .iter()
                .zip(t.data())
                .map(|(&xv, &tv)| {
                    let xf = xv.to_f64();
                    let sig = if xf >= 0.0 {
                        1.0 / (1.0 + (-xf).exp())
                    } else {
                        let e = xf.exp();
                        e / (1.0 + e)
                    };
                    E::from_f64(sig - tv.to_f64()) * scale
                })
                .collect();
            vec![Some(Tensor::from_vec(x.shape(), dx))]
        }))
    }
}
