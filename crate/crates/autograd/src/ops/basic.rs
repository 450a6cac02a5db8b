use crate::{Elem, Tensor, Var};

impl<E: Elem> Var<E> {
    pub fn add(&self, other: &Var<E>) -> Var<E> {
        let out = self.t.zip(&other.t, |a, b| a + b);
        Var::from_op(&[self, other], out, Box::new(|g| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(&self, other: &Var<E>) -> Var<E> {
        let out = self.t.zip(&other.t, |a, b| a - b);
        Var::from_op(&[self, other], out, Box::new(|g| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(&self, other: &Var<E>) -> Var<E> {
        let a = self.t.clone();
        let b = other.t.clone();
        let out = a.zip(&b, |x, y| x * y);
        Var::from_op(&[self, other], out, Box::new(move |g| {
            vec![Some(g.zip(&b, |gv, bv| gv * bv)), Some(g.zip(&a, |gv, av| gv * av))]
        }))
    }

    pub fn neg(&self) -> Var<E> {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Var<E> {
        let ke = E::from_f64(k);
        let out = self.t.map(|v| v * ke);
        Var::from_op(&[self], out, Box::new(move |g| vec![Some(g.map(|v| v * ke))]))
    }

    pub fn add_scalar(&self, k: f64) -> Var<E> {
        let ke = E::from_f64(k);
        let out = self.t.map(|v| v + ke);
        Var::from_op(&[self], out, Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn exp(&self) -> Var<E> {
        let out = self.t.map(|v| v.exp());
        let y = out.clone();
        Var::from_op(&[self], out, Box::new(move |g| vec![Some(g.zip(&y, |gv, yv| gv * yv))]))
    }

    pub fn abs(&self) -> Var<E> {
        let x = self.t.clone();
        let out = self.t.map(|v| v.abs());
        Var::from_op(&[self], out, Box::new(move |g| {
            vec![Some(g.zip(&x, |gv, xv| {
                if xv > E::ZERO {
                    gv
                } else if xv < E::ZERO {
                    -gv
                } else {
                    E::ZERO
                }
            }))]
        }))
    }

    pub fn relu(&self) -> Var<E> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<E> {
        let s = E::from_f64(slope);
        let x = self.t.clone();
        let out = self.t.map(|v| if v > E::ZERO { v } else { v * s });
        Var::from_op(&[self], out, Box::new(move |g| {
            vec![Some(g.zip(&x, |gv, xv| if xv > E::ZERO { gv } else { gv * s }))]
        }))
    }

    pub fn sigmoid(&self) -> Var<E> {
        let out = self.t.map(|v| {
            // Stable logistic in both tails.
            if v >= E::ZERO {
                E::ONE / (E::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (E::ONE + e)
            }
        });
        let y = out.clone();
        Var::from_op(&[self], out, Box::new(move |g| {
            vec![Some(g.zip(&y, |gv, yv| gv * yv * (E::ONE - yv)))]
        }))
    }

    pub fn tanh(&self) -> Var<E> {
        let out = self.t.map(|v| v.tanh());
        let y = out.clone();
        Var::from_op(&[self], out, Box::new(move |g| {
            vec![Some(g.zip(&y, |gv, yv| gv * (E::ONE - yv * yv)))]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<E> {
        let in_shape = self.t.shape().to_vec();
        let out = self.t.reshaped(shape);
        Var::from_op(&[self], out, Box::new(move |g| vec![Some(g.reshaped(&in_shape))]))
    }

    pub fn sum_all(&self) -> Var<E> {
        let n = self.t.numel();
        let shape = self.t.shape().to_vec();
        let out = Tensor::scalar(self.t.sum());
        let _ = n;
        Var::from_op(&[self], out, Box::new(move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        }))
    }

    pub fn mean_all(&self) -> Var<E> {
        self.sum_all().scale(1.0 / self.t.numel() as f64)
    }

    /// Per-instance mean over all non-batch dimensions: `(N, ...) -> (N)`.
    pub fn mean_per_instance(&self) -> Var<E> {
        let shape = self.t.shape().to_vec();
        assert!(!shape.is_empty());
        let n = shape[0];
        let group: usize = shape[1..].iter().product();
        let inv = E::from_f64(1.0 / group as f64);
        let mut out = vec![E::ZERO; n];
        for (i, row) in self.t.data().chunks(group).enumerate() {
            let mut s = E::ZERO;
            for &v in row {
                s += v;
            }
            out[i] = s * inv;
        }
        let out = Tensor::from_vec(&[n], out);
        Var::from_op(&[self], out, Box::new(move |g| {
            let mut dx = vec![E::ZERO; n * group];
            for i in 0..n {
                let gi = g.data()[i] * inv;
                for v in &mut dx[i * group..(i + 1) * group] {
                    *v = gi;
                }
            }
            vec![Some(Tensor::from_vec(&shape, dx))]
        }))
    }

    /// Multiply each instance of `(N, ...)` by the matching scalar of `s: (N)`.
    pub fn mul_rows(&self, s: &Var<E>) -> Var<E> {
        let shape = self.t.shape().to_vec();
        let n = shape[0];
        assert_eq!(s.t.shape(), &[n], "row scale must be (N)");
        let group: usize = shape[1..].iter().product();
        let x = self.t.clone();
        let sv = s.t.clone();
        let mut out = vec![E::ZERO; x.numel()];
        for i in 0..n {
            let si = sv.data()[i];
            for j in 0..group {
                out[i * group + j] = x.data()[i * group + j] * si;
            }
        }
        let out = Tensor::from_vec(&shape, out);
        Var::from_op(&[self, s], out, Box::new(move |g| {
            let mut dx = vec![E::ZERO; x.numel()];
            let mut ds = vec![E::ZERO; n];
            for i in 0..n {
                let si = sv.data()[i];
                let mut acc = E::ZERO;
                for j in 0..group {
                    let gv = g.data()[i * group + j];
                    dx[i * group + j] = gv * si;
                    acc += gv * x.data()[i * group + j];
                }
                ds[i] = acc;
            }
            vec![
                Some(Tensor::from_vec(x.shape(), dx)),
                Some(Tensor::from_vec(&[n], ds)),
            ]
        }))
    }

    /// Add a feature bias `(D)` to every row of `(N, D)`.
    pub fn add_feature_bias(&self, b: &Var<E>) -> Var<E> {
        let shape = self.t.shape().to_vec();
        assert_eq!(shape.len(), 2, "add_feature_bias expects (N, D)");
        let (_n, d) = (shape[0], shape[1]);
        assert_eq!(b.t.shape(), &[d], "bias width mismatch");
        let mut out = self.t.data().to_vec();
        for row in out.chunks_mut(d) {
            for (v, &bv) in row.iter_mut().zip(b.t.data()) {
                *v += bv;
            }
        }
        let out = Tensor::from_vec(&shape, out);
        Var::from_op(&[self, b], out, Box::new(move |g| {
            let mut db = vec![E::ZERO; d];
            for row in g.data().chunks(d) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![Some(g.clone()), Some(Tensor::from_vec(&[d], db))]
        }))
    }

    /// Concatenate along axis 1 (channels for NCHW, features for NxD).
    pub fn concat1(&self, other: &Var<E>) -> Var<E> {
        let sa = self.t.shape().to_vec();
        let sb = other.t.shape().to_vec();
        assert_eq!(sa.len(), sb.len(), "rank mismatch in concat");
        assert!(sa.len() >= 2);
        assert_eq!(sa[0], sb[0], "batch mismatch in concat");
        assert_eq!(sa[2..], sb[2..], "trailing dims mismatch in concat");
        let n = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let mut out = vec![E::ZERO; shape.iter().product()];
        let (ra, rb, ro) = (ca * inner, cb * inner, (ca + cb) * inner);
        for i in 0..n {
            out[i * ro..i * ro + ra].copy_from_slice(&self.t.data()[i * ra..(i + 1) * ra]);
            out[i * ro + ra..(i + 1) * ro].copy_from_slice(&other.t.data()[i * rb..(i + 1) * rb]);
        }
        let out = Tensor::from_vec(&shape, out);
        Var::from_op(&[self, other], out, Box::new(move |g| {
            let mut da = vec![E::ZERO; n * ra];
            let mut db = vec![E::ZERO; n * rb];
            for i in 0..n {
                da[i * ra..(i + 1) * ra].copy_from_slice(&g.data()[i * ro..i * ro + ra]);
                db[i * rb..(i + 1) * rb].copy_from_slice(&g.data()[i * ro + ra..(i + 1) * ro]);
            }
            vec![
                Some(Tensor::from_vec(&sa, da)),
                Some(Tensor::from_vec(&sb, db)),
            ]
        }))
    }

    /// Slice `[lo, hi)` along axis 1.
    pub fn slice1(&self, lo: usize, hi: usize) -> Var<E> {
        let shape = self.t.shape().to_vec();
        assert!(shape.len() >= 2 && lo < hi && hi <= shape[1]);
        let n = shape[0];
        let inner: usize = shape[2..].iter().product();
        let c = shape[1];
        let co = hi - lo;
        let mut out_shape = shape.clone();
        out_shape[1] = co;
        let mut out = vec![E::ZERO; n * co * inner];
        for i in 0..n {
            let src = &self.t.data()[(i * c + lo) * inner..(i * c + hi) * inner];
            out[i * co * inner..(i + 1) * co * inner].copy_from_slice(src);
        }
        let out = Tensor::from_vec(&out_shape, out);
        Var::from_op(&[self], out, Box::new(move |g| {
            let mut dx = vec![E::ZERO; n * c * inner];
            for i in 0..n {
                dx[(i * c + lo) * inner..(i * c + hi) * inner]
                    .copy_from_slice(&g.data()[i * co * inner..(i + 1) * co * inner]);
            }
            vec![Some(Tensor::from_vec(&shape, dx))]
        }))
    }

    /// Broadcast per-instance vectors `(N, D)` to feature maps `(N, D, h, w)`.
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Var<E> {
        let shape = self.t.shape().to_vec();
        assert_eq!(shape.len(), 2, "broadcast_spatial expects (N, D)");
        let (n, d) = (shape[0], shape[1]);
        let mut out = vec![E::ZERO; n * d * h * w];
        for i in 0..n {
            for j in 0..d {
                let v = self.t.data()[i * d + j];
                let base = (i * d + j) * h * w;
                for k in 0..h * w {
                    out[base + k] = v;
                }
            }
        }
        let out = Tensor::from_vec(&[n, d, h, w], out);
        Var::from_op(&[self], out, Box::new(move |g| {
            let mut dv = vec![E::ZERO; n * d];
            for i in 0..n {
                for j in 0..d {
                    let base = (i * d + j) * h * w;
                    let mut s = E::ZERO;
                    for k in 0..h * w {
                        s += g.data()[base + k];
                    }
                    dv[i * d + j] = s;
                }
            }
            vec![Some(Tensor::from_vec(&[n, d], dv))]
        }))
    }
}
