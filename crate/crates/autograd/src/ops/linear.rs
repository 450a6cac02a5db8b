use crate::{Elem, Tensor, Var};

fn gemm_strided<E: Elem>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    astr: (isize, isize),
    b: &[E],
    bstr: (isize, isize),
    c: &mut [E],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        E::gemm(
            m,
            k,
            n,
            E::ONE,
            a.as_ptr(),
            astr.0,
            astr.1,
            b.as_ptr(),
            bstr.0,
            bstr.1,
            E::ZERO,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<E: Elem> Var<E> {
    /// Fully connected layer `y = x @ w^T + b` with `x: (N, K)`, `w: (O, K)`,
    /// `b: (O)`.
    pub fn linear(&self, w: &Var<E>, b: &Var<E>) -> Var<E> {
        let (n, k) = (self.t.shape()[0], self.t.shape()[1]);
        let (o, k2) = (w.t.shape()[0], w.t.shape()[1]);
        assert_eq!(k, k2, "linear: input width {k} vs weight width {k2}");
        assert_eq!(b.t.shape(), &[o], "linear: bias shape");

        let x = self.t.clone();
        let wt = w.t.clone();
        let mut y = vec![E::ZERO; n * o];
        // y = x (N,K) @ w^T (K,O); w^T strides are w's swapped.
        gemm_strided(n, k, o, x.data(), (k as isize, 1), wt.data(), (1, k as isize), &mut y);
        for row in y.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(b.t.data()) {
                *v += bv;
            }
        }
        let out = Tensor::from_vec(&[n, o], y);

        Var::from_op(&[self, w, b], out, Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![E::ZERO; n * k];
            gemm_strided(n, o, k, gd, (o as isize, 1), wt.data(), (k as isize, 1), &mut dx);
            let mut dw = vec![E::ZERO; o * k];
            // dw = g^T (O,N) @ x (N,K)
            gemm_strided(o, n, k, gd, (1, o as isize), x.data(), (k as isize, 1), &mut dw);
            let mut db = vec![E::ZERO; o];
            for row in gd.chunks(o) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![
                Some(Tensor::from_vec(&[n, k], dx)),
                Some(Tensor::from_vec(&[o, k], dw)),
                Some(Tensor::from_vec(&[o], db)),
            ]
        }))
    }

    /// Row lookup into an embedding table `(R, D)`, one row per index.
    /// Gradients scatter back into the selected rows only.
    pub fn lut_rows(table: &Var<E>, indices: &[usize]) -> Var<E> {
        let (r, d) = (table.t.shape()[0], table.t.shape()[1]);
        let idx = indices.to_vec();
        for &i in &idx {
            assert!(i < r, "index {i} out of range for table with {r} rows");
        }
        let n = idx.len();
        let mut out = vec![E::ZERO; n * d];
        for (row, &i) in idx.iter().enumerate() {
            out[row * d..(row + 1) * d].copy_from_slice(&table.t.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(&[n, d], out);
        Var::from_op(&[table], out, Box::new(move |g| {
            let mut dt = vec![E::ZERO; r * d];
            for (row, &i) in idx.iter().enumerate() {
                for j in 0..d {
                    dt[i * d + j] += g.data()[row * d + j];
                }
            }
            vec![Some(Tensor::from_vec(&[r, d], dt))]
        }))
    }
}
