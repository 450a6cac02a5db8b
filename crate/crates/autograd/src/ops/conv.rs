use rayon::prelude::*;

use crate::{Elem, Tensor, Var};

#[derive(Clone, Copy)]
struct ConvDims {
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ih: usize,
    iw: usize,
    oh: usize,
    ow: usize,
}

fn out_side(i: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        i + 2 * pad >= k,
        "conv kernel {k} larger than padded input {i}+2*{pad}"
    );
    (i + 2 * pad - k) / stride + 1
}

/// Expand one image `(Ci, IH, IW)` into columns `(Ci*KH*KW, OH*OW)`.
fn im2col<E: Elem>(x: &[E], d: ConvDims, col: &mut [E]) {
    let ohw = d.oh * d.ow;
    for c in 0..d.ci {
        let plane = &x[c * d.ih * d.iw..(c + 1) * d.ih * d.iw];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * ohw;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let dst = &mut col[row + oy * d.ow..row + (oy + 1) * d.ow];
                    if iy < 0 || iy >= d.ih as isize {
                        dst.fill(E::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * d.iw..(iy as usize + 1) * d.iw];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.iw as isize {
                            E::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image (transpose of `im2col`).
fn col2im<E: Elem>(col: &[E], d: ConvDims, x: &mut [E]) {
    let ohw = d.oh * d.ow;
    for c in 0..d.ci {
        let plane = &mut x[c * d.ih * d.iw..(c + 1) * d.ih * d.iw];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * ohw;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.ih as isize {
                        continue;
                    }
                    let src = &col[row + oy * d.ow..row + (oy + 1) * d.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.iw as isize {
                            plane[iy as usize * d.iw + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<E: Elem> Var<E> {
    /// 2D convolution, NCHW. `w: (Co, Ci, KH, KW)`, `b: (Co)`.
    pub fn conv2d(&self, w: &Var<E>, b: &Var<E>, stride: usize, pad: usize) -> Var<E> {
        let xs = self.t.shape();
        let ws = w.t.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be (Co,Ci,KH,KW)");
        assert_eq!(xs[1], ws[1], "conv2d: {} input channels vs weight {}", xs[1], ws[1]);
        let d = ConvDims {
            ci: ws[1],
            co: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            ih: xs[2],
            iw: xs[3],
            oh: out_side(xs[2], ws[2], stride, pad),
            ow: out_side(xs[3], ws[3], stride, pad),
        };
        assert_eq!(b.t.shape(), &[d.co], "conv2d bias shape");
        let n = xs[0];
        let (in_sz, out_sz) = (d.ci * d.ih * d.iw, d.co * d.oh * d.ow);
        let kdim = d.ci * d.kh * d.kw;
        let ohw = d.oh * d.ow;

        let x = self.t.clone();
        let wt = w.t.clone();
        let bt = b.t.clone();

        let mut y = vec![E::ZERO; n * out_sz];
        y.par_chunks_mut(out_sz).enumerate().for_each(|(i, yi)| {
            let mut col = vec![E::ZERO; kdim * ohw];
            im2col(&x.data()[i * in_sz..(i + 1) * in_sz], d, &mut col);
            unsafe {
                E::gemm(
                    d.co, kdim, ohw,
                    E::ONE,
                    wt.data().as_ptr(), kdim as isize, 1,
                    col.as_ptr(), ohw as isize, 1,
                    E::ZERO,
                    yi.as_mut_ptr(), ohw as isize, 1,
                );
            }
            for c in 0..d.co {
                let bv = bt.data()[c];
                for v in &mut yi[c * ohw..(c + 1) * ohw] {
                    *v += bv;
                }
            }
        });
        let out = Tensor::from_vec(&[n, d.co, d.oh, d.ow], y);

        let in_shape = xs.to_vec();
        Var::from_op(&[self, w, b], out, Box::new(move |g| {
            // Per-image partials computed in parallel, then reduced in index
            // order so the result does not depend on scheduling.
            let parts: Vec<(Vec<E>, Vec<E>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let gi = &g.data()[i * out_sz..(i + 1) * out_sz];
                    let mut col = vec![E::ZERO; kdim * ohw];
                    im2col(&x.data()[i * in_sz..(i + 1) * in_sz], d, &mut col);
                    // dw_i = g_i (Co,OHW) @ col^T (OHW,K)
                    let mut dw = vec![E::ZERO; d.co * kdim];
                    unsafe {
                        E::gemm(
                            d.co, ohw, kdim,
                            E::ONE,
                            gi.as_ptr(), ohw as isize, 1,
                            col.as_ptr(), 1, ohw as isize,
                            E::ZERO,
                            dw.as_mut_ptr(), kdim as isize, 1,
                        );
                    }
                    // dcol = w^T (K,Co) @ g_i (Co,OHW), reuse the col buffer.
                    unsafe {
                        E::gemm(
                            kdim, d.co, ohw,
                            E::ONE,
                            wt.data().as_ptr(), 1, kdim as isize,
                            gi.as_ptr(), ohw as isize, 1,
                            E::ZERO,
                            col.as_mut_ptr(), ohw as isize, 1,
                        );
                    }
                    let mut dx = vec![E::ZERO; in_sz];
                    col2im(&col, d, &mut dx);
                    (dx, dw)
                })
                .collect();

            let mut dx = vec![E::ZERO; n * in_sz];
            let mut dw = vec![E::ZERO; d.co * kdim];
            for (i, (dxi, dwi)) in parts.iter().enumerate() {
                dx[i * in_sz..(i + 1) * in_sz].copy_from_slice(dxi);
                for (acc, &v) in dw.iter_mut().zip(dwi) {
                    *acc += v;
                }
            }
            let mut db = vec![E::ZERO; d.co];
            for i in 0..n {
                for c in 0..d.co {
                    let base = i * out_sz + c * ohw;
                    let mut s = E::ZERO;
                    for k in 0..ohw {
                        s += g.data()[base + k];
                    }
                    db[c] += s;
                }
            }
            vec![
                Some(Tensor::from_vec(&in_shape, dx)),
                Some(Tensor::from_vec(&[d.co, d.ci, d.kh, d.kw], dw)),
                Some(Tensor::from_vec(&[d.co], db)),
            ]
        }))
    }

    /// Nearest-neighbor upsampling by a factor of 2.
    pub fn upsample_nearest_x2(&self) -> Var<E> {
        let s = self.t.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.t.clone();
        let mut y = vec![E::ZERO; n * c * oh * ow];
        y.par_chunks_mut(oh * ow).enumerate().for_each(|(p, plane)| {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    plane[oy * ow + ox] = src[(oy / 2) * w + ox / 2];
                }
            }
        });
        let out = Tensor::from_vec(&[n, c, oh, ow], y);
        Var::from_op(&[self], out, Box::new(move |g| {
            let mut dx = vec![E::ZERO; n * c * h * w];
            dx.par_chunks_mut(h * w).enumerate().for_each(|(p, plane)| {
                let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                for y0 in 0..h {
                    for x0 in 0..w {
                        let mut acc = E::ZERO;
                        for dy in 0..2 {
                            for dx2 in 0..2 {
                                acc += src[(2 * y0 + dy) * ow + 2 * x0 + dx2];
                            }
                        }
                        plane[y0 * w + x0] = acc;
                    }
                }
            });
            vec![Some(Tensor::from_vec(&s, dx))]
        }))
    }

    /// Bilinear resize to `(oh, ow)` with half-pixel centers.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Var<E> {
        let s = self.t.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let taps_y = bilinear_taps(h, oh);
        let taps_x = bilinear_taps(w, ow);
        let x = self.t.clone();
        let mut y = vec![E::ZERO; n * c * oh * ow];
        {
            let taps_y = &taps_y;
            let taps_x = &taps_x;
            y.par_chunks_mut(oh * ow).enumerate().for_each(|(p, plane)| {
                let src = &x.data()[p * h * w..(p + 1) * h * w];
                for oy in 0..oh {
                    let (y0, y1, fy) = taps_y[oy];
                    for ox in 0..ow {
                        let (x0, x1, fx) = taps_x[ox];
                        let v00 = src[y0 * w + x0].to_f64();
                        let v01 = src[y0 * w + x1].to_f64();
                        let v10 = src[y1 * w + x0].to_f64();
                        let v11 = src[y1 * w + x1].to_f64();
                        let top = v00 * (1.0 - fx) + v01 * fx;
                        let bot = v10 * (1.0 - fx) + v11 * fx;
                        plane[oy * ow + ox] = E::from_f64(top * (1.0 - fy) + bot * fy);
                    }
                }
            });
        }
        let out = Tensor::from_vec(&[n, c, oh, ow], y);
        Var::from_op(&[self], out, Box::new(move |g| {
            let mut dx = vec![E::ZERO; n * c * h * w];
            dx.par_chunks_mut(h * w).enumerate().for_each(|(p, plane)| {
                let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                for oy in 0..oh {
                    let (y0, y1, fy) = taps_y[oy];
                    for ox in 0..ow {
                        let (x0, x1, fx) = taps_x[ox];
                        let gv = src[oy * ow + ox].to_f64();
                        plane[y0 * w + x0] += E::from_f64(gv * (1.0 - fy) * (1.0 - fx));
                        plane[y0 * w + x1] += E::from_f64(gv * (1.0 - fy) * fx);
                        plane[y1 * w + x0] += E::from_f64(gv * fy * (1.0 - fx));
                        plane[y1 * w + x1] += E::from_f64(gv * fy * fx);
                    }
                }
            });
            vec![Some(Tensor::from_vec(&s, dx))]
        }))
    }
}

/// Sample positions for one axis: (low index, high index, high weight).
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
