//! Forward pipelines composed from the sub-networks: the generation path,
//! the dual-mixup autoencoding path, and the compositing operator.

use autograd::{Elem, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::networks::Networks;
use crate::priors::{CodeBundle, ImageQuad, MixupCoeffs, PriorBatch};
use crate::rng::Stream;

/// Blend foreground over background through the mask:
/// `I = bg * (1 - m) + fg * m`, with the single-channel mask broadcast over
/// the three color channels.
pub fn composite<E: Elem>(fg: &Var<E>, bg: &Var<E>, mask: &Var<E>) -> Var<E> {
    assert_eq!(fg.shape(), bg.shape(), "foreground/background shape mismatch");
    assert_eq!(mask.shape()[1], 1, "mask must be single-channel");
    assert_eq!(&mask.shape()[2..], &fg.shape()[2..], "mask spatial mismatch");
    let mask3 = mask.concat1(&mask.concat1(mask));
    let ones = Var::constant(Tensor::full(mask3.value().shape(), E::ONE));
    bg.mul(&ones.sub(&mask3)).add(&fg.mul(&mask3))
}

/// Outputs of one forward pipeline.
pub struct PathOutput<E> {
    pub quad: ImageQuad<E>,
    /// Codes actually fed to the generators.
    pub codes_used: CodeBundle<E>,
    /// Foreground pre-image (and the background pre-image on the generation
    /// path; autoencoding replaces it with the bypass).
    pub a_fg: Var<E>,
    pub a_bg: Option<Var<E>>,
    /// Mixup coefficients (autoencoding only).
    pub mix: Option<MixupCoeffs>,
}

/// Full generation path: embed the priors, run both generators with a shared
/// pose code, and composite.
pub fn generation_path<E: Elem>(
    t: Option<&Tape<E>>,
    nets: &Networks<E>,
    priors: &PriorBatch,
) -> PathOutput<E> {
    let z = Var::constant(priors.z_as::<E>());
    let codes = nets
        .luts
        .embed(t, &priors.parent_indices(), &priors.child_indices());
    let a_bg = nets.g_bg.pre_image(t, &codes.v_bg, &z);
    let i_bg = nets.g_bg.image(t, &a_bg);
    let a_fg = nets.g_fg.pre_image(t, &codes.v_p, &z);
    let mid = nets.g_fg.mid(t, &a_fg, &codes.v_p);
    let (i_fg, i_m) = nets.g_fg.heads(t, &mid, &codes.v_c);
    let image = composite(&i_fg, &i_bg, &i_m);
    PathOutput {
        quad: ImageQuad {
            fg: i_fg,
            bg: i_bg,
            mask: i_m,
            composite: image,
        },
        codes_used: codes,
        a_fg,
        a_bg: Some(a_bg),
        mix: None,
    }
}

/// The two mixup sites: codes (beta0) and foreground pre-image (beta1).
/// Each output is `lut * (1 - beta) + encoded * beta`, per instance.
pub fn dual_mixup<E: Elem>(
    v_p_lut: &Var<E>,
    v_c_lut: &Var<E>,
    v_p_enc: &Var<E>,
    v_c_enc: &Var<E>,
    a_fg: &Var<E>,
    b_fg: &Var<E>,
    mix: &MixupCoeffs,
) -> Result<(Var<E>, Var<E>, Var<E>)> {
    let n = v_p_lut.shape()[0];
    if mix.len() != n {
        return Err(Error::validation(format!(
            "mixup coefficients for {} instances, batch has {n}",
            mix.len()
        )));
    }
    for &b in &mix.beta0 {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::validation(format!("beta0 {b} outside [0, 1]")));
        }
    }
    for &b in &mix.beta1 {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::validation(format!("beta1 {b} outside [0, 1]")));
        }
    }
    let blend = |lut: &Var<E>, enc: &Var<E>, beta: &[f32]| {
        let b = Var::constant(Tensor::from_vec(
            &[n],
            beta.iter().map(|&v| E::from_f64(v as f64)).collect(),
        ));
        let one_minus = Var::constant(Tensor::from_vec(
            &[n],
            beta.iter().map(|&v| E::from_f64(1.0 - v as f64)).collect(),
        ));
        lut.mul_rows(&one_minus).add(&enc.mul_rows(&b))
    };
    Ok((
        blend(v_p_lut, v_p_enc, &mix.beta0),
        blend(v_c_lut, v_c_enc, &mix.beta0),
        blend(a_fg, b_fg, &mix.beta1),
    ))
}

/// Reparameterization: `mu + exp(logsig) * eps` with `eps ~ N(0, I)`.
pub fn reparameterize<E: Elem>(mu: &Var<E>, logsig: &Var<E>, rng: &mut Stream) -> Var<E> {
    assert_eq!(mu.shape(), logsig.shape(), "mu/logsig shape mismatch");
    let eps: Vec<E> = (0..mu.value().numel())
        .map(|_| E::from_f64(rng.normal()))
        .collect();
    let eps = Var::constant(Tensor::from_vec(mu.shape(), eps));
    mu.add(&logsig.exp().mul(&eps))
}

/// Intermediate state of the autoencoding pipeline, exposed so that losses
/// and inference tasks can reuse individual stages.
pub struct AutoencodeState<E> {
    pub content: crate::networks::ContentEncoding<E>,
    pub style: crate::networks::StyleEncoding<E>,
    /// Sampled codes (reparameterized).
    pub v_p_enc: Var<E>,
    pub v_c_enc: Var<E>,
    pub z_enc: Var<E>,
    /// Class indices used for the LUT lookups (0-based).
    pub lut_parents: Vec<usize>,
    pub lut_children: Vec<usize>,
}

/// Options controlling the autoencoding path.
pub struct AutoencodeOptions {
    pub mix: MixupCoeffs,
    /// Replace the child LUT code with this 0-based class row (style
    /// transfer). The child mixup site then passes the LUT row through
    /// unblended so the override is fully effective.
    pub class_override: Option<usize>,
    /// Disable the foreground bypass (beta1 forced to 0).
    pub use_bypass: bool,
}

/// Row argmax of a logits tensor `(N, K)`.
pub fn argmax_rows<E: Elem>(logits: &Tensor<E>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                // Ties break toward the lowest index.
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Steps 1-2 of the autoencoding pipeline: encode content and style, sample
/// codes, derive LUT indices (argmax unless overridden), run the foreground
/// generator through the dual mixup.
#[allow(clippy::too_many_arguments)]
pub fn autoencode_foreground<E: Elem>(
    t: Option<&Tape<E>>,
    nets: &Networks<E>,
    image: &Var<E>,
    opts: &AutoencodeOptions,
    rng: &mut Stream,
) -> Result<(AutoencodeState<E>, CodeBundle<E>, Var<E>, Var<E>, Var<E>)> {
    let n = image.shape()[0];
    if opts.mix.len() != n {
        return Err(Error::validation("mixup batch size mismatch"));
    }
    let content = nets.e_p.forward(t, image);
    let style = nets.e_c.forward(t, image);
    let v_p_enc = reparameterize(&content.mu_p, &content.logsig_p, rng);
    let v_c_enc = reparameterize(&style.mu_c, &style.logsig_c, rng);
    let z_enc = reparameterize(&content.mu_z, &content.logsig_z, rng);

    let lut_parents = argmax_rows(content.e_hat_p.value());
    let lut_children = match opts.class_override {
        Some(k) => {
            if k >= nets.hp.n_c {
                return Err(Error::validation(format!(
                    "class override {k} out of range (n_c = {})",
                    nets.hp.n_c
                )));
            }
            vec![k; n]
        }
        None => argmax_rows(style.e_hat_c.value()),
    };
    let codes = nets.luts.embed(t, &lut_parents, &lut_children);

    let a_fg = nets.g_fg.pre_image(t, &v_p_enc, &z_enc);
    let mut mix = opts.mix.clone();
    if !opts.use_bypass {
        mix.beta1 = vec![0.0; n];
    }
    let (v_p_mix, v_c_mix, a_fg_mix) = dual_mixup(
        &codes.v_p,
        &codes.v_c,
        &v_p_enc,
        &v_c_enc,
        &a_fg,
        &content.b_fg,
        &mix,
    )?;
    // A class override bypasses the mixup on the child site so the requested
    // row takes full effect.
    let v_c_final = if opts.class_override.is_some() {
        codes.v_c.clone()
    } else {
        v_c_mix
    };

    let mid = nets.g_fg.mid(t, &a_fg_mix, &v_p_mix);
    let (i_fg, i_m) = nets.g_fg.heads(t, &mid, &v_c_final);
    let state = AutoencodeState {
        content,
        style,
        v_p_enc,
        v_c_enc,
        z_enc,
        lut_parents,
        lut_children,
    };
    Ok((state, codes, a_fg, i_fg, i_m))
}

/// Full autoencoding path (steps 1-5): foreground first, then the background
/// is encoded with the freshly produced mask and decoded through the bypass.
pub fn autoencode_path<E: Elem>(
    t: Option<&Tape<E>>,
    nets: &Networks<E>,
    image: &Var<E>,
    opts: &AutoencodeOptions,
    rng: &mut Stream,
) -> Result<(PathOutput<E>, AutoencodeState<E>, Var<E>)> {
    let (state, codes, a_fg, i_fg, i_m) = autoencode_foreground(t, nets, image, opts, rng)?;
    // The background stage depends on the mask, which exists only now.
    let b_bg = nets.e_bg.forward(t, image, &i_m);
    let i_bg = nets.g_bg.image(t, &b_bg);
    let out = composite(&i_fg, &i_bg, &i_m);
    Ok((
        PathOutput {
            quad: ImageQuad {
                fg: i_fg,
                bg: i_bg,
                mask: i_m,
                composite: out,
            },
            codes_used: codes,
            a_fg,
            a_bg: None,
            mix: Some(opts.mix.clone()),
        },
        state,
        b_bg,
    ))
}

/// Segmentation inference: steps 1-2 only; the mask is the product.
pub fn segment<E: Elem>(
    nets: &Networks<E>,
    image: &Var<E>,
    pure_encoder: bool,
    rng: &mut Stream,
) -> Result<Var<E>> {
    let n = image.shape()[0];
    let mix = if pure_encoder {
        MixupCoeffs::constant(n, 1.0, 1.0)
    } else {
        MixupCoeffs::constant(n, 0.5, 0.75)
    };
    let opts = AutoencodeOptions {
        mix,
        class_override: None,
        use_bypass: true,
    };
    let (_, _, _, _, i_m) = autoencode_foreground(None, nets, image, &opts, rng)?;
    Ok(i_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperParams;
    use crate::priors::sample_prior_batch;
    use crate::rng::RngBundle;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            n_c: 6,
            n_p: 2,
            d_z: 8,
            d_c: 4,
            d_p: 3,
            d_bg: 4,
            image_size: 16,
            channel_scale: 0.0625,
            ..HyperParams::default()
        }
    }

    fn tensor(shape: &[usize], f: impl Fn(usize) -> f32) -> Var<f32> {
        let n: usize = shape.iter().product();
        Var::constant(Tensor::from_vec(shape, (0..n).map(f).collect()))
    }

    #[test]
    fn composite_endpoint_masks() {
        let fg = tensor(&[1, 3, 2, 2], |i| i as f32 * 0.1 - 0.5);
        let bg = tensor(&[1, 3, 2, 2], |i| 0.9 - i as f32 * 0.1);
        for (mask, expect_fg) in [(1.0f32, true), (0.0, false)] {
            let m = Var::constant(Tensor::full(&[1, 1, 2, 2], mask));
            let out = composite(&fg, &bg, &m);
            let expect = if expect_fg { fg.value() } else { bg.value() };
            for (a, b) in out.value().data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-7);
            }
        }
        // Half mask averages the two.
        let m = Var::constant(Tensor::full(&[1, 1, 2, 2], 0.5f32));
        let out = composite(&fg, &bg, &m);
        for ((o, f), b) in out.value().data().iter().zip(fg.value().data()).zip(bg.value().data()) {
            assert!((o - 0.5 * (f + b)).abs() < 1e-7);
        }
    }

    #[test]
    fn mixup_endpoints_and_arithmetic() {
        let lut = tensor(&[2, 3], |i| i as f32);
        let enc = tensor(&[2, 3], |i| 10.0 + i as f32);
        let a = tensor(&[2, 2, 2, 2], |_| 0.0);
        let b = tensor(&[2, 2, 2, 2], |_| 1.0);

        let mix = MixupCoeffs::constant(2, 0.0, 1.0);
        let (vp, _, af) = dual_mixup(&lut, &enc, &lut, &enc, &a, &b, &mix).unwrap();
        assert_eq!(vp.value(), lut.value());
        assert_eq!(af.value(), b.value());

        let zeros = tensor(&[2, 3], |_| 0.0);
        let twos = tensor(&[2, 3], |_| 2.0);
        let mix = MixupCoeffs::constant(2, 0.5, 0.5);
        let (vp, vc, _) = dual_mixup(&zeros, &zeros, &twos, &twos, &a, &b, &mix).unwrap();
        assert!(vp.value().data().iter().all(|&v| (v - 1.0).abs() < 1e-7));
        assert!(vc.value().data().iter().all(|&v| (v - 1.0).abs() < 1e-7));

        // Mixing equal inputs returns them unchanged for any beta.
        let mix = MixupCoeffs::constant(2, 0.37, 0.81);
        let (vp, _, af) = dual_mixup(&lut, &enc, &lut, &enc, &a, &b, &mix).unwrap();
        for (x, y) in vp.value().data().iter().zip(lut.value().data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let _ = af;

        let bad = MixupCoeffs {
            beta0: vec![0.5, 0.5],
            beta1: vec![1.5, 0.5],
        };
        assert!(dual_mixup(&lut, &enc, &lut, &enc, &a, &b, &bad).is_err());
    }

    #[test]
    fn reparameterize_limits() {
        let mut rng = RngBundle::new(9).reparam;
        let mu = tensor(&[1, 4], |i| i as f32);
        let tiny = Var::constant(Tensor::full(&[1, 4], -20.0f32));
        let s = reparameterize(&mu, &tiny, &mut rng);
        for (a, b) in s.value().data().iter().zip(mu.value().data()) {
            assert!((a - b).abs() < 1e-6);
        }

        // Unit-variance check over many draws.
        let mu = Var::constant(Tensor::<f32>::zeros(&[1, 1]));
        let logsig = Var::constant(Tensor::<f32>::zeros(&[1, 1]));
        let n = 100_000;
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for _ in 0..n {
            let v = reparameterize(&mu, &logsig, &mut rng).value().data()[0] as f64;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());

        // Same seed, same sample.
        let mut r1 = RngBundle::new(4).reparam;
        let mut r2 = RngBundle::new(4).reparam;
        let a = reparameterize(&mu, &logsig, &mut r1);
        let b = reparameterize(&mu, &logsig, &mut r2);
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn generation_path_holds_compositing_identity_and_dataflow() {
        let hp = tiny_hp();
        let mut rngs = RngBundle::new(1);
        let nets = Networks::<f32>::build(&hp, &mut rngs.init);
        let priors = sample_prior_batch(&hp, 3, &mut rngs.priors);
        let out = generation_path(None, &nets, &priors);
        assert!(out.quad.compositing_residual() < 1e-6);

        // Same priors, same image.
        let again = generation_path(None, &nets, &priors);
        assert_eq!(out.quad.composite.value(), again.quad.composite.value());

        // A_fg does not depend on the child class: change phi_c only.
        let mut bundles = priors.bundles.clone();
        for b in &mut bundles {
            let new_c = if b.phi_c == hp.n_c { 1 } else { b.phi_c + 1 };
            *b = crate::priors::PriorBundle::new(new_c, b.phi_p, hp.n_c, hp.n_p, b.z.clone())
                .unwrap();
        }
        let moved = crate::priors::PriorBatch::from_bundles(&hp, bundles);
        let out2 = generation_path(None, &nets, &moved);
        assert_eq!(out.a_fg.value(), out2.a_fg.value());
        assert_eq!(
            out.a_bg.as_ref().unwrap().value(),
            out2.a_bg.as_ref().unwrap().value()
        );
    }

    #[test]
    fn autoencode_path_runs_and_composites() {
        let hp = tiny_hp();
        let mut rngs = RngBundle::new(2);
        let nets = Networks::<f32>::build(&hp, &mut rngs.init);
        let image = tensor(&[2, 3, 16, 16], |i| ((i % 17) as f32 / 8.5) - 1.0);
        let opts = AutoencodeOptions {
            mix: MixupCoeffs::sample(2, (0.0, 1.0), (0.5, 1.0), &mut rngs.mixup),
            class_override: None,
            use_bypass: true,
        };
        let (out, state, _) = autoencode_path(None, &nets, &image, &opts, &mut rngs.reparam).unwrap();
        assert!(out.quad.compositing_residual() < 1e-6);
        assert_eq!(state.lut_children.len(), 2);
        assert!(state.lut_children.iter().all(|&k| k < hp.n_c));
    }

    #[test]
    fn class_override_selects_lut_row_and_leaves_background_alone() {
        let hp = tiny_hp();
        let mut rngs = RngBundle::new(3);
        let nets = Networks::<f32>::build(&hp, &mut rngs.init);
        let image = tensor(&[1, 3, 16, 16], |i| ((i % 13) as f32 / 6.5) - 1.0);
        let opts = AutoencodeOptions {
            mix: MixupCoeffs::constant(1, 1.0, 1.0),
            class_override: Some(4),
            use_bypass: true,
        };
        let (_, state, _) = autoencode_path(None, &nets, &image, &opts, &mut rngs.reparam).unwrap();
        assert_eq!(state.lut_children, vec![4]);

        // The background depends only on (image, mask): feeding the same mask
        // with different overrides gives identical backgrounds.
        let mask = tensor(&[1, 1, 16, 16], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let b1 = nets.e_bg.forward(None, &image, &mask);
        let b2 = nets.e_bg.forward(None, &image, &mask);
        assert_eq!(
            nets.g_bg.image(None, &b1).value(),
            nets.g_bg.image(None, &b2).value()
        );
    }
}
