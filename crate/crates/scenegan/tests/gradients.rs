//! Finite-difference gradient checks for every loss term, every block, and
//! every network, in double precision on miniature shapes.

use autograd::{max_rel_err, numeric_gradient, Param, ParamSet, Tape, Tensor, Var};
use scenegan::blocks::{DownBlock, GluNorm, NetBuilder, ResBlock, ResBlock0, UpBlock};
use scenegan::config::{GanLoss, HyperParams, LossWeights};
use scenegan::losses::*;
use scenegan::networks::{
    BackgroundDiscriminator, ImageDiscriminator, Networks,
};
use scenegan::priors::{PriorBatch, PriorBundle};
use scenegan::rng::{RngBundle, Stream};

const TOL: f64 = 1e-3;
const H_STEP: f64 = 1e-5;

fn randn(rng: &mut Stream, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal() * scale).collect())
}

/// Gradient check of `f` with respect to each listed input tensor.
fn check_inputs(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Var<f64>) {
    for which in 0..inputs.len() {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&vars);
        let grads = loss.backward();
        let analytic = grads.of(&vars[which]).expect("input participates").clone();
        let numeric = numeric_gradient(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[which] = probe.clone();
                let vars: Vec<Var<f64>> = xs.into_iter().map(Var::constant).collect();
                f(&vars).item()
            },
            &inputs[which],
            H_STEP,
        );
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < TOL, "input {which}: rel err {err:.2e}");
    }
}

/// Gradient check with respect to a registered parameter of a built module.
fn check_param(param: &Param<f64>, forward: impl Fn(Option<&Tape<f64>>) -> Var<f64>) {
    let tape = Tape::new();
    let leaf = tape.leaf(param);
    let loss = forward(Some(&tape));
    let grads = loss.backward();
    let analytic = grads
        .of(&leaf)
        .unwrap_or_else(|| panic!("parameter {} has no gradient", param.name()))
        .clone();
    let base = param.value();
    let numeric = numeric_gradient(
        |probe| {
            param.set(probe.clone());
            let out = forward(None).item();
            param.set(base.clone());
            out
        },
        &base,
        H_STEP,
    );
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "param {}: rel err {err:.2e}", param.name());
}

fn builder_rng(seed: u64) -> Stream {
    RngBundle::new(seed).init
}

fn sampler_from(stream: &mut Stream) -> impl FnMut(&[usize]) -> Tensor<f64> + '_ {
    move |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| stream.normal() * 0.1).collect())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

#[test]
fn loss_gradients_adversarial() {
    let mut rng = RngBundle::new(1).eval;
    let w = LossWeights::default();
    let patch_a = randn(&mut rng, &[2, 1, 3, 3], 0.8);
    let patch_b = randn(&mut rng, &[2, 1, 3, 3], 0.8);
    let scalar = randn(&mut rng, &[2, 1], 0.8);
    check_inputs(&[patch_a.clone(), patch_b.clone(), scalar.clone()], |v| {
        adversarial_g_loss(&v[0], &v[1], &v[2], &w, GanLoss::Bce)
    });
    let more = randn(&mut rng, &[2, 1, 3, 3], 0.8);
    let more2 = randn(&mut rng, &[2, 1], 0.8);
    check_inputs(
        &[patch_a, patch_b, more, scalar, more2],
        |v| {
            adversarial_d_loss(&v[0], &v[1], &v[2], &v[2], &v[3], &v[4], &w, GanLoss::Bce).unwrap()
        },
    );
}

#[test]
fn loss_gradients_classification_and_distance() {
    let mut rng = RngBundle::new(2).eval;
    let d_c = randn(&mut rng, &[3, 5], 1.0);
    let e_p = randn(&mut rng, &[3, 4], 1.0);
    let e_c = randn(&mut rng, &[3, 5], 1.0);
    check_inputs(&[d_c, e_p, e_c], |v| {
        classification_loss(&v[0], &v[1], &v[2], &[0, 3, 1], &[4, 0, 2])
    });

    let vc = randn(&mut rng, &[2, 3], 1.0);
    let mc = randn(&mut rng, &[2, 3], 1.0);
    let vp = randn(&mut rng, &[2, 4], 1.0);
    let mp = randn(&mut rng, &[2, 4], 1.0);
    let af = randn(&mut rng, &[2, 2, 3, 3], 1.0);
    let bf = randn(&mut rng, &[2, 2, 3, 3], 1.0);
    check_inputs(&[vc, mc, vp, mp, af.clone(), bf.clone()], |v| {
        distance_loss(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], Some((&v[4], &v[5])))
    });
}

#[test]
fn loss_gradients_regularizers_and_kl() {
    let mut rng = RngBundle::new(3).eval;
    let vp = randn(&mut rng, &[2, 4], 1.0);
    let vc = randn(&mut rng, &[2, 6], 1.0);
    check_inputs(&[vp.clone(), vc.clone()], |v| code_regularization(&[&v[0], &v[1]]));

    // Mask strictly inside (0, 1) and away from the 0.5 kink of the
    // decisiveness term (|x| has no gradient exactly at zero).
    let mask = Tensor::from_vec(
        &[2, 1, 3, 3],
        (0..18).map(|i| 0.15 + 0.04 * (i as f64 % 17.0)).collect(),
    );
    let dec = LossWeights::default().mask_decisive;
    check_inputs(&[mask], |v| mask_regularization(&v[0], dec).unwrap());

    let mu = randn(&mut rng, &[2, 4], 1.0);
    let ls = randn(&mut rng, &[2, 4], 0.3);
    let target = randn(&mut rng, &[2, 4], 1.0);
    check_inputs(&[mu, ls, target], |v| gaussian_kl(&v[0], &v[1], Some(&v[2])));
}

#[test]
fn loss_gradients_reconstruction_and_perceptual() {
    let mut rng = RngBundle::new(4).eval;
    let a = randn(&mut rng, &[2, 3, 3, 3], 0.5);
    let b = randn(&mut rng, &[2, 3, 3, 3], 0.5);
    check_inputs(&[a.clone(), b.clone()], |v| {
        reconstruction_loss(ReconTarget::Real { input: &v[0], output: &v[1] })
    });
    let m1 = randn(&mut rng, &[2, 1, 3, 3], 0.5);
    let m2 = randn(&mut rng, &[2, 1, 3, 3], 0.5);
    check_inputs(&[a.clone(), b.clone(), m1, m2], |v| {
        reconstruction_loss(ReconTarget::Fake {
            input: &v[0],
            output: &v[1],
            input_bg: &v[0],
            output_bg: &v[1],
            input_mask: &v[2],
            output_mask: &v[3],
        })
    });
    check_inputs(&[a, b], |v| perceptual_loss(&[(&v[0], &v[1])]));
}

#[test]
fn loss_gradients_totals() {
    let mut rng = RngBundle::new(5).eval;
    let w = LossWeights::default();
    let parts: Vec<Tensor<f64>> = (0..8).map(|_| randn(&mut rng, &[1], 1.0)).collect();
    check_inputs(&parts, |v| {
        let terms = LossTerms {
            l_e: Some(v[0].clone()),
            l_mse: Some(v[1].clone()),
            l_reg_v: Some(v[2].clone()),
            l_g: Some(v[3].clone()),
            l_m: Some(v[4].clone()),
            l_vae: Some(v[5].clone()),
            l_rec: Some(v[6].clone()),
            l_per: Some(v[7].clone()),
        };
        total_losses(&terms, &w, PathTag::FakeRecon).unwrap().l_ae.unwrap()
    });
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

#[test]
fn block_gradients_on_toy_shapes() {
    let mut stream = builder_rng(6);
    let mut set = ParamSet::<f64>::new();
    let (glu, up, down, res0, res) = {
        let mut sampler = sampler_from(&mut stream);
        let mut nb = NetBuilder::new(&mut set, &mut sampler);
        (
            GluNorm::new(&mut nb, "glu", 2),
            UpBlock::new(&mut nb, "up", 4, 2),
            DownBlock::new(&mut nb, "down", 4, 2),
            ResBlock0::new(&mut nb, "res0", 2),
            ResBlock::new(&mut nb, "res", 2, 3, 2),
        )
    };
    let mut rng = RngBundle::new(7).eval;
    let x4 = randn(&mut rng, &[2, 4, 4, 4], 0.7);
    let x2 = randn(&mut rng, &[2, 2, 4, 4], 0.7);
    let cond = randn(&mut rng, &[2, 3], 0.7);

    check_inputs(&[x4.clone()], |v| glu.apply(tape_of(&v[0]).as_ref(), &v[0]).mean_all());
    check_inputs(&[x4.clone()], |v| up.apply(tape_of(&v[0]).as_ref(), &v[0]).mean_all());
    check_inputs(&[x4.clone()], |v| down.apply(tape_of(&v[0]).as_ref(), &v[0]).mean_all());
    check_inputs(&[x2.clone()], |v| res0.apply(tape_of(&v[0]).as_ref(), &v[0]).mean_all());
    check_inputs(&[x2.clone(), cond.clone()], |v| {
        res.apply(tape_of(&v[0]).as_ref(), &v[0], &v[1]).mean_all()
    });

    // Parameter-side gradients for every block parameter.
    let x4c = Var::constant(x4);
    let x2c = Var::constant(x2);
    let condc = Var::constant(cond);
    for p in set.iter() {
        let name = p.name().to_string();
        if name.starts_with("glu") {
            check_param(p, |t| glu.apply(t, &x4c).mean_all());
        } else if name.starts_with("up") {
            check_param(p, |t| up.apply(t, &x4c).mean_all());
        } else if name.starts_with("down") {
            check_param(p, |t| down.apply(t, &x4c).mean_all());
        } else if name.starts_with("res0") {
            check_param(p, |t| res0.apply(t, &x2c).mean_all());
        } else {
            check_param(p, |t| res.apply(t, &x2c, &condc).mean_all());
        }
    }
}

/// Blocks take `Option<&Tape>`; recover the tape from a tracked input.
fn tape_of(v: &Var<f64>) -> Option<Tape<f64>> {
    v.tape()
}

// ---------------------------------------------------------------------------
// Networks (miniature configuration)
// ---------------------------------------------------------------------------

fn mini_hp() -> HyperParams {
    HyperParams {
        n_c: 4,
        n_p: 2,
        d_z: 3,
        d_c: 2,
        d_p: 2,
        d_bg: 2,
        image_size: 16,
        channel_scale: 0.004, // widths collapse to the minimum of 2
        ..HyperParams::default()
    }
}

#[test]
fn network_gradients_miniature() {
    let hp = mini_hp();
    let mut rngs = RngBundle::new(8);
    let nets = Networks::<f64>::build(&hp, &mut rngs.init);
    let priors = PriorBatch::from_bundles(
        &hp,
        vec![
            PriorBundle::new(1, 1, hp.n_c, hp.n_p, vec![0.1, -0.2, 0.3]).unwrap(),
            PriorBundle::new(3, 2, hp.n_c, hp.n_p, vec![-0.5, 0.0, 0.2]).unwrap(),
        ],
    );
    let parents = priors.parent_indices();
    let children = priors.child_indices();

    // Full generation pipeline as a scalar function of the pose code.
    let z_t = priors.z_as::<f64>();
    check_inputs(&[z_t.clone()], |v| {
        let t = v[0].tape();
        let codes = nets.luts.embed(t.as_ref(), &parents, &children);
        let a_bg = nets.g_bg.pre_image(t.as_ref(), &codes.v_bg, &v[0]);
        let i_bg = nets.g_bg.image(t.as_ref(), &a_bg);
        let a_fg = nets.g_fg.pre_image(t.as_ref(), &codes.v_p, &v[0]);
        let mid = nets.g_fg.mid(t.as_ref(), &a_fg, &codes.v_p);
        let (i_fg, i_m) = nets.g_fg.heads(t.as_ref(), &mid, &codes.v_c);
        scenegan::paths::composite(&i_fg, &i_bg, &i_m).mean_all()
    });

    // Encoder pipelines as scalar functions of the image.
    let mut rng = RngBundle::new(9).eval;
    let img = randn(&mut rng, &[2, 3, 16, 16], 0.3);
    check_inputs(&[img.clone()], |v| {
        let t = v[0].tape();
        let enc = nets.e_p.forward(t.as_ref(), &v[0]);
        enc.e_hat_p
            .mean_all()
            .add(&enc.mu_p.mean_all())
            .add(&enc.logsig_z.mean_all())
            .add(&enc.b_fg.mean_all())
    });
    check_inputs(&[img.clone()], |v| {
        let t = v[0].tape();
        let enc = nets.e_c.forward(t.as_ref(), &v[0]);
        enc.e_hat_c.mean_all().add(&enc.mu_c.tanh().mean_all())
    });
    let mask = randn(&mut rng, &[2, 1, 16, 16], 0.3);
    check_inputs(&[img.clone(), mask], |v| {
        let t = v[0].tape();
        nets.e_bg.forward(t.as_ref(), &v[0], &v[1]).mean_all()
    });

    // Discriminators.
    let (d_c, d_bg) = {
        let mut sampler = sampler_from(&mut rngs.init);
        (
            ImageDiscriminator::<f64>::build(&hp, &mut sampler),
            BackgroundDiscriminator::<f64>::build(&hp, &mut sampler),
        )
    };
    check_inputs(&[img.clone()], |v| {
        let t = v[0].tape();
        let out = d_c.forward(t.as_ref(), &v[0]);
        out.rf.mean_all().add(&out.class_logits.tanh().mean_all()).add(&out.features.mean_all())
    });
    check_inputs(&[img], |v| {
        let t = v[0].tape();
        let out = d_bg.forward(t.as_ref(), &v[0]);
        out.rf_patch.mean_all().add(&out.bg_patch.tanh().mean_all())
    });

    // A couple of parameter-side checks through the deepest compositions.
    let z_const = Var::constant(z_t);
    let table = &nets.luts.v_p.table;
    check_param(table, |t| {
        let codes = nets.luts.embed(t, &parents, &children);
        let a_fg = nets.g_fg.pre_image(t, &codes.v_p, &z_const);
        let mid = nets.g_fg.mid(t, &a_fg, &codes.v_p);
        let (i_fg, i_m) = nets.g_fg.heads(t, &mid, &codes.v_c);
        i_fg.mean_all().add(&i_m.mean_all())
    });
}
