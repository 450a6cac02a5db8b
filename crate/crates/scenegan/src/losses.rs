//! Loss terms and their weighted aggregation.
//!
//! Reductions are means over elements and batch throughout, so the loss
//! weights are resolution independent. The one exception is the KL term,
//! which sums over code dimensions (and averages over the batch), matching
//! the usual variational form.

use autograd::{Elem, Tensor, Var};

use crate::config::{GanLoss, LossWeights};
use crate::error::{Error, Result};

/// Which pipeline produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathTag {
    Generation,
    FakeRecon,
    RealRecon,
}

impl PathTag {
    pub fn name(&self) -> &'static str {
        match self {
            PathTag::Generation => "generation",
            PathTag::FakeRecon => "fake_recon",
            PathTag::RealRecon => "real_recon",
        }
    }
}

/// Named scalar values of one path's step, serialized as one log line.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub path: PathTag,
    pub entries: Vec<(&'static str, f64)>,
}

impl LossReport {
    pub fn new(path: PathTag) -> Self {
        LossReport {
            path,
            entries: Vec::new(),
        }
    }

    pub fn push<E: Elem>(&mut self, name: &'static str, value: &Var<E>) {
        self.entries.push((name, value.item().to_f64()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// `iter=12 path=generation l_g=0.693 ...`
    pub fn to_line(&self, iteration: u64) -> String {
        let mut line = format!("iter={iteration} path={}", self.path.name());
        for (name, value) in &self.entries {
            line.push_str(&format!(" {name}={value:.6}"));
        }
        line
    }
}

/// Mean squared error over all elements.
pub fn mse<E: Elem>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let d = a.sub(b);
    d.mul(&d).mean_all()
}

/// Mean absolute error over all elements.
pub fn l1<E: Elem>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    a.sub(b).abs().mean_all()
}

fn full_like<E: Elem>(v: &Var<E>, value: f64) -> Tensor<E> {
    Tensor::full(v.shape(), E::from_f64(value))
}

/// Generator-side adversarial loss (non-saturating): the generator drives
/// every discriminator head toward "real". The background real/fake head
/// carries `weights.bg_adv`.
pub fn adversarial_g_loss<E: Elem>(
    d_bg_fake_rf: &Var<E>,
    d_bg_fake_bgness: &Var<E>,
    d_c_fake_rf: &Var<E>,
    weights: &LossWeights,
    form: GanLoss,
) -> Var<E> {
    let toward_real = |logits: &Var<E>| match form {
        GanLoss::Bce => logits.bce_with_logits(&full_like(logits, 1.0)),
        GanLoss::Hinge => logits.mean_all().neg(),
    };
    toward_real(d_bg_fake_rf)
        .scale(weights.bg_adv)
        .add(&toward_real(d_bg_fake_bgness))
        .add(&toward_real(d_c_fake_rf))
}

/// One discriminator head: average of the positive-batch and negative-batch
/// binary cross-entropies (so an all-zero-logit head scores ln 2).
pub fn adversarial_d_head<E: Elem>(
    positive: &Var<E>,
    negative: &Var<E>,
    form: GanLoss,
) -> Var<E> {
    match form {
        GanLoss::Bce => positive
            .bce_with_logits(&full_like(positive, 1.0))
            .add(&negative.bce_with_logits(&full_like(negative, 0.0)))
            .scale(0.5),
        GanLoss::Hinge => positive
            .neg()
            .add_scalar(1.0)
            .relu()
            .mean_all()
            .add(&negative.add_scalar(1.0).relu().mean_all())
            .scale(0.5),
    }
}

/// Discriminator-side adversarial loss over the three heads:
/// background real/fake, background-vs-object, object real/fake.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_d_loss<E: Elem>(
    d_bg_real_rf: &Var<E>,
    d_bg_fake_rf: &Var<E>,
    d_bg_real_bgness: &Var<E>,
    d_bg_object_bgness: &Var<E>,
    d_c_real_rf: &Var<E>,
    d_c_fake_rf: &Var<E>,
    weights: &LossWeights,
    form: GanLoss,
) -> Result<Var<E>> {
    for v in [d_bg_real_rf, d_bg_fake_rf, d_c_real_rf, d_c_fake_rf] {
        if v.value().numel() == 0 {
            return Err(Error::validation("empty batch in adversarial loss"));
        }
    }
    Ok(adversarial_d_head(d_bg_real_rf, d_bg_fake_rf, form)
        .scale(weights.bg_adv)
        .add(&adversarial_d_head(d_bg_real_bgness, d_bg_object_bgness, form))
        .add(&adversarial_d_head(d_c_real_rf, d_c_fake_rf, form)))
}

/// Classification losses: the discriminator's class head and both encoder
/// class heads against the classes the batch was generated with. Only
/// defined on generated images (real images carry no labels).
pub fn classification_loss<E: Elem>(
    d_c_class_logits: &Var<E>,
    e_hat_p: &Var<E>,
    e_hat_c: &Var<E>,
    parents: &[usize],
    children: &[usize],
) -> Var<E> {
    d_c_class_logits
        .softmax_cross_entropy(children)
        .add(&e_hat_p.softmax_cross_entropy(parents))
        .add(&e_hat_c.softmax_cross_entropy(children))
}

/// Distance losses pairing generation-side tensors with their encoded
/// counterparts. The background pre-image pair only exists on the
/// generation path.
#[allow(clippy::too_many_arguments)]
pub fn distance_loss<E: Elem>(
    v_c: &Var<E>,
    mu_c: &Var<E>,
    v_p: &Var<E>,
    mu_p: &Var<E>,
    a_fg: &Var<E>,
    b_fg: &Var<E>,
    bg_pair: Option<(&Var<E>, &Var<E>)>,
) -> Var<E> {
    let mut total = mse(v_c, mu_c).add(&mse(v_p, mu_p)).add(&mse(a_fg, b_fg));
    if let Some((a_bg, b_bg)) = bg_pair {
        total = total.add(&mse(a_bg, b_bg));
    }
    total
}

/// Squared Euclidean norms of the latent codes, averaged over the batch.
pub fn code_regularization<E: Elem>(codes: &[&Var<E>]) -> Var<E> {
    let mut total: Option<Var<E>> = None;
    for code in codes {
        let n = code.shape()[0] as f64;
        let sq = code.mul(code).sum_all().scale(1.0 / n);
        total = Some(match total {
            None => sq,
            Some(t) => t.add(&sq),
        });
    }
    total.expect("at least one code")
}

/// Mask regularizer: balance (per-instance mean near one half) plus
/// decisiveness (values pushed toward 0/1), the latter scaled by
/// `decisive_weight`.
pub fn mask_regularization<E: Elem>(mask: &Var<E>, decisive_weight: f64) -> Result<Var<E>> {
    for &v in mask.value().data() {
        let v = v.to_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("mask value {v} outside [0, 1]")));
        }
    }
    // Balance: | mean(m) - 1/2 | per instance.
    let balance = mask.mean_per_instance().add_scalar(-0.5).abs().mean_all();
    // Decisiveness on m' = 2m - 1: |mean(max(0, m')) - 1/2| + |mean(min(0, m')) + 1/2|.
    let m2 = mask.scale(2.0).add_scalar(-1.0);
    let pos = m2.relu().mean_per_instance().add_scalar(-0.5).abs();
    let neg = m2.neg().relu().neg().mean_per_instance().add_scalar(0.5).abs();
    let decisive = pos.add(&neg).mean_all();
    Ok(balance.add(&decisive.scale(decisive_weight)))
}

/// KL divergence of a diagonal Gaussian (mean, log standard deviation) from
/// a unit-variance Gaussian centered at `target` (zero when absent); summed
/// over dimensions, averaged over the batch.
pub fn gaussian_kl<E: Elem>(mu: &Var<E>, logsig: &Var<E>, target: Option<&Var<E>>) -> Var<E> {
    let n = mu.shape()[0] as f64;
    let var = logsig.scale(2.0).exp();
    let diff = match target {
        Some(t) => mu.sub(t),
        None => mu.clone(),
    };
    var.add(&diff.mul(&diff))
        .add_scalar(-1.0)
        .sub(&logsig.scale(2.0))
        .sum_all()
        .scale(0.5 / n)
}

/// The three statistical terms: shape and style codes pulled toward their
/// LUT rows, pose code toward the standard normal.
#[allow(clippy::too_many_arguments)]
pub fn vae_kl_loss<E: Elem>(
    mu_p: &Var<E>,
    logsig_p: &Var<E>,
    v_p: &Var<E>,
    mu_c: &Var<E>,
    logsig_c: &Var<E>,
    v_c: &Var<E>,
    mu_z: &Var<E>,
    logsig_z: &Var<E>,
) -> Var<E> {
    gaussian_kl(mu_p, logsig_p, Some(v_p))
        .add(&gaussian_kl(mu_c, logsig_c, Some(v_c)))
        .add(&gaussian_kl(mu_z, logsig_z, None))
}

/// Reconstruction targets: real images only constrain the composite; fake
/// images also constrain the background and the mask (their ground truth
/// exists by construction).
pub enum ReconTarget<'a, E> {
    Real {
        input: &'a Var<E>,
        output: &'a Var<E>,
    },
    Fake {
        input: &'a Var<E>,
        output: &'a Var<E>,
        input_bg: &'a Var<E>,
        output_bg: &'a Var<E>,
        input_mask: &'a Var<E>,
        output_mask: &'a Var<E>,
    },
}

pub fn reconstruction_loss<E: Elem>(target: ReconTarget<E>) -> Var<E> {
    match target {
        ReconTarget::Real { input, output } => l1(input, output),
        ReconTarget::Fake {
            input,
            output,
            input_bg,
            output_bg,
            input_mask,
            output_mask,
        } => l1(input, output)
            .add(&l1(input_bg, output_bg))
            .add(&l1(input_mask, output_mask)),
    }
}

/// Perceptual distance: mean squared difference between discriminator
/// features of each pair (image features always; background features on the
/// fake path).
pub fn perceptual_loss<E: Elem>(pairs: &[(&Var<E>, &Var<E>)]) -> Var<E> {
    assert!(!pairs.is_empty(), "perceptual loss needs at least one pair");
    let mut total: Option<Var<E>> = None;
    for (a, b) in pairs {
        let term = mse(a, b);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term),
        });
    }
    total.unwrap()
}

/// The member terms feeding the aggregates of one path.
#[derive(Default)]
pub struct LossTerms<E> {
    pub l_e: Option<Var<E>>,
    pub l_mse: Option<Var<E>>,
    pub l_reg_v: Option<Var<E>>,
    pub l_g: Option<Var<E>>,
    pub l_m: Option<Var<E>>,
    pub l_vae: Option<Var<E>>,
    pub l_rec: Option<Var<E>>,
    pub l_per: Option<Var<E>>,
}

/// Aggregates of one path.
pub struct Totals<E> {
    pub l_gen: Var<E>,
    /// Present on the reconstruction paths only.
    pub l_ae: Option<Var<E>>,
}

/// Weighted aggregation:
/// `L_GEN = L_E + L_MSE + reg_v * L_REG_v + L_G + mask * L_M` and, on the
/// reconstruction paths, `L_AE = L_GEN + L_VAE + L_REC + L_PER`. Missing
/// members are validation errors, except `L_E` on the real path where no
/// labels exist.
pub fn total_losses<E: Elem>(
    terms: &LossTerms<E>,
    weights: &LossWeights,
    tag: PathTag,
) -> Result<Totals<E>> {
    let need = |v: &Option<Var<E>>, name: &'static str| {
        v.clone().ok_or(Error::MissingLossMember(name))
    };
    let mut l_gen = need(&terms.l_mse, "l_mse")?
        .add(&need(&terms.l_reg_v, "l_reg_v")?.scale(weights.reg_v))
        .add(&need(&terms.l_g, "l_g")?)
        .add(&need(&terms.l_m, "l_m")?.scale(weights.mask));
    match (&terms.l_e, tag) {
        (Some(l_e), _) => l_gen = l_gen.add(l_e),
        (None, PathTag::RealRecon) => {}
        (None, _) => return Err(Error::MissingLossMember("l_e")),
    }
    let l_ae = match tag {
        PathTag::Generation => None,
        PathTag::FakeRecon | PathTag::RealRecon => Some(
            l_gen
                .add(&need(&terms.l_vae, "l_vae")?)
                .add(&need(&terms.l_rec, "l_rec")?)
                .add(&need(&terms.l_per, "l_per")?),
        ),
    };
    Ok(Totals { l_gen, l_ae })
}
