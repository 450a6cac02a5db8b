//! The seven sub-networks and three embedding tables.
//!
//! Layer widths reproduce the reference tables exactly at 128 px with
//! `channel_scale = 1`; other sizes keep the same construction rules with
//! stages added or removed at the outermost resolutions. The 16x16 pre-image
//! plane (the bypass hand-off point) is fixed for 64/128 px models.

use autograd::{Elem, Param, ParamSet, Tape, Tensor, Var};

use crate::blocks::{leaf, Conv2d, DownBlock, GluNorm, LayerNorm, Linear, NetBuilder, ResBlock, UpBlock, WInit};
use crate::config::HyperParams;
use crate::priors::CodeBundle;
use crate::rng::Stream;

/// Derived layout shared by the builders.
#[derive(Clone, Copy, Debug)]
pub struct ArchPlan {
    pub image_size: usize,
    pub pre_side: usize,
    /// Channel count of the pre-image / bypass plane (scaled).
    pub pre_channels: usize,
    /// Up stages inside G_*0 (4x4 -> pre_side).
    pub n_pre_ups: usize,
    /// Up stages inside G_*1 (pre_side -> image_size).
    pub n_post_ups: usize,
    /// Down stages in the encoder trunks (image_size -> pre_side).
    pub n_enc_stages: usize,
}

impl ArchPlan {
    pub fn of(hp: &HyperParams) -> ArchPlan {
        let h = hp.image_size;
        let pre = hp.pre_side();
        assert!(h % pre == 0 && (h / pre).is_power_of_two());
        assert!(pre % 4 == 0 && (pre / 4).is_power_of_two());
        let n_pre_ups = (pre / 4).trailing_zeros() as usize;
        let n_post_ups = (h / pre).trailing_zeros() as usize;
        ArchPlan {
            image_size: h,
            pre_side: pre,
            pre_channels: hp.width(1024 >> n_pre_ups),
            n_pre_ups,
            n_post_ups,
            n_enc_stages: n_post_ups,
        }
    }
}

/// One-hot embedding implemented as a row lookup plus bias; for a one-hot
/// input the two are the same linear map.
pub struct Embedding<E> {
    pub table: Param<E>,
    pub bias: Param<E>,
}

impl<E: Elem> Embedding<E> {
    fn new(nb: &mut NetBuilder<E>, name: &str, rows: usize, dim: usize) -> Self {
        let mut nb = nb.scoped(name);
        Embedding {
            table: nb.param("w", &[rows, dim], WInit::Sampled),
            bias: nb.param("b", &[dim], WInit::Zeros),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, indices: &[usize]) -> Var<E> {
        Var::lut_rows(&leaf(t, &self.table), indices).add_feature_bias(&leaf(t, &self.bias))
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }
}

/// The three lookup tables (background, parent, child).
pub struct Luts<E> {
    pub v_bg: Embedding<E>,
    pub v_p: Embedding<E>,
    pub v_c: Embedding<E>,
}

impl<E: Elem> Luts<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams) -> Self {
        Luts {
            v_bg: Embedding::new(nb, "v_bg", hp.n_p, hp.d_bg),
            v_p: Embedding::new(nb, "v_p", hp.n_p, hp.d_p),
            v_c: Embedding::new(nb, "v_c", hp.n_c, hp.d_c),
        }
    }

    /// Look up dense codes for 0-based class indices. The background code is
    /// keyed by the parent class.
    pub fn embed(
        &self,
        t: Option<&Tape<E>>,
        parents: &[usize],
        children: &[usize],
    ) -> CodeBundle<E> {
        CodeBundle {
            v_bg: self.v_bg.apply(t, parents),
            v_p: self.v_p.apply(t, parents),
            v_c: self.v_c.apply(t, children),
        }
    }
}

/// Code-to-pre-image stage shared by both generators: linear projection to a
/// 4x4 map, GLU-norm, then up blocks to the pre-image plane.
struct PreImageStage<E> {
    lin: Linear<E>,
    glu: GluNorm<E>,
    ups: Vec<UpBlock<E>>,
    top_width: usize,
}

impl<E: Elem> PreImageStage<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan, code_dim: usize) -> Self {
        let top = hp.width(1024);
        let lin = Linear::new(nb, "lin", code_dim + hp.d_z, 2 * top * 16);
        let glu = GluNorm::new(nb, "glu", top);
        let mut ups = Vec::new();
        let mut c = top;
        for i in 0..plan.n_pre_ups {
            let co = hp.width(1024 >> (i + 1));
            ups.push(UpBlock::new(nb, &format!("up{i}"), c, co));
            c = co;
        }
        debug_assert_eq!(c, plan.pre_channels);
        PreImageStage {
            lin,
            glu,
            ups,
            top_width: top,
        }
    }

    fn apply(&self, t: Option<&Tape<E>>, code: &Var<E>, z: &Var<E>) -> Var<E> {
        let x = code.concat1(z);
        let x = self.lin.apply(t, &x);
        let n = x.shape()[0];
        let x = x.reshape(&[n, 2 * self.top_width, 4, 4]);
        let mut x = self.glu.apply(t, &x);
        for up in &self.ups {
            x = up.apply(t, &x);
        }
        x
    }
}

/// Background generator: `pre_image` is G_bg0, `image` is G_bg1. During
/// autoencoding the bypass tensor takes the pre-image's place in `image`.
pub struct BackgroundGenerator<E> {
    g0: PreImageStage<E>,
    g1_ups: Vec<UpBlock<E>>,
    head: Conv2d<E>,
}

impl<E: Elem> BackgroundGenerator<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan) -> Self {
        let mut nb = nb.scoped("g_bg");
        let g0 = PreImageStage::new(&mut nb.scoped("g0"), hp, plan, hp.d_bg);
        let mut g1 = nb.scoped("g1");
        let mut ups = Vec::new();
        let mut c = plan.pre_channels;
        for i in 0..plan.n_post_ups {
            let co = hp.width((1024 >> plan.n_pre_ups) >> (i + 1));
            ups.push(UpBlock::new(&mut g1, &format!("up{i}"), c, co));
            c = co;
        }
        let head = Conv2d::new(&mut g1, "head", c, 3, 3, 1, 1);
        BackgroundGenerator { g0, g1_ups: ups, head }
    }

    pub fn pre_image(&self, t: Option<&Tape<E>>, v_bg: &Var<E>, z: &Var<E>) -> Var<E> {
        self.g0.apply(t, v_bg, z)
    }

    /// Decode a pre-image (or a bypass tensor of the same shape) to an image
    /// in `[-1, 1]`.
    pub fn image(&self, t: Option<&Tape<E>>, pre: &Var<E>) -> Var<E> {
        let mut x = pre.clone();
        for up in &self.g1_ups {
            x = up.apply(t, &x);
        }
        self.head.apply(t, &x).tanh()
    }
}

/// Foreground generator: `pre_image` is G_fg0, `mid` is G_fg1 (up blocks plus
/// the shape-conditioned residual block), `heads` is G_fg2 (style-conditioned
/// residual block and the two output heads).
pub struct ForegroundGenerator<E> {
    g0: PreImageStage<E>,
    g1_ups: Vec<UpBlock<E>>,
    res_p: ResBlock<E>,
    res_c: ResBlock<E>,
    head_fg: Conv2d<E>,
    head_mask: Conv2d<E>,
}

impl<E: Elem> ForegroundGenerator<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan) -> Self {
        let mut nb = nb.scoped("g_fg");
        let g0 = PreImageStage::new(&mut nb.scoped("g0"), hp, plan, hp.d_p);
        let mut g1 = nb.scoped("g1");
        let mut ups = Vec::new();
        let mut c = plan.pre_channels;
        let c_mid = hp.width(64);
        for i in 0..plan.n_post_ups {
            let co = if i + 1 == plan.n_post_ups {
                c_mid
            } else {
                hp.width((1024 >> plan.n_pre_ups) >> (i + 1)).max(c_mid)
            };
            ups.push(UpBlock::new(&mut g1, &format!("up{i}"), c, co));
            c = co;
        }
        let mut g2 = nb.scoped("g2");
        let res_p = ResBlock::new(&mut g2, "res_p", c_mid, hp.d_p, hp.width(32));
        let res_c = ResBlock::new(&mut g2, "res_c", hp.width(32), hp.d_c, hp.width(16));
        let head_fg = Conv2d::new(&mut g2, "head_fg", hp.width(16), 3, 3, 1, 1);
        let head_mask = Conv2d::new(&mut g2, "head_mask", hp.width(16), 1, 3, 1, 1);
        ForegroundGenerator {
            g0,
            g1_ups: ups,
            res_p,
            res_c,
            head_fg,
            head_mask,
        }
    }

    pub fn pre_image(&self, t: Option<&Tape<E>>, v_p: &Var<E>, z: &Var<E>) -> Var<E> {
        self.g0.apply(t, v_p, z)
    }

    /// Up blocks plus the shape-conditioned residual stage.
    pub fn mid(&self, t: Option<&Tape<E>>, pre: &Var<E>, v_p: &Var<E>) -> Var<E> {
        let mut x = pre.clone();
        for up in &self.g1_ups {
            x = up.apply(t, &x);
        }
        self.res_p.apply(t, &x, v_p)
    }

    /// Style-conditioned residual stage and the two output heads:
    /// foreground image in `[-1, 1]`, mask in `[0, 1]`.
    pub fn heads(&self, t: Option<&Tape<E>>, mid: &Var<E>, v_c: &Var<E>) -> (Var<E>, Var<E>) {
        let x = self.res_c.apply(t, mid, v_c);
        (
            self.head_fg.apply(t, &x).tanh(),
            self.head_mask.apply(t, &x).sigmoid(),
        )
    }
}

/// Shared trunk of the content/style encoders: strided conv with LN/lReLU,
/// then down blocks to the pre-image plane.
struct EncoderTrunk<E> {
    conv0: Conv2d<E>,
    ln0: Option<LayerNorm<E>>,
    downs: Vec<DownBlock<E>>,
    pub out_width: usize,
}

impl<E: Elem> EncoderTrunk<E> {
    fn new(
        nb: &mut NetBuilder<E>,
        hp: &HyperParams,
        plan: &ArchPlan,
        in_channels: usize,
        normalize_entry: bool,
    ) -> Self {
        let w0 = hp.width(64);
        let conv0 = Conv2d::new(nb, "conv0", in_channels, w0, 4, 2, 1);
        let ln0 = normalize_entry.then(|| LayerNorm::new(nb, "ln0", w0));
        let mut downs = Vec::new();
        let mut c = w0;
        for i in 1..plan.n_enc_stages {
            let co = hp.width(64 << i);
            downs.push(DownBlock::new(nb, &format!("down{i}"), c, co));
            c = co;
        }
        EncoderTrunk {
            conv0,
            ln0,
            downs,
            out_width: c,
        }
    }

    fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        let mut x = self.conv0.apply(t, x);
        if let Some(ln) = &self.ln0 {
            x = ln.apply(t, &x).leaky_relu(0.2);
        }
        for d in &self.downs {
            x = d.apply(t, &x);
        }
        x
    }
}

/// Bypass head: 3x3 conv + GLU, then a resolution-preserving refinement
/// block, emitting a tensor shaped like the generator pre-image.
struct BypassHead<E> {
    conv: Conv2d<E>,
    glu: GluNorm<E>,
    refine: UpBlock<E>,
}

impl<E: Elem> BypassHead<E> {
    fn new(nb: &mut NetBuilder<E>, plan: &ArchPlan, in_width: usize) -> Self {
        let pc = plan.pre_channels;
        BypassHead {
            conv: Conv2d::new(nb, "conv", in_width, 2 * pc, 3, 1, 1),
            glu: GluNorm::new(nb, "glu", pc),
            refine: UpBlock::refine(nb, "refine", pc, pc),
        }
    }

    fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        self.refine.apply(t, &self.glu.apply(t, &self.conv.apply(t, x)))
    }
}

/// Down blocks and flattening shared by the classification heads.
struct HeadTrunk<E> {
    down1: DownBlock<E>,
    down2: DownBlock<E>,
    tail: Conv2d<E>,
    tail_ln: LayerNorm<E>,
    flat_dim: usize,
}

impl<E: Elem> HeadTrunk<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan, in_width: usize) -> Self {
        let w1 = hp.width(512);
        let w2 = hp.width(1024);
        let side = plan.pre_side / 4;
        HeadTrunk {
            down1: DownBlock::new(nb, "down1", in_width, w1),
            down2: DownBlock::new(nb, "down2", w1, w2),
            tail: Conv2d::new(nb, "tail", w2, w2, 3, 1, 1),
            tail_ln: LayerNorm::new(nb, "tail_ln", w2),
            flat_dim: w2 * side * side,
        }
    }

    fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        let x = self.down2.apply(t, &self.down1.apply(t, x));
        let x = self.tail_ln.apply(t, &self.tail.apply(t, &x)).leaky_relu(0.2);
        let n = x.shape()[0];
        x.reshape(&[n, self.flat_dim])
    }
}

/// Linear + LN + lReLU projection used in front of every output head.
struct FcStage<E> {
    fc: Linear<E>,
    ln: LayerNorm<E>,
}

impl<E: Elem> FcStage<E> {
    fn new(nb: &mut NetBuilder<E>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut nb = nb.scoped(name);
        FcStage {
            fc: Linear::new(&mut nb, "fc", d_in, d_out),
            ln: LayerNorm::new(&mut nb, "ln", d_out),
        }
    }

    fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        self.ln.apply(t, &self.fc.apply(t, x)).leaky_relu(0.2)
    }
}

/// Heads of the content encoder.
pub struct ContentEncoding<E> {
    pub e_hat_p: Var<E>,
    pub mu_p: Var<E>,
    pub logsig_p: Var<E>,
    pub mu_z: Var<E>,
    pub logsig_z: Var<E>,
    pub b_fg: Var<E>,
}

/// Content (shape) encoder: class/code/pose heads plus the foreground bypass.
pub struct ContentEncoder<E> {
    trunk: EncoderTrunk<E>,
    bypass: BypassHead<E>,
    head_trunk: HeadTrunk<E>,
    p_stage: FcStage<E>,
    head_class: Linear<E>,
    head_mu: Linear<E>,
    head_logsig: Linear<E>,
    z_stage: FcStage<E>,
    head_mu_z: Linear<E>,
    head_logsig_z: Linear<E>,
}

impl<E: Elem> ContentEncoder<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan) -> Self {
        let mut nb = nb.scoped("e_p");
        let trunk = EncoderTrunk::new(&mut nb.scoped("trunk"), hp, plan, 3, true);
        let bypass = BypassHead::new(&mut nb.scoped("bypass"), plan, trunk.out_width);
        let head_trunk = HeadTrunk::new(&mut nb.scoped("head"), hp, plan, trunk.out_width);
        let w = hp.width(512);
        let p_stage = FcStage::new(&mut nb, "p_stage", head_trunk.flat_dim, w);
        let z_stage = FcStage::new(&mut nb, "z_stage", head_trunk.flat_dim, w);
        ContentEncoder {
            head_class: Linear::new(&mut nb, "head_class", w, hp.n_p),
            head_mu: Linear::new(&mut nb, "head_mu", w, hp.d_p),
            head_logsig: Linear::new(&mut nb, "head_logsig", w, hp.d_p),
            head_mu_z: Linear::new(&mut nb, "head_mu_z", w, hp.d_z),
            head_logsig_z: Linear::new(&mut nb, "head_logsig_z", w, hp.d_z),
            trunk,
            bypass,
            head_trunk,
            p_stage,
            z_stage,
        }
    }

    pub fn forward(&self, t: Option<&Tape<E>>, image: &Var<E>) -> ContentEncoding<E> {
        assert_eq!(image.shape()[1], 3, "content encoder expects RGB input");
        let h = self.trunk.apply(t, image);
        let b_fg = self.bypass.apply(t, &h);
        let flat = self.head_trunk.apply(t, &h);
        let hp_ = self.p_stage.apply(t, &flat);
        let hz = self.z_stage.apply(t, &flat);
        ContentEncoding {
            e_hat_p: self.head_class.apply(t, &hp_),
            mu_p: self.head_mu.apply(t, &hp_),
            logsig_p: self.head_logsig.apply(t, &hp_),
            mu_z: self.head_mu_z.apply(t, &hz),
            logsig_z: self.head_logsig_z.apply(t, &hz),
            b_fg,
        }
    }
}

/// Heads of the style encoder.
pub struct StyleEncoding<E> {
    pub e_hat_c: Var<E>,
    pub mu_c: Var<E>,
    pub logsig_c: Var<E>,
}

pub struct StyleEncoder<E> {
    trunk: EncoderTrunk<E>,
    head_trunk: HeadTrunk<E>,
    c_stage: FcStage<E>,
    head_class: Linear<E>,
    head_mu: Linear<E>,
    head_logsig: Linear<E>,
}

impl<E: Elem> StyleEncoder<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan) -> Self {
        let mut nb = nb.scoped("e_c");
        let trunk = EncoderTrunk::new(&mut nb.scoped("trunk"), hp, plan, 3, true);
        let head_trunk = HeadTrunk::new(&mut nb.scoped("head"), hp, plan, trunk.out_width);
        let w = hp.width(512);
        let c_stage = FcStage::new(&mut nb, "c_stage", head_trunk.flat_dim, w);
        StyleEncoder {
            head_class: Linear::new(&mut nb, "head_class", w, hp.n_c),
            head_mu: Linear::new(&mut nb, "head_mu", w, hp.d_c),
            head_logsig: Linear::new(&mut nb, "head_logsig", w, hp.d_c),
            trunk,
            head_trunk,
            c_stage,
        }
    }

    pub fn forward(&self, t: Option<&Tape<E>>, image: &Var<E>) -> StyleEncoding<E> {
        let h = self.trunk.apply(t, image);
        let flat = self.head_trunk.apply(t, &h);
        let hc = self.c_stage.apply(t, &flat);
        StyleEncoding {
            e_hat_c: self.head_class.apply(t, &hc),
            mu_c: self.head_mu.apply(t, &hc),
            logsig_c: self.head_logsig.apply(t, &hc),
        }
    }
}

/// Background encoder: consumes the image concatenated with the mask and
/// emits only the background bypass tensor.
pub struct BackgroundEncoder<E> {
    trunk: EncoderTrunk<E>,
    bypass: BypassHead<E>,
}

impl<E: Elem> BackgroundEncoder<E> {
    fn new(nb: &mut NetBuilder<E>, hp: &HyperParams, plan: &ArchPlan) -> Self {
        let mut nb = nb.scoped("e_bg");
        let trunk = EncoderTrunk::new(&mut nb.scoped("trunk"), hp, plan, 4, false);
        let bypass = BypassHead::new(&mut nb.scoped("bypass"), plan, trunk.out_width);
        BackgroundEncoder { trunk, bypass }
    }

    pub fn forward(&self, t: Option<&Tape<E>>, image: &Var<E>, mask: &Var<E>) -> Var<E> {
        assert_eq!(mask.shape()[1], 1, "mask must be single-channel");
        let x = image.concat1(mask);
        self.bypass.apply(t, &self.trunk.apply(t, &x))
    }
}

/// Outputs of the image discriminator.
pub struct ImageDiscOut<E> {
    /// One real/fake logit per instance, `(N, 1)`.
    pub rf: Var<E>,
    /// Child-class logits, `(N, N_C)`.
    pub class_logits: Var<E>,
    /// Hidden features for the perceptual loss.
    pub features: Var<E>,
}

/// Image (object) discriminator with real/fake, classification, and feature
/// heads on a shared trunk.
pub struct ImageDiscriminator<E> {
    pub params: ParamSet<E>,
    hp: HyperParams,
    conv0: Conv2d<E>,
    ln0: LayerNorm<E>,
    downs: Vec<DownBlock<E>>,
    feature_stage: usize,
    tail: Conv2d<E>,
    tail_ln: LayerNorm<E>,
    flat_dim: usize,
    rf_stage: FcStage<E>,
    rf_out: Linear<E>,
    cls_stage: FcStage<E>,
    cls_out: Linear<E>,
}

impl<E: Elem> ImageDiscriminator<E> {
    pub fn build(hp: &HyperParams, sampler: &mut dyn FnMut(&[usize]) -> Tensor<E>) -> Self {
        let mut params = ParamSet::new();
        let mut nb = NetBuilder::new(&mut params, sampler);
        let mut nb = nb.scoped("d_c");
        let h = hp.image_size;
        // Strided stages: 64, 128, 256, 512, 1024 channels while the side
        // stays at least 1 after halving.
        let n_stages = 5.min(h.trailing_zeros() as usize);
        let w0 = hp.width(64);
        let conv0 = Conv2d::new(&mut nb, "conv0", 3, w0, 4, 2, 1);
        let ln0 = LayerNorm::new(&mut nb, "ln0", w0);
        let mut downs = Vec::new();
        let mut c = w0;
        for i in 1..n_stages {
            let co = hp.width(64 << i);
            downs.push(DownBlock::new(&mut nb, &format!("down{i}"), c, co));
            c = co;
        }
        // Feature tap after the 512-wide stage (fourth stage when present).
        let feature_stage = n_stages.saturating_sub(2).min(3);
        let side = h >> n_stages;
        let flat_dim = c * side * side;
        let tail = Conv2d::new(&mut nb, "tail", c, c, 3, 1, 1);
        let tail_ln = LayerNorm::new(&mut nb, "tail_ln", c);
        let w = hp.width(512);
        let rf_stage = FcStage::new(&mut nb, "rf_stage", flat_dim, w);
        let rf_out = Linear::new(&mut nb, "rf_out", w, 1);
        let cls_stage = FcStage::new(&mut nb, "cls_stage", flat_dim, w);
        let cls_out = Linear::new(&mut nb, "cls_out", w, hp.n_c);
        ImageDiscriminator {
            params,
            hp: hp.clone(),
            conv0,
            ln0,
            downs,
            feature_stage,
            tail,
            tail_ln,
            flat_dim,
            rf_stage,
            rf_out,
            cls_stage,
            cls_out,
        }
    }

    pub fn forward(&self, t: Option<&Tape<E>>, image: &Var<E>) -> ImageDiscOut<E> {
        let mut x = self.ln0.apply(t, &self.conv0.apply(t, image)).leaky_relu(0.2);
        let mut features = None;
        if self.feature_stage == 0 {
            features = Some(x.clone());
        }
        for (i, d) in self.downs.iter().enumerate() {
            x = d.apply(t, &x);
            if i + 1 == self.feature_stage {
                features = Some(x.clone());
            }
        }
        let features = features.expect("feature stage within trunk");
        let x = self.tail_ln.apply(t, &self.tail.apply(t, &x)).leaky_relu(0.2);
        let n = x.shape()[0];
        let flat = x.reshape(&[n, self.flat_dim]);
        ImageDiscOut {
            rf: self.rf_out.apply(t, &self.rf_stage.apply(t, &flat)),
            class_logits: self.cls_out.apply(t, &self.cls_stage.apply(t, &flat)),
            features,
        }
    }

    /// Fresh storage with identical structure and copied values.
    pub fn deep_clone(&self) -> Self {
        let mut zeros = |shape: &[usize]| Tensor::zeros(shape);
        let clone = Self::build(&self.hp, &mut zeros);
        clone.params.copy_values_from(&self.params);
        clone
    }
}

/// Outputs of the background discriminator.
pub struct BackgroundDiscOut<E> {
    /// Patch map of real/fake logits.
    pub rf_patch: Var<E>,
    /// Patch map of background/object logits.
    pub bg_patch: Var<E>,
    pub features: Var<E>,
}

/// Patch discriminator for backgrounds. The input is first resized down by
/// two pixels so the strided valid convolutions tile the image evenly.
pub struct BackgroundDiscriminator<E> {
    pub params: ParamSet<E>,
    hp: HyperParams,
    resize_to: usize,
    convs: Vec<Conv2d<E>>,
    head_rf: Conv2d<E>,
    head_bg: Conv2d<E>,
}

impl<E: Elem> BackgroundDiscriminator<E> {
    pub fn build(hp: &HyperParams, sampler: &mut dyn FnMut(&[usize]) -> Tensor<E>) -> Self {
        let mut params = ParamSet::new();
        let mut nb = NetBuilder::new(&mut params, sampler);
        let mut nb = nb.scoped("d_bg");
        let h = hp.image_size;
        let resize_to = h - 2;
        let mut side = resize_to;
        let mut convs = Vec::new();
        let mut c = 3;
        // Third stage strides by 4 at the reference size, by 2 below it.
        let plan: [(usize, usize); 3] =
            [(64, 2), (128, 2), (256, if h >= 128 { 4 } else { 2 })];
        for (i, (base, stride)) in plan.into_iter().enumerate() {
            let k = 4.min(side);
            let co = hp.width(base);
            convs.push(Conv2d::new(&mut nb, &format!("conv{i}"), c, co, k, stride, 0));
            side = (side - k) / stride + 1;
            c = co;
        }
        let k = 4.min(side);
        let head_rf = Conv2d::new(&mut nb, "head_rf", c, 1, k, 1, 0);
        let head_bg = Conv2d::new(&mut nb, "head_bg", c, 1, k, 1, 0);
        BackgroundDiscriminator {
            params,
            hp: hp.clone(),
            resize_to,
            convs,
            head_rf,
            head_bg,
        }
    }

    pub fn forward(&self, t: Option<&Tape<E>>, image: &Var<E>) -> BackgroundDiscOut<E> {
        let mut x = image.resize_bilinear(self.resize_to, self.resize_to);
        for conv in &self.convs {
            x = conv.apply(t, &x).leaky_relu(0.2);
        }
        BackgroundDiscOut {
            rf_patch: self.head_rf.apply(t, &x),
            bg_patch: self.head_bg.apply(t, &x),
            features: x,
        }
    }

    pub fn deep_clone(&self) -> Self {
        let mut zeros = |shape: &[usize]| Tensor::zeros(shape);
        let clone = Self::build(&self.hp, &mut zeros);
        clone.params.copy_values_from(&self.params);
        clone
    }
}

/// Generators, embedding tables, and encoders with their parameter groups.
/// Discriminators live in the training-side bank because their population
/// changes at the phase boundary.
pub struct Networks<E> {
    pub hp: HyperParams,
    pub plan: ArchPlan,
    pub luts: Luts<E>,
    pub g_bg: BackgroundGenerator<E>,
    pub g_fg: ForegroundGenerator<E>,
    pub e_p: ContentEncoder<E>,
    pub e_c: StyleEncoder<E>,
    pub e_bg: BackgroundEncoder<E>,
    pub gen_params: ParamSet<E>,
    pub enc_params: ParamSet<E>,
}

impl<E: Elem> Networks<E> {
    pub fn build(hp: &HyperParams, init: &mut Stream) -> Self {
        let mut sampler = init_sampler::<E>(init);
        Self::build_with(hp, &mut sampler)
    }

    pub fn build_with(hp: &HyperParams, sampler: &mut dyn FnMut(&[usize]) -> Tensor<E>) -> Self {
        let plan = ArchPlan::of(hp);
        let mut gen_params = ParamSet::new();
        let (luts, g_bg, g_fg) = {
            let mut nb = NetBuilder::new(&mut gen_params, sampler);
            (
                Luts::new(&mut nb.scoped("lut"), hp),
                BackgroundGenerator::new(&mut nb, hp, &plan),
                ForegroundGenerator::new(&mut nb, hp, &plan),
            )
        };
        let mut enc_params = ParamSet::new();
        let (e_p, e_c, e_bg) = {
            let mut nb = NetBuilder::new(&mut enc_params, sampler);
            (
                ContentEncoder::new(&mut nb, hp, &plan),
                StyleEncoder::new(&mut nb, hp, &plan),
                BackgroundEncoder::new(&mut nb, hp, &plan),
            )
        };
        Networks {
            hp: hp.clone(),
            plan,
            luts,
            g_bg,
            g_fg,
            e_p,
            e_c,
            e_bg,
            gen_params,
            enc_params,
        }
    }
}

/// N(0, 0.02) weight sampler drawing from a seeded stream.
pub fn init_sampler<E: Elem>(stream: &mut Stream) -> impl FnMut(&[usize]) -> Tensor<E> + '_ {
    move |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data: Vec<E> = (0..n).map(|_| E::from_f64(stream.normal() * 0.02)).collect();
        Tensor::from_vec(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn embedding_selects_rows() {
        let hp = tiny_hp();
        let mut rng = RngBundle::new(1).init;
        let nets = Networks::<f32>::build(&hp, &mut rng);
        let codes = nets.luts.embed(None, &[1, 0], &[5, 5]);
        assert_eq!(codes.v_bg.shape(), &[2, hp.d_bg]);
        assert_eq!(codes.v_p.shape(), &[2, hp.d_p]);
        assert_eq!(codes.v_c.shape(), &[2, hp.d_c]);
        // Row k of the table plus bias.
        let table = nets.luts.v_p.table.value();
        let bias = nets.luts.v_p.bias.value();
        for j in 0..hp.d_p {
            let expect = table.data()[hp.d_p + j] + bias.data()[j];
            assert_eq!(codes.v_p.value().data()[j], expect);
        }
        // Distinct children with distinct rows give distinct codes.
        let c2 = nets.luts.embed(None, &[0, 0], &[0, 1]);
        assert_ne!(
            &c2.v_c.value().data()[..hp.d_c],
            &c2.v_c.value().data()[hp.d_c..]
        );
    }

    #[test]
    fn tiny_forward_shapes_hold_end_to_end() {
        let hp = tiny_hp();
        let plan = ArchPlan::of(&hp);
        let mut rng = RngBundle::new(2).init;
        let nets = Networks::<f32>::build(&hp, &mut rng);
        let n = 2;
        let z = Var::constant(Tensor::full(&[n, hp.d_z], 0.1f32));
        let codes = nets.luts.embed(None, &[0, 1], &[2, 3]);

        let a_bg = nets.g_bg.pre_image(None, &codes.v_bg, &z);
        assert_eq!(a_bg.shape(), &[n, plan.pre_channels, plan.pre_side, plan.pre_side]);
        let i_bg = nets.g_bg.image(None, &a_bg);
        assert_eq!(i_bg.shape(), &[n, 3, 16, 16]);
        assert!(i_bg.value().data().iter().all(|v| v.abs() <= 1.0));

        let a_fg = nets.g_fg.pre_image(None, &codes.v_p, &z);
        let mid = nets.g_fg.mid(None, &a_fg, &codes.v_p);
        let (i_fg, i_m) = nets.g_fg.heads(None, &mid, &codes.v_c);
        assert_eq!(i_fg.shape(), &[n, 3, 16, 16]);
        assert_eq!(i_m.shape(), &[n, 1, 16, 16]);
        assert!(i_m.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let enc = nets.e_p.forward(None, &i_fg);
        assert_eq!(enc.e_hat_p.shape(), &[n, hp.n_p]);
        assert_eq!(enc.mu_p.shape(), &[n, hp.d_p]);
        assert_eq!(enc.mu_z.shape(), &[n, hp.d_z]);
        assert_eq!(enc.b_fg.shape(), a_fg.shape());

        let style = nets.e_c.forward(None, &i_fg);
        assert_eq!(style.e_hat_c.shape(), &[n, hp.n_c]);
        assert_eq!(style.mu_c.shape(), &[n, hp.d_c]);

        let b_bg = nets.e_bg.forward(None, &i_fg, &i_m);
        assert_eq!(b_bg.shape(), a_bg.shape());

        let mut rng2 = RngBundle::new(3).init;
        let d_c = {
            let mut sampler = init_sampler::<f32>(&mut rng2);
            ImageDiscriminator::<f32>::build(&hp, &mut sampler)
        };
        let out = d_c.forward(None, &i_fg);
        assert_eq!(out.rf.shape(), &[n, 1]);
        assert_eq!(out.class_logits.shape(), &[n, hp.n_c]);

        let mut sampler = init_sampler::<f32>(&mut rng2);
        let d_bg = BackgroundDiscriminator::<f32>::build(&hp, &mut sampler);
        let out = d_bg.forward(None, &i_fg);
        assert_eq!(out.rf_patch.shape(), out.bg_patch.shape());
    }

    #[test]
    fn forward_is_deterministic_under_fixed_parameters() {
        let hp = tiny_hp();
        let mut rng = RngBundle::new(4).init;
        let nets = Networks::<f32>::build(&hp, &mut rng);
        let z = Var::constant(Tensor::full(&[1, hp.d_z], -0.3f32));
        let codes = nets.luts.embed(None, &[1], &[4]);
        let a = nets.g_bg.image(None, &nets.g_bg.pre_image(None, &codes.v_bg, &z));
        let b = nets.g_bg.image(None, &nets.g_bg.pre_image(None, &codes.v_bg, &z));
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn discriminator_clone_is_equal_then_independent() {
        let hp = tiny_hp();
        let mut rng = RngBundle::new(5).init;
        let mut sampler = init_sampler::<f32>(&mut rng);
        let d = ImageDiscriminator::<f32>::build(&hp, &mut sampler);
        let clone = d.deep_clone();
        for (a, b) in d.params.iter().zip(clone.params.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value(), b.value());
        }
        // Mutating the clone leaves the original untouched.
        let p = clone.params.iter().next().unwrap();
        let mut v = p.value();
        v.make_mut()[0] += 1.0;
        p.set(v);
        let orig = d.params.iter().next().unwrap().value();
        let cloned = clone.params.iter().next().unwrap().value();
        assert_ne!(orig.data()[0], cloned.data()[0]);
    }
}
