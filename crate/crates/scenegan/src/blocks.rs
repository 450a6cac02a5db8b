//! Reusable layer blocks. Widths and wiring follow the reference layer
//! tables; see `networks` for how they are assembled per image size.

use autograd::{Elem, Param, ParamSet, Tape, Tensor, Var};

/// Weight initialization selector.
#[derive(Clone, Copy)]
pub enum WInit {
    /// Draw from the builder's sampler (N(0, 0.02)).
    Sampled,
    Zeros,
    Ones,
}

/// Registers parameters under hierarchical names while a network is built.
pub struct NetBuilder<'a, E: Elem> {
    pub set: &'a mut ParamSet<E>,
    sampler: &'a mut dyn FnMut(&[usize]) -> Tensor<E>,
    prefix: String,
}

impl<'a, E: Elem> NetBuilder<'a, E> {
    pub fn new(
        set: &'a mut ParamSet<E>,
        sampler: &'a mut dyn FnMut(&[usize]) -> Tensor<E>,
    ) -> Self {
        NetBuilder {
            set,
            sampler,
            prefix: String::new(),
        }
    }

    pub fn scoped(&mut self, name: &str) -> NetBuilder<'_, E> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        NetBuilder {
            set: self.set,
            sampler: self.sampler,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: WInit) -> Param<E> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let value = match init {
            WInit::Sampled => (self.sampler)(shape),
            WInit::Zeros => Tensor::zeros(shape),
            WInit::Ones => Tensor::full(shape, E::ONE),
        };
        self.set.add(full, value)
    }
}

/// Register a leaf when training, or pass the value as a constant.
pub fn leaf<E: Elem>(tape: Option<&Tape<E>>, p: &Param<E>) -> Var<E> {
    match tape {
        Some(t) => t.leaf(p),
        None => Var::constant(p.value()),
    }
}

pub struct Conv2d<E> {
    pub w: Param<E>,
    pub b: Param<E>,
    stride: usize,
    pad: usize,
}

impl<E: Elem> Conv2d<E> {
    pub fn new(
        nb: &mut NetBuilder<E>,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let mut nb = nb.scoped(name);
        Conv2d {
            w: nb.param("w", &[co, ci, k, k], WInit::Sampled),
            b: nb.param("b", &[co], WInit::Zeros),
            stride,
            pad,
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        x.conv2d(&leaf(t, &self.w), &leaf(t, &self.b), self.stride, self.pad)
    }
}

pub struct Linear<E> {
    pub w: Param<E>,
    pub b: Param<E>,
}

impl<E: Elem> Linear<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, d_in: usize, d_out: usize) -> Self {
        let mut nb = nb.scoped(name);
        Linear {
            w: nb.param("w", &[d_out, d_in], WInit::Sampled),
            b: nb.param("b", &[d_out], WInit::Zeros),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        x.linear(&leaf(t, &self.w), &leaf(t, &self.b))
    }
}

/// Per-channel affine layer normalization over each instance.
pub struct LayerNorm<E> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
}

impl<E: Elem> LayerNorm<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, channels: usize) -> Self {
        let mut nb = nb.scoped(name);
        LayerNorm {
            gamma: nb.param("g", &[channels], WInit::Ones),
            beta: nb.param("b", &[channels], WInit::Zeros),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        x.layer_norm(&leaf(t, &self.gamma), &leaf(t, &self.beta))
    }
}

/// Gated linear unit with normalization applied to the content half only:
/// `sigmoid(x_R) * LayerNorm(x_L)`. Halves the channel count.
pub struct GluNorm<E> {
    pub ln: LayerNorm<E>,
}

impl<E: Elem> GluNorm<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, out_channels: usize) -> Self {
        let mut nb = nb.scoped(name);
        GluNorm {
            ln: LayerNorm::new(&mut nb, "ln", out_channels),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        x.glu_norm(&leaf(t, &self.ln.gamma), &leaf(t, &self.ln.beta))
    }
}

/// Upsample x2, 3x3 conv to `2*co`, GLU-norm down to `co`.
pub struct UpBlock<E> {
    conv: Conv2d<E>,
    glu: GluNorm<E>,
    upsample: bool,
}

impl<E: Elem> UpBlock<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, ci: usize, co: usize) -> Self {
        let mut nb = nb.scoped(name);
        UpBlock {
            conv: Conv2d::new(&mut nb, "conv", ci, 2 * co, 3, 1, 1),
            glu: GluNorm::new(&mut nb, "glu", co),
            upsample: true,
        }
    }

    /// Variant without the spatial upsample, used where the tables list an
    /// UPBlk with unchanged resolution (the bypass refinement stage).
    pub fn refine(nb: &mut NetBuilder<E>, name: &str, ci: usize, co: usize) -> Self {
        let mut up = Self::new(nb, name, ci, co);
        up.upsample = false;
        up
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        let x = if self.upsample {
            x.upsample_nearest_x2()
        } else {
            x.clone()
        };
        self.glu.apply(t, &self.conv.apply(t, &x))
    }
}

/// Stride-2 4x4 conv, layer norm, leaky ReLU (0.2). Halves the sides.
pub struct DownBlock<E> {
    conv: Conv2d<E>,
    ln: LayerNorm<E>,
}

impl<E: Elem> DownBlock<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, ci: usize, co: usize) -> Self {
        let mut nb = nb.scoped(name);
        DownBlock {
            conv: Conv2d::new(&mut nb, "conv", ci, co, 4, 2, 1),
            ln: LayerNorm::new(&mut nb, "ln", co),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        self.ln.apply(t, &self.conv.apply(t, x)).leaky_relu(0.2)
    }
}

/// Residual core: two conv+GLU stages added back to the input.
pub struct ResBlock0<E> {
    conv1: Conv2d<E>,
    glu1: GluNorm<E>,
    conv2: Conv2d<E>,
    glu2: GluNorm<E>,
}

impl<E: Elem> ResBlock0<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, c: usize) -> Self {
        let mut nb = nb.scoped(name);
        ResBlock0 {
            conv1: Conv2d::new(&mut nb, "conv1", c, 2 * c, 3, 1, 1),
            glu1: GluNorm::new(&mut nb, "glu1", c),
            conv2: Conv2d::new(&mut nb, "conv2", c, 2 * c, 3, 1, 1),
            glu2: GluNorm::new(&mut nb, "glu2", c),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>) -> Var<E> {
        let d = self.glu1.apply(t, &self.conv1.apply(t, x));
        let d = self.glu2.apply(t, &self.conv2.apply(t, &d));
        x.add(&d)
    }
}

/// Conditioned residual block: the conditioning vector is broadcast over the
/// spatial grid, concatenated on channels, and the block maps `ci -> co`
/// through two residual cores.
pub struct ResBlock<E> {
    entry: Conv2d<E>,
    entry_glu: GluNorm<E>,
    core1: ResBlock0<E>,
    core2: ResBlock0<E>,
    exit: Conv2d<E>,
    exit_glu: GluNorm<E>,
}

impl<E: Elem> ResBlock<E> {
    pub fn new(nb: &mut NetBuilder<E>, name: &str, ci: usize, d: usize, co: usize) -> Self {
        let mut nb = nb.scoped(name);
        ResBlock {
            entry: Conv2d::new(&mut nb, "entry", ci + d, 2 * ci, 3, 1, 1),
            entry_glu: GluNorm::new(&mut nb, "entry_glu", ci),
            core1: ResBlock0::new(&mut nb, "core1", ci),
            core2: ResBlock0::new(&mut nb, "core2", ci),
            exit: Conv2d::new(&mut nb, "exit", ci, 2 * co, 3, 1, 1),
            exit_glu: GluNorm::new(&mut nb, "exit_glu", co),
        }
    }

    pub fn apply(&self, t: Option<&Tape<E>>, x: &Var<E>, cond: &Var<E>) -> Var<E> {
        let shape = x.shape();
        let (h, w) = (shape[2], shape[3]);
        assert_eq!(
            cond.shape()[0],
            shape[0],
            "conditioning batch does not match input batch"
        );
        let cond_map = cond.broadcast_spatial(h, w);
        let x = x.concat1(&cond_map);
        let x = self.entry_glu.apply(t, &self.entry.apply(t, &x));
        let x = self.core1.apply(t, &x);
        let x = self.core2.apply(t, &x);
        self.exit_glu.apply(t, &self.exit.apply(t, &x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tape;

    fn sampler() -> impl FnMut(&[usize]) -> Tensor<f32> {
        let mut state = 0x9e3779b97f4a7c15u64;
        move |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) as f32 * 0.1
                })
                .collect();
            Tensor::from_vec(shape, data)
        }
    }

    #[test]
    fn glu_norm_halves_channels_and_gates() {
        let mut set = ParamSet::new();
        let mut s = sampler();
        let mut nb = NetBuilder::new(&mut set, &mut s);
        let glu = GluNorm::new(&mut nb, "glu", 3);

        // Right half zero: gate is exactly 0.5 everywhere.
        let mut data = vec![0.0f32; 2 * 6 * 4 * 4];
        for (i, v) in data.iter_mut().enumerate().take(6 * 4 * 4 * 2) {
            // left half (first 3 channels of each instance) varied, right zero
            let c = (i / 16) % 6;
            if c < 3 {
                *v = (i % 16) as f32 - 7.5;
            }
        }
        let x = Var::constant(Tensor::from_vec(&[2, 6, 4, 4], data));
        let y = glu.apply(None, &x);
        assert_eq!(y.shape(), &[2, 3, 4, 4]);

        // gamma=1, beta=0 at init: output = 0.5 * LayerNorm(x_L); per-instance
        // normalized group has zero mean and unit variance, so the gated
        // output has mean 0 and variance 0.25.
        let d = y.value().data();
        let group = 3 * 16;
        for i in 0..2 {
            let inst = &d[i * group..(i + 1) * group];
            let mean: f32 = inst.iter().sum::<f32>() / group as f32;
            let var: f32 = inst.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / group as f32;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 0.25).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    #[should_panic(expected = "even channel count")]
    fn glu_norm_rejects_odd_channels() {
        let mut set = ParamSet::<f32>::new();
        let mut s = sampler();
        let mut nb = NetBuilder::new(&mut set, &mut s);
        let glu = GluNorm::new(&mut nb, "glu", 2);
        let x = Var::constant(Tensor::zeros(&[1, 5, 2, 2]));
        glu.apply(None, &x);
    }

    #[test]
    fn up_block_doubles_and_down_block_halves_sides() {
        let mut set = ParamSet::new();
        let mut s = sampler();
        let mut nb = NetBuilder::new(&mut set, &mut s);
        let up = UpBlock::new(&mut nb, "up", 8, 4);
        let down = DownBlock::new(&mut nb, "down", 8, 4);

        let x = Var::constant(Tensor::full(&[2, 8, 6, 6], 0.3f32));
        assert_eq!(up.apply(None, &x).shape(), &[2, 4, 12, 12]);
        assert_eq!(down.apply(None, &x).shape(), &[2, 4, 3, 3]);
    }

    #[test]
    fn res_block_preserves_space_and_maps_channels() {
        let mut set = ParamSet::new();
        let mut s = sampler();
        let mut nb = NetBuilder::new(&mut set, &mut s);
        let blk = ResBlock::new(&mut nb, "res", 8, 5, 4);
        let x = Var::constant(Tensor::full(&[2, 8, 6, 6], 0.1f32));
        let cond = Var::constant(Tensor::full(&[2, 5], 0.2f32));
        let y = blk.apply(None, &x, &cond);
        assert_eq!(y.shape(), &[2, 4, 6, 6]);
        assert!(y.value().all_finite());
    }

    #[test]
    fn res_core_with_zero_branch_weights_is_identity() {
        let mut set = ParamSet::new();
        let mut zeros = |shape: &[usize]| Tensor::<f32>::zeros(shape);
        let mut nb = NetBuilder::new(&mut set, &mut zeros);
        let core = ResBlock0::new(&mut nb, "core", 4);
        let x = Var::constant(Tensor::full(&[1, 4, 3, 3], 0.7f32));
        let y = core.apply(None, &x);
        // Branch: conv(0 weights) -> 0; LN(0)=0 (gamma starts at 1 but input
        // is 0); sigmoid(0)=0.5; 0 * 0.5 = 0; add leaves x.
        for (a, b) in y.value().data().iter().zip(x.value().data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn leaky_relu_slope_behaves_at_negative_inputs() {
        let x = Var::constant(Tensor::from_vec(&[1, 1], vec![-1.0f32]));
        assert!((x.leaky_relu(0.2).value().data()[0] + 0.2).abs() < 1e-7);
    }
}
