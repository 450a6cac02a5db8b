//! Model and training configuration, loadable from a sectioned TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural hyperparameters shared by every network.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Child (fine) class count.
    pub n_c: usize,
    /// Parent (coarse) class count.
    pub n_p: usize,
    /// Pose code width.
    pub d_z: usize,
    /// Style code width.
    pub d_c: usize,
    /// Shape code width.
    pub d_p: usize,
    /// Background code width.
    pub d_bg: usize,
    /// Image side (images are square).
    pub image_size: usize,
    /// Uniform multiplier on channel widths; 1.0 reproduces the reference
    /// layer tables at 128 px.
    pub channel_scale: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Iterations of generation-only training before reconstruction starts.
    pub phase1_iters: u64,
    /// Extra iterations after phase 2 entry before real images are
    /// reconstructed.
    pub real_recon_delay: u64,
    /// Iterations at phase 2 entry during which generator weights are frozen.
    pub encoder_warmup_iters: u64,
    pub total_iters: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_c: 200,
            n_p: 20,
            d_z: 100,
            d_c: 32,
            d_p: 16,
            d_bg: 32,
            image_size: 128,
            channel_scale: 1.0,
            batch_size: 20,
            lr: 2e-4,
            phase1_iters: 200_000,
            real_recon_delay: 200_000,
            encoder_warmup_iters: 5_000,
            total_iters: 600_000,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_p >= self.n_c {
            return Err(Error::validation(format!(
                "n_p ({}) must be smaller than n_c ({})",
                self.n_p, self.n_c
            )));
        }
        if self.n_p == 0 {
            return Err(Error::validation("n_p must be positive"));
        }
        for (name, v) in [
            ("d_z", self.d_z),
            ("d_c", self.d_c),
            ("d_p", self.d_p),
            ("d_bg", self.d_bg),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        if !matches!(self.image_size, 64 | 128) {
            return Err(Error::validation(format!(
                "image_size must be 64 or 128, got {}",
                self.image_size
            )));
        }
        if self.channel_scale <= 0.0 {
            return Err(Error::validation("channel_scale must be positive"));
        }
        if self.phase1_iters >= self.total_iters {
            return Err(Error::validation(format!(
                "phase1_iters ({}) must be below total_iters ({})",
                self.phase1_iters, self.total_iters
            )));
        }
        Ok(())
    }

    /// Like `validate` but admitting tiny sizes used by shape and gradient
    /// tests (any power of two side of at least 16).
    pub fn validate_relaxed(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(Error::validation(format!(
                "image_size must be a power of two of at least 16, got {}",
                self.image_size
            )));
        }
        if self.n_p >= self.n_c || self.n_p == 0 {
            return Err(Error::validation("need 0 < n_p < n_c"));
        }
        Ok(())
    }

    /// Side of the generator pre-image (the bypass hand-off plane).
    pub fn pre_side(&self) -> usize {
        if self.image_size >= 64 {
            16
        } else {
            self.image_size / 4
        }
    }

    /// Channel width after applying `channel_scale`, kept at least 2.
    pub fn width(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(2)
    }

    /// Whether two configurations describe the same network and data stream
    /// layout (schedule lengths and learning rate may differ, e.g. when a
    /// resumed run is extended).
    pub fn same_structure(&self, other: &HyperParams) -> bool {
        (self.n_c, self.n_p, self.d_z, self.d_c, self.d_p, self.d_bg)
            == (other.n_c, other.n_p, other.d_z, other.d_c, other.d_p, other.d_bg)
            && self.image_size == other.image_size
            && self.channel_scale == other.channel_scale
            && self.batch_size == other.batch_size
    }
}

/// Weights of the loss aggregation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the background real/fake adversarial term.
    pub bg_adv: f64,
    /// Weight of the code regularizer inside the generation total.
    pub reg_v: f64,
    /// Weight of the mask regularizer inside the generation total.
    pub mask: f64,
    /// Weight of the decisiveness term inside the mask regularizer.
    pub mask_decisive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            bg_adv: 10.0,
            reg_v: 0.1,
            mask: 2.0,
            mask_decisive: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bg_adv", self.bg_adv),
            ("reg_v", self.reg_v),
            ("mask", self.mask),
            ("mask_decisive", self.mask_decisive),
        ] {
            if v < 0.0 {
                return Err(Error::validation(format!("weight {name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Form of the adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// Non-saturating binary cross-entropy (default).
    Bce,
    /// Hinge variant, kept as an ablation switch.
    Hinge,
}

/// Behavioral switches, most of which exist for ablations.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub gan_loss: GanLoss,
    /// Stop distance-loss gradients at the generator side (encoder-only
    /// regression) instead of training both ends.
    pub mse_stop_grad: bool,
    /// Use pure encoder information (beta0 = beta1 = 1) for segmentation
    /// inference so no class decision is required.
    pub seg_pure_encoder: bool,
    /// Sampling range of the code mixup coefficient.
    pub beta0_range: (f64, f64),
    /// Sampling range of the pre-image mixup coefficient.
    pub beta1_range: (f64, f64),
    /// Disable the foreground bypass (beta1 forced to 0).
    pub use_bypass: bool,
    /// Train with the two-phase schedule; off means all paths from step 0.
    pub multi_phase: bool,
    /// Enable the real-image reconstruction path.
    pub real_recon: bool,
    /// Stop after phase 1 (reconstruction paths never activate).
    pub phase1_only: bool,
    pub checkpoint_every: u64,
    pub sample_every: u64,
    /// Horizontal flip augmentation on real batches.
    pub hflip: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            gan_loss: GanLoss::Bce,
            mse_stop_grad: false,
            seg_pure_encoder: true,
            beta0_range: (0.0, 1.0),
            beta1_range: (0.5, 1.0),
            use_bypass: true,
            multi_phase: true,
            real_recon: true,
            phase1_only: false,
            checkpoint_every: 1000,
            sample_every: 1000,
            hflip: false,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && lo <= hi && hi <= 1.0;
        if !ok(self.beta0_range) || !ok(self.beta1_range) {
            return Err(Error::validation("mixup ranges must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

/// Named training variants mirroring the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Default,
    NoMaskReg,
    NoBypass,
    NoMixup,
    FullMixup,
    Phase1Only,
    NoMultiPhase,
    NoRealRecon,
}

impl Ablation {
    pub fn parse(tag: &str) -> Result<Self> {
        Ok(match tag {
            "default" => Ablation::Default,
            "no-mask-reg" => Ablation::NoMaskReg,
            "no-bypass" => Ablation::NoBypass,
            "no-mixup" => Ablation::NoMixup,
            "full-mixup" => Ablation::FullMixup,
            "phase-i-only" | "phase-1-only" => Ablation::Phase1Only,
            "no-multi-phase" => Ablation::NoMultiPhase,
            "no-real-recon" => Ablation::NoRealRecon,
            other => return Err(Error::Config(format!("unknown ablation tag `{other}`"))),
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Ablation::Default => "default",
            Ablation::NoMaskReg => "no-mask-reg",
            Ablation::NoBypass => "no-bypass",
            Ablation::NoMixup => "no-mixup",
            Ablation::FullMixup => "full-mixup",
            Ablation::Phase1Only => "phase-i-only",
            Ablation::NoMultiPhase => "no-multi-phase",
            Ablation::NoRealRecon => "no-real-recon",
        }
    }

    /// Apply the variant to a configuration.
    pub fn apply(&self, cfg: &mut Config) {
        match self {
            Ablation::Default => {}
            Ablation::NoMaskReg => cfg.weights.mask = 0.0,
            Ablation::NoBypass => cfg.options.use_bypass = false,
            Ablation::NoMixup => {
                // No mixing at all: pure encoder information on both sites.
                cfg.options.beta0_range = (1.0, 1.0);
                cfg.options.beta1_range = (1.0, 1.0);
            }
            Ablation::FullMixup => {
                cfg.options.beta0_range = (0.0, 1.0);
                cfg.options.beta1_range = (0.0, 1.0);
            }
            Ablation::Phase1Only => cfg.options.phase1_only = true,
            Ablation::NoMultiPhase => cfg.options.multi_phase = false,
            Ablation::NoRealRecon => cfg.options.real_recon = false,
        }
    }
}

/// Dataset location and kind.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Root directory with `objects/`, `backgrounds/` and `manifest.tsv`.
    pub root: String,
    /// Trailing object records held out of training and used for labeled
    /// evaluation. Training and evaluation agree on this split.
    pub eval_count: usize,
}

/// Full run configuration: every section mirrors one concern.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: HyperParams,
    pub weights: LossWeights,
    pub options: TrainOptions,
    pub data: DataConfig,
    pub seed: u64,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.options.validate()
    }

    /// Validation that admits miniature image sizes (test harnesses).
    pub fn validate_relaxed(&self) -> Result<()> {
        self.model.validate_relaxed()?;
        self.weights.validate()?;
        self.options.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Short digest of the effective configuration (for metric records).
    pub fn digest(&self) -> String {
        let text = self.to_toml();
        // FNV-1a is plenty for a configuration fingerprint.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_protocol() {
        let hp = HyperParams::default();
        assert_eq!(hp.d_z, 100);
        assert_eq!(hp.d_c, 32);
        assert_eq!(hp.d_p, 16);
        assert_eq!(hp.d_bg, 32);
        assert_eq!(hp.batch_size, 20);
        assert_eq!(hp.lr, 2e-4);
        assert_eq!(hp.phase1_iters, 200_000);
        assert_eq!(hp.total_iters, 600_000);
        assert_eq!(hp.image_size, 128);
        hp.validate().unwrap();

        let w = LossWeights::default();
        assert_eq!(w.bg_adv, 10.0);
        assert_eq!(w.reg_v, 0.1);
        assert_eq!(w.mask, 2.0);
        assert_eq!(w.mask_decisive, 0.1);
    }

    #[test]
    fn invariants_rejected() {
        let mut hp = HyperParams::default();
        hp.n_p = hp.n_c;
        assert!(hp.validate().is_err());

        let mut hp = HyperParams::default();
        hp.image_size = 96;
        assert!(hp.validate().is_err());

        let mut hp = HyperParams::default();
        hp.phase1_iters = hp.total_iters;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.model.n_c = 12;
        cfg.model.n_p = 3;
        cfg.model.image_size = 64;
        cfg.options.beta1_range = (0.25, 0.75);
        cfg.seed = 7;
        let text = cfg.to_toml();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn ablation_tags_round_trip_and_apply() {
        for tag in [
            "default",
            "no-mask-reg",
            "no-bypass",
            "no-mixup",
            "full-mixup",
            "phase-i-only",
            "no-multi-phase",
            "no-real-recon",
        ] {
            assert_eq!(Ablation::parse(tag).unwrap().tag(), tag);
        }
        let mut cfg = Config::default();
        Ablation::parse("no-mask-reg").unwrap().apply(&mut cfg);
        assert_eq!(cfg.weights.mask, 0.0);
        let mut cfg = Config::default();
        Ablation::parse("full-mixup").unwrap().apply(&mut cfg);
        assert_eq!(cfg.options.beta1_range, (0.0, 1.0));
        assert!(Ablation::parse("bogus").is_err());
    }
}
