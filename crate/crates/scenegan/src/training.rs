//! Multi-phase training: the iteration schedule, the per-path discriminator
//! bank, and the alternating-path optimization step.

use std::path::Path;

use autograd::{Adam, Tape, Var};

use crate::checkpoint;
use crate::config::Config;
use crate::data::{BatchStream, DatasetSplit, TrainBatch};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, classification_loss, code_regularization,
    distance_loss, mask_regularization, perceptual_loss, total_losses, vae_kl_loss,
    LossReport, LossTerms, PathTag, ReconTarget,
};
use crate::networks::{init_sampler, BackgroundDiscriminator, ImageDiscriminator, Networks};
use crate::paths::{autoencode_path, generation_path, AutoencodeOptions, PathOutput};
use crate::priors::{sample_prior_batch, MixupCoeffs, PriorBatch};
use crate::rng::RngBundle;

/// Training phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

/// Which paths, losses, and parameter groups are active at an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseState {
    pub iteration: u64,
    pub phase: Phase,
    pub fake_recon_active: bool,
    pub real_recon_active: bool,
    pub generators_frozen: bool,
}

/// Pure schedule: phase 1 below `phase1_iters`, then phase 2 with fake
/// reconstruction; real reconstruction joins after `real_recon_delay` more
/// iterations; generators stay frozen for the first `encoder_warmup_iters`
/// of phase 2. The ablation switches reshape the schedule.
pub fn phase_schedule(iteration: u64, cfg: &Config) -> PhaseState {
    let hp = &cfg.model;
    let opts = &cfg.options;
    if opts.phase1_only {
        return PhaseState {
            iteration,
            phase: Phase::One,
            fake_recon_active: false,
            real_recon_active: false,
            generators_frozen: false,
        };
    }
    if !opts.multi_phase {
        // Everything at once from the first iteration, no warmup freeze.
        return PhaseState {
            iteration,
            phase: Phase::Two,
            fake_recon_active: true,
            real_recon_active: opts.real_recon,
            generators_frozen: false,
        };
    }
    if iteration < hp.phase1_iters {
        PhaseState {
            iteration,
            phase: Phase::One,
            fake_recon_active: false,
            real_recon_active: false,
            generators_frozen: false,
        }
    } else {
        PhaseState {
            iteration,
            phase: Phase::Two,
            fake_recon_active: true,
            real_recon_active: opts.real_recon
                && iteration >= hp.phase1_iters + hp.real_recon_delay,
            generators_frozen: iteration < hp.phase1_iters + hp.encoder_warmup_iters,
        }
    }
}

/// One discriminator pair with its own optimizers.
pub struct DiscPair {
    pub tag: PathTag,
    pub d_c: ImageDiscriminator<f32>,
    pub d_bg: BackgroundDiscriminator<f32>,
    pub opt_c: Adam<f32>,
    pub opt_bg: Adam<f32>,
}

impl DiscPair {
    fn from_nets(tag: PathTag, d_c: ImageDiscriminator<f32>, d_bg: BackgroundDiscriminator<f32>, lr: f64) -> Self {
        let opt_c = Adam::new(lr, &d_c.params);
        let opt_bg = Adam::new(lr, &d_bg.params);
        DiscPair {
            tag,
            d_c,
            d_bg,
            opt_c,
            opt_bg,
        }
    }
}

/// The per-path discriminators: one pair during phase 1, three pairs (with
/// independent optimizers) from phase 2 on.
pub struct DiscriminatorBank {
    pub pairs: Vec<DiscPair>,
}

impl DiscriminatorBank {
    pub fn new(d_c: ImageDiscriminator<f32>, d_bg: BackgroundDiscriminator<f32>, lr: f64) -> Self {
        DiscriminatorBank {
            pairs: vec![DiscPair::from_nets(PathTag::Generation, d_c, d_bg, lr)],
        }
    }

    pub fn is_cloned(&self) -> bool {
        self.pairs.len() == 3
    }

    /// Clone both discriminators twice, one clone per reconstruction path.
    /// Clones start parameter-identical; optimizers start fresh.
    pub fn clone_discriminators(&mut self, lr: f64) -> Result<()> {
        if self.is_cloned() {
            return Err(Error::State("discriminators already cloned".into()));
        }
        let base = &self.pairs[0];
        let fake = DiscPair::from_nets(
            PathTag::FakeRecon,
            base.d_c.deep_clone(),
            base.d_bg.deep_clone(),
            lr,
        );
        let real = DiscPair::from_nets(
            PathTag::RealRecon,
            base.d_c.deep_clone(),
            base.d_bg.deep_clone(),
            lr,
        );
        self.pairs.push(fake);
        self.pairs.push(real);
        Ok(())
    }

    pub fn for_path(&mut self, tag: PathTag) -> &mut DiscPair {
        let idx = match tag {
            PathTag::Generation => 0,
            PathTag::FakeRecon => 1,
            PathTag::RealRecon => 2,
        };
        &mut self.pairs[idx]
    }
}

/// Everything that advances during training.
pub struct Trainer {
    pub cfg: Config,
    pub nets: Networks<f32>,
    pub bank: DiscriminatorBank,
    pub opt_gen: Adam<f32>,
    pub opt_enc: Adam<f32>,
    pub rngs: RngBundle,
    pub stream: BatchStream,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(cfg: &Config, split: &DatasetSplit) -> Result<Trainer> {
        cfg.validate_relaxed()?;
        if split.image_size != cfg.model.image_size {
            return Err(Error::Config(format!(
                "dataset is {} px but the model expects {} px",
                split.image_size, cfg.model.image_size
            )));
        }
        let mut rngs = RngBundle::new(cfg.seed);
        let nets = Networks::build(&cfg.model, &mut rngs.init);
        let (d_c, d_bg) = {
            let mut sampler = init_sampler::<f32>(&mut rngs.init);
            (
                ImageDiscriminator::build(&cfg.model, &mut sampler),
                BackgroundDiscriminator::build(&cfg.model, &mut sampler),
            )
        };
        let bank = DiscriminatorBank::new(d_c, d_bg, cfg.model.lr);
        let opt_gen = Adam::new(cfg.model.lr, &nets.gen_params);
        let opt_enc = Adam::new(cfg.model.lr, &nets.enc_params);
        let stream = BatchStream::new(split, cfg.model.batch_size, cfg.seed, cfg.options.hflip)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            nets,
            bank,
            opt_gen,
            opt_enc,
            rngs,
            stream,
            iteration: 0,
        })
    }

    pub fn state(&self) -> PhaseState {
        phase_schedule(self.iteration, &self.cfg)
    }

    /// One batch iteration: the generation path always, plus the fake and
    /// real reconstruction paths per schedule. Discriminators update before
    /// the generator/encoder step of each path, and every path talks only to
    /// its own discriminator pair.
    pub fn training_step(&mut self, split: &DatasetSplit) -> Result<Vec<LossReport>> {
        let state = self.state();
        if state.phase == Phase::Two && !self.bank.is_cloned() {
            self.bank.clone_discriminators(self.cfg.model.lr)?;
        }
        let batch = self.stream.next_batch(split);
        let mut reports = Vec::new();

        reports.push(self.generation_path_step(&batch, state)?);
        if state.fake_recon_active {
            reports.push(self.recon_path_step(&batch, state, PathTag::FakeRecon)?);
        }
        if state.real_recon_active {
            reports.push(self.recon_path_step(&batch, state, PathTag::RealRecon)?);
        }

        self.iteration += 1;
        Ok(reports)
    }

    fn generation_path_step(&mut self, batch: &TrainBatch, state: PhaseState) -> Result<LossReport> {
        let cfg = self.cfg.clone();
        let hp = &cfg.model;
        let priors = sample_prior_batch(hp, hp.batch_size, &mut self.rngs.priors);

        // Tracked forward through the generators and encoders.
        let tape = Tape::new();
        let out = generation_path(Some(&tape), &self.nets, &priors);
        let content = self.nets.e_p.forward(Some(&tape), &out.quad.composite);
        let style = self.nets.e_c.forward(Some(&tape), &out.quad.composite);
        let b_bg = self
            .nets
            .e_bg
            .forward(Some(&tape), &out.quad.composite, &out.quad.mask);

        // Discriminators update first, on detached images.
        let parents = priors.parent_indices();
        let children = priors.child_indices();
        let real_obj = Var::constant(batch.objects.clone());
        let real_bg = Var::constant(batch.backgrounds.clone());
        let l_d = self.disc_step(
            PathTag::Generation,
            &real_obj,
            &real_bg,
            &out.quad.bg.detach(),
            &out.quad.composite.detach(),
            Some(&children),
        )?;

        // Generator-side adversarial heads (discriminator weights constant).
        let pair = self.bank.for_path(PathTag::Generation);
        let d_bg_fake = pair.d_bg.forward(None, &out.quad.bg);
        let d_c_fake = pair.d_c.forward(None, &out.quad.composite);
        let mut report = LossReport::new(PathTag::Generation);
        let terms = build_generation_terms(
            &cfg,
            &out,
            &content.e_hat_p,
            &style.e_hat_c,
            &content.mu_p,
            &style.mu_c,
            &content.b_fg,
            Some(&b_bg),
            &d_bg_fake.rf_patch,
            &d_bg_fake.bg_patch,
            &d_c_fake.rf,
            &d_c_fake.class_logits,
            Some((&parents, &children)),
        )?;
        let totals = total_losses(&terms, &cfg.weights, PathTag::Generation)?;
        push_terms(&mut report, &terms);
        report.push("l_gen", &totals.l_gen);
        report.push("l_d", &Var::<f32>::scalar(l_d as f32));

        let grads = totals.l_gen.backward();
        if !state.generators_frozen {
            self.opt_gen.step(&self.nets.gen_params, &grads);
        }
        self.opt_enc.step(&self.nets.enc_params, &grads);
        Ok(report)
    }

    fn recon_path_step(
        &mut self,
        batch: &TrainBatch,
        state: PhaseState,
        tag: PathTag,
    ) -> Result<LossReport> {
        let cfg = self.cfg.clone();
        let hp = &cfg.model;

        // The input: a freshly generated quad (fake path, labels known) or
        // the real batch (no labels, no ground-truth decomposition).
        let (input, source, labels): (Var<f32>, Option<PathOutput<f32>>, Option<PriorBatch>) =
            match tag {
                PathTag::FakeRecon => {
                    let priors = sample_prior_batch(hp, hp.batch_size, &mut self.rngs.priors);
                    let src = generation_path(None, &self.nets, &priors);
                    (src.quad.composite.detach(), Some(src), Some(priors))
                }
                _ => (Var::constant(batch.objects.clone()), None, None),
            };

        let mix = MixupCoeffs::sample(
            hp.batch_size,
            cfg.options.beta0_range,
            cfg.options.beta1_range,
            &mut self.rngs.mixup,
        );
        let opts = AutoencodeOptions {
            mix,
            class_override: None,
            use_bypass: cfg.options.use_bypass,
        };
        let tape = Tape::new();
        let (out, ae, _b_bg) =
            autoencode_path(Some(&tape), &self.nets, &input, &opts, &mut self.rngs.reparam)?;

        // Discriminator step for this path's pair, on detached outputs.
        let real_obj = Var::constant(batch.objects.clone());
        let real_bg = Var::constant(batch.backgrounds.clone());
        let label_children = labels.as_ref().map(|p| p.child_indices());
        let l_d = self.disc_step(
            tag,
            &real_obj,
            &real_bg,
            &out.quad.bg.detach(),
            &out.quad.composite.detach(),
            label_children.as_deref(),
        )?;

        let pair = self.bank.for_path(tag);
        let d_bg_rec = pair.d_bg.forward(None, &out.quad.bg);
        let d_c_rec = pair.d_c.forward(None, &out.quad.composite);

        let mut report = LossReport::new(tag);
        let label_refs = labels.as_ref().map(|p| (p.parent_indices(), p.child_indices()));
        let mut terms = build_generation_terms(
            &cfg,
            &out,
            &ae.content.e_hat_p,
            &ae.style.e_hat_c,
            &ae.content.mu_p,
            &ae.style.mu_c,
            &ae.content.b_fg,
            None,
            &d_bg_rec.rf_patch,
            &d_bg_rec.bg_patch,
            &d_c_rec.rf,
            &d_c_rec.class_logits,
            label_refs.as_ref().map(|(p, c)| (p.as_slice(), c.as_slice())),
        )?;

        // Statistical, reconstruction, and perceptual terms.
        terms.l_vae = Some(vae_kl_loss(
            &ae.content.mu_p,
            &ae.content.logsig_p,
            &out.codes_used.v_p,
            &ae.style.mu_c,
            &ae.style.logsig_c,
            &out.codes_used.v_c,
            &ae.content.mu_z,
            &ae.content.logsig_z,
        ));
        terms.l_rec = Some(match (&source, tag) {
            (Some(src), PathTag::FakeRecon) => reconstruction(
                &input,
                &out.quad.composite,
                Some((&src.quad.bg, &out.quad.bg, &src.quad.mask, &out.quad.mask)),
            ),
            _ => reconstruction(&input, &out.quad.composite, None),
        });

        // Perceptual features come from this path's own (frozen-in-step)
        // discriminator clone; the input side is constant by construction.
        let f_in = pair.d_c.forward(None, &input).features;
        let mut pairs: Vec<(Var<f32>, Var<f32>)> = vec![(f_in, d_c_rec.features.clone())];
        if let Some(src) = &source {
            let fbg_in = pair.d_bg.forward(None, &src.quad.bg.detach()).features;
            pairs.push((fbg_in, d_bg_rec.features.clone()));
        }
        let pair_refs: Vec<(&Var<f32>, &Var<f32>)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        terms.l_per = Some(perceptual_loss(&pair_refs));

        let totals = total_losses(&terms, &cfg.weights, tag)?;
        push_terms(&mut report, &terms);
        report.push("l_gen", &totals.l_gen);
        let l_ae = totals.l_ae.expect("reconstruction path has an autoencoding total");
        report.push("l_ae", &l_ae);

        let grads = l_ae.backward();
        if !state.generators_frozen {
            self.opt_gen.step(&self.nets.gen_params, &grads);
        }
        self.opt_enc.step(&self.nets.enc_params, &grads);
        Ok(report)
    }

    /// Discriminator update for one path: real/fake background, background
    /// vs object, real/fake image. When labels exist (generated inputs),
    /// the class head trains on the fake images too; that task is
    /// cooperative, not adversarial.
    fn disc_step(
        &mut self,
        tag: PathTag,
        real_obj: &Var<f32>,
        real_bg: &Var<f32>,
        fake_bg: &Var<f32>,
        fake_img: &Var<f32>,
        labels: Option<&[usize]>,
    ) -> Result<f64> {
        let weights = self.cfg.weights;
        let form = self.cfg.options.gan_loss;
        let pair = self.bank.for_path(tag);
        let tape = Tape::new();
        let bg_real = pair.d_bg.forward(Some(&tape), real_bg);
        let bg_fake = pair.d_bg.forward(Some(&tape), fake_bg);
        let bg_obj = pair.d_bg.forward(Some(&tape), real_obj);
        let c_real = pair.d_c.forward(Some(&tape), real_obj);
        let c_fake = pair.d_c.forward(Some(&tape), fake_img);
        let l_d = adversarial_d_loss(
            &bg_real.rf_patch,
            &bg_fake.rf_patch,
            &bg_real.bg_patch,
            &bg_obj.bg_patch,
            &c_real.rf,
            &c_fake.rf,
            &weights,
            form,
        )?;
        let l_total = match labels {
            Some(children) => l_d.add(&c_fake.class_logits.softmax_cross_entropy(children)),
            None => l_d.clone(),
        };
        let grads = l_total.backward();
        pair.opt_c.step(&pair.d_c.params, &grads);
        pair.opt_bg.step(&pair.d_bg.params, &grads);
        Ok(l_d.item() as f64)
    }

    // ------------------------------------------------------------------
    // Checkpointing
    // ------------------------------------------------------------------

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let mut groups = vec![
            checkpoint::Group {
                name: "gen".into(),
                params: &self.nets.gen_params,
                opt: Some(&self.opt_gen),
            },
            checkpoint::Group {
                name: "enc".into(),
                params: &self.nets.enc_params,
                opt: Some(&self.opt_enc),
            },
        ];
        for pair in &self.bank.pairs {
            groups.push(checkpoint::Group {
                name: format!("d_c.{}", pair.tag.name()),
                params: &pair.d_c.params,
                opt: Some(&pair.opt_c),
            });
            groups.push(checkpoint::Group {
                name: format!("d_bg.{}", pair.tag.name()),
                params: &pair.d_bg.params,
                opt: Some(&pair.opt_bg),
            });
        }
        let spec = checkpoint::SaveSpec {
            iteration: self.iteration,
            phase: match self.state().phase {
                Phase::One => 1,
                Phase::Two => 2,
            },
            bank_paths: self.bank.pairs.iter().map(|p| p.tag.name().to_string()).collect(),
            master_seed: self.rngs.master_seed,
            rng: self.rngs.states(),
            stream_epoch: self.stream.epoch,
            stream_pos: self.stream.pos,
            hp: self.cfg.model.clone(),
            groups,
        };
        checkpoint::save(dir, &spec)
    }

    /// Rebuild a trainer from a checkpoint. The configuration must describe
    /// the same model shape; training options may differ (e.g. to evaluate
    /// an ablation from a shared phase-1 checkpoint).
    pub fn resume(cfg: &Config, split: &DatasetSplit, dir: &Path) -> Result<Trainer> {
        let manifest = checkpoint::read_manifest(dir)?;
        if !manifest.hp.same_structure(&cfg.model) {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: "checkpoint hyperparameters differ from the configuration".into(),
            });
        }
        let mut trainer = Trainer::new(cfg, split)?;
        checkpoint::load_group(dir, &manifest, "gen", &trainer.nets.gen_params)?;
        checkpoint::load_group(dir, &manifest, "enc", &trainer.nets.enc_params)?;
        checkpoint::load_opt(dir, &manifest, "gen", &trainer.nets.gen_params, &mut trainer.opt_gen)?;
        checkpoint::load_opt(dir, &manifest, "enc", &trainer.nets.enc_params, &mut trainer.opt_enc)?;
        if manifest.bank_paths.len() == 3 && !trainer.bank.is_cloned() {
            trainer.bank.clone_discriminators(cfg.model.lr)?;
        }
        for pair in &mut trainer.bank.pairs {
            let (cg, bg) = (format!("d_c.{}", pair.tag.name()), format!("d_bg.{}", pair.tag.name()));
            checkpoint::load_group(dir, &manifest, &cg, &pair.d_c.params)?;
            checkpoint::load_group(dir, &manifest, &bg, &pair.d_bg.params)?;
            checkpoint::load_opt(dir, &manifest, &cg, &pair.d_c.params, &mut pair.opt_c)?;
            checkpoint::load_opt(dir, &manifest, &bg, &pair.d_bg.params, &mut pair.opt_bg)?;
        }
        trainer.rngs = RngBundle::restore(manifest.master_seed, &manifest.rng).ok_or_else(|| {
            Error::Checkpoint {
                path: dir.to_path_buf(),
                message: "bad rng state".into(),
            }
        })?;
        trainer.stream = BatchStream::resume(
            split,
            cfg.model.batch_size,
            manifest.master_seed,
            cfg.options.hflip,
            manifest.stream_epoch,
            manifest.stream_pos,
        )?;
        trainer.iteration = manifest.iteration;
        Ok(trainer)
    }
}

/// Generation-side loss terms shared by all three paths.
#[allow(clippy::too_many_arguments)]
fn build_generation_terms(
    cfg: &Config,
    out: &PathOutput<f32>,
    e_hat_p: &Var<f32>,
    e_hat_c: &Var<f32>,
    mu_p: &Var<f32>,
    mu_c: &Var<f32>,
    b_fg: &Var<f32>,
    b_bg: Option<&Var<f32>>,
    d_bg_rf: &Var<f32>,
    d_bg_bgness: &Var<f32>,
    d_c_rf: &Var<f32>,
    d_c_class: &Var<f32>,
    labels: Option<(&[usize], &[usize])>,
) -> Result<LossTerms<f32>> {
    let mut terms = LossTerms::default();
    terms.l_g = Some(adversarial_g_loss(
        d_bg_rf,
        d_bg_bgness,
        d_c_rf,
        &cfg.weights,
        cfg.options.gan_loss,
    ));
    terms.l_e = labels.map(|(parents, children)| {
        classification_loss(d_c_class, e_hat_p, e_hat_c, parents, children)
    });

    let stop = cfg.options.mse_stop_grad;
    let hold = |v: &Var<f32>| if stop { v.detach() } else { v.clone() };
    let bg_pair_held = b_bg.map(|b| (hold(out.a_bg.as_ref().expect("generation path has A_bg")), b.clone()));
    terms.l_mse = Some(distance_loss(
        &hold(&out.codes_used.v_c),
        mu_c,
        &hold(&out.codes_used.v_p),
        mu_p,
        &hold(&out.a_fg),
        b_fg,
        bg_pair_held.as_ref().map(|(a, b)| (a, b)),
    ));

    let mut reg_codes: Vec<&Var<f32>> = vec![&out.codes_used.v_p, &out.codes_used.v_c];
    if out.a_bg.is_some() {
        reg_codes.push(&out.codes_used.v_bg);
    }
    terms.l_reg_v = Some(code_regularization(&reg_codes));
    terms.l_m = Some(mask_regularization(&out.quad.mask, cfg.weights.mask_decisive)?);
    Ok(terms)
}

fn reconstruction(
    input: &Var<f32>,
    output: &Var<f32>,
    fake_extras: Option<(&Var<f32>, &Var<f32>, &Var<f32>, &Var<f32>)>,
) -> Var<f32> {
    match fake_extras {
        None => crate::losses::reconstruction_loss(ReconTarget::Real { input, output }),
        Some((in_bg, out_bg, in_mask, out_mask)) => {
            crate::losses::reconstruction_loss(ReconTarget::Fake {
                input,
                output,
                input_bg: &in_bg.detach(),
                output_bg: out_bg,
                input_mask: &in_mask.detach(),
                output_mask: out_mask,
            })
        }
    }
}

fn push_terms(report: &mut LossReport, terms: &LossTerms<f32>) {
    if let Some(v) = &terms.l_e {
        report.push("l_e", v);
    }
    if let Some(v) = &terms.l_mse {
        report.push("l_mse", v);
    }
    if let Some(v) = &terms.l_reg_v {
        report.push("l_reg_v", v);
    }
    if let Some(v) = &terms.l_g {
        report.push("l_g", v);
    }
    if let Some(v) = &terms.l_m {
        report.push("l_m", v);
    }
    if let Some(v) = &terms.l_vae {
        report.push("l_vae", v);
    }
    if let Some(v) = &terms.l_rec {
        report.push("l_rec", v);
    }
    if let Some(v) = &terms.l_per {
        report.push("l_per", v);
    }
}
