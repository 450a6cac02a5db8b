//! Reduced-scale end-to-end run: train on a small synthetic benchmark and
//! report segmentation, clustering, and conditional-generation metrics.
//!
//! This is a scaled-down rehearsal of the full synthetic acceptance run
//! (which uses 64 px, channel scale 0.5, 2000 images, 20k iterations); the
//! pilot fits on a small CPU box. Usage:
//!
//! ```text
//! cargo run --release --example pilot -- <variant> [out_dir]
//! variant: default | no-mask-reg | phase-i-only | no-multi-phase | no-real-recon
//! ```

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use scenegan::config::{Ablation, Config, HyperParams, TrainOptions};
use scenegan::data::{generate_synthetic, SyntheticSceneSpec};
use scenegan::eval::{
    cluster_codes, conditional_is, nmi, segmentation_eval, train_oracle_classifier,
};
use scenegan::paths::generation_path;
use scenegan::priors::{PriorBatch, PriorBundle};
use scenegan::rng::RngBundle;
use scenegan::training::Trainer;

fn pilot_config(variant: Ablation) -> Config {
    let mut cfg = Config {
        model: HyperParams {
            n_c: 12,
            n_p: 3,
            image_size: 32,
            channel_scale: 0.25,
            batch_size: 8,
            lr: 2e-4,
            phase1_iters: 2500,
            real_recon_delay: 1200,
            encoder_warmup_iters: 200,
            total_iters: 6000,
            ..HyperParams::default()
        },
        options: TrainOptions::default(),
        seed: 7,
        ..Config::default()
    };
    variant.apply(&mut cfg);
    cfg
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = Ablation::parse(args.get(1).map(|s| s.as_str()).unwrap_or("default"))
        .expect("variant tag");
    let out_dir = args
        .get(2)
        .cloned()
        .unwrap_or_else(|| format!("/tmp/scenegan-pilot/{}", variant.tag()));
    std::fs::create_dir_all(&out_dir).unwrap();
    let cfg = pilot_config(variant);

    // Data: 800 training scenes + 160 held-out labeled scenes.
    let spec = SyntheticSceneSpec::new(cfg.model.n_p, cfg.model.n_c / cfg.model.n_p, cfg.model.image_size);
    let mut data_rng = RngBundle::new(101).data;
    let ds = generate_synthetic(&spec, 960, &mut data_rng).unwrap();
    let (split, eval) = ds.split(160).unwrap();
    let labeled: Vec<(Vec<u8>, usize)> = ds.scenes[..800]
        .iter()
        .map(|s| (s.image.clone(), s.phi_c - 1))
        .collect();

    let mut tr = Trainer::new(&cfg, &split).unwrap();
    let mut log = std::fs::File::create(Path::new(&out_dir).join("metrics.log")).unwrap();
    let started = Instant::now();
    while tr.iteration < cfg.model.total_iters {
        let reports = tr.training_step(&split).unwrap();
        let it = tr.iteration;
        if it % 50 == 0 {
            for r in &reports {
                writeln!(log, "{}", r.to_line(it - 1)).unwrap();
            }
        }
        if it % 500 == 0 {
            println!(
                "[{}] iter {it}/{} ({:.2}s/iter)  {}",
                variant.tag(),
                cfg.model.total_iters,
                started.elapsed().as_secs_f64() / it as f64,
                reports[0].to_line(it - 1)
            );
        }
    }
    println!("[{}] training done in {:.0}s", variant.tag(), started.elapsed().as_secs_f64());
    tr.save_checkpoint(&Path::new(&out_dir).join("checkpoint")).unwrap();

    // Metrics on the held-out labeled scenes.
    let mut rngs = RngBundle::new(4242);
    let (iou_rep, dice_rep) =
        segmentation_eval(&tr.nets, &eval, cfg.model.image_size, true, &mut rngs.reparam).unwrap();
    let images: Vec<&[u8]> = eval.iter().map(|r| r.image.as_slice()).collect();
    let labels = cluster_codes(&tr.nets, &images, cfg.model.image_size, cfg.model.n_c, &mut rngs.eval).unwrap();
    let truth: Vec<usize> = eval.iter().map(|r| r.phi_c - 1).collect();
    let nmi_val = nmi(&labels, &truth).unwrap();

    let oracle = train_oracle_classifier(&labeled, cfg.model.image_size, cfg.model.n_c, 500, 0.95, &mut rngs.eval)
        .expect("oracle certification");
    let mut class_rows = Vec::new();
    for child in 1..=cfg.model.n_c {
        let bundles: Vec<PriorBundle> = (0..24)
            .map(|_| {
                let parent = rngs.priors.below(cfg.model.n_p) + 1;
                let z: Vec<f32> = (0..cfg.model.d_z).map(|_| rngs.priors.normal() as f32).collect();
                PriorBundle::new(child, parent, cfg.model.n_c, cfg.model.n_p, z).unwrap()
            })
            .collect();
        let priors = PriorBatch::from_bundles(&cfg.model, bundles);
        let out = generation_path(None, &tr.nets, &priors);
        let probs = oracle.predict_probs_tensor(out.quad.composite.value());
        let mut mean = vec![0.0f64; cfg.model.n_c];
        for p in &probs {
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += v / probs.len() as f64;
            }
        }
        class_rows.push(mean);
    }
    let cis = conditional_is(&class_rows).unwrap();

    let summary = format!(
        "variant={} iou={:.4} dice={:.4} nmi={:.4} cis={:.4} oracle_acc={:.4}\n",
        variant.tag(),
        iou_rep.value,
        dice_rep.value,
        nmi_val,
        cis,
        oracle.holdout_accuracy,
    );
    print!("{summary}");
    std::fs::write(Path::new(&out_dir).join("summary.txt"), summary).unwrap();
}
