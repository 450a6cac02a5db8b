//! Command-line surface: dataset preparation, training, generation,
//! inference tasks, and evaluation.

mod render;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use autograd::{Tensor, Var};
use clap::{Parser, Subcommand, ValueEnum};

use scenegan::checkpoint;
use scenegan::config::{Ablation, Config, HyperParams};
use scenegan::data::{
    generate_synthetic, ingest_real, load_dataset, read_bbox_annotations, write_dataset,
    SyntheticSceneSpec,
};
use scenegan::eval::{
    ami, append_results, cluster_codes, conditional_is, nmi, segmentation_eval,
    train_oracle_classifier, MetricReport,
};
use scenegan::networks::Networks;
use scenegan::paths::{autoencode_path, generation_path, segment, AutoencodeOptions};
use scenegan::priors::{sample_prior_batch, MixupCoeffs, PriorBatch, PriorBundle};
use scenegan::rng::RngBundle;
use scenegan::training::Trainer;

#[derive(Parser)]
#[command(name = "scenegan", version, about = "Unsupervised scene-decomposition model: train, generate, segment, cluster, and evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum InferTask {
    Segment,
    Reconstruct,
    Remove,
    Translate,
    Cluster,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset with ground truth into a dataset root.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        parents: usize,
        #[arg(long, default_value_t = 4)]
        colors: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a dataset root from real images plus bounding-box annotations.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        /// TSV file: relative-path, x, y, w, h.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Train a named ablation variant.
        #[arg(long)]
        ablation: Option<String>,
        /// Override the configured iteration count.
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Sample image grids from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Columns; each column has its own pose code.
        #[arg(short, default_value_t = 8)]
        n: usize,
        /// Rows; each row has its own class pair.
        #[arg(long, default_value_t = 4)]
        rows: usize,
        /// Fix the child class (1-based).
        #[arg(long)]
        child: Option<usize>,
        /// Fix the parent class (1-based).
        #[arg(long)]
        parent: Option<usize>,
        /// Emit the four-row decomposition (image, foreground, mask,
        /// background) instead of the class-by-pose grid.
        #[arg(long)]
        decompose: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an inference task over images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: InferTask,
        /// Dataset root whose object images are the inputs.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Explicit input image files (PNG, model resolution).
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Target child class for translation (1-based).
        #[arg(long)]
        target_child: Option<usize>,
        /// Cap on the number of dataset inputs.
        #[arg(long, default_value_t = 64)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute metrics for a checkpoint against a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated list out of iou,dice,nmi,ami,cis.
        #[arg(long, default_value = "iou,dice,nmi,ami,cis")]
        metrics: String,
        /// Results file (appended).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate as a named ablation variant (affects inference switches
        /// and the recorded configuration digest).
        #[arg(long)]
        ablation: Option<String>,
        /// Held-out labeled records (trailing object records).
        #[arg(long, default_value_t = 200)]
        eval_count: usize,
        /// Generated samples per child class for the conditional score.
        #[arg(long, default_value_t = 24)]
        cis_samples: usize,
        /// Training iterations for the oracle classifier.
        #[arg(long, default_value_t = 600)]
        oracle_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth {
            out,
            count,
            parents,
            colors,
            size,
            seed,
        } => cmd_synth(&out, count, parents, colors, size, seed),
        Cmd::Ingest {
            images,
            annotations,
            out,
            size,
            seed,
        } => cmd_ingest(&images, &annotations, &out, size, seed),
        Cmd::Train {
            config,
            out,
            resume,
            seed,
            ablation,
            iters,
        } => cmd_train(&config, &out, resume, seed, ablation.as_deref(), iters),
        Cmd::Generate {
            checkpoint,
            out,
            n,
            rows,
            child,
            parent,
            decompose,
            seed,
        } => cmd_generate(&checkpoint, &out, n, rows, child, parent, decompose, seed),
        Cmd::Infer {
            checkpoint,
            task,
            dataset,
            input,
            out,
            target_child,
            limit,
            seed,
        } => cmd_infer(&checkpoint, task, dataset.as_deref(), &input, &out, target_child, limit, seed),
        Cmd::Eval {
            checkpoint,
            dataset,
            metrics,
            out,
            ablation,
            eval_count,
            cis_samples,
            oracle_iters,
            seed,
        } => cmd_eval(
            &checkpoint,
            &dataset,
            &metrics,
            out.as_deref(),
            ablation.as_deref(),
            eval_count,
            cis_samples,
            oracle_iters,
            seed,
        ),
    }
}

fn cmd_synth(out: &Path, count: usize, parents: usize, colors: usize, size: usize, seed: u64) -> Result<()> {
    let spec = SyntheticSceneSpec::new(parents, colors, size);
    let mut rng = RngBundle::new(seed).data;
    let ds = generate_synthetic(&spec, count, &mut rng)?;
    write_dataset(&ds, out)?;
    println!(
        "wrote {} scenes and {} backgrounds ({} child classes) to {}",
        ds.scenes.len(),
        ds.backgrounds.len(),
        spec.n_c(),
        out.display()
    );
    Ok(())
}

fn cmd_ingest(images: &Path, annotations: &Path, out: &Path, size: usize, seed: u64) -> Result<()> {
    let boxes = read_bbox_annotations(annotations)?;
    let split = ingest_real(images, &boxes, size, seed)?;
    // Persist through the common dataset layout (no ground truth columns).
    std::fs::create_dir_all(out.join("objects"))?;
    std::fs::create_dir_all(out.join("backgrounds"))?;
    let mut manifest = std::fs::File::create(out.join("manifest.tsv"))?;
    for (i, rec) in split.objects.iter().enumerate() {
        let rel = format!("objects/obj_{i:05}.png");
        save_planar_rgb(&out.join(&rel), &rec.pixels, size)?;
        writeln!(manifest, "object\t{rel}\t\t\t")?;
    }
    for (i, rec) in split.backgrounds.iter().enumerate() {
        let rel = format!("backgrounds/bg_{i:05}.png");
        save_planar_rgb(&out.join(&rel), &rec.pixels, size)?;
        writeln!(manifest, "background\t{rel}\t\t\t")?;
    }
    println!(
        "ingested {} objects / {} background patches to {}",
        split.objects.len(),
        split.backgrounds.len(),
        out.display()
    );
    Ok(())
}

fn save_planar_rgb(path: &Path, pixels: &[u8], side: usize) -> Result<()> {
    let mut buf = image::RgbImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    pixels[y * side + x],
                    pixels[(side + y) * side + x],
                    pixels[(2 * side + y) * side + x],
                ]),
            );
        }
    }
    buf.save(path)?;
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    out: &Path,
    resume: bool,
    seed: Option<u64>,
    ablation: Option<&str>,
    iters: Option<u64>,
) -> Result<()> {
    let mut cfg = Config::load(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(tag) = ablation {
        Ablation::parse(tag)?.apply(&mut cfg);
    }
    if let Some(n) = iters {
        cfg.model.total_iters = n;
    }
    cfg.validate()?;

    std::fs::create_dir_all(out)?;
    std::fs::create_dir_all(out.join("samples"))?;
    cfg.save(&out.join("config.toml"))?;

    let data = load_dataset(Path::new(&cfg.data.root), cfg.model.image_size, cfg.data.eval_count)
        .context("loading dataset")?;
    let split = data.split;

    let mut trainer = if resume {
        let dir = latest_checkpoint(out)?;
        println!("resuming from {}", dir.display());
        Trainer::resume(&cfg, &split, &dir)?
    } else {
        Trainer::new(&cfg, &split)?
    };

    let mut metrics_log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("metrics.log"))?;
    let total = cfg.model.total_iters;
    let started = Instant::now();
    let mut last_print = Instant::now();
    while trainer.iteration < total {
        let reports = trainer.training_step(&split)?;
        let it = trainer.iteration; // already advanced past this step
        for r in &reports {
            writeln!(metrics_log, "{}", r.to_line(it - 1))?;
        }
        if last_print.elapsed().as_secs() >= 30 || it == total || it == 1 {
            let per = started.elapsed().as_secs_f64() / it.max(1) as f64;
            let head = &reports[0];
            println!(
                "iter {it}/{total}  {:.2}s/iter  {}",
                per,
                head.to_line(it - 1)
            );
            last_print = Instant::now();
        }
        if it % cfg.options.sample_every == 0 || it == total {
            let path = out.join("samples").join(format!("iter_{it:08}.png"));
            write_sample_grid(&trainer, &path, 6)?;
        }
        if it % cfg.options.checkpoint_every == 0 || it == total {
            let dir = checkpoint::checkpoint_dir(out, it);
            trainer.save_checkpoint(&dir)?;
        }
    }
    println!("done: {} iterations in {:.1}s", total, started.elapsed().as_secs_f64());
    Ok(())
}

fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join("checkpoints");
    let mut best: Option<PathBuf> = None;
    for entry in std::fs::read_dir(&dir).with_context(|| format!("no checkpoints under {}", dir.display()))? {
        let path = entry?.path();
        if path.join("manifest.json").exists()
            && best.as_ref().map_or(true, |b| b.file_name() < path.file_name())
        {
            best = Some(path);
        }
    }
    best.ok_or_else(|| anyhow::anyhow!("no checkpoint found in {}", dir.display()))
}

/// Periodic preview: one column per sample, rows are image / foreground /
/// mask / background.
fn write_sample_grid(trainer: &Trainer, path: &Path, cols: usize) -> Result<()> {
    let hp = &trainer.cfg.model;
    let mut rng = RngBundle::new(trainer.cfg.seed ^ 0x5eed).eval;
    let priors = sample_prior_batch(hp, cols, &mut rng);
    let out = generation_path(None, &trainer.nets, &priors);
    let mut grid = render::Grid::new(4, cols, hp.image_size);
    for c in 0..cols {
        grid.place(0, c, out.quad.composite.value(), c);
        grid.place(1, c, out.quad.fg.value(), c);
        grid.place(2, c, out.quad.mask.value(), c);
        grid.place(3, c, out.quad.bg.value(), c);
    }
    grid.save(path)
}

/// Rebuild networks from a checkpoint (generators and encoders).
fn load_networks(ckpt: &Path) -> Result<(HyperParams, Networks<f32>)> {
    let manifest = checkpoint::read_manifest(ckpt)?;
    let mut rngs = RngBundle::new(0);
    let nets = Networks::<f32>::build(&manifest.hp, &mut rngs.init);
    checkpoint::load_group(ckpt, &manifest, "gen", &nets.gen_params)?;
    checkpoint::load_group(ckpt, &manifest, "enc", &nets.enc_params)?;
    Ok((manifest.hp, nets))
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    ckpt: &Path,
    out: &Path,
    cols: usize,
    rows: usize,
    child: Option<usize>,
    parent: Option<usize>,
    decompose: bool,
    seed: u64,
) -> Result<()> {
    let (hp, nets) = load_networks(ckpt)?;
    std::fs::create_dir_all(out)?;
    let mut rng = RngBundle::new(seed).eval;

    // One pose code per column, shared by every row.
    let z_cols: Vec<Vec<f32>> = (0..cols)
        .map(|_| (0..hp.d_z).map(|_| rng.normal() as f32).collect())
        .collect();
    let class_of = |rng: &mut scenegan::rng::Stream| -> Result<(usize, usize)> {
        let c = match child {
            Some(c) if c >= 1 && c <= hp.n_c => c,
            Some(c) => bail!("child class {c} out of range [1, {}]", hp.n_c),
            None => rng.below(hp.n_c) + 1,
        };
        let p = match parent {
            Some(p) if p >= 1 && p <= hp.n_p => p,
            Some(p) => bail!("parent class {p} out of range [1, {}]", hp.n_p),
            None => rng.below(hp.n_p) + 1,
        };
        Ok((c, p))
    };

    if decompose {
        let (c, p) = class_of(&mut rng)?;
        let bundles: Vec<PriorBundle> = z_cols
            .iter()
            .map(|z| PriorBundle::new(c, p, hp.n_c, hp.n_p, z.clone()).unwrap())
            .collect();
        let priors = PriorBatch::from_bundles(&hp, bundles);
        let outp = generation_path(None, &nets, &priors);
        let mut grid = render::Grid::new(4, cols, hp.image_size);
        for i in 0..cols {
            grid.place(0, i, outp.quad.composite.value(), i);
            grid.place(1, i, outp.quad.fg.value(), i);
            grid.place(2, i, outp.quad.mask.value(), i);
            grid.place(3, i, outp.quad.bg.value(), i);
        }
        let path = out.join("decomposition.png");
        grid.save(&path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let mut grid = render::Grid::new(rows, cols, hp.image_size);
    for r in 0..rows {
        let (c, p) = class_of(&mut rng)?;
        let bundles: Vec<PriorBundle> = z_cols
            .iter()
            .map(|z| PriorBundle::new(c, p, hp.n_c, hp.n_p, z.clone()).unwrap())
            .collect();
        let priors = PriorBatch::from_bundles(&hp, bundles);
        let outp = generation_path(None, &nets, &priors);
        for i in 0..cols {
            grid.place(r, i, outp.quad.composite.value(), i);
        }
    }
    let path = out.join("grid.png");
    grid.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gather_inputs(
    dataset: Option<&Path>,
    files: &[PathBuf],
    side: usize,
    limit: usize,
) -> Result<(Vec<String>, Tensor<f32>)> {
    let mut names = Vec::new();
    let mut images: Vec<Vec<u8>> = Vec::new();
    if let Some(root) = dataset {
        let data = load_dataset(root, side, 0)?;
        for rec in data.split.objects.into_iter().take(limit) {
            names.push(rec.source);
            images.push(rec.pixels);
        }
    }
    for f in files {
        let img = image::open(f)?.to_rgb8();
        if img.width() as usize != side || img.height() as usize != side {
            bail!("{}: expected {side}x{side} input", f.display());
        }
        let mut planar = vec![0u8; 3 * side * side];
        for y in 0..side {
            for x in 0..side {
                let px = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    planar[(c * side + y) * side + x] = px[c];
                }
            }
        }
        names.push(f.display().to_string());
        images.push(planar);
    }
    if images.is_empty() {
        bail!("no inputs: pass --dataset or --input");
    }
    let refs: Vec<&[u8]> = images.iter().map(|v| v.as_slice()).collect();
    Ok((names, scenegan::data::pack_images(&refs, side)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    ckpt: &Path,
    task: InferTask,
    dataset: Option<&Path>,
    files: &[PathBuf],
    out: &Path,
    target_child: Option<usize>,
    limit: usize,
    seed: u64,
) -> Result<()> {
    let (hp, nets) = load_networks(ckpt)?;
    std::fs::create_dir_all(out)?;
    let mut rngs = RngBundle::new(seed);
    let (names, batch) = gather_inputs(dataset, files, hp.image_size, limit)?;
    let n = batch.shape()[0];
    let input = Var::constant(batch);

    match task {
        InferTask::Segment => {
            let mask = segment(&nets, &input, true, &mut rngs.reparam)?;
            for i in 0..n {
                let path = out.join(format!("mask_{i:04}.png"));
                render::save_tile(&path, mask.value(), i)?;
            }
            println!("wrote {n} masks to {}", out.display());
        }
        InferTask::Reconstruct | InferTask::Remove | InferTask::Translate => {
            let class_override = match task {
                InferTask::Translate => {
                    let k = target_child
                        .ok_or_else(|| anyhow::anyhow!("translate requires --target-child"))?;
                    if k < 1 || k > hp.n_c {
                        bail!("target child {k} out of range [1, {}]", hp.n_c);
                    }
                    Some(k - 1)
                }
                _ => None,
            };
            let opts = AutoencodeOptions {
                mix: MixupCoeffs::constant(n, 1.0, 1.0),
                class_override,
                use_bypass: true,
            };
            let (outp, _, _) = autoencode_path(None, &nets, &input, &opts, &mut rngs.reparam)?;
            match task {
                InferTask::Remove => {
                    for i in 0..n {
                        let path = out.join(format!("background_{i:04}.png"));
                        render::save_tile(&path, outp.quad.bg.value(), i)?;
                    }
                    println!("wrote {n} background reconstructions to {}", out.display());
                }
                _ => {
                    // Rows: input, reconstruction, foreground, background, mask.
                    let mut grid = render::Grid::new(5, n, hp.image_size);
                    for i in 0..n {
                        grid.place(0, i, input.value(), i);
                        grid.place(1, i, outp.quad.composite.value(), i);
                        grid.place(2, i, outp.quad.fg.value(), i);
                        grid.place(3, i, outp.quad.bg.value(), i);
                        grid.place(4, i, outp.quad.mask.value(), i);
                    }
                    let name = if matches!(task, InferTask::Translate) {
                        format!("translate_child_{}.png", target_child.unwrap())
                    } else {
                        "reconstruction.png".to_string()
                    };
                    let path = out.join(name);
                    grid.save(&path)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        InferTask::Cluster => {
            let data: Vec<Vec<u8>> = (0..n)
                .map(|i| {
                    let hw = hp.image_size * hp.image_size;
                    let mut planar = vec![0u8; 3 * hw];
                    for (j, v) in planar.iter_mut().enumerate() {
                        *v = ((input.value().data()[i * 3 * hw + j] + 1.0) * 127.5) as u8;
                    }
                    planar
                })
                .collect();
            let refs: Vec<&[u8]> = data.iter().map(|v| v.as_slice()).collect();
            let labels = cluster_codes(&nets, &refs, hp.image_size, hp.n_c, &mut rngs.eval)?;
            let path = out.join("clusters.tsv");
            let mut f = std::fs::File::create(&path)?;
            for (name, label) in names.iter().zip(&labels) {
                writeln!(f, "{name}\t{label}")?;
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    ckpt: &Path,
    dataset: &Path,
    metrics: &str,
    out: Option<&Path>,
    ablation: Option<&str>,
    eval_count: usize,
    cis_samples: usize,
    oracle_iters: usize,
    seed: u64,
) -> Result<()> {
    let (hp, nets) = load_networks(ckpt)?;
    let mut cfg = Config::default();
    cfg.model = hp.clone();
    cfg.seed = seed;
    if let Some(tag) = ablation {
        Ablation::parse(tag)?.apply(&mut cfg);
    }
    let digest = cfg.digest();
    let data = load_dataset(dataset, hp.image_size, eval_count)?;
    let mut rngs = RngBundle::new(seed ^ 0xe7a1);
    let mut rows = Vec::new();

    let requested: Vec<&str> = metrics.split(',').map(|s| s.trim()).collect();
    for m in &requested {
        if !matches!(*m, "iou" | "dice" | "nmi" | "ami" | "cis") {
            bail!("unknown metric `{m}` (expected iou,dice,nmi,ami,cis)");
        }
    }

    if requested.iter().any(|m| *m == "iou" || *m == "dice") {
        let (iou_rep, dice_rep) = segmentation_eval(
            &nets,
            &data.eval,
            hp.image_size,
            cfg.options.seg_pure_encoder,
            &mut rngs.reparam,
        )?;
        if requested.contains(&"iou") {
            rows.push(MetricReport { config_digest: digest.clone(), ..iou_rep });
        }
        if requested.contains(&"dice") {
            rows.push(MetricReport { config_digest: digest.clone(), ..dice_rep });
        }
    }

    if requested.iter().any(|m| *m == "nmi" || *m == "ami") {
        if data.eval.is_empty() {
            bail!("nmi/ami need labeled eval records (set data.eval_count)");
        }
        let images: Vec<&[u8]> = data.eval.iter().map(|r| r.image.as_slice()).collect();
        let labels = cluster_codes(&nets, &images, hp.image_size, hp.n_c, &mut rngs.eval)?;
        let truth: Vec<usize> = data.eval.iter().map(|r| r.phi_c - 1).collect();
        if requested.contains(&"nmi") {
            rows.push(MetricReport {
                name: "nmi".into(),
                value: nmi(&labels, &truth)?,
                samples: truth.len(),
                config_digest: digest.clone(),
            });
        }
        if requested.contains(&"ami") {
            rows.push(MetricReport {
                name: "ami".into(),
                value: ami(&labels, &truth)?,
                samples: truth.len(),
                config_digest: digest.clone(),
            });
        }
    }

    if requested.contains(&"cis") {
        if data.labeled_train.len() < 10 {
            bail!("the conditional score needs labeled training records for the oracle");
        }
        let oracle = train_oracle_classifier(
            &data.labeled_train,
            hp.image_size,
            hp.n_c,
            oracle_iters,
            0.95,
            &mut rngs.eval,
        )?;
        println!(
            "oracle certified at held-out accuracy {:.3}",
            oracle.holdout_accuracy
        );
        let mut class_rows = Vec::with_capacity(hp.n_c);
        for child in 1..=hp.n_c {
            let bundles: Vec<PriorBundle> = (0..cis_samples)
                .map(|_| {
                    let parent = rngs.priors.below(hp.n_p) + 1;
                    let z: Vec<f32> = (0..hp.d_z).map(|_| rngs.priors.normal() as f32).collect();
                    PriorBundle::new(child, parent, hp.n_c, hp.n_p, z).unwrap()
                })
                .collect();
            let priors = PriorBatch::from_bundles(&hp, bundles);
            let outp = generation_path(None, &nets, &priors);
            let probs = oracle.predict_probs_tensor(outp.quad.composite.value());
            let mut mean = vec![0.0f64; hp.n_c];
            for p in &probs {
                for (m, &v) in mean.iter_mut().zip(p) {
                    *m += v / probs.len() as f64;
                }
            }
            class_rows.push(mean);
        }
        rows.push(MetricReport {
            name: "cis".into(),
            value: conditional_is(&class_rows)?,
            samples: hp.n_c * cis_samples,
            config_digest: digest.clone(),
        });
    }

    for r in &rows {
        println!("{}", r.to_line());
    }
    if let Some(path) = out {
        append_results(path, &rows)?;
    }
    Ok(())
}
