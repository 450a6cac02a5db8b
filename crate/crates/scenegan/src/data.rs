//! Dataset ingestion and the synthetic benchmark generator.
//!
//! Training only ever sees [`TrainBatch`] values, which carry images and
//! nothing else; ground-truth masks and classes live in eval-side records.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! <root>/objects/obj_00000.png        RGB, H x H
//! <root>/backgrounds/bg_00000.png     RGB, H x H
//! <root>/masks/obj_00000.png          grayscale 0/255 (eval only)
//! <root>/manifest.tsv                 one record per line, tab-separated:
//!     object<TAB>objects/obj_00000.png<TAB>phi_p<TAB>phi_c<TAB>masks/obj_00000.png
//!     background<TAB>backgrounds/bg_00000.png<TAB><TAB><TAB>
//! ```
//!
//! `phi_p`/`phi_c`/mask columns may be empty (real datasets without
//! annotations); such records are usable for training but not for labeled
//! evaluation.

use std::io::{BufRead, Write};
use std::path::Path;

use autograd::Tensor;
use image::GenericImageView;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Planar RGB image, `3 * side * side` bytes.
#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub pixels: Vec<u8>,
    /// Identifier of the source (file stem or synthetic id); used to check
    /// that no source leaks into both subsets.
    pub source: String,
}

/// Labeled record for evaluation: image plus ground truth.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub image: Vec<u8>,
    /// Binary mask, `side * side`, values 0/1.
    pub mask: Vec<u8>,
    /// 1-based parent class.
    pub phi_p: usize,
    /// 1-based child class.
    pub phi_c: usize,
}

/// Object and background subsets ready for training.
#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub image_size: usize,
    pub objects: Vec<ImageRecord>,
    pub backgrounds: Vec<ImageRecord>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Dataset("object subset is empty".into()));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Dataset("background subset is empty".into()));
        }
        Ok(())
    }
}

/// One training batch: images only.
pub struct TrainBatch {
    /// `(B, 3, H, W)` in `[-1, 1]`.
    pub objects: Tensor<f32>,
    /// `(B, 3, H, W)` in `[-1, 1]`.
    pub backgrounds: Tensor<f32>,
}

fn to_unit_range(pixels: &[u8], flip: bool, side: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(pixels.len());
    if !flip {
        out.extend(pixels.iter().map(|&v| v as f32 / 127.5 - 1.0));
    } else {
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    let v = pixels[(c * side + y) * side + (side - 1 - x)];
                    out.push(v as f32 / 127.5 - 1.0);
                }
            }
        }
    }
    out
}

/// Pack selected records into an image tensor.
pub fn pack_images(records: &[&[u8]], side: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(records.len() * 3 * side * side);
    for r in records {
        assert_eq!(r.len(), 3 * side * side);
        data.extend(r.iter().map(|&v| v as f32 / 127.5 - 1.0));
    }
    Tensor::from_vec(&[records.len(), 3, side, side], data)
}

/// Shuffled epoch stream over a split. The order of epoch `k` is derived
/// from `(seed, k)` alone, so a stream can be resumed from `(epoch, pos)`
/// without replaying any random state.
#[derive(Clone, Debug)]
pub struct BatchStream {
    seed: u64,
    batch_size: usize,
    hflip: bool,
    pub epoch: u64,
    pub pos: usize,
    order_obj: Vec<(usize, bool)>,
    order_bg: Vec<(usize, bool)>,
}

impl BatchStream {
    pub fn new(split: &DatasetSplit, batch_size: usize, seed: u64, hflip: bool) -> Result<Self> {
        split.validate()?;
        if batch_size == 0
            || batch_size > split.objects.len()
            || batch_size > split.backgrounds.len()
        {
            return Err(Error::validation(format!(
                "batch size {batch_size} incompatible with dataset of {} objects / {} backgrounds",
                split.objects.len(),
                split.backgrounds.len()
            )));
        }
        let mut stream = BatchStream {
            seed,
            batch_size,
            hflip,
            epoch: 0,
            pos: 0,
            order_obj: Vec::new(),
            order_bg: Vec::new(),
        };
        stream.reshuffle(split);
        Ok(stream)
    }

    /// Restore a stream at `(epoch, pos)`.
    pub fn resume(
        split: &DatasetSplit,
        batch_size: usize,
        seed: u64,
        hflip: bool,
        epoch: u64,
        pos: usize,
    ) -> Result<Self> {
        let mut s = Self::new(split, batch_size, seed, hflip)?;
        s.epoch = epoch;
        s.pos = pos;
        s.reshuffle(split);
        Ok(s)
    }

    fn epoch_order(&self, len: usize, tag: u64) -> Vec<(usize, bool)> {
        let mut h = 0x9e3779b97f4a7c15u64 ^ self.seed;
        for v in [self.epoch, tag] {
            h ^= v.wrapping_add(0x9e3779b97f4a7c15);
            h = h.wrapping_mul(0xbf58476d1ce4e5b9);
            h ^= h >> 27;
        }
        let mut rng = Stream::from_seed_u64(h);
        let mut order: Vec<(usize, bool)> = (0..len)
            .map(|i| (i, self.hflip && rng.below(2) == 1))
            .collect();
        rng.shuffle(&mut order);
        order
    }

    fn reshuffle(&mut self, split: &DatasetSplit) {
        self.order_obj = self.epoch_order(split.objects.len(), 1);
        self.order_bg = self.epoch_order(split.backgrounds.len(), 2);
    }

    /// Next batch; wraps to a freshly shuffled epoch when either subset is
    /// exhausted.
    pub fn next_batch(&mut self, split: &DatasetSplit) -> TrainBatch {
        let limit = self.order_obj.len().min(self.order_bg.len());
        if self.pos + self.batch_size > limit {
            self.epoch += 1;
            self.pos = 0;
            self.reshuffle(split);
        }
        let side = split.image_size;
        let mut obj = Vec::with_capacity(self.batch_size * 3 * side * side);
        let mut bg = Vec::with_capacity(self.batch_size * 3 * side * side);
        for i in self.pos..self.pos + self.batch_size {
            let (idx, flip) = self.order_obj[i];
            obj.extend(to_unit_range(&split.objects[idx].pixels, flip, side));
            let (idx, flip) = self.order_bg[i];
            bg.extend(to_unit_range(&split.backgrounds[idx].pixels, flip, side));
        }
        self.pos += self.batch_size;
        TrainBatch {
            objects: Tensor::from_vec(&[self.batch_size, 3, side, side], obj),
            backgrounds: Tensor::from_vec(&[self.batch_size, 3, side, side], bg),
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Parameters of the synthetic scene family. Parent classes choose the
/// object shape (and the background texture family); child classes choose
/// the object color; pose varies freely and is independent of class.
#[derive(Clone, Debug)]
pub struct SyntheticSceneSpec {
    pub n_p: usize,
    pub colors_per_shape: usize,
    pub image_size: usize,
    /// Accepted range of the foreground pixel fraction.
    pub fg_fraction: (f64, f64),
}

impl SyntheticSceneSpec {
    pub fn new(n_p: usize, colors_per_shape: usize, image_size: usize) -> Self {
        SyntheticSceneSpec {
            n_p,
            colors_per_shape,
            image_size,
            fg_fraction: (0.1, 0.6),
        }
    }

    pub fn n_c(&self) -> usize {
        self.n_p * self.colors_per_shape
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.colors_per_shape < 2 {
            return Err(Error::validation(
                "need at least one shape family and two colors per shape",
            ));
        }
        if self.image_size < 16 {
            return Err(Error::validation("image_size below 16"));
        }
        if !(0.0 < self.fg_fraction.0 && self.fg_fraction.0 < self.fg_fraction.1) {
            return Err(Error::validation("bad foreground fraction bounds"));
        }
        Ok(())
    }
}

/// One rendered scene with its ground truth.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub image: Vec<u8>,
    pub mask: Vec<u8>,
    pub phi_p: usize,
    pub phi_c: usize,
}

/// Synthetic dataset: labeled object scenes plus a pure-background set from
/// the same texture generator.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSceneSpec,
    pub scenes: Vec<SceneRecord>,
    pub backgrounds: Vec<ImageRecord>,
}

impl SyntheticDataset {
    /// Split off the last `eval_count` scenes as an evaluation set and wrap
    /// the rest for training.
    pub fn split(&self, eval_count: usize) -> Result<(DatasetSplit, Vec<EvalRecord>)> {
        if eval_count >= self.scenes.len() {
            return Err(Error::validation(format!(
                "eval_count {eval_count} does not leave training data ({} scenes)",
                self.scenes.len()
            )));
        }
        let train_n = self.scenes.len() - eval_count;
        let objects = self.scenes[..train_n]
            .iter()
            .enumerate()
            .map(|(i, s)| ImageRecord {
                pixels: s.image.clone(),
                source: format!("synthetic/obj/{i}"),
            })
            .collect();
        let eval = self.scenes[train_n..]
            .iter()
            .map(|s| EvalRecord {
                image: s.image.clone(),
                mask: s.mask.clone(),
                phi_p: s.phi_p,
                phi_c: s.phi_c,
            })
            .collect();
        Ok((
            DatasetSplit {
                image_size: self.spec.image_size,
                objects,
                backgrounds: self.backgrounds.clone(),
            },
            eval,
        ))
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Band-limited texture for one background: a parent-keyed directional
/// gradient plus a few random-phase sinusoids.
struct Texture {
    base: [f64; 3],
    grad_dir: (f64, f64),
    bands: Vec<(f64, f64, f64, f64)>, // (fx, fy, phase, amplitude)
    band_freq: f64,
}

impl Texture {
    fn sample(spec: &SyntheticSceneSpec, parent0: usize, rng: &mut Stream) -> Texture {
        // Background hue offset from the object palette; muted saturation.
        let hue = (parent0 as f64 + 0.5) / spec.n_p as f64;
        let base = hsv_to_rgb(hue, 0.35, 0.55);
        let theta = std::f64::consts::PI * parent0 as f64 / spec.n_p as f64;
        let band_freq = 1.5 + parent0 as f64;
        let bands = (0..4)
            .map(|_| {
                let ang = rng.uniform(0.0, std::f64::consts::TAU);
                let freq = rng.uniform(0.5, 1.5) * band_freq;
                (
                    freq * ang.cos(),
                    freq * ang.sin(),
                    rng.uniform(0.0, std::f64::consts::TAU),
                    rng.uniform(0.02, 0.08),
                )
            })
            .collect();
        Texture {
            base,
            grad_dir: (theta.cos(), theta.sin()),
            bands,
            band_freq,
        }
    }

    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let g = 0.25 * (self.grad_dir.0 * (u - 0.5) + self.grad_dir.1 * (v - 0.5));
        let stripes =
            0.06 * (std::f64::consts::TAU * self.band_freq * (self.grad_dir.0 * v - self.grad_dir.1 * u)).sin();
        let mut noise = 0.0;
        for (fx, fy, phase, amp) in &self.bands {
            noise += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
        }
        let shift = g + stripes + noise;
        [
            (self.base[0] + shift).clamp(0.0, 1.0),
            (self.base[1] + shift).clamp(0.0, 1.0),
            (self.base[2] + shift).clamp(0.0, 1.0),
        ]
    }
}

#[derive(Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    rot: f64,
}

fn inside_shape(kind: usize, pose: &Pose, x: f64, y: f64) -> bool {
    let dx = x - pose.cx;
    let dy = y - pose.cy;
    let (sin, cos) = pose.rot.sin_cos();
    let u = cos * dx + sin * dy;
    let v = -sin * dx + cos * dy;
    match kind {
        0 => (u / pose.a).powi(2) + (v / pose.b).powi(2) <= 1.0,
        1 => {
            // Isoceles triangle: apex up, base down.
            if v < -pose.b || v > pose.b {
                return false;
            }
            let half_width = pose.a * (v + pose.b) / (2.0 * pose.b);
            u.abs() <= half_width
        }
        _ => u.abs() <= pose.a && v.abs() <= pose.b,
    }
}

/// Render all scenes and the matching pure-background set. Deterministic
/// under the stream's seed.
pub fn generate_synthetic(
    spec: &SyntheticSceneSpec,
    count: usize,
    rng: &mut Stream,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    let side = spec.image_size;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let parent0 = rng.below(spec.n_p);
        let color0 = rng.below(spec.colors_per_shape);
        let child0 = parent0 * spec.colors_per_shape + color0;
        let texture = Texture::sample(spec, parent0, rng);
        let shape_kind = parent0 % 3;
        let aspect = 1.0 + 0.6 * (parent0 / 3) as f64;

        // Rejection-sample the pose until the mask fraction is in bounds.
        let mut chosen: Option<(Pose, Vec<u8>)> = None;
        for _ in 0..200 {
            let scale = rng.uniform(0.18, 0.36);
            let pose = Pose {
                cx: rng.uniform(0.32, 0.68),
                cy: rng.uniform(0.32, 0.68),
                a: scale * aspect,
                b: scale / aspect.sqrt(),
                rot: rng.uniform(0.0, std::f64::consts::PI),
            };
            let mut mask = vec![0u8; side * side];
            let mut on = 0usize;
            for y in 0..side {
                for x in 0..side {
                    let u = (x as f64 + 0.5) / side as f64;
                    let v = (y as f64 + 0.5) / side as f64;
                    if inside_shape(shape_kind, &pose, u, v) {
                        mask[y * side + x] = 1;
                        on += 1;
                    }
                }
            }
            let frac = on as f64 / (side * side) as f64;
            if frac >= spec.fg_fraction.0 && frac <= spec.fg_fraction.1 {
                chosen = Some((pose, mask));
                break;
            }
        }
        let (pose, mask) = chosen.ok_or_else(|| {
            Error::Dataset(format!(
                "could not place an object within fraction bounds for scene {i}"
            ))
        })?;

        // Every child class gets its own hue (globally distinct, not just
        // within a parent); light shading keeps the style encoder from
        // collapsing to a constant.
        let hue = child0 as f64 / spec.n_c() as f64;
        let sat = 0.9 + rng.uniform(-0.05, 0.05);
        let val = 0.85 + rng.uniform(-0.05, 0.05);
        let rgb = hsv_to_rgb(hue, sat.clamp(0.0, 1.0), val.clamp(0.0, 1.0));
        let shade_dir = rng.uniform(0.0, std::f64::consts::TAU);

        let mut image = vec![0u8; 3 * side * side];
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 + 0.5) / side as f64;
                let v = (y as f64 + 0.5) / side as f64;
                let px = if mask[y * side + x] == 1 {
                    let shade = 0.15
                        * ((u - pose.cx) * shade_dir.cos() + (v - pose.cy) * shade_dir.sin())
                        / pose.a.max(pose.b);
                    [
                        (rgb[0] + shade).clamp(0.0, 1.0),
                        (rgb[1] + shade).clamp(0.0, 1.0),
                        (rgb[2] + shade).clamp(0.0, 1.0),
                    ]
                } else {
                    texture.at(u, v)
                };
                for c in 0..3 {
                    image[(c * side + y) * side + x] = (px[c] * 255.0).round() as u8;
                }
            }
        }
        scenes.push(SceneRecord {
            image,
            mask,
            phi_p: parent0 + 1,
            phi_c: child0 + 1,
        });
    }

    let mut backgrounds = Vec::with_capacity(count);
    for i in 0..count {
        let parent0 = rng.below(spec.n_p);
        let texture = Texture::sample(spec, parent0, rng);
        let mut image = vec![0u8; 3 * side * side];
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 + 0.5) / side as f64;
                let v = (y as f64 + 0.5) / side as f64;
                let px = texture.at(u, v);
                for c in 0..3 {
                    image[(c * side + y) * side + x] = (px[c] * 255.0).round() as u8;
                }
            }
        }
        backgrounds.push(ImageRecord {
            pixels: image,
            source: format!("synthetic/bg/{i}"),
        });
    }

    Ok(SyntheticDataset {
        spec: spec.clone(),
        scenes,
        backgrounds,
    })
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

fn save_rgb(path: &Path, pixels: &[u8], side: usize) -> Result<()> {
    let mut buf = image::RgbImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            let px = [
                pixels[y * side + x],
                pixels[(side + y) * side + x],
                pixels[(2 * side + y) * side + x],
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn save_mask(path: &Path, mask: &[u8], side: usize) -> Result<()> {
    let mut buf = image::GrayImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            buf.put_pixel(x as u32, y as u32, image::Luma([mask[y * side + x] * 255]));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn load_rgb(path: &Path, side: usize) -> Result<Vec<u8>> {
    let img = image::open(path)?;
    let (w, h) = img.dimensions();
    if w as usize != side || h as usize != side {
        return Err(Error::Dataset(format!(
            "{}: expected {side}x{side}, found {w}x{h}",
            path.display()
        )));
    }
    let rgb = img.to_rgb8();
    let mut out = vec![0u8; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let px = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[(c * side + y) * side + x] = px[c];
            }
        }
    }
    Ok(out)
}

fn load_mask(path: &Path, side: usize) -> Result<Vec<u8>> {
    let img = image::open(path)?.to_luma8();
    if img.width() as usize != side || img.height() as usize != side {
        return Err(Error::Dataset(format!("{}: mask size mismatch", path.display())));
    }
    Ok(img.pixels().map(|p| u8::from(p[0] >= 128)).collect())
}

/// Write a synthetic dataset (including eval ground truth) to `root`.
pub fn write_dataset(ds: &SyntheticDataset, root: &Path) -> Result<()> {
    let side = ds.spec.image_size;
    std::fs::create_dir_all(root.join("objects"))?;
    std::fs::create_dir_all(root.join("backgrounds"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(root.join("manifest.tsv"))?);
    for (i, s) in ds.scenes.iter().enumerate() {
        let img_rel = format!("objects/obj_{i:05}.png");
        let mask_rel = format!("masks/obj_{i:05}.png");
        save_rgb(&root.join(&img_rel), &s.image, side)?;
        save_mask(&root.join(&mask_rel), &s.mask, side)?;
        writeln!(manifest, "object\t{img_rel}\t{}\t{}\t{mask_rel}", s.phi_p, s.phi_c)?;
    }
    for (i, b) in ds.backgrounds.iter().enumerate() {
        let rel = format!("backgrounds/bg_{i:05}.png");
        save_rgb(&root.join(&rel), &b.pixels, side)?;
        writeln!(manifest, "background\t{rel}\t\t\t")?;
    }
    Ok(())
}

/// A dataset loaded from disk; labels are present where the manifest has
/// them.
pub struct LoadedDataset {
    pub image_size: usize,
    pub split: DatasetSplit,
    pub eval: Vec<EvalRecord>,
    /// Labeled training-portion images (0-based child class), available for
    /// evaluation-side tooling only; the training split never carries them.
    pub labeled_train: Vec<(Vec<u8>, usize)>,
}

/// Read a dataset root. `eval_fraction` of the labeled object records (the
/// trailing ones) become the eval set when ground truth is available.
pub fn load_dataset(root: &Path, image_size: usize, eval_count: usize) -> Result<LoadedDataset> {
    let manifest_path = root.join("manifest.tsv");
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let mut objects: Vec<(String, Option<(usize, usize, String)>)> = Vec::new();
    let mut backgrounds = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(Error::Dataset(format!("bad manifest line: {line}")));
        }
        match cols[0] {
            "object" => {
                let gt = if cols.len() >= 5 && !cols[2].is_empty() && !cols[4].is_empty() {
                    let phi_p: usize = cols[2]
                        .parse()
                        .map_err(|_| Error::Dataset(format!("bad phi_p in: {line}")))?;
                    let phi_c: usize = cols[3]
                        .parse()
                        .map_err(|_| Error::Dataset(format!("bad phi_c in: {line}")))?;
                    Some((phi_p, phi_c, cols[4].to_string()))
                } else {
                    None
                };
                objects.push((cols[1].to_string(), gt));
            }
            "background" => backgrounds.push(cols[1].to_string()),
            other => return Err(Error::Dataset(format!("unknown record kind `{other}`"))),
        }
    }
    if eval_count >= objects.len() {
        return Err(Error::Dataset(format!(
            "eval_count {eval_count} leaves no training objects ({} total)",
            objects.len()
        )));
    }
    let train_n = objects.len() - eval_count;
    let mut split = DatasetSplit {
        image_size,
        ..Default::default()
    };
    let mut eval = Vec::new();
    let mut labeled_train = Vec::new();
    for (i, (rel, gt)) in objects.iter().enumerate() {
        let pixels = load_rgb(&root.join(rel), image_size)?;
        if i < train_n {
            if let Some((_, phi_c, _)) = gt {
                labeled_train.push((pixels.clone(), phi_c - 1));
            }
            split.objects.push(ImageRecord {
                pixels,
                source: rel.clone(),
            });
        } else {
            let Some((phi_p, phi_c, mask_rel)) = gt else {
                return Err(Error::Dataset(format!(
                    "eval record {rel} lacks ground truth; reduce eval_count"
                )));
            };
            eval.push(EvalRecord {
                image: pixels,
                mask: load_mask(&root.join(mask_rel), image_size)?,
                phi_p: *phi_p,
                phi_c: *phi_c,
            });
        }
    }
    for rel in &backgrounds {
        split.backgrounds.push(ImageRecord {
            pixels: load_rgb(&root.join(rel), image_size)?,
            source: rel.clone(),
        });
    }
    split.validate()?;
    Ok(LoadedDataset {
        image_size,
        split,
        eval,
        labeled_train,
    })
}

// ---------------------------------------------------------------------------
// Real dataset ingestion
// ---------------------------------------------------------------------------

/// One bounding-box annotation (pixel coordinates in the source image).
#[derive(Clone, Copy, Debug)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Read `annotations.tsv`: `relative/path<TAB>x<TAB>y<TAB>w<TAB>h`.
pub fn read_bbox_annotations(path: &Path) -> Result<Vec<(String, BoundingBox)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Dataset(format!("bad annotation line: {line}")));
        }
        let nums: Vec<u32> = cols[1..]
            .iter()
            .map(|c| c.parse().map_err(|_| Error::Dataset(format!("bad number in: {line}"))))
            .collect::<Result<_>>()?;
        out.push((
            cols[0].to_string(),
            BoundingBox {
                x: nums[0],
                y: nums[1],
                w: nums[2],
                h: nums[3],
            },
        ));
    }
    Ok(out)
}

fn center_crop_resize(img: &image::DynamicImage, side: usize) -> Vec<u8> {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    let cropped = img.crop_imm((w - s) / 2, (h - s) / 2, s, s);
    let resized = cropped.resize_exact(side as u32, side as u32, image::imageops::FilterType::Triangle);
    let rgb = resized.to_rgb8();
    let mut out = vec![0u8; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let px = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[(c * side + y) * side + x] = px[c];
            }
        }
    }
    out
}

/// Split real images 80/20 by source image; the large part becomes the
/// object subset (center-cropped and resized), and from the small part the
/// regions around each bounding box become background patches. Boxes are
/// never used for anything else, and no source appears in both subsets.
pub fn ingest_real(
    images_dir: &Path,
    annotations: &[(String, BoundingBox)],
    image_size: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    const MIN_PATCH_SIDE: u32 = 32;
    if annotations.is_empty() {
        return Err(Error::Dataset("no annotated images".into()));
    }
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    let mut rng = Stream::from_seed_u64(seed ^ 0x8ea1_1e57);
    rng.shuffle(&mut order);
    let n_objects = (annotations.len() * 8) / 10;
    if n_objects == 0 {
        return Err(Error::Dataset("too few images for an 80/20 split".into()));
    }

    let mut split = DatasetSplit {
        image_size,
        ..Default::default()
    };
    for (rank, &idx) in order.iter().enumerate() {
        let (rel, bbox) = &annotations[idx];
        let path = images_dir.join(rel);
        let img = match image::open(&path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        if rank < n_objects {
            split.objects.push(ImageRecord {
                pixels: center_crop_resize(&img, image_size),
                source: rel.clone(),
            });
        } else {
            // Up to four regions around the box: left, right, above, below.
            let (w, h) = img.dimensions();
            let regions = [
                (0, 0, bbox.x, h),
                (bbox.x.saturating_add(bbox.w), 0, w.saturating_sub(bbox.x + bbox.w), h),
                (0, 0, w, bbox.y),
                (0, bbox.y.saturating_add(bbox.h), w, h.saturating_sub(bbox.y + bbox.h)),
            ];
            for (i, &(rx, ry, rw, rh)) in regions.iter().enumerate() {
                if rw >= MIN_PATCH_SIDE && rh >= MIN_PATCH_SIDE {
                    let patch = img.crop_imm(rx, ry, rw, rh);
                    split.backgrounds.push(ImageRecord {
                        pixels: center_crop_resize(&patch, image_size),
                        source: format!("{rel}#patch{i}"),
                    });
                }
            }
        }
    }
    if split.backgrounds.is_empty() {
        return Err(Error::Dataset(
            "no background patches could be cut; need larger margins around boxes".into(),
        ));
    }
    split.validate()?;
    Ok(split)
}
