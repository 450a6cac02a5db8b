//! Checkpoint directory format.
//!
//! ```text
//! <dir>/manifest.json      iteration, phase flags, rng states, data-stream
//!                          position, optimizer step counts, and one entry
//!                          (name, group, shape, dtype, file) per parameter
//! <dir>/params/<group>/<name>.bin        raw little-endian values
//! <dir>/opt/<group>/<name>.{m,v}.bin     Adam moment buffers
//! ```
//!
//! Loading validates every shape against the freshly built model, so a
//! checkpoint from a different configuration is rejected rather than
//! silently misread.

use std::path::{Path, PathBuf};

use autograd::{Adam, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::rng::StreamState;

#[derive(Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Serialize, Deserialize)]
pub struct OptEntry {
    pub group: String,
    pub step_count: u64,
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub iteration: u64,
    pub phase: u8,
    pub bank_paths: Vec<String>,
    pub master_seed: u64,
    pub rng: Vec<(String, StreamState)>,
    pub stream_epoch: u64,
    pub stream_pos: usize,
    pub hp: HyperParams,
    pub params: Vec<ParamEntry>,
    pub opt: Vec<OptEntry>,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_blob(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, shape: &[usize]) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| err(path, e.to_string()))?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(err(path, format!("expected {} bytes, found {}", n * 4, bytes.len())));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(shape, data))
}

/// One named parameter group to be saved or restored.
pub struct Group<'a> {
    pub name: String,
    pub params: &'a ParamSet<f32>,
    pub opt: Option<&'a Adam<f32>>,
}

pub struct SaveSpec<'a> {
    pub iteration: u64,
    pub phase: u8,
    pub bank_paths: Vec<String>,
    pub master_seed: u64,
    pub rng: Vec<(String, StreamState)>,
    pub stream_epoch: u64,
    pub stream_pos: usize,
    pub hp: HyperParams,
    pub groups: Vec<Group<'a>>,
}

pub fn save(dir: &Path, spec: &SaveSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        iteration: spec.iteration,
        phase: spec.phase,
        bank_paths: spec.bank_paths.clone(),
        master_seed: spec.master_seed,
        rng: spec.rng.clone(),
        stream_epoch: spec.stream_epoch,
        stream_pos: spec.stream_pos,
        hp: spec.hp.clone(),
        params: Vec::new(),
        opt: Vec::new(),
    };
    for group in &spec.groups {
        let pdir = dir.join("params").join(&group.name);
        std::fs::create_dir_all(&pdir)?;
        for p in group.params.iter() {
            let file = format!("params/{}/{}.bin", group.name, p.name());
            write_blob(&dir.join(&file), &p.value())?;
            manifest.params.push(ParamEntry {
                name: p.name().to_string(),
                group: group.name.clone(),
                shape: p.shape(),
                dtype: "f32".into(),
                file,
            });
        }
        if let Some(opt) = group.opt {
            let odir = dir.join("opt").join(&group.name);
            std::fs::create_dir_all(&odir)?;
            for (name, m, v) in opt.export_state(group.params) {
                write_blob(&odir.join(format!("{name}.m.bin")), &m)?;
                write_blob(&odir.join(format!("{name}.v.bin")), &v)?;
            }
            manifest.opt.push(OptEntry {
                group: group.name.clone(),
                step_count: opt.step_count(),
            });
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| err(dir, format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(&path, format!("bad manifest: {e}")))
}

/// Restore one group's parameter values, validating names and shapes.
pub fn load_group(dir: &Path, manifest: &Manifest, group: &str, params: &ParamSet<f32>) -> Result<()> {
    for p in params.iter() {
        let entry = manifest
            .params
            .iter()
            .find(|e| e.group == group && e.name == p.name())
            .ok_or_else(|| err(dir, format!("missing parameter {group}/{}", p.name())))?;
        if entry.shape != p.shape() {
            return Err(err(
                dir,
                format!(
                    "shape mismatch for {group}/{}: checkpoint {:?}, model {:?}",
                    p.name(),
                    entry.shape,
                    p.shape()
                ),
            ));
        }
        p.set(read_blob(&dir.join(&entry.file), &entry.shape)?);
    }
    Ok(())
}

/// Restore one group's optimizer state (moments plus step counter).
pub fn load_opt(
    dir: &Path,
    manifest: &Manifest,
    group: &str,
    params: &ParamSet<f32>,
    opt: &mut Adam<f32>,
) -> Result<()> {
    let Some(entry) = manifest.opt.iter().find(|e| e.group == group) else {
        return Ok(()); // group had no optimizer state yet
    };
    let odir = dir.join("opt").join(group);
    let mut state = Vec::new();
    for p in params.iter() {
        let m_path = odir.join(format!("{}.m.bin", p.name()));
        if m_path.exists() {
            let shape = p.shape();
            let m = read_blob(&m_path, &shape)?;
            let v = read_blob(&odir.join(format!("{}.v.bin", p.name())), &shape)?;
            state.push((p.name().to_string(), m, v));
        }
    }
    opt.restore_state(params, entry.step_count, &state);
    Ok(())
}

/// Path helper used by run directories.
pub fn checkpoint_dir(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter_{iteration:08}"))
}
