//! Model checkpoints.
//!
//! A checkpoint is a directory holding
//!
//! * `manifest.json`: the architecture, the ordered list of parameter
//!   tensors (name and shape) and a free-form `meta` object;
//! * `params.bin`: the parameter tensors as consecutive f64 TRTE tensors in
//!   manifest order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Mha, MhaConfig, Mlp, MlpConfig, NnError, Params};
use crate::tensor::{read_tensor, write_tensor, DType, TensorError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "treg-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backbone", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Mha(MhaConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: ModelSpec,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("params: {0}")]
    Tensor(#[from] TensorError),
    #[error("not a checkpoint manifest (format {0:?})")]
    Format(String),
    #[error("tensor {index}: expected {expected}, found {found}")]
    Mismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("{0}")]
    Model(#[from] NnError),
}

/// Architecture-tagged model restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Mlp(Mlp),
    Mha(Mha),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save<P: Params>(
    dir: &Path,
    spec: &ModelSpec,
    params: &P,
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::new();
    let bin_path = dir.join(PARAMS_FILE);
    let mut bin = BufWriter::new(File::create(&bin_path).map_err(io_err(&bin_path))?);
    let mut status = Ok(());
    params.visit(&mut |name, shape, data| {
        if status.is_err() {
            return;
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
        status = write_tensor(&mut bin, DType::F64, &dims, data);
    });
    status?;
    bin.flush().map_err(io_err(&bin_path))?;

    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: 1,
        model: spec.clone(),
        tensors,
        meta,
    };
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&man_path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(CheckpointError::Format(manifest.format));
    }
    Ok(manifest)
}

/// Overwrites the parameters of `params` with the stored tensors. Names and
/// shapes must match exactly and in order.
pub fn load_into<P: Params>(dir: &Path, manifest: &Manifest, params: &mut P) -> Result<(), CheckpointError> {
    let path = dir.join(PARAMS_FILE);
    let mut r = BufReader::new(File::open(&path).map_err(io_err(&path))?);
    let mut stored = Vec::with_capacity(manifest.tensors.len());
    for _ in &manifest.tensors {
        stored.push(read_tensor(&mut r)?);
    }

    let mut expected = Vec::new();
    params.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    let describe = |name: &str, shape: &[usize]| format!("{name} {shape:?}");
    if expected.len() != manifest.tensors.len() {
        return Err(CheckpointError::Mismatch {
            index: expected.len().min(manifest.tensors.len()),
            expected: format!("{} tensors", expected.len()),
            found: format!("{} tensors", manifest.tensors.len()),
        });
    }
    for (i, ((name, shape), (entry, t))) in expected
        .iter()
        .zip(manifest.tensors.iter().zip(&stored))
        .enumerate()
    {
        let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
        if *name != entry.name || *shape != entry.shape || dims != entry.shape {
            return Err(CheckpointError::Mismatch {
                index: i,
                expected: describe(name, shape),
                found: describe(&entry.name, &dims),
            });
        }
    }

    let mut k = 0;
    params.visit_mut(&mut |_, v| {
        v.copy_from_slice(&stored[k].data);
        k += 1;
    });
    Ok(())
}

pub fn load(dir: &Path) -> Result<(LoadedModel, Manifest), CheckpointError> {
    let manifest = read_manifest(dir)?;
    let model = match &manifest.model {
        ModelSpec::Mlp(cfg) => {
            let mut m = Mlp::new(cfg)?;
            load_into(dir, &manifest, &mut m)?;
            LoadedModel::Mlp(m)
        }
        ModelSpec::Mha(cfg) => {
            let mut m = Mha::new(cfg)?;
            load_into(dir, &manifest, &mut m)?;
            LoadedModel::Mha(m)
        }
    };
    Ok((model, manifest))
}
