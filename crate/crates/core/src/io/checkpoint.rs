use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, write_tensor};
use super::write_atomic;
use crate::error::{invalid, Result};
use crate::model::{ModelParams, NetVariant};
use crate::tensor::{AnyTensor, Real, Tensor};

/// Network configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<R> {
    pub variant: NetVariant,
    pub params: ModelParams<R>,
    /// Completed training epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    variant: NetVariant,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
}

fn to_any<R: Real>(t: &Tensor<R>) -> AnyTensor {
    if R::DTYPE == crate::tensor::Dtype::Real32 {
        AnyTensor::Real32(t.cast())
    } else {
        AnyTensor::Real64(t.cast())
    }
}

/// Writes `manifest.json` and one tensor file per parameter into `dir`.
/// The manifest is written last, so a directory with a readable manifest
/// always holds a complete checkpoint.
pub fn save_checkpoint<R: Real>(dir: &Path, ckpt: &Checkpoint<R>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (i, (name, t)) in ckpt.params.iter().enumerate() {
        let file = format!("p{i:03}.blt");
        write_tensor(&dir.join(&file), &to_any(t))?;
        tensors.push(TensorEntry { name: name.to_string(), file });
    }
    let manifest = Manifest { variant: ckpt.variant.clone(), epoch: ckpt.epoch, tensors };
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// Reads a checkpoint, converting parameters to `R`.
pub fn load_checkpoint<R: Real>(dir: &Path) -> Result<Checkpoint<R>> {
    let path = dir.join("manifest.json");
    let bytes = super::read_file(&path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    manifest.variant.validate()?;
    let named = manifest
        .tensors
        .iter()
        .map(|e| {
            let t = match read_tensor(&dir.join(&e.file))? {
                AnyTensor::Real32(t) => t.cast(),
                AnyTensor::Real64(t) => t.cast(),
                other => return Err(invalid!("parameter {} has dtype {}", e.name, other.dtype().name())),
            };
            Ok((e.name.clone(), t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        params: ModelParams::from_named(&manifest.variant, named)?,
        variant: manifest.variant,
        epoch: manifest.epoch,
    })
}
