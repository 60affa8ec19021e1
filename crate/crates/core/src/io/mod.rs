//! Files, datasets and configuration.

mod checkpoint;
mod config;
mod manifest;
mod pgm;
mod synthetic;
mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{parse_config, ConfigMap};
pub use manifest::{DatasetManifest, ImageRecord, PairRecord, Pairing};
pub use pgm::{read_pgm, write_pgm};
pub use synthetic::{gen_synthetic, generate_pairs, load_image, load_pairs, ImagePair, SyntheticConfig};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Reads a whole file, naming it in the error.
pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| crate::error::Error::Read { path: path.to_path_buf(), source })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
