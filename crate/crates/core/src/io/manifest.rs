use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{invalid, Result};

/// How registration pairs are formed from a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Use `pairs` as written.
    Listed,
    /// Every ordered pair of distinct `images`.
    AllPairs,
    /// The first image is the moving atlas for every other image.
    AtlasToSubject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_mask: Option<PathBuf>,
}

/// JSON dataset description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub pairing: Pairing,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = serde_json::from_slice(&super::read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut m.images {
            fix(&mut r.image);
            r.mask.as_mut().map(fix);
        }
        for r in &mut m.pairs {
            fix(&mut r.moving);
            fix(&mut r.fixed);
            r.moving_mask.as_mut().map(fix);
            r.fixed_mask.as_mut().map(fix);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Expands the pairing mode into explicit pairs.
    pub fn resolve(&self) -> Result<Vec<PairRecord>> {
        let pair = |m: &ImageRecord, f: &ImageRecord| PairRecord {
            moving: m.image.clone(),
            fixed: f.image.clone(),
            moving_mask: m.mask.clone(),
            fixed_mask: f.mask.clone(),
        };
        let pairs: Vec<PairRecord> = match self.pairing {
            Pairing::Listed => self.pairs.clone(),
            Pairing::AllPairs => {
                let n = self.images.len();
                (0..n)
                    .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                    .map(|(i, j)| pair(&self.images[i], &self.images[j]))
                    .collect()
            }
            Pairing::AtlasToSubject => match self.images.split_first() {
                Some((atlas, rest)) => rest.iter().map(|s| pair(atlas, s)).collect(),
                None => Vec::new(),
            },
        };
        if pairs.is_empty() {
            return Err(invalid!("manifest yields no registration pairs"));
        }
        Ok(pairs)
    }
}
