//! Synthetic registration pairs: soft shapes with four labels, deformed by
//! the exponential of a random band-limited velocity field.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::{DatasetManifest, PairRecord, Pairing};
use super::tensor_file::{read_tensor, write_tensor};
use crate::deform::{exp_svf, warp, VelocityField};
use crate::error::{ensure_same_shape, invalid, Result};
use crate::fourier::{center_shift, center_unshift, dft_real, idft, trailing_axes, zero_nyquist};
use crate::metrics::{warp_labels, LabelMask};
use crate::model::SVF_STEPS;
use crate::tensor::{AnyTensor, Tensor};

/// Band limit of the generated velocities.
pub const SVF_REDUCTION: usize = 8;

/// Gaussian width, in frequency bins, of the velocity spectrum weights.
const SVF_BANDWIDTH: f64 = 1.0;

/// Extra weight on the mean velocity, so most voxels move by a similar amount.
const DC_BOOST: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_pairs: usize,
    /// Extra pairs written to a separate test manifest.
    pub test_pairs: usize,
    pub shape: Vec<usize>,
    /// Largest velocity magnitude in voxels.
    pub deform_scale: f64,
}

/// Moving/fixed images `(1, spatial...)` with optional label maps.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub moving: Tensor<f64>,
    pub fixed: Tensor<f64>,
    pub moving_mask: Option<LabelMask>,
    pub fixed_mask: Option<LabelMask>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

enum Shape {
    Disc { center: Vec<f64>, radius: f64 },
    Ring { center: Vec<f64>, radius: f64, width: f64 },
    Bar { center: Vec<f64>, half_len: f64, half_width: f64, angle: f64 },
}

impl Shape {
    /// Signed distance in voxels, negative inside.
    fn sdf(&self, p: &[f64]) -> f64 {
        let dist = |c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        match self {
            Shape::Disc { center, radius } => dist(center) - radius,
            Shape::Ring { center, radius, width } => (dist(center) - radius).abs() - width / 2.0,
            Shape::Bar { center, half_len, half_width, angle } => {
                let d: Vec<f64> = p.iter().zip(center).map(|(a, b)| a - b).collect();
                let (s, c) = angle.sin_cos();
                let along = c * d[0] + s * d[1];
                let mut across_sq = (-s * d[0] + c * d[1]).powi(2);
                across_sq += d[2..].iter().map(|x| x * x).sum::<f64>();
                let qa = along.abs() - half_len;
                let qb = across_sq.sqrt() - half_width;
                qa.max(0.0).hypot(qb.max(0.0)) + qa.max(qb).min(0.0)
            }
        }
    }
}

/// Random template: a ring, a large disc, a small disc and a thin bar.
fn template(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Tensor<f64>, LabelMask) {
    let min_side = *shape.iter().min().unwrap() as f64;
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let mut pick = |margin: f64| -> Vec<f64> {
        shape.iter().map(|&n| rng.gen_range(margin..n as f64 - margin)).collect()
    };
    let center = pick(0.3 * min_side);
    let ring_r = 0.24 * min_side;
    let shapes = [
        (1, 1.0, Shape::Ring { center: center.clone(), radius: ring_r, width: 0.03 * min_side }),
        (2, 0.75, Shape::Disc { center: pick(0.2 * min_side), radius: 0.05 * min_side }),
        (3, 0.5, Shape::Disc { center: pick(0.15 * min_side), radius: 0.035 * min_side }),
        (
            4,
            0.85,
            Shape::Bar {
                center: pick(0.25 * min_side),
                half_len: 0.15 * min_side,
                half_width: 0.015 * min_side,
                angle,
            },
        ),
    ];
    let mut image = Tensor::zeros(shape);
    let mut labels = Tensor::zeros(shape);
    let strides = crate::tensor::strides(shape);
    for idx in 0..image.numel() {
        let p: Vec<f64> = strides.iter().zip(shape).map(|(&s, &n)| ((idx / s) % n) as f64).collect();
        let mut value = 0.0;
        let mut label = 0;
        for (l, level, s) in &shapes {
            let d = s.sdf(&p);
            let cover = sigmoid(-d / 0.6);
            value = value * (1.0 - cover) + level * cover;
            if d < 0.0 {
                label = *l;
            }
        }
        image.data_mut()[idx] = value;
        labels.data_mut()[idx] = label;
    }
    let image = image.unsqueeze();
    (image, LabelMask::new(labels).expect("labels are non-negative"))
}

/// Random smooth velocity with spectrum inside the `SVF_REDUCTION` band and
/// `max |v| = scale`.
fn random_velocity(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Result<VelocityField<f64>> {
    let rank = shape.len();
    let small: Vec<usize> = shape.iter().map(|n| n / SVF_REDUCTION).collect();
    let mut low_shape = vec![rank];
    low_shape.extend_from_slice(&small);
    let low = Tensor::from_fn(&low_shape, |_| rng.sample::<f64, _>(StandardNormal));
    let axes = trailing_axes(rank + 1, rank);
    let mut patch = center_shift(&dft_real(&low, &axes)?, &axes);
    // Radially decaying weights keep the field smooth; they are symmetric
    // about DC so the field stays real.
    let inner: usize = small.iter().product();
    let weights: Vec<f64> = (0..inner)
        .map(|i| {
            let mut r2 = 0.0;
            let mut rem = i;
            for k in (0..rank).rev() {
                let f = (rem % small[k]) as f64 - (small[k] / 2) as f64;
                rem /= small[k];
                r2 += f * f;
            }
            let w = (-r2 / (2.0 * SVF_BANDWIDTH * SVF_BANDWIDTH)).exp();
            if r2 == 0.0 { DC_BOOST * w } else { w }
        })
        .collect();
    for chunk in patch.data_mut().chunks_mut(inner) {
        for (c, w) in chunk.iter_mut().zip(&weights) {
            *c = c.scale(*w);
        }
    }
    let patch = zero_nyquist(&patch, rank);
    let full = crate::fourier::pad_block(&patch, shape)?;
    let v = idft(&center_unshift(&full, &axes), &axes)?.real();
    let peak = v.max_abs();
    let v = if peak > 0.0 { v.scale(scale / peak) } else { v };
    VelocityField::new(v)
}

/// Generates `cfg.n_pairs + cfg.test_pairs` pairs in memory. Pair `i` only
/// depends on `(cfg.seed, i)`.
pub fn generate_pairs(cfg: &SyntheticConfig) -> Result<Vec<ImagePair>> {
    if !(cfg.shape.len() == 2 || cfg.shape.len() == 3) {
        return Err(invalid!("synthetic data needs 2 or 3 spatial axes, got {:?}", cfg.shape));
    }
    if let Some(n) = cfg.shape.iter().find(|&&n| n == 0 || n % SVF_REDUCTION != 0) {
        return Err(invalid!("axis length {n} is not divisible by {SVF_REDUCTION}"));
    }
    if !(cfg.deform_scale >= 0.0) {
        return Err(invalid!("deform scale must be non-negative"));
    }
    (0..cfg.n_pairs + cfg.test_pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
            let (image, mask) = template(&mut rng, &cfg.shape);
            let v = random_velocity(&mut rng, &cfg.shape, cfg.deform_scale)?;
            let phi = exp_svf(&v, SVF_STEPS)?;
            Ok(ImagePair {
                fixed: warp(&image, &phi)?,
                fixed_mask: Some(warp_labels(&mask, &phi)?),
                moving: image,
                moving_mask: Some(mask),
            })
        })
        .collect()
}

/// Writes the generated pairs under `dir` with `train.json` and `test.json`
/// manifests; returns their paths.
pub fn gen_synthetic(dir: &Path, cfg: &SyntheticConfig) -> Result<(PathBuf, PathBuf)> {
    let pairs = generate_pairs(cfg)?;
    std::fs::create_dir_all(dir.join("pairs"))?;
    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let name = |what: &str| PathBuf::from(format!("pairs/{i:04}_{what}.blt"));
        let rec = PairRecord {
            moving: name("moving"),
            fixed: name("fixed"),
            moving_mask: Some(name("moving_mask")),
            fixed_mask: Some(name("fixed_mask")),
        };
        write_tensor(&dir.join(&rec.moving), &AnyTensor::Real64(p.moving.clone()))?;
        write_tensor(&dir.join(&rec.fixed), &AnyTensor::Real64(p.fixed.clone()))?;
        for (path, mask) in [(&rec.moving_mask, &p.moving_mask), (&rec.fixed_mask, &p.fixed_mask)] {
            if let (Some(path), Some(mask)) = (path, mask) {
                write_tensor(&dir.join(path), &AnyTensor::Int32(mask.labels().clone()))?;
            }
        }
        records.push(rec);
    }
    let test = records.split_off(cfg.n_pairs);
    let (train_path, test_path) = (dir.join("train.json"), dir.join("test.json"));
    for (path, pairs) in [(&train_path, records), (&test_path, test)] {
        DatasetManifest { pairing: Pairing::Listed, images: vec![], pairs }.save(path)?;
    }
    Ok((train_path, test_path))
}

fn read_image(path: &Path) -> Result<Tensor<f64>> {
    let t = match read_tensor(path)? {
        AnyTensor::Real32(t) => t.cast(),
        AnyTensor::Real64(t) => t,
        other => return Err(invalid!("{}: expected a real image, found {}", path.display(), other.dtype().name())),
    };
    // Bare spatial arrays get a channel axis.
    Ok(if t.ndim() > 2 && t.shape()[0] == 1 { t } else { t.unsqueeze() })
}

fn read_mask(path: &Path) -> Result<LabelMask> {
    match read_tensor(path)? {
        AnyTensor::Int32(t) => LabelMask::new(t),
        other => Err(invalid!("{}: expected int32 labels, found {}", path.display(), other.dtype().name())),
    }
}

/// Reads a single-channel image from a `.pgm` or tensor file.
pub fn load_image(path: &Path) -> Result<Tensor<f64>> {
    if path.extension().is_some_and(|e| e == "pgm") {
        super::pgm::read_pgm(path)
    } else {
        read_image(path)
    }
}

/// Loads every pair of a manifest, checking that shapes agree.
pub fn load_pairs(manifest: &Path) -> Result<Vec<ImagePair>> {
    let records = DatasetManifest::load(manifest)?.resolve()?;
    let mut out = Vec::with_capacity(records.len());
    let mut spatial: Option<Vec<usize>> = None;
    for r in records {
        let pair = ImagePair {
            moving: load_image(&r.moving)?,
            fixed: load_image(&r.fixed)?,
            moving_mask: r.moving_mask.as_deref().map(read_mask).transpose()?,
            fixed_mask: r.fixed_mask.as_deref().map(read_mask).transpose()?,
        };
        let s = pair.moving.shape()[1..].to_vec();
        ensure_same_shape("load_pairs", &s, &pair.fixed.shape()[1..])?;
        for m in pair.moving_mask.iter().chain(&pair.fixed_mask) {
            ensure_same_shape("load_pairs", &s, m.shape())?;
        }
        if let Some(prev) = &spatial {
            ensure_same_shape("load_pairs", prev, &s)?;
        }
        spatial = Some(s);
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::FreqMask;
    use crate::metrics::dice;

    fn cfg(scale: f64) -> SyntheticConfig {
        SyntheticConfig { seed: 3, n_pairs: 2, test_pairs: 1, shape: vec![48, 48], deform_scale: scale }
    }

    #[test]
    fn zero_deformation_gives_identical_pair() {
        for p in generate_pairs(&cfg(0.0)).unwrap() {
            assert!(p.fixed.sub(&p.moving).unwrap().max_abs() < 1e-12);
            let d = dice(p.moving_mask.as_ref().unwrap(), p.fixed_mask.as_ref().unwrap()).unwrap();
            assert_eq!(d.mean, 1.0);
            assert_eq!(p.moving_mask.as_ref().unwrap().label_set(), &[1, 2, 3, 4]);
        }
    }

    #[test]
    fn velocity_is_band_limited_and_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_velocity(&mut rng, &[48, 64], 3.0).unwrap();
        assert!((v.as_tensor().max_abs() - 3.0).abs() < 1e-12);
        let axes = [1, 2];
        let spec = center_shift(&dft_real(v.as_tensor(), &axes).unwrap(), &axes);
        let mask = FreqMask::new(&[48, 64], &[SVF_REDUCTION, SVF_REDUCTION]).unwrap();
        assert!(mask.energy_outside(&spec).unwrap() < 1e-20 * spec.energy());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_pairs(&cfg(2.0)).unwrap();
        let b = generate_pairs(&cfg(2.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.fixed, y.fixed);
        }
        let c = generate_pairs(&SyntheticConfig { seed: 4, ..cfg(2.0) }).unwrap();
        assert_ne!(a[0].fixed, c[0].fixed);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = gen_synthetic(dir.path(), &cfg(2.0)).unwrap();
        let loaded = load_pairs(&train).unwrap();
        let direct = generate_pairs(&cfg(2.0)).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(load_pairs(&test).unwrap().len(), 1);
        assert_eq!(loaded[1].fixed, direct[1].fixed);
        assert_eq!(loaded[1].fixed_mask, direct[1].fixed_mask);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_pairs(&SyntheticConfig { shape: vec![50, 48], ..cfg(1.0) }).is_err());
        assert!(generate_pairs(&SyntheticConfig { shape: vec![48], ..cfg(1.0) }).is_err());
    }

    /// Initial mean Dice of the 20 test pairs of the reference dataset,
    /// recorded from the generator.
    const REFERENCE_INITIAL_DICE: f64 = 0.6214324226;

    #[test]
    fn reference_dataset_initial_dice_is_frozen() {
        let cfg = SyntheticConfig { seed: 7, n_pairs: 200, test_pairs: 20, shape: vec![96, 96], deform_scale: 3.0 };
        let pairs = generate_pairs(&cfg).unwrap();
        let mean = pairs[200..]
            .iter()
            .map(|p| dice(p.moving_mask.as_ref().unwrap(), p.fixed_mask.as_ref().unwrap()).unwrap().mean)
            .sum::<f64>()
            / 20.0;
        assert!((mean - REFERENCE_INITIAL_DICE).abs() < 1e-9, "{mean}");
    }
}
