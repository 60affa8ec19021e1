//! Overlap and boundary metrics on integer label maps.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::deform::{DisplacementField, Grid};
use crate::error::{ensure_same_shape, invalid, Result};
use crate::tensor::{Real, Tensor};

pub use crate::deform::neg_jac_fraction;

/// Integer label map over a spatial grid; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    labels: Tensor<i32>,
    label_set: Vec<i32>,
}

impl LabelMask {
    pub fn new(labels: Tensor<i32>) -> Result<Self> {
        if !(labels.ndim() == 2 || labels.ndim() == 3) {
            return Err(invalid!("label map must be 2D or 3D, got {:?}", labels.shape()));
        }
        if labels.data().iter().any(|&l| l < 0) {
            return Err(invalid!("labels must be non-negative"));
        }
        let label_set: BTreeSet<i32> = labels.data().iter().copied().filter(|&l| l != 0).collect();
        Ok(LabelMask {
            labels,
            label_set: label_set.into_iter().collect(),
        })
    }

    pub fn labels(&self) -> &Tensor<i32> {
        &self.labels
    }

    /// Sorted distinct foreground labels.
    pub fn label_set(&self) -> &[i32] {
        &self.label_set
    }

    pub fn shape(&self) -> &[usize] {
        self.labels.shape()
    }

    fn count(&self, label: i32) -> usize {
        self.labels.data().iter().filter(|&&l| l == label).count()
    }
}

/// Dice overlap per label and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub per_label: Vec<(i32, f64)>,
    /// Mean over labels present in either mask; NaN when both are empty.
    pub mean: f64,
}

/// `2 |A ∩ B| / (|A| + |B|)` for every label found in either mask.
pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<DiceScores> {
    ensure_same_shape("dice", a.shape(), b.shape())?;
    let labels: BTreeSet<i32> = a.label_set.iter().chain(&b.label_set).copied().collect();
    let per_label: Vec<(i32, f64)> = labels
        .into_iter()
        .map(|l| {
            let inter = a
                .labels
                .data()
                .iter()
                .zip(b.labels.data())
                .filter(|(&x, &y)| x == l && y == l)
                .count();
            (l, 2.0 * inter as f64 / (a.count(l) + b.count(l)) as f64)
        })
        .collect();
    let mean = if per_label.is_empty() {
        f64::NAN
    } else {
        per_label.iter().map(|(_, d)| d).sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceScores { per_label, mean })
}

/// Nearest-neighbour resampling of labels at `x + u(x)`, clamped to the grid.
pub fn warp_labels<R: Real>(mask: &LabelMask, u: &DisplacementField<R>) -> Result<LabelMask> {
    ensure_same_shape("warp_labels", mask.shape(), u.spatial_shape())?;
    let grid = Grid::new(mask.shape());
    let rank = u.rank();
    let n = grid.voxels();
    let disp = u.as_tensor().data();
    let src = mask.labels.data();
    let out: Vec<i32> = (0..n)
        .map(|v| {
            let pos = grid.position(v);
            let mut off = 0;
            for k in 0..rank {
                let hi = (grid.dims[k] - 1) as f64;
                let c = pos[k] as f64 + disp[k * n + v].to_f64_lossy();
                let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, hi) };
                off += c.round() as usize * grid.strides[k];
            }
            src[off]
        })
        .collect();
    LabelMask::new(Tensor::from_vec(mask.shape().to_vec(), out)?)
}

/// Voxels of `label` with a face neighbour that is another label or outside the grid.
fn boundary(mask: &LabelMask, label: i32) -> Vec<bool> {
    let grid = Grid::new(mask.shape());
    let data = mask.labels.data();
    (0..grid.voxels())
        .map(|v| {
            if data[v] != label {
                return false;
            }
            let pos = grid.position(v);
            (0..grid.rank).any(|k| {
                let s = grid.strides[k];
                pos[k] == 0 || pos[k] + 1 == grid.dims[k] || data[v - s] != label || data[v + s] != label
            })
        })
        .collect()
}

/// Squared distance transform along one line (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    // Infinite samples contribute no parabola; seed with the first finite one.
    match f.iter().position(|x| x.is_finite()) {
        Some(i) => v[0] = i,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    }
    for q in v[0] + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest `true` voxel.
fn squared_edt(seeds: &[bool], shape: &[usize]) -> Vec<f64> {
    let grid = Grid::new(shape);
    let mut d: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let longest = shape.iter().copied().max().unwrap_or(1);
    let (mut f, mut out) = (vec![0.0; longest], vec![0.0; longest]);
    let (mut v, mut z) = (vec![0usize; longest], vec![0.0; longest + 1]);
    for k in 0..grid.rank {
        let n = grid.dims[k];
        let s = grid.strides[k];
        for start in 0..grid.voxels() {
            if grid.position(start)[k] != 0 {
                continue;
            }
            for i in 0..n {
                f[i] = d[start + i * s];
            }
            edt_1d(&f[..n], &mut out[..n], &mut v, &mut z);
            for i in 0..n {
                d[start + i * s] = out[i];
            }
        }
    }
    d
}

/// Symmetric Hausdorff distance, in voxels, between the boundaries of
/// `label` in both masks.
pub fn hausdorff(a: &LabelMask, b: &LabelMask, label: i32) -> Result<f64> {
    ensure_same_shape("hausdorff", a.shape(), b.shape())?;
    if !a.label_set.contains(&label) || !b.label_set.contains(&label) {
        return Err(invalid!("label {label} missing from one of the masks"));
    }
    let (ba, bb) = (boundary(a, label), boundary(b, label));
    let directed = |from: &[bool], to: &[bool]| {
        let d = squared_edt(to, a.shape());
        from.iter().zip(&d).filter(|(&f, _)| f).map(|(_, &d)| d).fold(0.0, f64::max).sqrt()
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)))
}

/// Mean Hausdorff distance over labels present in both masks; NaN if none.
pub fn mean_hausdorff(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    let shared: Vec<i32> = a.label_set.iter().copied().filter(|l| b.label_set.contains(l)).collect();
    if shared.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for &l in &shared {
        total += hausdorff(a, b, l)?;
    }
    Ok(total / shared.len() as f64)
}

/// One line of evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: usize,
    pub dice_mean: f64,
    pub dice_per_label: Vec<(i32, f64)>,
    pub hd: f64,
    pub neg_jac_pct: f64,
    pub seconds: f64,
}
