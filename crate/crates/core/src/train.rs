//! Losses, the Adam optimizer and the training loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::deform::{exp_svf, warp, DisplacementField, VelocityField};
use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::io::{save_checkpoint, write_atomic, Checkpoint, ImagePair};
use crate::metrics::{dice, mean_hausdorff, neg_jac_fraction, warp_labels, PairMetrics};
use crate::model::{forward, forward_graph, GraphOutput, ModelParams, NetVariant, SVF_STEPS};
use crate::tensor::{Real, Tensor};

/// Stabilizer added under the square root of the local NCC.
pub const NCC_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Ncc,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "ncc" => Ok(LossKind::Ncc),
            _ => Err(invalid!("unknown loss '{s}' (expected mse or ncc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Weight of the smoothness term.
    pub lambda: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    /// Write `checkpoint/` every this many epochs (and after the last one).
    pub checkpoint_every: usize,
    pub ncc_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Mse,
            lambda: 0.01,
            epochs: 10,
            batch: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            checkpoint_every: 1,
            ncc_window: 9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(invalid!("epochs and batch must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid!("lambda must be non-negative"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("invalid Adam hyper-parameters"));
        }
        if self.ncc_window % 2 == 0 {
            return Err(invalid!("NCC window must be odd"));
        }
        Ok(())
    }
}

/// Mean squared difference.
pub fn loss_mse_graph<R: Real>(g: &Graph<R>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    g.mean(g.square(d)?)
}

/// Negative mean local normalized cross-correlation over cubic windows of
/// `window` voxels (clipped at the border). Perfect correlation gives -1.
pub fn loss_ncc_graph<R: Real>(g: &Graph<R>, a: Var, b: Var, window: usize) -> Result<Var> {
    let shape = g.shape(a);
    ensure_same_shape("loss_ncc", &shape, &g.shape(b))?;
    let count = crate::tensor::Tensor::full(&shape, R::one());
    let inv_count = {
        let ones = g.constant(count);
        let n = g.real(g.box_sum(ones, window)?)?;
        g.constant(n.map(|c| R::one() / *c))
    };
    let sa = g.box_sum(a, window)?;
    let sb = g.box_sum(b, window)?;
    let saa = g.box_sum(g.square(a)?, window)?;
    let sbb = g.box_sum(g.square(b)?, window)?;
    let sab = g.box_sum(g.mul(a, b)?, window)?;
    // Window sums of centered products: sum(xy) - sum(x) sum(y) / n.
    let centered = |sxy: Var, sx: Var, sy: Var| -> Result<Var> {
        let p = g.mul(g.mul(sx, sy)?, inv_count)?;
        g.sub(sxy, p)
    };
    let cross = centered(sab, sa, sb)?;
    let var_a = centered(saa, sa, sa)?;
    let var_b = centered(sbb, sb, sb)?;
    let denom = g.sqrt(g.add_scalar(g.mul(var_a, var_b)?, R::from_f64_lossy(NCC_EPS))?)?;
    let cc = g.div(cross, denom)?;
    g.neg(g.mean(cc)?)
}

/// Mean over channels, axes and voxels of squared forward differences; the
/// last slice along each axis contributes zero.
pub fn loss_smooth_graph<R: Real>(g: &Graph<R>, field: Var) -> Result<Var> {
    let shape = g.shape(field);
    let rank = shape.len() - 1;
    let mut total: Option<Var> = None;
    for axis in 1..=rank {
        let s = g.sum(g.square(g.forward_diff(field, axis)?)?)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let n = shape.iter().product::<usize>() * rank;
    g.scale(total.expect("rank >= 1"), R::one() / R::from_usize(n).unwrap())
}

fn similarity<R: Real>(g: &Graph<R>, cfg: &TrainConfig, warped: Var, fixed: Var) -> Result<Var> {
    match cfg.loss {
        LossKind::Mse => loss_mse_graph(g, warped, fixed),
        LossKind::Ncc => loss_ncc_graph(g, warped, fixed, cfg.ncc_window),
    }
}

/// Similarity of the warped moving image to the fixed image plus
/// `lambda` times the smoothness of the regularized field.
pub fn total_loss_graph<R: Real>(g: &Graph<R>, cfg: &TrainConfig, out: &GraphOutput, fixed: Var) -> Result<Var> {
    let sim = similarity(g, cfg, out.warped, fixed)?;
    if cfg.lambda == 0.0 {
        return Ok(sim);
    }
    let smooth = loss_smooth_graph(g, out.regularized)?;
    g.add(sim, g.scale(smooth, R::from_f64_lossy(cfg.lambda))?)
}

fn eval_const<R: Real>(f: impl FnOnce(&Graph<R>) -> Result<Var>) -> Result<R> {
    let g = Graph::new();
    let v = f(&g)?;
    g.scalar(v)
}

pub fn loss_mse<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<R> {
    eval_const(|g| loss_mse_graph(g, g.constant(a.clone()), g.constant(b.clone())))
}

pub fn loss_ncc<R: Real>(a: &Tensor<R>, b: &Tensor<R>, window: usize) -> Result<R> {
    eval_const(|g| loss_ncc_graph(g, g.constant(a.clone()), g.constant(b.clone()), window))
}

pub fn loss_smooth<R: Real>(field: &Tensor<R>) -> Result<R> {
    eval_const(|g| loss_smooth_graph(g, g.constant(field.clone())))
}

/// Loss for a given field: `field` is a displacement, or a velocity when
/// `diffeomorphic` is set (the moving image is then warped by its exponential).
pub fn total_loss<R: Real>(
    cfg: &TrainConfig,
    moving: &Tensor<R>,
    fixed: &Tensor<R>,
    field: &Tensor<R>,
    diffeomorphic: bool,
) -> Result<R> {
    let disp = if diffeomorphic {
        exp_svf(&VelocityField::new(field.clone())?, SVF_STEPS)?
    } else {
        DisplacementField::new(field.clone())?
    };
    let warped = warp(moving, &disp)?;
    let sim = match cfg.loss {
        LossKind::Mse => loss_mse(&warped, fixed)?,
        LossKind::Ncc => loss_ncc(&warped, fixed, cfg.ncc_window)?,
    };
    Ok(sim + R::from_f64_lossy(cfg.lambda) * loss_smooth(field)?)
}

/// Loss of one pair and its gradient for every parameter tensor.
pub fn loss_and_grad<R: Real>(
    variant: &NetVariant,
    params: &ModelParams<R>,
    moving: &Tensor<R>,
    fixed: &Tensor<R>,
    cfg: &TrainConfig,
) -> Result<(R, Vec<Tensor<R>>)> {
    let g = Graph::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| g.param(t.clone())).collect();
    let (m, f) = (g.constant(moving.clone()), g.constant(fixed.clone()));
    let out = forward_graph(&g, variant, &vars, m, f)?;
    let loss = total_loss_graph(&g, cfg, &out, f)?;
    let value = g.scalar(loss)?;
    let grads = g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    Ok((value, grads))
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    /// Steps taken so far.
    pub t: usize,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &[Tensor<R>]) -> Self {
        let zeros: Vec<Tensor<R>> = params.iter().map(Tensor::zeros_like).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<R: Real>(params: &mut [Tensor<R>], grads: &[Tensor<R>], state: &mut AdamState<R>, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(invalid!("Adam needs one gradient and state entry per parameter"));
    }
    state.t += 1;
    let c = |x: f64| R::from_f64_lossy(x);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let step = c(cfg.lr / bc1);
    let (b1, b2, eps, inv_bc2) = (c(b1), c(b2), c(cfg.eps_adam), c(1.0 / bc2));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        ensure_same_shape("adam_step", p.shape(), g.shape())?;
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + (R::one() - b1) * g;
            *v = b2 * *v + (R::one() - b2) * g * g;
            *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Mean validation Dice after the epoch; NaN (JSON `null`) without labels.
    #[serde(deserialize_with = "nan_from_null")]
    pub val_dice: f64,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone)]
pub struct TrainReport<R> {
    pub params: ModelParams<R>,
    pub curve: Vec<EpochRecord>,
}

fn cast_pair<R: Real>(p: &ImagePair) -> (Tensor<R>, Tensor<R>) {
    (p.moving.cast(), p.fixed.cast())
}

/// Mean Dice of warped moving labels against fixed labels; NaN when no pair
/// carries labels.
pub fn mean_dice<R: Real>(variant: &NetVariant, params: &ModelParams<R>, pairs: &[ImagePair]) -> Result<f64> {
    let metrics = evaluate(variant, params, pairs)?;
    let scores: Vec<f64> = metrics.iter().map(|m| m.dice_mean).filter(|d| !d.is_nan()).collect();
    Ok(if scores.is_empty() { f64::NAN } else { scores.iter().sum::<f64>() / scores.len() as f64 })
}

/// Registers every pair and scores it.
pub fn evaluate<R: Real>(variant: &NetVariant, params: &ModelParams<R>, pairs: &[ImagePair]) -> Result<Vec<PairMetrics>> {
    pairs
        .iter()
        .enumerate()
        .map(|(pair_id, p)| {
            let start = Instant::now();
            let (m, f) = cast_pair::<R>(p);
            let pred = forward(variant, params, &m, &f)?;
            let seconds = start.elapsed().as_secs_f64();
            let (dice_mean, dice_per_label, hd) = match (&p.moving_mask, &p.fixed_mask) {
                (Some(mm), Some(fm)) => {
                    let warped = warp_labels(mm, &pred.field)?;
                    let d = dice(&warped, fm)?;
                    (d.mean, d.per_label, mean_hausdorff(&warped, fm)?)
                }
                _ => (f64::NAN, Vec::new(), f64::NAN),
            };
            Ok(PairMetrics {
                pair_id,
                dice_mean,
                dice_per_label,
                hd,
                neg_jac_pct: neg_jac_fraction(&pred.field),
                seconds,
            })
        })
        .collect()
}

fn write_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in curve {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Trains `params` on `train` and tracks Dice on `val`.
///
/// With `out_dir`, writes `loss_curve.jsonl`, a `last_good/` checkpoint
/// after every epoch and `checkpoint/` every `checkpoint_every` epochs. A
/// non-finite loss aborts with [`Error::NonFiniteLoss`], leaving the last
/// good checkpoint in place.
pub fn train_loop<R: Real>(
    variant: &NetVariant,
    mut params: ModelParams<R>,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport<R>> {
    cfg.validate()?;
    variant.validate()?;
    if train.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let data: Vec<(Tensor<R>, Tensor<R>)> = train.iter().map(cast_pair).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params.tensors());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch).enumerate() {
            let mut acc: Option<Vec<Tensor<R>>> = None;
            for &i in batch {
                let (loss, grads) = loss_and_grad(variant, &params, &data[i].0, &data[i].1, cfg)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                loss_sum += loss.to_f64_lossy();
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let scale = R::one() / R::from_usize(batch.len()).unwrap();
            let grads: Vec<Tensor<R>> = acc.expect("non-empty batch").iter().map(|g| g.scale(scale)).collect();
            adam_step(params.tensors_mut(), &grads, &mut state, cfg)?;
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            val_dice: mean_dice(variant, &params, val)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val dice {:.4} ({:.1}s)",
            record.loss,
            record.val_dice,
            started.elapsed().as_secs_f64()
        );
        curve.push(record);
        if let Some(dir) = out_dir {
            let ckpt = Checkpoint { variant: variant.clone(), params: params.clone(), epoch };
            save_checkpoint(&dir.join("last_good"), &ckpt)?;
            if epoch % cfg.checkpoint_every.max(1) == 0 || epoch == cfg.epochs {
                save_checkpoint(&dir.join("checkpoint"), &ckpt)?;
            }
            write_curve(&dir.join("loss_curve.jsonl"), &curve)?;
        }
    }
    Ok(TrainReport { params, curve })
}
