use super::{ModelKind, ModelParams, NetVariant, Step, Stride, SVF_STEPS};
use crate::autodiff::{Graph, Var};
use crate::deform::{DisplacementField, VelocityField};
use crate::error::{ensure_same_shape, invalid, Result};
use crate::fourier::{trailing_axes, BandLimitedPatch};
use crate::tensor::{Real, Tensor};

/// Nodes produced by [`forward_graph`].
#[derive(Debug, Clone)]
pub struct GraphOutput {
    /// Final displacement.
    pub field: Var,
    /// Field the smoothness term acts on: the velocity for diffeomorphic
    /// variants, the displacement otherwise.
    pub regularized: Var,
    /// Moving image warped by `field`.
    pub warped: Var,
    /// Per-cascade field increments.
    pub increments: Vec<Var>,
    /// Per-cascade centered band-limited patches (spectral kinds only).
    pub patches: Vec<Var>,
}

/// Runs `variant` on single-channel `moving`/`fixed` images `(1, spatial...)`.
/// `params` are graph nodes in [`ModelParams::layout`] order.
pub fn forward_graph<R: Real>(
    g: &Graph<R>,
    variant: &NetVariant,
    params: &[Var],
    moving: Var,
    fixed: Var,
) -> Result<GraphOutput> {
    let shape = g.shape(moving);
    ensure_same_shape("forward", &shape, &g.shape(fixed))?;
    if shape.len() != variant.rank + 1 || shape[0] != 1 {
        return Err(invalid!("expected single-channel images of rank {}, got {shape:?}", variant.rank));
    }
    variant.check_spatial(&shape[1..])?;
    let per_cascade = params.len() / variant.cascades;
    if per_cascade * variant.cascades != params.len() || per_cascade == 0 {
        return Err(invalid!("{} parameters do not split into {} cascades", params.len(), variant.cascades));
    }
    let plan = variant.plan()?;

    let mut field: Option<Var> = None;
    let mut increments = Vec::new();
    let mut patches = Vec::new();
    for k in 0..variant.cascades {
        let input = match field {
            Some(phi) => g.warp(moving, phi)?,
            None => moving,
        };
        let (delta, patch) = cascade(g, variant, &plan, &params[k * per_cascade..(k + 1) * per_cascade], input, fixed)?;
        increments.push(delta);
        patches.extend(patch);
        field = Some(match field {
            Some(phi) => g.compose(phi, delta)?,
            None => delta,
        });
    }
    let composed = field.expect("at least one cascade");
    let field = if variant.diffeomorphic { g.exp_svf(composed, SVF_STEPS)? } else { composed };
    let warped = g.warp(moving, field)?;
    Ok(GraphOutput {
        field,
        regularized: composed,
        warped,
        increments,
        patches,
    })
}

/// Band-limited image: DFT, centered crop, inverse DFT on the patch grid.
fn band_limit<R: Real>(g: &Graph<R>, image: Var, reduction: usize) -> Result<Var> {
    let shape = g.shape(image);
    let axes = trailing_axes(shape.len(), shape.len() - 1);
    let small: Vec<usize> = shape[1..].iter().map(|n| n / reduction).collect();
    let z = g.dft(image, &axes)?;
    let z = g.center_shift(z, &axes)?;
    let z = g.crop(z, &small)?;
    let z = g.center_unshift(z, &axes)?;
    let z = g.idft(z, &axes)?;
    g.real_part(z)
}

fn cascade<R: Real>(
    g: &Graph<R>,
    variant: &NetVariant,
    plan: &[Step],
    params: &[Var],
    moving: Var,
    fixed: Var,
) -> Result<(Var, Option<Var>)> {
    let full = g.shape(moving)[1..].to_vec();
    let reduced: Vec<usize> = full.iter().map(|n| n / variant.image_reduction).collect();
    let (m, f) = match variant.kind {
        ModelKind::FourierNetPlus => (
            band_limit(g, moving, variant.image_reduction)?,
            band_limit(g, fixed, variant.image_reduction)?,
        ),
        ModelKind::BilinearNetPlus => (g.resize(moving, &reduced)?, g.resize(fixed, &reduced)?),
        _ => (moving, fixed),
    };
    let mut x = g.concat(&[m, f])?;
    let mut skips = Vec::new();
    let mut next = params.iter().copied();
    let mut take = || next.next().ok_or_else(|| invalid!("too few parameters for the layer plan"));
    for step in plan {
        match step {
            Step::SaveSkip => skips.push(x),
            Step::ConcatSkip => {
                let skip = skips.pop().ok_or_else(|| invalid!("layer plan concatenates a missing skip"))?;
                x = g.concat(&[x, skip])?;
            }
            Step::Conv(c) => {
                let (w, b) = (take()?, take()?);
                x = match c.stride {
                    Stride::One => g.conv(x, w, b, 1)?,
                    Stride::Two => g.conv(x, w, b, 2)?,
                    Stride::UpTwo => g.conv_transpose(x, w, b)?,
                };
                if c.activation {
                    x = g.prelu(x, take()?)?;
                }
            }
        }
    }
    if take().is_ok() {
        return Err(invalid!("too many parameters for the layer plan"));
    }

    let rank = variant.rank;
    match variant.kind {
        ModelKind::FourierNet | ModelKind::FourierNetPlus => {
            let axes = trailing_axes(rank + 1, rank);
            let mut z = g.dft(x, &axes)?;
            z = g.center_shift(z, &axes)?;
            if variant.field_reduction > 1 {
                z = g.zero_nyquist(z, rank)?;
            }
            let patch = z;
            z = g.pad(z, &full)?;
            z = g.center_unshift(z, &axes)?;
            z = g.idft(z, &axes)?;
            Ok((g.real_part(z)?, Some(patch)))
        }
        ModelKind::BilinearNet | ModelKind::BilinearNetPlus => {
            if variant.field_reduction == 1 {
                Ok((x, None))
            } else {
                Ok((g.resize(x, &full)?, None))
            }
        }
        ModelKind::UNetBaseline => Ok((x, None)),
    }
}

/// Values produced by [`forward`].
#[derive(Debug, Clone)]
pub struct Prediction<R> {
    pub field: DisplacementField<R>,
    /// Velocity of diffeomorphic variants.
    pub velocity: Option<VelocityField<R>>,
    pub warped: Tensor<R>,
    pub increments: Vec<DisplacementField<R>>,
    pub patches: Vec<BandLimitedPatch<R>>,
}

/// Inference without gradient bookkeeping.
pub fn forward<R: Real>(
    variant: &NetVariant,
    params: &ModelParams<R>,
    moving: &Tensor<R>,
    fixed: &Tensor<R>,
) -> Result<Prediction<R>> {
    let g = Graph::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let (m, f) = (g.constant(moving.clone()), g.constant(fixed.clone()));
    let out = forward_graph(&g, variant, &vars, m, f)?;
    let full = moving.shape()[1..].to_vec();
    let reduction = vec![variant.field_reduction; variant.rank];
    Ok(Prediction {
        field: DisplacementField::new(g.real(out.field)?)?,
        velocity: if variant.diffeomorphic { Some(VelocityField::new(g.real(out.regularized)?)?) } else { None },
        warped: g.real(out.warped)?,
        increments: out
            .increments
            .iter()
            .map(|&v| DisplacementField::new(g.real(v)?))
            .collect::<Result<_>>()?,
        patches: out
            .patches
            .iter()
            .map(|&p| BandLimitedPatch::new(g.complex(p)?, full.clone(), reduction.clone()))
            .collect::<Result<_>>()?,
    })
}
