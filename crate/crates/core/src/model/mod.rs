//! Registration networks and their analytic cost.
//!
//! Every variant shares one convolutional backbone: a contracting path over
//! resolution levels `0..=4` (level `l` is the full grid divided by `2^l`,
//! `C * 2^l` channels) and an expansive path that stops at the level of the
//! predicted field. What differs is how images enter and how the
//! low-resolution output becomes a full-resolution displacement:
//!
//! | kind              | network input               | output decoder            |
//! |-------------------|-----------------------------|---------------------------|
//! | `FourierNet`      | full-resolution images      | DFT, zero-pad, inverse DFT |
//! | `FourierNetPlus`  | band-limited images         | DFT, zero-pad, inverse DFT |
//! | `UNetBaseline`    | full-resolution images      | none (full-resolution)    |
//! | `BilinearNet`     | full-resolution images      | linear upsampling         |
//! | `BilinearNetPlus` | linearly downsampled images | linear upsampling         |

pub mod conv;
mod costs;
mod forward;
mod params;

pub use conv::{conv_forward, prelu, Stride};
pub use costs::{count_costs, Costs};
pub use forward::{forward, forward_graph, GraphOutput, Prediction};
pub use params::ModelParams;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Deepest resolution level of the backbone.
pub const DEPTH: usize = 4;

/// Scaling and squaring steps used by diffeomorphic variants.
pub const SVF_STEPS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    FourierNet,
    FourierNetPlus,
    UNetBaseline,
    BilinearNet,
    BilinearNetPlus,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::FourierNet,
        ModelKind::FourierNetPlus,
        ModelKind::UNetBaseline,
        ModelKind::BilinearNet,
        ModelKind::BilinearNetPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FourierNet => "fourier-net",
            ModelKind::FourierNetPlus => "fourier-net-plus",
            ModelKind::UNetBaseline => "unet",
            ModelKind::BilinearNet => "bilinear-net",
            ModelKind::BilinearNetPlus => "bilinear-net-plus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid!("unknown variant '{s}' (expected one of {})", Self::names().join(", ")))
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|k| k.name()).collect()
    }

    fn spectral(self) -> bool {
        matches!(self, ModelKind::FourierNet | ModelKind::FourierNetPlus)
    }

    fn reduces_input(self) -> bool {
        matches!(self, ModelKind::FourierNetPlus | ModelKind::BilinearNetPlus)
    }
}

/// Full description of a network configuration. Reductions are scalar
/// factors applied to every spatial axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetVariant {
    pub kind: ModelKind,
    pub rank: usize,
    pub image_reduction: usize,
    pub field_reduction: usize,
    pub cascades: usize,
    pub diffeomorphic: bool,
    pub base_channels: usize,
}

impl NetVariant {
    /// Defaults for `kind`: field reduction 4 (1 for the U-Net), image
    /// reduction 2 for the `Plus` kinds, one cascade, `C = 8`.
    pub fn new(kind: ModelKind, rank: usize) -> Self {
        NetVariant {
            kind,
            rank,
            image_reduction: if kind.reduces_input() { 2 } else { 1 },
            field_reduction: if kind == ModelKind::UNetBaseline { 1 } else { 4 },
            cascades: 1,
            diffeomorphic: false,
            base_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rank == 2 || self.rank == 3) {
            return Err(invalid!("spatial rank must be 2 or 3, got {}", self.rank));
        }
        if self.base_channels == 0 {
            return Err(invalid!("base channel count must be positive"));
        }
        if self.cascades == 0 {
            return Err(invalid!("cascade count must be at least 1"));
        }
        if self.cascades > 1 && self.kind != ModelKind::FourierNetPlus {
            return Err(invalid!("only {} supports cascades", ModelKind::FourierNetPlus.name()));
        }
        for (what, r) in [("image", self.image_reduction), ("field", self.field_reduction)] {
            if !r.is_power_of_two() || r > 1 << DEPTH {
                return Err(invalid!("{what} reduction must be a power of two up to {}, got {r}", 1 << DEPTH));
            }
        }
        if self.field_reduction < self.image_reduction {
            return Err(invalid!(
                "field reduction {} is finer than image reduction {}",
                self.field_reduction,
                self.image_reduction
            ));
        }
        if !self.kind.reduces_input() && self.image_reduction != 1 {
            return Err(invalid!("{} takes full-resolution images", self.kind.name()));
        }
        if self.kind.reduces_input() && self.image_reduction == 1 {
            return Err(invalid!("{} needs an image reduction above 1", self.kind.name()));
        }
        if self.kind == ModelKind::UNetBaseline && self.field_reduction != 1 {
            return Err(invalid!("the U-Net baseline predicts full-resolution fields"));
        }
        Ok(())
    }

    /// Checks that `spatial` can pass through the backbone and the codec.
    pub fn check_spatial(&self, spatial: &[usize]) -> Result<()> {
        if spatial.len() != self.rank {
            return Err(invalid!("expected {} spatial axes, got {spatial:?}", self.rank));
        }
        let step = 1 << DEPTH;
        if let Some(&n) = spatial.iter().find(|&&n| n == 0 || n % step != 0) {
            return Err(invalid!("spatial size {n} is not divisible by {step}"));
        }
        if self.kind.spectral() {
            for (what, r) in [("image", self.image_reduction), ("field", self.field_reduction)] {
                if r > 1 && spatial.iter().any(|&n| (n / r) % 2 != 0) {
                    return Err(invalid!("{what} reduction {r} leaves an odd patch extent for {spatial:?}"));
                }
            }
        }
        Ok(())
    }

    fn level(r: usize) -> usize {
        r.trailing_zeros() as usize
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Layer plan of one cascade.
    pub fn plan(&self) -> Result<Vec<Step>> {
        self.validate()?;
        let p = Self::level(self.image_reduction);
        let q = Self::level(self.field_reduction);
        let conv = |name: String, in_ch, out_ch, stride, activation| {
            Step::Conv(ConvSpec { name, in_ch, out_ch, kernel: 3, stride, activation })
        };
        let mut steps = vec![conv(format!("enc{p}.in"), 2, self.channels(p), Stride::One, true)];
        for l in p + 1..=DEPTH {
            let c = self.channels(l - 1);
            steps.push(Step::SaveSkip);
            steps.push(conv(format!("enc{l}.conv"), c, c, Stride::One, true));
            steps.push(conv(format!("enc{l}.down"), c, self.channels(l), Stride::Two, true));
        }
        let mut current = self.channels(DEPTH);
        for l in (q..DEPTH).rev() {
            let c = self.channels(l);
            steps.push(conv(format!("dec{l}.up"), current, c, Stride::UpTwo, true));
            steps.push(Step::ConcatSkip);
            steps.push(conv(format!("dec{l}.fuse"), 2 * c, c, Stride::One, true));
            steps.push(conv(format!("dec{l}.conv"), c, c, Stride::One, true));
            current = c;
        }
        steps.push(conv("out".into(), current, self.rank, Stride::One, false));
        Ok(steps)
    }

    /// Human-readable layer plan for a given input grid.
    pub fn describe(&self, spatial: &[usize]) -> Result<String> {
        self.check_spatial(spatial)?;
        let plan = self.plan()?;
        let costs = count_costs(self, spatial)?;
        let shape = |res: &[usize]| res.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x");
        let mut res: Vec<usize> = spatial.iter().map(|n| n / self.image_reduction).collect();
        let mut lines = vec![format!(
            "variant {} (rank {}, C={}, image reduction {}, field reduction {}, cascades {}, diffeomorphic {})",
            self.kind.name(),
            self.rank,
            self.base_channels,
            self.image_reduction,
            self.field_reduction,
            self.cascades,
            self.diffeomorphic
        )];
        lines.push(format!("input  2 x {}", shape(spatial)));
        match self.kind {
            ModelKind::FourierNetPlus => lines.push(format!("encode band-limited images -> 2 x {}", shape(&res))),
            ModelKind::BilinearNetPlus => lines.push(format!("linear downsample -> 2 x {}", shape(&res))),
            _ => {}
        }
        for step in &plan {
            match step {
                Step::SaveSkip => lines.push(format!("  save skip @ {}", shape(&res))),
                Step::ConcatSkip => lines.push("  concat skip".to_string()),
                Step::Conv(c) => {
                    let from = shape(&res);
                    res = match c.stride {
                        Stride::One => res,
                        Stride::Two => res.iter().map(|n| n / 2).collect(),
                        Stride::UpTwo => res.iter().map(|n| n * 2).collect(),
                    };
                    lines.push(format!(
                        "  {:<10} {:>4} -> {:<4} {:?} {} -> {}{}",
                        c.name,
                        c.in_ch,
                        c.out_ch,
                        c.stride,
                        from,
                        shape(&res),
                        if c.activation { " prelu" } else { "" }
                    ));
                }
            }
        }
        match self.kind {
            ModelKind::FourierNet | ModelKind::FourierNetPlus => lines.push(format!(
                "decode: dft {} -> zero-pad {} -> inverse dft",
                shape(&res),
                shape(spatial)
            )),
            ModelKind::BilinearNet | ModelKind::BilinearNetPlus => {
                lines.push(format!("decode: linear upsample {} -> {}", shape(&res), shape(spatial)))
            }
            ModelKind::UNetBaseline => {}
        }
        if self.cascades > 1 {
            lines.push(format!("repeat for {} cascades, composing fields", self.cascades));
        }
        if self.diffeomorphic {
            lines.push(format!("exponentiate with {SVF_STEPS} scaling and squaring steps"));
        }
        lines.push(format!("params {}  mult-adds {}", costs.params, costs.mult_adds));
        Ok(lines.join("\n"))
    }
}

/// One convolution of a layer plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: Stride,
    /// Followed by a PReLU.
    pub activation: bool,
}

impl ConvSpec {
    pub fn weight_shape(&self, rank: usize) -> Vec<usize> {
        let mut shape = match self.stride {
            Stride::UpTwo => vec![self.in_ch, self.out_ch],
            _ => vec![self.out_ch, self.in_ch],
        };
        shape.extend(std::iter::repeat(self.kernel).take(rank));
        shape
    }
}

/// Layer plan entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Conv(ConvSpec),
    /// Push the current feature map for the expansive path.
    SaveSkip,
    /// Concatenate the most recently saved feature map after the current one.
    ConcatSkip,
}
