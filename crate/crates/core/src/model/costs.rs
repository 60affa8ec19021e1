use serde::{Deserialize, Serialize};

use super::{ModelKind, NetVariant, Step, Stride};
use crate::error::Result;

/// Analytic size and work of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    /// Convolution weights and biases.
    pub params: u64,
    pub mult_adds: u64,
}

/// `5 N log2 N` per transform of `n` points.
fn fft_cost(n: usize) -> u64 {
    (5.0 * n as f64 * (n as f64).log2()).round() as u64
}

/// Parameters and multiply-adds of `variant` on a `spatial` grid.
///
/// Convolutions count `out_voxels * out_ch * in_ch * taps`; transposed
/// convolutions count the same product over their input voxels. Each
/// per-channel DFT counts `5 N log2 N`. Activations, padding, cropping and
/// interpolation are free.
pub fn count_costs(variant: &NetVariant, spatial: &[usize]) -> Result<Costs> {
    variant.check_spatial(spatial)?;
    let plan = variant.plan()?;
    let voxels = |r: usize| spatial.iter().map(|n| n / r).product::<usize>();
    let mut params = 0u64;
    let mut macs = 0u64;
    let mut res = variant.image_reduction;
    for step in &plan {
        let Step::Conv(c) = step else { continue };
        let taps = c.kernel.pow(variant.rank as u32);
        params += (c.out_ch * c.in_ch * taps + c.out_ch) as u64;
        let in_vox = voxels(res);
        res = match c.stride {
            Stride::One => res,
            Stride::Two => res * 2,
            Stride::UpTwo => res / 2,
        };
        let work_vox = if c.stride == Stride::UpTwo { in_vox } else { voxels(res) };
        macs += (work_vox * c.out_ch * c.in_ch * taps) as u64;
    }
    let rank = variant.rank;
    match variant.kind {
        ModelKind::FourierNet | ModelKind::FourierNetPlus => {
            let (full, small) = (voxels(1), voxels(variant.field_reduction));
            macs += rank as u64 * (fft_cost(small) + fft_cost(full));
            if variant.kind == ModelKind::FourierNetPlus {
                let reduced = voxels(variant.image_reduction);
                macs += 2 * (fft_cost(full) + fft_cost(reduced));
            }
        }
        _ => {}
    }
    let k = variant.cascades as u64;
    Ok(Costs {
        params: params * k,
        mult_adds: macs * k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, NetVariant};

    #[test]
    fn single_conv_count() {
        // One 3x3 conv, 2 -> 8 channels: 8 * (2 * 9 + 1).
        assert_eq!(8 * (2 * 9 + 1), 152);
        let v = NetVariant::new(ModelKind::FourierNet, 2);
        let plan = v.plan().unwrap();
        let Step::Conv(first) = &plan[0] else { panic!() };
        assert_eq!((first.in_ch, first.out_ch), (2, 8));
        assert_eq!(first.out_ch * (first.in_ch * 9 + 1), 152);
    }

    #[test]
    fn params_match_built_tensors() {
        for kind in ModelKind::ALL {
            for rank in [2, 3] {
                let mut v = NetVariant::new(kind, rank);
                v.base_channels = 4;
                if kind == ModelKind::FourierNetPlus {
                    v.cascades = 2;
                }
                let spatial = vec![32; rank];
                let costs = count_costs(&v, &spatial).unwrap();
                let p = ModelParams::<f32>::zeros(&v).unwrap();
                assert_eq!(costs.params, p.conv_numel() as u64, "{kind:?} rank {rank}");
            }
        }
    }

    #[test]
    fn doubling_channels_quadruples_interior_params() {
        let mut a = NetVariant::new(ModelKind::UNetBaseline, 2);
        a.base_channels = 8;
        let b = NetVariant { base_channels: 16, ..a.clone() };
        let pa = ModelParams::<f32>::zeros(&a).unwrap();
        let pb = ModelParams::<f32>::zeros(&b).unwrap();
        let w = "c0.enc2.conv.weight";
        assert_eq!(pb.get(w).unwrap().numel(), 4 * pa.get(w).unwrap().numel());
    }

    #[test]
    fn ordering_plus_fourier_unet() {
        for rank in [2, 3] {
            let spatial = vec![64; rank];
            let cost = |kind| count_costs(&NetVariant::new(kind, rank), &spatial).unwrap();
            let (plus, fourier, unet) =
                (cost(ModelKind::FourierNetPlus), cost(ModelKind::FourierNet), cost(ModelKind::UNetBaseline));
            assert!(plus.params < fourier.params && fourier.params < unet.params);
            assert!(plus.mult_adds < fourier.mult_adds && fourier.mult_adds < unet.mult_adds);
        }
    }

    #[test]
    fn deterministic() {
        let v = NetVariant::new(ModelKind::FourierNet, 2);
        assert_eq!(count_costs(&v, &[96, 96]).unwrap(), count_costs(&v, &[96, 96]).unwrap());
    }
}
