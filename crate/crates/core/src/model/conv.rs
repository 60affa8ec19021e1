//! Convolution kernels (im2col + GEMM) and PReLU.
//!
//! Features are `(C, spatial...)` with spatial rank 2 or 3. Convolutions are
//! cross-correlations with zero padding `k/2`: stride 1 keeps the spatial
//! size, stride 2 halves it (rounding up) and the transposed convolution
//! doubles it. 2D data runs through the 3D loops with a unit depth axis.

use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// Spatial step of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stride {
    /// Same resolution.
    One,
    /// Halves the resolution.
    Two,
    /// Fractionally strided (transposed) convolution doubling the resolution.
    UpTwo,
}

#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    /// Geometry of a forward (possibly strided) convolution reading `spatial`.
    pub fn forward(spatial: &[usize], kernel: usize, stride: usize) -> Result<Self> {
        let rank = spatial.len();
        if !(rank == 2 || rank == 3) {
            return Err(invalid!("convolution needs spatial rank 2 or 3, got {rank}"));
        }
        if kernel % 2 == 0 {
            return Err(invalid!("kernel size must be odd, got {kernel}"));
        }
        let off = 3 - rank;
        let mut g = Geometry {
            in_dims: [1; 3],
            out_dims: [1; 3],
            kernel: [1; 3],
            stride: [1; 3],
            pad: [0; 3],
        };
        for k in 0..rank {
            let n = spatial[k];
            g.in_dims[off + k] = n;
            g.kernel[off + k] = kernel;
            g.stride[off + k] = stride;
            g.pad[off + k] = kernel / 2;
            g.out_dims[off + k] = (n + 2 * (kernel / 2) - kernel) / stride + 1;
        }
        Ok(g)
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn in_voxels(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_voxels(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn out_spatial(&self, rank: usize) -> Vec<usize> {
        self.out_dims[3 - rank..].to_vec()
    }

    /// Valid output range `[lo, hi)` along axis `a` for kernel tap `t`.
    fn valid(&self, a: usize, t: usize) -> (usize, usize) {
        let (s, p, n, m) = (self.stride[a], self.pad[a], self.in_dims[a], self.out_dims[a]);
        // i = o*s + t - p must lie in [0, n).
        let lo = if t >= p { 0 } else { (p - t).div_ceil(s) };
        let hi = if n + p > t { ((n + p - t - 1) / s + 1).min(m) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// `cols[(c, tap), out_voxel] = x[c, out_voxel * stride + tap - pad]`.
pub(crate) fn im2col<R: Real>(x: &[R], channels: usize, g: &Geometry) -> Vec<R> {
    let taps = g.taps();
    let p = g.out_voxels();
    let nin = g.in_voxels();
    let [_, ih, iw] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let mut cols = vec![R::zero(); channels * taps * p];
    for c in 0..channels {
        let src = &x[c * nin..(c + 1) * nin];
        for tz in 0..g.kernel[0] {
            let (z0, z1) = g.valid(0, tz);
            for ty in 0..g.kernel[1] {
                let (y0, y1) = g.valid(1, ty);
                for tx in 0..g.kernel[2] {
                    let (x0, x1) = g.valid(2, tx);
                    let row = ((c * g.kernel[0] + tz) * g.kernel[1] + ty) * g.kernel[2] + tx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oz in z0..z1 {
                        let iz = oz * g.stride[0] + tz - g.pad[0];
                        for oy in y0..y1 {
                            let iy = oy * g.stride[1] + ty - g.pad[1];
                            let base = (iz * ih + iy) * iw;
                            let out_base = (oz * oh + oy) * ow;
                            if g.stride[2] == 1 {
                                let ix0 = x0 + tx - g.pad[2];
                                dst[out_base + x0..out_base + x1]
                                    .copy_from_slice(&src[base + ix0..base + ix0 + (x1 - x0)]);
                            } else {
                                for ox in x0..x1 {
                                    dst[out_base + ox] = src[base + ox * g.stride[2] + tx - g.pad[2]];
                                }
                            }
                        }
                    }
                    let _ = od;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto the input grid.
pub(crate) fn col2im<R: Real>(cols: &[R], channels: usize, g: &Geometry) -> Vec<R> {
    let p = g.out_voxels();
    let nin = g.in_voxels();
    let [_, ih, iw] = g.in_dims;
    let [_, oh, ow] = g.out_dims;
    let mut x = vec![R::zero(); channels * nin];
    for c in 0..channels {
        let dst = &mut x[c * nin..(c + 1) * nin];
        for tz in 0..g.kernel[0] {
            let (z0, z1) = g.valid(0, tz);
            for ty in 0..g.kernel[1] {
                let (y0, y1) = g.valid(1, ty);
                for tx in 0..g.kernel[2] {
                    let (x0, x1) = g.valid(2, tx);
                    let row = ((c * g.kernel[0] + tz) * g.kernel[1] + ty) * g.kernel[2] + tx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oz in z0..z1 {
                        let iz = oz * g.stride[0] + tz - g.pad[0];
                        for oy in y0..y1 {
                            let iy = oy * g.stride[1] + ty - g.pad[1];
                            let base = (iz * ih + iy) * iw;
                            let out_base = (oz * oh + oy) * ow;
                            for ox in x0..x1 {
                                dst[base + ox * g.stride[2] + tx - g.pad[2]] += src[out_base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn kernel_size(w: &Tensor<impl Clone>, rank: usize) -> Result<usize> {
    let ks = &w.shape()[2..];
    if ks.len() != rank || ks.iter().any(|&k| k != ks[0]) {
        return Err(invalid!("kernel shape {:?} is not cubic of rank {rank}", w.shape()));
    }
    Ok(ks[0])
}

fn check_bias<R: Real>(b: &Tensor<R>, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(invalid!("bias of shape {:?} for {channels} output channels", b.shape()));
    }
    Ok(())
}

fn with_shape<R: Real>(channels: usize, spatial: &[usize], data: Vec<R>) -> Tensor<R> {
    let mut shape = vec![channels];
    shape.extend_from_slice(spatial);
    Tensor::from_vec(shape, data).expect("conv output size")
}

fn add_bias<R: Real>(out: &mut [R], bias: &Tensor<R>, voxels: usize) {
    for (chunk, &b) in out.chunks_mut(voxels).zip(bias.data()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<R: Real>(g: &[R], channels: usize, voxels: usize) -> Tensor<R> {
    let sums = (0..channels).map(|c| g[c * voxels..(c + 1) * voxels].iter().copied().sum()).collect();
    Tensor::from_vec(vec![channels], sums).unwrap()
}

/// Saved state of a forward convolution for its backward pass.
pub(crate) struct ConvCache<R> {
    geometry: Geometry,
    cols: Vec<R>,
    rank: usize,
}

/// Forward convolution with `stride` 1 or 2. `w` is `(Co, Ci, k...)`, `b` is `(Co)`.
pub(crate) fn conv_forward_cached<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    b: &Tensor<R>,
    stride: usize,
) -> Result<(Tensor<R>, ConvCache<R>)> {
    let rank = x.ndim().saturating_sub(1);
    if w.ndim() != rank + 2 {
        return Err(invalid!("weight {:?} does not match input {:?}", w.shape(), x.shape()));
    }
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    if x.shape()[0] != ci {
        return Err(invalid!("input has {} channels, weight expects {ci}", x.shape()[0]));
    }
    check_bias(b, co)?;
    let g = Geometry::forward(&x.shape()[1..], kernel_size(w, rank)?, stride)?;
    let cols = im2col(x.data(), ci, &g);
    let p = g.out_voxels();
    let kdim = ci * g.taps();
    let mut out = vec![R::zero(); co * p];
    R::gemm(co, kdim, p, R::one(), w.data(), false, &cols, false, R::zero(), &mut out);
    add_bias(&mut out, b, p);
    let out = with_shape(co, &g.out_spatial(rank), out);
    Ok((out, ConvCache { geometry: g, cols, rank }))
}

/// Cotangents of input, weight and bias.
pub(crate) fn conv_backward<R: Real>(
    cache: &ConvCache<R>,
    w: &Tensor<R>,
    grad: &Tensor<R>,
    need_x: bool,
) -> (Option<Tensor<R>>, Tensor<R>, Tensor<R>) {
    let g = &cache.geometry;
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    let p = g.out_voxels();
    let kdim = ci * g.taps();
    let mut gw = vec![R::zero(); co * kdim];
    R::gemm(co, p, kdim, R::one(), grad.data(), false, &cache.cols, true, R::zero(), &mut gw);
    let gw = Tensor::from_vec(w.shape().to_vec(), gw).unwrap();
    let gb = bias_grad(grad.data(), co, p);
    let gx = need_x.then(|| {
        let mut gcols = vec![R::zero(); kdim * p];
        R::gemm(kdim, co, p, R::one(), w.data(), true, grad.data(), false, R::zero(), &mut gcols);
        let in_spatial = g.in_dims[3 - cache.rank..].to_vec();
        with_shape(ci, &in_spatial, col2im(&gcols, ci, g))
    });
    (gx, gw, gb)
}

/// Transposed convolution doubling the resolution. `w` is `(Ci, Co, k...)`.
pub(crate) fn conv_transpose_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    b: &Tensor<R>,
) -> Result<(Tensor<R>, Geometry)> {
    let rank = x.ndim().saturating_sub(1);
    if w.ndim() != rank + 2 {
        return Err(invalid!("weight {:?} does not match input {:?}", w.shape(), x.shape()));
    }
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    if x.shape()[0] != ci {
        return Err(invalid!("input has {} channels, weight expects {ci}", x.shape()[0]));
    }
    check_bias(b, co)?;
    let high: Vec<usize> = x.shape()[1..].iter().map(|n| 2 * n).collect();
    let g = Geometry::forward(&high, kernel_size(w, rank)?, 2)?;
    debug_assert_eq!(g.out_spatial(rank), x.shape()[1..]);
    let plow = g.out_voxels();
    let kdim = co * g.taps();
    let mut cols = vec![R::zero(); kdim * plow];
    R::gemm(kdim, ci, plow, R::one(), w.data(), true, x.data(), false, R::zero(), &mut cols);
    let mut out = col2im(&cols, co, &g);
    add_bias(&mut out, b, g.in_voxels());
    Ok((with_shape(co, &high, out), g))
}

pub(crate) fn conv_transpose_backward<R: Real>(
    g: &Geometry,
    x: &Tensor<R>,
    w: &Tensor<R>,
    grad: &Tensor<R>,
    need_x: bool,
) -> (Option<Tensor<R>>, Tensor<R>, Tensor<R>) {
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    let plow = g.out_voxels();
    let kdim = co * g.taps();
    let gcols = im2col(grad.data(), co, g);
    let mut gw = vec![R::zero(); ci * kdim];
    R::gemm(ci, plow, kdim, R::one(), x.data(), false, &gcols, true, R::zero(), &mut gw);
    let gw = Tensor::from_vec(w.shape().to_vec(), gw).unwrap();
    let gb = bias_grad(grad.data(), co, g.in_voxels());
    let gx = need_x.then(|| {
        let mut gx = vec![R::zero(); ci * plow];
        R::gemm(ci, kdim, plow, R::one(), w.data(), false, &gcols, false, R::zero(), &mut gx);
        Tensor::from_vec(x.shape().to_vec(), gx).unwrap()
    });
    (gx, gw, gb)
}

/// Convolution of `x` `(Ci, spatial...)` with `w` and bias `b`.
pub fn conv_forward<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>, stride: Stride) -> Result<Tensor<R>> {
    match stride {
        Stride::One => Ok(conv_forward_cached(x, w, b, 1)?.0),
        Stride::Two => Ok(conv_forward_cached(x, w, b, 2)?.0),
        Stride::UpTwo => Ok(conv_transpose_forward(x, w, b)?.0),
    }
}

/// `y = x` where `x > 0`, else `slope[c] * x`.
pub fn prelu<R: Real>(x: &Tensor<R>, slopes: &Tensor<R>) -> Result<Tensor<R>> {
    let c = x.shape()[0];
    if slopes.shape() != [c] {
        return Err(invalid!("{} PReLU slopes for {c} channels", slopes.numel()));
    }
    let n = x.numel() / c;
    let mut out = x.clone();
    for (chunk, &a) in out.data_mut().chunks_mut(n).zip(slopes.data()) {
        for v in chunk {
            if *v <= R::zero() {
                *v = a * *v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct 2D cross-correlation with zero padding.
    fn oracle_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Tensor<f64> {
        let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let p = k / 2;
        let (oh, ow) = ((h + 2 * p - k) / stride + 1, (wd + 2 * p - k) / stride + 1);
        Tensor::from_fn(&[co, oh, ow], |o| {
            let mut acc = b.get(&[o[0]]);
            for c in 0..ci {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (o[1] * stride + ky) as isize - p as isize;
                        let ix = (o[2] * stride + kx) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w.get(&[o[0], c, ky, kx]) * x.get(&[c, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 5, 6], &mut rng);
        let w = Tensor::from_fn(&[2, 2, 3, 3], |i| if i[0] == i[1] && i[2] == 1 && i[3] == 1 { 1.0 } else { 0.0 });
        let y = conv_forward(&x, &w, &Tensor::zeros(&[2]), Stride::One).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[1, 5, 5], 1.0f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv_forward(&x, &w, &Tensor::zeros(&[1]), Stride::One).unwrap();
        assert_eq!(y.get(&[0, 2, 2]), 9.0);
        assert_eq!(y.get(&[0, 0, 0]), 4.0);
        assert_eq!(y.get(&[0, 0, 2]), 6.0);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stride, h, w) in [(1, 7, 9), (2, 8, 10), (2, 7, 5)] {
            let x = rand_tensor(&[3, h, w], &mut rng);
            let k = rand_tensor(&[4, 3, 3, 3], &mut rng);
            let b = rand_tensor(&[4], &mut rng);
            let s = if stride == 1 { Stride::One } else { Stride::Two };
            let y = conv_forward(&x, &k, &b, s).unwrap();
            let o = oracle_conv2d(&x, &k, &b, stride);
            assert_eq!(y.shape(), o.shape());
            assert!(y.sub(&o).unwrap().max_abs() < 1e-6);
        }
    }

    #[test]
    fn transpose_is_adjoint_of_strided_conv() {
        // <T x, y> = <x, S y> where S is the stride-2 conv with the same kernel, no bias.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[3, 4, 5], &mut rng);
        let y = rand_tensor(&[2, 8, 10], &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let up = conv_forward(&x, &w, &Tensor::zeros(&[2]), Stride::UpTwo).unwrap();
        assert_eq!(up.shape(), &[2, 8, 10]);
        let down = conv_forward(&y, &w, &Tensor::zeros(&[3]), Stride::Two).unwrap();
        let lhs = up.dot(&y).unwrap();
        let rhs = x.dot(&down).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[3, 1, 3, 3]);
        assert!(conv_forward(&x, &w, &Tensor::zeros(&[3]), Stride::One).is_err());
        let w = Tensor::<f64>::zeros(&[3, 2, 3, 3]);
        assert!(conv_forward(&x, &w, &Tensor::zeros(&[2]), Stride::One).is_err());
    }

    #[test]
    fn three_dimensional_shapes() {
        let x = Tensor::full(&[1, 4, 6, 8], 1.0f64);
        let w = Tensor::full(&[2, 1, 3, 3, 3], 1.0);
        let y = conv_forward(&x, &w, &Tensor::zeros(&[2]), Stride::Two).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 4]);
        assert_eq!(y.get(&[0, 1, 1, 1]), 27.0);
        let w = Tensor::full(&[2, 2, 3, 3, 3], 1.0);
        let z = conv_forward(&y, &w, &Tensor::zeros(&[2]), Stride::UpTwo).unwrap();
        assert_eq!(z.shape(), &[2, 4, 6, 8]);
    }

    #[test]
    fn prelu_values() {
        let x = Tensor::from_vec(vec![2, 2], vec![2.0, -2.0, -4.0, 0.0]).unwrap();
        let y = prelu(&x, &Tensor::from_vec(vec![2], vec![0.25, 0.5]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0, -0.5, -2.0, 0.0]);
        assert!(prelu(&x, &Tensor::full(&[3], 0.1)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = rand_tensor(&[3, 4, 4], &mut rng);
        let s = Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = prelu(&r, &s).unwrap();
        for c in 0..3 {
            for i in 0..16 {
                let v = r.data()[c * 16 + i];
                let e = if v > 0.0 { v } else { s.data()[c] * v };
                assert_eq!(y.data()[c * 16 + i], e);
            }
        }
    }
}
