//! Deformation algebra on voxel-unit displacement fields.
//!
//! A displacement field `u` has shape `(rank, spatial...)`; channel `k` is
//! the displacement along spatial axis `k`, and the deformation maps
//! `x -> x + u(x)`. Sampling uses linear interpolation with clamp-to-edge
//! coordinates, so `warp(warp(I, u), v) ≈ warp(I, compose(u, v))`.

use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::tensor::{numel, Real, Tensor};

fn check_rank(rank: usize) -> Result<()> {
    if rank == 2 || rank == 3 {
        Ok(())
    } else {
        Err(invalid!("spatial rank must be 2 or 3, got {rank}"))
    }
}

macro_rules! field_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<R> {
            data: Tensor<R>,
        }

        impl<R: Real> $name<R> {
            /// Wraps a `(rank, spatial...)` tensor; rank must be 2 or 3.
            pub fn new(data: Tensor<R>) -> Result<Self> {
                let rank = data.ndim().saturating_sub(1);
                check_rank(rank)?;
                if data.shape()[0] != rank {
                    return Err(invalid!(
                        "field of shape {:?} needs {rank} channels",
                        data.shape()
                    ));
                }
                Ok(Self { data })
            }

            pub fn zeros(spatial: &[usize]) -> Result<Self> {
                let mut shape = vec![spatial.len()];
                shape.extend_from_slice(spatial);
                Self::new(Tensor::zeros(&shape))
            }

            pub fn rank(&self) -> usize {
                self.data.shape()[0]
            }

            pub fn spatial_shape(&self) -> &[usize] {
                &self.data.shape()[1..]
            }

            pub fn as_tensor(&self) -> &Tensor<R> {
                &self.data
            }

            pub fn into_tensor(self) -> Tensor<R> {
                self.data
            }
        }
    };
}

field_newtype!(
    /// Per-voxel displacement in voxel units.
    DisplacementField
);
field_newtype!(
    /// Stationary velocity field; its exponential is a displacement field.
    VelocityField
);

/// `grid[k][x] = x_k`, shape `(rank, spatial...)`.
pub fn identity_grid<R: Real>(spatial: &[usize]) -> Result<Tensor<R>> {
    check_rank(spatial.len())?;
    let mut shape = vec![spatial.len()];
    shape.extend_from_slice(spatial);
    Ok(Tensor::from_fn(&shape, |idx| R::from_usize(idx[1 + idx[0]]).unwrap()))
}

/// Interpolation stencil at one sample point: up to 8 corners.
#[derive(Clone, Copy)]
pub(crate) struct Stencil<R> {
    pub count: usize,
    pub offsets: [usize; 8],
    pub weights: [R; 8],
    /// `dweights[k][c]` = ∂ weight_c / ∂ coord_k (zero on clamped axes).
    pub dweights: [[R; 8]; 3],
}

pub(crate) struct Grid {
    pub rank: usize,
    pub dims: [usize; 3],
    pub strides: [usize; 3],
}

impl Grid {
    pub fn new(spatial: &[usize]) -> Self {
        let rank = spatial.len();
        let mut dims = [1; 3];
        dims[..rank].copy_from_slice(spatial);
        let mut strides = [0; 3];
        let mut s = 1;
        for k in (0..rank).rev() {
            strides[k] = s;
            s *= dims[k];
        }
        Self { rank, dims, strides }
    }

    pub fn voxels(&self) -> usize {
        self.dims[..self.rank].iter().product()
    }

    /// Multi-index of flat voxel `v`.
    pub fn position(&self, mut v: usize) -> [usize; 3] {
        let mut pos = [0; 3];
        for k in (0..self.rank).rev() {
            pos[k] = v % self.dims[k];
            v /= self.dims[k];
        }
        pos
    }

    /// Linear-interpolation stencil at `coord`, clamping each coordinate to
    /// `[0, n-1]`.
    pub fn stencil<R: Real>(&self, coord: &[R; 3]) -> Stencil<R> {
        let zero = R::zero();
        let one = R::one();
        let mut base = [0usize; 3];
        let mut frac = [zero; 3];
        let mut live = [false; 3];
        let mut step = [0usize; 3];
        for k in 0..self.rank {
            let n = self.dims[k];
            if n == 1 {
                continue;
            }
            let hi = R::from_usize(n - 1).unwrap();
            let mut x = coord[k];
            live[k] = true;
            if x.is_nan() || x < zero {
                x = zero;
                live[k] = false;
            } else if x > hi {
                x = hi;
                live[k] = false;
            }
            let i0 = x.floor().to_usize().unwrap().min(n - 2);
            base[k] = i0;
            frac[k] = x - R::from_usize(i0).unwrap();
            step[k] = self.strides[k];
        }
        let count = 1 << self.rank;
        let mut st = Stencil {
            count,
            offsets: [0; 8],
            weights: [zero; 8],
            dweights: [[zero; 8]; 3],
        };
        for c in 0..count {
            let mut off = 0;
            let mut w = one;
            for k in 0..self.rank {
                let upper = (c >> (self.rank - 1 - k)) & 1 == 1;
                off += base[k] * self.strides[k] + if upper { step[k] } else { 0 };
                w = w * if upper { frac[k] } else { one - frac[k] };
            }
            st.offsets[c] = off;
            st.weights[c] = w;
            for d in 0..self.rank {
                if !live[d] {
                    continue;
                }
                let mut dw = one;
                for k in 0..self.rank {
                    let upper = (c >> (self.rank - 1 - k)) & 1 == 1;
                    dw = dw
                        * if k == d {
                            if upper {
                                one
                            } else {
                                -one
                            }
                        } else if upper {
                            frac[k]
                        } else {
                            one - frac[k]
                        };
                }
                st.dweights[d][c] = dw;
            }
        }
        st
    }
}

fn check_warp_shapes<R: Real>(image: &Tensor<R>, u: &Tensor<R>) -> Result<usize> {
    let rank = u.ndim().saturating_sub(1);
    check_rank(rank)?;
    if u.shape()[0] != rank {
        return Err(invalid!("displacement of shape {:?} needs {rank} channels", u.shape()));
    }
    if image.ndim() != rank + 1 {
        return Err(Error::ShapeMismatch {
            op: "warp",
            left: image.shape().to_vec(),
            right: u.shape().to_vec(),
        });
    }
    ensure_same_shape("warp", &image.shape()[1..], &u.shape()[1..])?;
    Ok(rank)
}

fn sample_coord<R: Real>(grid: &Grid, u: &[R], voxel: usize) -> [R; 3] {
    let pos = grid.position(voxel);
    let n = grid.voxels();
    let mut coord = [R::zero(); 3];
    for k in 0..grid.rank {
        coord[k] = R::from_usize(pos[k]).unwrap() + u[k * n + voxel];
    }
    coord
}

/// `out(x) = image(x + u(x))` for every channel of `image` `(C, spatial...)`.
pub(crate) fn warp_raw<R: Real>(image: &Tensor<R>, u: &Tensor<R>) -> Result<Tensor<R>> {
    check_warp_shapes(image, u)?;
    let grid = Grid::new(&u.shape()[1..]);
    let n = grid.voxels();
    let channels = image.shape()[0];
    let img = image.data();
    let mut out = Tensor::zeros(image.shape());
    let dst = out.data_mut();
    for v in 0..n {
        let st = grid.stencil(&sample_coord(&grid, u.data(), v));
        for c in 0..channels {
            let src = &img[c * n..(c + 1) * n];
            let mut acc = R::zero();
            for k in 0..st.count {
                acc += st.weights[k] * src[st.offsets[k]];
            }
            dst[c * n + v] = acc;
        }
    }
    Ok(out)
}

/// Vector-Jacobian products of [`warp_raw`] for the image and the displacement.
pub(crate) fn warp_backward<R: Real>(
    image: &Tensor<R>,
    u: &Tensor<R>,
    grad_out: &Tensor<R>,
    need_image: bool,
    need_u: bool,
) -> (Option<Tensor<R>>, Option<Tensor<R>>) {
    let grid = Grid::new(&u.shape()[1..]);
    let n = grid.voxels();
    let channels = image.shape()[0];
    let img = image.data();
    let g = grad_out.data();
    let mut gi = need_image.then(|| Tensor::zeros(image.shape()));
    let mut gu = need_u.then(|| Tensor::zeros(u.shape()));
    for v in 0..n {
        let st = grid.stencil(&sample_coord(&grid, u.data(), v));
        for c in 0..channels {
            let gv = g[c * n + v];
            if let Some(gi) = gi.as_mut() {
                let dst = &mut gi.data_mut()[c * n..(c + 1) * n];
                for k in 0..st.count {
                    dst[st.offsets[k]] += st.weights[k] * gv;
                }
            }
            if let Some(gu) = gu.as_mut() {
                let src = &img[c * n..(c + 1) * n];
                for d in 0..grid.rank {
                    let mut acc = R::zero();
                    for k in 0..st.count {
                        acc += st.dweights[d][k] * src[st.offsets[k]];
                    }
                    gu.data_mut()[d * n + v] += acc * gv;
                }
            }
        }
    }
    (gi, gu)
}

/// Warps `image` `(C, spatial...)` by `u`: `out(x) = image(x + u(x))`.
pub fn warp<R: Real>(image: &Tensor<R>, u: &DisplacementField<R>) -> Result<Tensor<R>> {
    warp_raw(image, u.as_tensor())
}

/// `w(x) = v(x) + u(x + v(x))`: warping by `w` equals warping by `u` and
/// then by `v`.
pub fn compose<R: Real>(u: &DisplacementField<R>, v: &DisplacementField<R>) -> Result<DisplacementField<R>> {
    ensure_same_shape("compose", u.as_tensor().shape(), v.as_tensor().shape())?;
    let sampled = warp_raw(u.as_tensor(), v.as_tensor())?;
    DisplacementField::new(sampled.add(v.as_tensor())?)
}

/// Scaling and squaring: `u = v / 2^steps`, then `u <- compose(u, u)` `steps` times.
pub fn exp_svf<R: Real>(v: &VelocityField<R>, steps: usize) -> Result<DisplacementField<R>> {
    if steps == 0 {
        return Err(invalid!("scaling and squaring needs at least one step"));
    }
    let scale = R::from_f64_lossy(0.5f64.powi(steps as i32));
    let mut u = DisplacementField::new(v.as_tensor().scale(scale))?;
    for _ in 0..steps {
        u = compose(&u, &u)?;
    }
    Ok(u)
}

/// Bilinear/trilinear resize of `(C, spatial...)` to `out_spatial`, using
/// half-voxel-centered coordinates and edge clamping.
pub(crate) fn resize_coords<R: Real>(in_n: usize, out_n: usize, o: usize) -> R {
    let scale = R::from_usize(in_n).unwrap() / R::from_usize(out_n).unwrap();
    let half = R::from_f64_lossy(0.5);
    (R::from_usize(o).unwrap() + half) * scale - half
}

pub(crate) fn resize_raw<R: Real>(x: &Tensor<R>, out_spatial: &[usize], adjoint_of: Option<&[usize]>) -> Tensor<R> {
    // Forward: x is (C, in...), returns (C, out...). Adjoint: x is (C, out...)
    // and `adjoint_of` gives the input spatial shape to scatter into.
    let channels = x.shape()[0];
    let (in_spatial, out_spatial): (Vec<usize>, Vec<usize>) = match adjoint_of {
        None => (x.shape()[1..].to_vec(), out_spatial.to_vec()),
        Some(src) => (src.to_vec(), x.shape()[1..].to_vec()),
    };
    let in_grid = Grid::new(&in_spatial);
    let out_grid = Grid::new(&out_spatial);
    let (ni, no) = (in_grid.voxels(), out_grid.voxels());
    let result_spatial = if adjoint_of.is_some() { &in_spatial } else { &out_spatial };
    let mut shape = vec![channels];
    shape.extend_from_slice(result_spatial);
    let mut out = Tensor::zeros(&shape);
    for o in 0..no {
        let pos = out_grid.position(o);
        let mut coord = [R::zero(); 3];
        for k in 0..in_grid.rank {
            coord[k] = resize_coords(in_spatial[k], out_spatial[k], pos[k]);
        }
        let st = in_grid.stencil(&coord);
        for c in 0..channels {
            if adjoint_of.is_some() {
                let g = x.data()[c * no + o];
                let dst = &mut out.data_mut()[c * ni..(c + 1) * ni];
                for k in 0..st.count {
                    dst[st.offsets[k]] += st.weights[k] * g;
                }
            } else {
                let src = &x.data()[c * ni..(c + 1) * ni];
                let mut acc = R::zero();
                for k in 0..st.count {
                    acc += st.weights[k] * src[st.offsets[k]];
                }
                out.data_mut()[c * no + o] = acc;
            }
        }
    }
    out
}

/// Linear resize of a `(C, spatial...)` tensor.
pub fn resize_linear<R: Real>(x: &Tensor<R>, out_spatial: &[usize]) -> Result<Tensor<R>> {
    if x.ndim() != out_spatial.len() + 1 {
        return Err(invalid!("resize of {:?} to {out_spatial:?}", x.shape()));
    }
    check_rank(out_spatial.len())?;
    Ok(resize_raw(x, out_spatial, None))
}

/// Finite-difference derivative of channel data along `axis`: central in the
/// interior, one-sided at the two borders, zero on length-one axes.
fn derivative<R: Real>(f: &[R], grid: &Grid, axis: usize, voxel: usize) -> R {
    let n = grid.dims[axis];
    if n == 1 {
        return R::zero();
    }
    let i = grid.position(voxel)[axis];
    let s = grid.strides[axis];
    if i == 0 {
        f[voxel + s] - f[voxel]
    } else if i == n - 1 {
        f[voxel] - f[voxel - s]
    } else {
        (f[voxel + s] - f[voxel - s]) / R::from_f64_lossy(2.0)
    }
}

/// Per-voxel determinant of the Jacobian of `x + u(x)`.
pub fn jacobian_det<R: Real>(u: &DisplacementField<R>) -> Tensor<R> {
    let grid = Grid::new(u.spatial_shape());
    let n = grid.voxels();
    let rank = u.rank();
    let data = u.as_tensor().data();
    let mut out = Tensor::zeros(u.spatial_shape());
    for v in 0..n {
        let mut j = [[R::zero(); 3]; 3];
        for a in 0..rank {
            for b in 0..rank {
                j[a][b] = derivative(&data[a * n..(a + 1) * n], &grid, b, v)
                    + if a == b { R::one() } else { R::zero() };
            }
        }
        out.data_mut()[v] = if rank == 2 {
            j[0][0] * j[1][1] - j[0][1] * j[1][0]
        } else {
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        };
    }
    out
}

/// Percentage of voxels whose Jacobian determinant is `<= 0`.
pub fn neg_jac_fraction<R: Real>(u: &DisplacementField<R>) -> f64 {
    let det = jacobian_det(u);
    let folded = det.data().iter().filter(|&&d| d <= R::zero()).count();
    100.0 * folded as f64 / numel(u.spatial_shape()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_field(spatial: [usize; 2], amp: f64, seed: u64) -> DisplacementField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let (h, w) = (spatial[0] as f64, spatial[1] as f64);
        DisplacementField::new(Tensor::from_fn(&[2, spatial[0], spatial[1]], |i| {
            let (y, x) = (i[1] as f64 / h, i[2] as f64 / w);
            let c = i[0] * 4;
            amp * 0.5
                * ((std::f64::consts::TAU * y + p[c]).sin() * (std::f64::consts::TAU * x + p[c + 1]).cos()
                    + (std::f64::consts::TAU * (x + y) + p[c + 2]).sin())
        }))
        .unwrap()
    }

    fn smooth_image(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, h, w], |i| {
            let (y, x) = (i[1] as f64 / h as f64, i[2] as f64 / w as f64);
            (std::f64::consts::PI * y).sin() * (std::f64::consts::PI * 2.0 * x).cos() + 0.3 * y
        })
    }

    /// Scalar bilinear lookup with explicit clamping, written independently.
    fn oracle_bilinear(img: &Tensor<f64>, y: f64, x: f64) -> f64 {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |a: usize, b: usize| img.get(&[0, a, b]);
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    }

    #[test]
    fn identity_grid_layout() {
        let g = identity_grid::<f64>(&[2, 2]).unwrap();
        assert_eq!(g.channel(0).data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(g.channel(1).data(), &[0.0, 1.0, 0.0, 1.0]);
        assert!(identity_grid::<f64>(&[3]).is_err());
        assert!(identity_grid::<f64>(&[2, 2, 2, 2]).is_err());
    }

    #[test]
    fn zero_displacement_is_exact_identity() {
        let img = smooth_image(7, 9);
        let out = warp(&img, &DisplacementField::zeros(&[7, 9]).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn shift_with_clamp_on_ramp() {
        let (h, w) = (4, 6);
        let img = Tensor::from_fn(&[1, h, w], |i| i[2] as f64);
        let mut u = Tensor::zeros(&[2, h, w]);
        for v in u.data_mut()[h * w..].iter_mut() {
            *v = 1.0;
        }
        let out = warp(&img, &DisplacementField::new(u).unwrap()).unwrap();
        for i in 0..h {
            for j in 0..w {
                assert_eq!(out.get(&[0, i, j]), (j + 1).min(w - 1) as f64);
            }
        }
    }

    #[test]
    fn warp_matches_scalar_oracle() {
        let img = smooth_image(20, 24);
        let u = smooth_field([20, 24], 3.0, 11);
        let out = warp(&img, &u).unwrap();
        for i in 0..20 {
            for j in 0..24 {
                let y = i as f64 + u.as_tensor().get(&[0, i, j]);
                let x = j as f64 + u.as_tensor().get(&[1, i, j]);
                assert!((out.get(&[0, i, j]) - oracle_bilinear(&img, y, x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warp_shape_errors() {
        let img = Tensor::<f64>::zeros(&[1, 4, 5]);
        assert!(warp(&img, &DisplacementField::zeros(&[4, 4]).unwrap()).is_err());
        assert!(DisplacementField::new(Tensor::<f64>::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn compose_with_zero_is_identity() {
        let u = smooth_field([12, 12], 2.0, 3);
        let z = DisplacementField::zeros(&[12, 12]).unwrap();
        assert_eq!(compose(&u, &z).unwrap(), u);
        assert_eq!(compose(&z, &u).unwrap(), u);
    }

    fn constant_field(spatial: [usize; 2], t: [f64; 2]) -> DisplacementField<f64> {
        DisplacementField::new(Tensor::from_fn(&[2, spatial[0], spatial[1]], |i| t[i[0]])).unwrap()
    }

    #[test]
    fn translations_add_in_the_interior() {
        let a = constant_field([16, 16], [1.5, -0.5]);
        let b = constant_field([16, 16], [-2.0, 1.25]);
        let c = compose(&a, &b).unwrap();
        for i in 4..12 {
            for j in 4..12 {
                assert!((c.as_tensor().get(&[0, i, j]) + 0.5).abs() < 1e-12);
                assert!((c.as_tensor().get(&[1, i, j]) - 0.75).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composition_matches_two_pass_warp() {
        let img = smooth_image(64, 64);
        let u = smooth_field([64, 64], 1.5, 5);
        let v = smooth_field([64, 64], 1.5, 6);
        let two_pass = warp(&warp(&img, &u).unwrap(), &v).unwrap();
        let once = warp(&img, &compose(&u, &v).unwrap()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 4..60 {
            for j in 4..60 {
                worst = worst.max((two_pass.get(&[0, i, j]) - once.get(&[0, i, j])).abs());
            }
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn exp_of_zero_and_translation() {
        let zero = VelocityField::<f64>::zeros(&[8, 8]).unwrap();
        assert!(exp_svf(&zero, 7).unwrap().as_tensor().max_abs() == 0.0);
        let t = VelocityField::new(constant_field([24, 24], [0.75, -1.0]).into_tensor()).unwrap();
        let u = exp_svf(&t, 7).unwrap();
        for i in 6..18 {
            for j in 6..18 {
                assert!((u.as_tensor().get(&[0, i, j]) - 0.75).abs() < 1e-12);
                assert!((u.as_tensor().get(&[1, i, j]) + 1.0).abs() < 1e-12);
            }
        }
        assert!(exp_svf(&t, 0).is_err());
    }

    #[test]
    fn exp_steps_converge_and_negation_inverts() {
        let v = VelocityField::new(smooth_field([32, 32], 2.0, 9).into_tensor()).unwrap();
        let e7 = exp_svf(&v, 7).unwrap();
        let e8 = exp_svf(&v, 8).unwrap();
        assert!(e7.as_tensor().sub(e8.as_tensor()).unwrap().max_abs() < 1e-2);
        let neg = VelocityField::new(v.as_tensor().scale(-1.0)).unwrap();
        let back = compose(&e7, &exp_svf(&neg, 7).unwrap()).unwrap();
        let mut worst: f64 = 0.0;
        for c in 0..2 {
            for i in 4..28 {
                for j in 4..28 {
                    worst = worst.max(back.as_tensor().get(&[c, i, j]).abs());
                }
            }
        }
        assert!(worst < 0.1, "{worst}");
        assert_eq!(neg_jac_fraction(&e7), 0.0);
    }

    #[test]
    fn jacobian_of_identity_and_linear_fields() {
        let z = DisplacementField::<f64>::zeros(&[6, 7]).unwrap();
        assert!(jacobian_det(&z).data().iter().all(|&d| d == 1.0));
        assert_eq!(neg_jac_fraction(&z), 0.0);
        let (a, b) = (0.3, -0.2);
        let lin = DisplacementField::new(Tensor::from_fn(&[2, 6, 7], |i| {
            if i[0] == 0 {
                a * i[1] as f64
            } else {
                b * i[2] as f64
            }
        }))
        .unwrap();
        let det = jacobian_det(&lin);
        assert!(det.data().iter().all(|&d| (d - (1.0 + a) * (1.0 + b)).abs() < 1e-12));
    }

    #[test]
    fn folding_field_counts_every_voxel() {
        let fold = DisplacementField::new(Tensor::from_fn(&[2, 8, 8], |i| {
            if i[0] == 0 {
                -2.0 * i[1] as f64
            } else {
                0.0
            }
        }))
        .unwrap();
        assert_eq!(neg_jac_fraction(&fold), 100.0);
    }

    #[test]
    fn jacobian_matches_scalar_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (h, w) = (7, 9);
        let u = Tensor::from_fn(&[2, h, w], |_| rng.gen_range(-1.0..1.0));
        let det = jacobian_det(&DisplacementField::new(u.clone()).unwrap());
        let d = |c: usize, axis: usize, i: usize, j: usize| -> f64 {
            let (n, p) = if axis == 0 { (h, i) } else { (w, j) };
            let at = |q: usize| if axis == 0 { u.get(&[c, q, j]) } else { u.get(&[c, i, q]) };
            if p == 0 {
                at(1) - at(0)
            } else if p == n - 1 {
                at(n - 1) - at(n - 2)
            } else {
                0.5 * (at(p + 1) - at(p - 1))
            }
        };
        for i in 0..h {
            for j in 0..w {
                let expect = (1.0 + d(0, 0, i, j)) * (1.0 + d(1, 1, i, j)) - d(0, 1, i, j) * d(1, 0, i, j);
                assert!((det.get(&[i, j]) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trilinear_warp_of_translation() {
        let img = Tensor::from_fn(&[1, 5, 6, 7], |i| (i[1] + 2 * i[2] + 3 * i[3]) as f64);
        let u = DisplacementField::new(Tensor::from_fn(&[3, 5, 6, 7], |i| [0.5, 0.25, -0.5][i[0]])).unwrap();
        let out = warp(&img, &u).unwrap();
        // Linear image: interpolation is exact away from clamped borders.
        let expect = (2.0 + 0.5) + 2.0 * (2.0 + 0.25) + 3.0 * (3.0 - 0.5);
        assert!((out.get(&[0, 2, 2, 3]) - expect).abs() < 1e-12);
        assert_eq!(jacobian_det(&u).data().iter().filter(|&&d| (d - 1.0).abs() > 1e-12).count(), 0);
    }

    #[test]
    fn resize_preserves_constants_and_linear_ramps() {
        let c = Tensor::full(&[2, 4, 6], 1.25f64);
        let up = resize_linear(&c, &[8, 12]).unwrap();
        assert!(up.data().iter().all(|&v| (v - 1.25).abs() < 1e-12));
        let down = resize_linear(&up, &[4, 6]).unwrap();
        assert!(down.data().iter().all(|&v| (v - 1.25).abs() < 1e-12));
    }
}
