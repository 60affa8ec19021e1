//! Differentiable operations recorded on a [`Graph`].

use num_complex::Complex;

use super::graph::{Graph, Value, Var};
use crate::deform::{resize_raw, warp_backward, warp_raw};
use crate::error::{ensure_same_shape, invalid, Result};
use crate::fourier::{self, center_shift, center_unshift, crop_block, pad_block};
use crate::model::conv;
use crate::tensor::{Real, Tensor};

fn real<R: Real>(v: Tensor<R>) -> Option<Value<R>> {
    Some(Value::Real(v))
}

fn cplx<R: Real>(v: Tensor<Complex<R>>) -> Option<Value<R>> {
    Some(Value::Complex(v))
}

fn scalar<R: Real>(x: R) -> Tensor<R> {
    Tensor::full(&[1], x)
}

/// Either a real or complex tensor transformed by the same shape-only map.
fn map_value<R: Real>(
    v: &Value<R>,
    fr: impl Fn(&Tensor<R>) -> Result<Tensor<R>>,
    fc: impl Fn(&Tensor<Complex<R>>) -> Result<Tensor<Complex<R>>>,
) -> Result<Value<R>> {
    Ok(match v {
        Value::Real(t) => Value::Real(fr(t)?),
        Value::Complex(t) => Value::Complex(fc(t)?),
    })
}

impl<R: Real> Graph<R> {
    fn real_of(&self, v: Var) -> Result<Tensor<R>> {
        self.real(v)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = match (&*self.value(a), &*self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x.add(y)?),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x.add(y)?),
            _ => return Err(invalid!("add of a real and a complex tensor")),
        };
        Ok(self.record("add", out, &[a, b], |_, _, g, _| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.real_of(a)?.sub(&self.real_of(b)?)?;
        Ok(self.record("sub", Value::Real(out), &[a, b], |_, _, g, _| {
            let g = g.as_real()?;
            Ok(vec![real(g.clone()), real(g.scale(-R::one()))])
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.real_of(a)?.mul(&self.real_of(b)?)?;
        Ok(self.record("mul", Value::Real(out), &[a, b], |inp, _, g, needs| {
            let g = g.as_real()?;
            let ga = if needs[0] { real(g.mul(inp[1].as_real()?)?) } else { None };
            let gb = if needs[1] { real(g.mul(inp[0].as_real()?)?) } else { None };
            Ok(vec![ga, gb])
        }))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.real_of(a)?.zip_with(&self.real_of(b)?, "div", |x, y| *x / *y)?;
        Ok(self.record("div", Value::Real(out), &[a, b], |inp, out, g, needs| {
            let (g, b, q) = (g.as_real()?, inp[1].as_real()?, out.as_real()?);
            let ga = g.zip_with(b, "div", |g, b| *g / *b)?;
            let gb = if needs[1] { real(ga.mul(q)?.scale(-R::one())) } else { None };
            Ok(vec![needs[0].then_some(Value::Real(ga)), gb])
        }))
    }

    pub fn scale(&self, a: Var, factor: R) -> Result<Var> {
        let out = map_value(&self.value(a), |t| Ok(t.scale(factor)), |t| Ok(t.scale(Complex::new(factor, R::zero()))))?;
        Ok(self.record("scale", out, &[a], move |_, _, g, _| {
            let g = map_value(g, |t| Ok(t.scale(factor)), |t| Ok(t.scale(Complex::new(factor, R::zero()))))?;
            Ok(vec![Some(g)])
        }))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -R::one())
    }

    pub fn add_scalar(&self, a: Var, c: R) -> Result<Var> {
        let out = self.real_of(a)?.map(|x| *x + c);
        Ok(self.record("add_scalar", Value::Real(out), &[a], |_, _, g, _| Ok(vec![Some(g.clone())])))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        let out = self.real_of(a)?.map(|x| *x * *x);
        Ok(self.record("square", Value::Real(out), &[a], |inp, _, g, _| {
            let x = inp[0].as_real()?;
            Ok(vec![real(g.as_real()?.zip_with(x, "square", |g, x| *g * (*x + *x))?)])
        }))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        let x = self.real_of(a)?;
        if x.data().iter().any(|v| *v < R::zero()) {
            return Err(invalid!("sqrt of a negative value"));
        }
        let out = x.map(|x| x.sqrt());
        Ok(self.record("sqrt", Value::Real(out), &[a], |_, out, g, _| {
            let two = R::from_f64_lossy(2.0);
            Ok(vec![real(g.as_real()?.zip_with(out.as_real()?, "sqrt", |g, y| *g / (two * *y))?)])
        }))
    }

    /// Sum of all elements, as a shape `[1]` tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let x = self.real_of(a)?;
        let shape = x.shape().to_vec();
        Ok(self.record("sum", Value::Real(scalar(x.sum())), &[a], move |_, _, g, _| {
            Ok(vec![real(Tensor::full(&shape, g.as_real()?.data()[0]))])
        }))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.shape(a).iter().product::<usize>();
        let s = self.sum(a)?;
        self.scale(s, R::one() / R::from_usize(n).unwrap())
    }

    /// Concatenation along axis 0.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<R>> = parts.iter().map(|&v| self.real_of(v)).collect::<Result<_>>()?;
        let refs: Vec<&Tensor<R>> = values.iter().collect();
        let out = Tensor::concat(&refs)?;
        let sizes: Vec<usize> = values.iter().map(|t| t.shape()[0]).collect();
        Ok(self.record("concat", Value::Real(out), parts, move |_, _, g, needs| {
            let g = g.as_real()?;
            let mut start = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (&n, &need) in sizes.iter().zip(needs) {
                grads.push(if need { real(g.narrow(start, n)?) } else { None });
                start += n;
            }
            Ok(grads)
        }))
    }

    /// Rows `start..start + len` of axis 0.
    pub fn narrow(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.real_of(a)?;
        let out = x.narrow(start, len)?;
        let shape = x.shape().to_vec();
        Ok(self.record("narrow", Value::Real(out), &[a], move |_, _, g, _| {
            let g = g.as_real()?;
            let inner: usize = shape[1..].iter().product();
            let mut full = Tensor::zeros(&shape);
            full.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
            Ok(vec![real(full)])
        }))
    }

    /// Per-voxel sum over a cubic window of `window` voxels per spatial axis,
    /// clipped to the domain. `a` is `(C, spatial...)`.
    pub fn box_sum(&self, a: Var, window: usize) -> Result<Var> {
        let x = self.real_of(a)?;
        let out = box_sum_raw(&x, window)?;
        // The clipped window relation is symmetric, so the map is self-adjoint.
        Ok(self.record("box_sum", Value::Real(out), &[a], move |_, _, g, _| {
            Ok(vec![real(box_sum_raw(g.as_real()?, window)?)])
        }))
    }

    /// `out[i] = a[i + 1] - a[i]` along `axis`, zero on the last slice.
    pub fn forward_diff(&self, a: Var, axis: usize) -> Result<Var> {
        let x = self.real_of(a)?;
        if axis >= x.ndim() {
            return Err(invalid!("axis {axis} out of range for {:?}", x.shape()));
        }
        let out = forward_diff_raw(&x, axis, false);
        Ok(self.record("forward_diff", Value::Real(out), &[a], move |_, _, g, _| {
            Ok(vec![real(forward_diff_raw(g.as_real()?, axis, true))])
        }))
    }

    /// Real to complex embedding `x + 0i`.
    pub fn to_complex(&self, a: Var) -> Result<Var> {
        let out = self.real_of(a)?.to_complex();
        Ok(self.record("to_complex", Value::Complex(out), &[a], |_, _, g, _| {
            Ok(vec![real(g.as_complex()?.real())])
        }))
    }

    pub fn real_part(&self, a: Var) -> Result<Var> {
        let out = self.complex(a)?.real();
        Ok(self.record("real_part", Value::Real(out), &[a], |_, _, g, _| {
            Ok(vec![cplx(g.as_real()?.to_complex())])
        }))
    }

    /// Forward DFT over `axes`.
    pub fn dft(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let x = match &*self.value(a) {
            Value::Real(t) => t.to_complex(),
            Value::Complex(t) => t.clone(),
        };
        let is_real = matches!(&*self.value(a), Value::Real(_));
        let out = fourier::dft(&x, axes)?;
        let axes = axes.to_vec();
        Ok(self.record("dft", Value::Complex(out), &[a], move |_, _, g, _| {
            let gx = fourier::dft_adjoint(g.as_complex()?, &axes)?;
            Ok(vec![if is_real { real(gx.real()) } else { cplx(gx) }])
        }))
    }

    /// Inverse DFT (normalized by `1/N`) over `axes`.
    pub fn idft(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = fourier::idft(&self.complex(a)?, axes)?;
        let axes = axes.to_vec();
        Ok(self.record("idft", Value::Complex(out), &[a], move |_, _, g, _| {
            Ok(vec![cplx(fourier::idft_adjoint(g.as_complex()?, &axes)?)])
        }))
    }

    pub fn center_shift(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = map_value(&self.value(a), |t| Ok(center_shift(t, axes)), |t| Ok(center_shift(t, axes)))?;
        let axes = axes.to_vec();
        Ok(self.record("center_shift", out, &[a], move |_, _, g, _| {
            Ok(vec![Some(map_value(g, |t| Ok(center_unshift(t, &axes)), |t| Ok(center_unshift(t, &axes)))?)])
        }))
    }

    pub fn center_unshift(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = map_value(&self.value(a), |t| Ok(center_unshift(t, axes)), |t| Ok(center_unshift(t, axes)))?;
        let axes = axes.to_vec();
        Ok(self.record("center_unshift", out, &[a], move |_, _, g, _| {
            Ok(vec![Some(map_value(g, |t| Ok(center_shift(t, &axes)), |t| Ok(center_shift(t, &axes)))?)])
        }))
    }

    /// Centered crop of the trailing axes to `patch_spatial`.
    pub fn crop(&self, a: Var, patch_spatial: &[usize]) -> Result<Var> {
        let full = self.shape(a);
        let full_spatial = full[full.len() - patch_spatial.len().min(full.len())..].to_vec();
        let out = map_value(&self.value(a), |t| crop_block(t, patch_spatial), |t| crop_block(t, patch_spatial))?;
        Ok(self.record("crop", out, &[a], move |_, _, g, _| {
            Ok(vec![Some(map_value(g, |t| pad_block(t, &full_spatial), |t| pad_block(t, &full_spatial))?)])
        }))
    }

    /// Centered zero-padding of the trailing axes to `full_spatial`.
    pub fn pad(&self, a: Var, full_spatial: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let patch_spatial = shape[shape.len() - full_spatial.len().min(shape.len())..].to_vec();
        let out = map_value(&self.value(a), |t| pad_block(t, full_spatial), |t| pad_block(t, full_spatial))?;
        Ok(self.record("pad", out, &[a], move |_, _, g, _| {
            Ok(vec![Some(map_value(g, |t| crop_block(t, &patch_spatial), |t| crop_block(t, &patch_spatial))?)])
        }))
    }

    /// Zeroes the Nyquist slices of a centered complex spectrum.
    pub fn zero_nyquist(&self, a: Var, rank: usize) -> Result<Var> {
        let out = fourier::zero_nyquist(&self.complex(a)?, rank);
        Ok(self.record("zero_nyquist", Value::Complex(out), &[a], move |_, _, g, _| {
            Ok(vec![cplx(fourier::zero_nyquist(g.as_complex()?, rank))])
        }))
    }

    /// `image(x + u(x))` per channel with clamped linear interpolation.
    pub fn warp(&self, image: Var, u: Var) -> Result<Var> {
        let out = warp_raw(&self.real_of(image)?, &self.real_of(u)?)?;
        Ok(self.record("warp", Value::Real(out), &[image, u], |inp, _, g, needs| {
            let (gi, gu) = warp_backward(inp[0].as_real()?, inp[1].as_real()?, g.as_real()?, needs[0], needs[1]);
            Ok(vec![gi.map(Value::Real), gu.map(Value::Real)])
        }))
    }

    /// `v(x) + u(x + v(x))`.
    pub fn compose(&self, u: Var, v: Var) -> Result<Var> {
        ensure_same_shape("compose", &self.shape(u), &self.shape(v))?;
        let sampled = self.warp(u, v)?;
        self.add(v, sampled)
    }

    /// Scaling and squaring exponential of a velocity field.
    pub fn exp_svf(&self, v: Var, steps: usize) -> Result<Var> {
        if steps == 0 {
            return Err(invalid!("scaling and squaring needs at least one step"));
        }
        let mut u = self.scale(v, R::from_f64_lossy(0.5f64.powi(steps as i32)))?;
        for _ in 0..steps {
            u = self.compose(u, u)?;
        }
        Ok(u)
    }

    /// Linear resize of `(C, spatial...)` to `out_spatial`.
    pub fn resize(&self, a: Var, out_spatial: &[usize]) -> Result<Var> {
        let x = self.real_of(a)?;
        let out = crate::deform::resize_linear(&x, out_spatial)?;
        let in_spatial = x.shape()[1..].to_vec();
        Ok(self.record("resize", Value::Real(out), &[a], move |_, _, g, _| {
            Ok(vec![real(resize_raw(g.as_real()?, &[], Some(&in_spatial)))])
        }))
    }

    /// Convolution with stride 1 or 2; `w` is `(Co, Ci, k...)`, `b` is `(Co)`.
    pub fn conv(&self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (out, cache) = conv::conv_forward_cached(&self.real_of(x)?, &self.real_of(w)?, &self.real_of(b)?, stride)?;
        Ok(self.record("conv", Value::Real(out), &[x, w, b], move |inp, _, g, needs| {
            let (gx, gw, gb) = conv::conv_backward(&cache, inp[1].as_real()?, g.as_real()?, needs[0]);
            Ok(vec![gx.map(Value::Real), real(gw), real(gb)])
        }))
    }

    /// Transposed convolution doubling the resolution; `w` is `(Ci, Co, k...)`.
    pub fn conv_transpose(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (out, geometry) = conv::conv_transpose_forward(&self.real_of(x)?, &self.real_of(w)?, &self.real_of(b)?)?;
        Ok(self.record("conv_transpose", Value::Real(out), &[x, w, b], move |inp, _, g, needs| {
            let (gx, gw, gb) =
                conv::conv_transpose_backward(&geometry, inp[0].as_real()?, inp[1].as_real()?, g.as_real()?, needs[0]);
            Ok(vec![gx.map(Value::Real), real(gw), real(gb)])
        }))
    }

    /// Channel-wise PReLU. The derivative at zero is taken from the right.
    pub fn prelu(&self, x: Var, slopes: Var) -> Result<Var> {
        let out = conv::prelu(&self.real_of(x)?, &self.real_of(slopes)?)?;
        Ok(self.record("prelu", Value::Real(out), &[x, slopes], |inp, _, g, needs| {
            let (x, a, g) = (inp[0].as_real()?, inp[1].as_real()?, g.as_real()?);
            let c = a.numel();
            let n = x.numel() / c;
            let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
            let mut ga = vec![R::zero(); c];
            for ch in 0..c {
                for i in ch * n..(ch + 1) * n {
                    let (xv, gv) = (x.data()[i], g.data()[i]);
                    let negative = xv < R::zero();
                    if let Some(gx) = gx.as_mut() {
                        gx.data_mut()[i] = if negative { a.data()[ch] * gv } else { gv };
                    }
                    if negative {
                        ga[ch] += xv * gv;
                    }
                }
            }
            Ok(vec![gx.map(Value::Real), real(Tensor::from_vec(vec![c], ga)?)])
        }))
    }
}

fn box_sum_raw<R: Real>(x: &Tensor<R>, window: usize) -> Result<Tensor<R>> {
    let spatial = &x.shape()[1..];
    if window % 2 == 0 {
        return Err(invalid!("window must be odd, got {window}"));
    }
    if spatial.iter().any(|&n| window > n) {
        return Err(invalid!("window {window} larger than image {spatial:?}"));
    }
    let half = window / 2;
    let lo_off = half;
    let hi_off = window - 1 - half;
    let mut cur = x.clone();
    let shape = x.shape().to_vec();
    let st = x.strides();
    for axis in 1..shape.len() {
        let n = shape[axis];
        let s = st[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner = s;
        let mut next = Tensor::zeros(&shape);
        let mut prefix = vec![R::zero(); n + 1];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * s + i;
                for k in 0..n {
                    prefix[k + 1] = prefix[k] + cur.data()[base + k * s];
                }
                for k in 0..n {
                    let lo = k.saturating_sub(lo_off);
                    let hi = (k + hi_off + 1).min(n);
                    next.data_mut()[base + k * s] = prefix[hi] - prefix[lo];
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

fn forward_diff_raw<R: Real>(x: &Tensor<R>, axis: usize, adjoint: bool) -> Tensor<R> {
    let shape = x.shape();
    let n = shape[axis];
    let s = x.strides()[axis];
    let outer: usize = shape[..axis].iter().product();
    let mut out = Tensor::zeros(shape);
    let (src, dst) = (x.data(), out.data_mut());
    for o in 0..outer {
        for i in 0..s {
            let base = o * n * s + i;
            for k in 0..n {
                let at = |j: usize| src[base + j * s];
                dst[base + k * s] = if adjoint {
                    let prev = if k >= 1 { at(k - 1) } else { R::zero() };
                    let here = if k + 1 < n { at(k) } else { R::zero() };
                    prev - here
                } else if k + 1 < n {
                    at(k + 1) - at(k)
                } else {
                    R::zero()
                };
            }
        }
    }
    out
}
