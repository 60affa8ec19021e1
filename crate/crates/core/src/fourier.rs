//! Discrete Fourier transforms and the band-limited codec.
//!
//! Tensors are channel-first: `(C, spatial...)`, and transforms run over the
//! trailing spatial axes. The forward transform is unnormalized and the
//! inverse carries `1/N`, so `idft(dft(x)) == x`.
//!
//! A band-limited field is stored as a [`BandLimitedPatch`]: the centered
//! low-frequency block of its spectrum. Decoding zero-pads the patch back to
//! the full grid, moves DC back to the corner and applies the inverse DFT.
//! For a real field whose spectrum lies inside the block, the inverse DFT of
//! the (uncentered) patch itself reproduces the field subsampled by the
//! reduction factors, scaled by their product.

use num_complex::Complex;
use num_traits::Zero;
use rustfft::FftPlanner;

use crate::error::{ensure_same_shape, invalid, Result};
use crate::tensor::{numel, strides, Real, Tensor};

/// Axes `ndim - rank .. ndim`.
pub fn trailing_axes(ndim: usize, rank: usize) -> Vec<usize> {
    (ndim - rank..ndim).collect()
}

fn check_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    if axes.is_empty() {
        return Err(invalid!("DFT needs at least one axis"));
    }
    for (k, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            return Err(invalid!("axis {a} out of range for shape {shape:?}"));
        }
        if axes[..k].contains(&a) {
            return Err(invalid!("axis {a} listed twice"));
        }
    }
    Ok(())
}

fn transform_in_place<R: Real>(x: &mut Tensor<Complex<R>>, axes: &[usize], inverse: bool) {
    let shape = x.shape().to_vec();
    let st = strides(&shape);
    let mut planner = FftPlanner::<R>::new();
    let data = x.data_mut();
    for &axis in axes {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = st[axis];
        if stride == 1 {
            fft.process(data);
            continue;
        }
        // Each block of `n * stride` holds `stride` interleaved lines.
        let mut buf = vec![Complex::<R>::zero(); n * stride];
        for block in data.chunks_mut(n * stride) {
            for i in 0..n {
                for j in 0..stride {
                    buf[j * n + i] = block[i * stride + j];
                }
            }
            fft.process(&mut buf);
            for i in 0..n {
                for j in 0..stride {
                    block[i * stride + j] = buf[j * n + i];
                }
            }
        }
    }
}

fn axes_len(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

/// Unnormalized forward DFT over `axes`.
pub fn dft<R: Real>(x: &Tensor<Complex<R>>, axes: &[usize]) -> Result<Tensor<Complex<R>>> {
    check_axes(x.shape(), axes)?;
    let mut out = x.clone();
    transform_in_place(&mut out, axes, false);
    Ok(out)
}

/// Forward DFT of a real tensor.
pub fn dft_real<R: Real>(x: &Tensor<R>, axes: &[usize]) -> Result<Tensor<Complex<R>>> {
    dft(&x.to_complex(), axes)
}

/// Inverse DFT with `1/N` normalization.
pub fn idft<R: Real>(x: &Tensor<Complex<R>>, axes: &[usize]) -> Result<Tensor<Complex<R>>> {
    check_axes(x.shape(), axes)?;
    let mut out = x.clone();
    transform_in_place(&mut out, axes, true);
    let scale = R::one() / R::from_usize(axes_len(x.shape(), axes)).unwrap();
    for v in out.data_mut() {
        *v = v.scale(scale);
    }
    Ok(out)
}

/// Adjoint of [`dft`] under the real inner product: the unnormalized
/// inverse transform.
pub fn dft_adjoint<R: Real>(g: &Tensor<Complex<R>>, axes: &[usize]) -> Result<Tensor<Complex<R>>> {
    check_axes(g.shape(), axes)?;
    let mut out = g.clone();
    transform_in_place(&mut out, axes, true);
    Ok(out)
}

/// Adjoint of [`idft`]: the forward transform divided by `N`.
pub fn idft_adjoint<R: Real>(g: &Tensor<Complex<R>>, axes: &[usize]) -> Result<Tensor<Complex<R>>> {
    let mut out = dft(g, axes)?;
    let scale = R::one() / R::from_usize(axes_len(g.shape(), axes)).unwrap();
    for v in out.data_mut() {
        *v = v.scale(scale);
    }
    Ok(out)
}

/// Circular roll: `out[(i + shift[k]) mod n]` = `in[i]` along each axis.
fn roll<T: Clone>(x: &Tensor<T>, axes: &[usize], shift_for: impl Fn(usize) -> usize) -> Tensor<T> {
    let shape = x.shape();
    let mut shifts = vec![0; shape.len()];
    for &a in axes {
        shifts[a] = shift_for(shape[a]) % shape[a];
    }
    let st = strides(shape);
    let src = x.data();
    let mut out = src.to_vec();
    let mut idx = vec![0usize; shape.len()];
    for value in src {
        let mut off = 0;
        for k in 0..shape.len() {
            let j = idx[k] + shifts[k];
            let j = if j >= shape[k] { j - shape[k] } else { j };
            off += j * st[k];
        }
        out[off] = value.clone();
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Tensor::from_vec(shape.to_vec(), out).expect("roll preserves shape")
}

/// Moves DC from index 0 to index `n/2` along each axis.
pub fn center_shift<T: Clone>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    roll(x, axes, |n| n / 2)
}

/// Inverse of [`center_shift`]; identical to it on even-length axes.
pub fn center_unshift<T: Clone>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    roll(x, axes, |n| n - n / 2)
}

/// Copies the block of `dst`-sized window starting at `start` (trailing
/// axes) out of `src`, or scatters `src` into a zeroed larger tensor when
/// `scatter` is set.
fn block_copy<T: Clone + Zero>(
    src: &Tensor<T>,
    out_shape: &[usize],
    start: &[usize],
    scatter: bool,
) -> Tensor<T> {
    let mut out = Tensor::zeros(out_shape);
    let (small, big) = if scatter {
        (src.shape().to_vec(), out_shape.to_vec())
    } else {
        (out_shape.to_vec(), src.shape().to_vec())
    };
    let lead = small.len() - start.len();
    let big_st = strides(&big);
    let mut idx = vec![0usize; small.len()];
    for flat in 0..numel(&small) {
        let mut off = 0;
        for k in 0..small.len() {
            let s = if k >= lead { start[k - lead] } else { 0 };
            off += (idx[k] + s) * big_st[k];
        }
        if scatter {
            out.data_mut()[off] = src.data()[flat].clone();
        } else {
            out.data_mut()[flat] = src.data()[off].clone();
        }
        for k in (0..small.len()).rev() {
            idx[k] += 1;
            if idx[k] < small[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

fn crop_starts(full: &[usize], patch: &[usize]) -> Vec<usize> {
    full.iter().zip(patch).map(|(&n, &m)| (n - m) / 2).collect()
}

/// Extracts the centered block of extent `patch_spatial` from a centered
/// spectrum `(C, full...)`.
pub fn crop_block<T: Clone + Zero>(x: &Tensor<T>, patch_spatial: &[usize]) -> Result<Tensor<T>> {
    let rank = patch_spatial.len();
    let shape = x.shape();
    if rank > shape.len() {
        return Err(invalid!("crop of rank {rank} on shape {shape:?}"));
    }
    let lead = shape.len() - rank;
    if shape[lead..].iter().zip(patch_spatial).any(|(&n, &m)| m == 0 || m > n) {
        return Err(invalid!("cannot crop {patch_spatial:?} out of {shape:?}"));
    }
    let mut out_shape = shape[..lead].to_vec();
    out_shape.extend_from_slice(patch_spatial);
    let start = crop_starts(&shape[lead..], patch_spatial);
    Ok(block_copy(x, &out_shape, &start, false))
}

/// Zero-pads a centered block `(C, patch...)` into a centered `(C, full...)`
/// tensor. Adjoint of [`crop_block`].
pub fn pad_block<T: Clone + Zero>(x: &Tensor<T>, full_spatial: &[usize]) -> Result<Tensor<T>> {
    let rank = full_spatial.len();
    let shape = x.shape();
    if rank > shape.len() {
        return Err(invalid!("pad of rank {rank} on shape {shape:?}"));
    }
    let lead = shape.len() - rank;
    if shape[lead..].iter().zip(full_spatial).any(|(&m, &n)| m > n) {
        return Err(invalid!("cannot pad {shape:?} to {full_spatial:?}"));
    }
    let mut out_shape = shape[..lead].to_vec();
    out_shape.extend_from_slice(full_spatial);
    let start = crop_starts(full_spatial, &shape[lead..]);
    Ok(block_copy(x, &out_shape, &start, true))
}

fn patch_extent(full: &[usize], reduction: &[usize]) -> Result<Vec<usize>> {
    if full.len() != reduction.len() {
        return Err(invalid!(
            "reduction {reduction:?} does not match spatial shape {full:?}"
        ));
    }
    full.iter()
        .zip(reduction)
        .map(|(&n, &r)| {
            if r == 0 || n % r != 0 {
                return Err(invalid!("reduction {r} does not divide axis length {n}"));
            }
            let m = n / r;
            if r > 1 && m % 2 != 0 {
                return Err(invalid!(
                    "patch extent {m} (= {n}/{r}) must be even"
                ));
            }
            Ok(m)
        })
        .collect()
}

/// Low-frequency block of a spectrum, DC at the patch center.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimitedPatch<R> {
    coeffs: Tensor<Complex<R>>,
    full_shape: Vec<usize>,
    reduction: Vec<usize>,
}

impl<R: Real> BandLimitedPatch<R> {
    /// Validates that `coeffs` is `(C, full/reduction...)`.
    pub fn new(coeffs: Tensor<Complex<R>>, full_shape: Vec<usize>, reduction: Vec<usize>) -> Result<Self> {
        let extent = patch_extent(&full_shape, &reduction)?;
        let shape = coeffs.shape();
        if shape.len() != extent.len() + 1 || shape[1..] != extent[..] {
            return Err(invalid!(
                "patch of shape {shape:?} inconsistent with full shape {full_shape:?} / reduction {reduction:?}"
            ));
        }
        Ok(Self {
            coeffs,
            full_shape,
            reduction,
        })
    }

    pub fn coeffs(&self) -> &Tensor<Complex<R>> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Tensor<Complex<R>> {
        self.coeffs
    }

    pub fn full_shape(&self) -> &[usize] {
        &self.full_shape
    }

    pub fn reduction(&self) -> &[usize] {
        &self.reduction
    }

    pub fn rank(&self) -> usize {
        self.full_shape.len()
    }

    pub fn channels(&self) -> usize {
        self.coeffs.shape()[0]
    }
}

/// Indicator of the centered low-frequency block on the full (centered) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask<R> {
    mask: Tensor<R>,
}

impl<R: Real> FreqMask<R> {
    pub fn new(full_shape: &[usize], reduction: &[usize]) -> Result<Self> {
        let extent = patch_extent(full_shape, reduction)?;
        let ones = Tensor::full(&extent, R::one());
        Ok(Self {
            mask: pad_block(&ones, full_shape)?,
        })
    }

    pub fn mask(&self) -> &Tensor<R> {
        &self.mask
    }

    /// Multiplies every channel of a centered spectrum `(C, full...)` by the mask.
    pub fn apply(&self, x: &Tensor<Complex<R>>) -> Result<Tensor<Complex<R>>> {
        let shape = x.shape();
        ensure_same_shape("freq_mask", &shape[1..], self.mask.shape())?;
        let inner = self.mask.numel();
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (v, &m) in chunk.iter_mut().zip(self.mask.data()) {
                *v = v.scale(m);
            }
        }
        Ok(out)
    }

    /// Fraction of `x`'s spectral energy (centered layout) outside the mask.
    pub fn energy_outside(&self, x: &Tensor<Complex<R>>) -> Result<R> {
        ensure_same_shape("freq_mask", &x.shape()[1..], self.mask.shape())?;
        let inner = self.mask.numel();
        let mut outside = R::zero();
        for chunk in x.data().chunks(inner) {
            for (v, &m) in chunk.iter().zip(self.mask.data()) {
                outside += v.norm_sqr() * (R::one() - m);
            }
        }
        let total = x.energy();
        Ok(if total > R::zero() { outside / total } else { R::zero() })
    }
}

/// Center-crops a centered spectrum `(C, full...)` by per-axis `reduction`.
pub fn crop_center<R: Real>(x: &Tensor<Complex<R>>, reduction: &[usize]) -> Result<BandLimitedPatch<R>> {
    if x.ndim() != reduction.len() + 1 {
        return Err(invalid!(
            "expected (C, spatial...) with {} spatial axes, got {:?}",
            reduction.len(),
            x.shape()
        ));
    }
    let full = x.shape()[1..].to_vec();
    let extent = patch_extent(&full, reduction)?;
    let coeffs = crop_block(x, &extent)?;
    BandLimitedPatch::new(coeffs, full, reduction.to_vec())
}

/// Zero-pads a patch to its full centered spectrum.
pub fn pad_center<R: Real>(p: &BandLimitedPatch<R>) -> Result<Tensor<Complex<R>>> {
    pad_block(p.coeffs(), p.full_shape())
}

/// Zeroes the Nyquist slice (index 0 in centered layout) of every even-length
/// spatial axis. A real field can only be band-limited to an even-sized
/// centered block if these coefficients vanish.
pub fn zero_nyquist<R: Real>(x: &Tensor<Complex<R>>, rank: usize) -> Tensor<Complex<R>> {
    let mask = nyquist_mask::<R>(&x.shape()[x.ndim() - rank..]);
    let inner = mask.numel();
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(inner) {
        for (v, &m) in chunk.iter_mut().zip(mask.data()) {
            *v = v.scale(m);
        }
    }
    out
}

/// Real mask over a centered grid that is zero on the Nyquist slices.
pub fn nyquist_mask<R: Real>(spatial: &[usize]) -> Tensor<R> {
    Tensor::from_fn(spatial, |idx| {
        let on_nyquist = idx
            .iter()
            .zip(spatial)
            .any(|(&i, &n)| n % 2 == 0 && n > 1 && i == 0);
        if on_nyquist {
            R::zero()
        } else {
            R::one()
        }
    })
}

/// Result of decoding a patch into a real spatial field.
#[derive(Debug, Clone)]
pub struct DecodedField<R> {
    pub field: Tensor<R>,
    /// Largest absolute imaginary part discarded by taking the real part.
    pub imag_residue: R,
}

/// Zero-pad, move DC to the corner, inverse DFT, real part.
pub fn decode_field<R: Real>(p: &BandLimitedPatch<R>) -> Result<DecodedField<R>> {
    let axes = trailing_axes(p.rank() + 1, p.rank());
    let full = center_unshift(&pad_center(p)?, &axes);
    let spatial = idft(&full, &axes)?;
    let imag_residue = spatial.data().iter().fold(R::zero(), |m, c| m.max(c.im.abs()));
    let field = spatial.real();
    let threshold = R::from_f64_lossy(1e-3) * field.norm2();
    if imag_residue > threshold {
        log::warn!(
            "decoded field discards imaginary residue {imag_residue} (real norm {})",
            field.norm2()
        );
    }
    Ok(DecodedField { field, imag_residue })
}

/// DFT layer: a low-resolution real field `(C, n...)` becomes the centered
/// patch of a field on `full_shape`.
pub fn spatial_to_patch<R: Real>(s: &Tensor<R>, full_shape: &[usize]) -> Result<BandLimitedPatch<R>> {
    let rank = full_shape.len();
    if s.ndim() != rank + 1 {
        return Err(invalid!("expected (C, spatial...) of rank {rank}, got {:?}", s.shape()));
    }
    let reduction: Vec<usize> = full_shape
        .iter()
        .zip(&s.shape()[1..])
        .map(|(&n, &m)| if m > 0 && n % m == 0 { Ok(n / m) } else { Err(invalid!("{m} does not divide {n}")) })
        .collect::<Result<_>>()?;
    let axes = trailing_axes(s.ndim(), rank);
    let coeffs = center_shift(&dft_real(s, &axes)?, &axes);
    BandLimitedPatch::new(coeffs, full_shape.to_vec(), reduction)
}

/// Inverse DFT of the patch itself (DC moved back to the corner): the
/// low-resolution spatial representation of the band-limited signal.
pub fn patch_to_spatial<R: Real>(p: &BandLimitedPatch<R>) -> Result<Tensor<Complex<R>>> {
    let axes = trailing_axes(p.rank() + 1, p.rank());
    idft(&center_unshift(p.coeffs(), &axes), &axes)
}

/// Band-limited image: DFT, center crop, inverse DFT on the patch, real part.
/// `image` is `(C, spatial...)`.
pub fn encode_band_limited_image<R: Real>(image: &Tensor<R>, reduction: &[usize]) -> Result<Tensor<R>> {
    if image.ndim() != reduction.len() + 1 {
        return Err(invalid!(
            "image {:?} does not have {} spatial axes",
            image.shape(),
            reduction.len()
        ));
    }
    let axes = trailing_axes(image.ndim(), reduction.len());
    let spectrum = center_shift(&dft_real(image, &axes)?, &axes);
    let patch = crop_center(&spectrum, reduction)?;
    Ok(patch_to_spatial(&patch)?.real())
}
