//! Dense row-major n-dimensional arrays.
//!
//! [`Tensor<T>`] is generic over its scalar: `f32`/`f64` for real data,
//! [`Complex`] for spectra and `i32` for label maps. Binary operations never
//! broadcast except against a scalar; mismatched shapes are an error.
//! [`AnyTensor`] carries the dtype at runtime for file I/O and for the
//! promotion rules between differently typed operands.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive, Zero};

use crate::error::{ensure_same_shape, invalid, Error, Result};

/// Real scalar usable throughout the stack (`f32` for training, `f64` for
/// verification).
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major operands,
    /// where `op` optionally transposes. `a` is `m x k` after `op`, `b` is
    /// `k x n` after `op`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("representable float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Stored row-major as `rows x cols` when not transposed, `cols x rows` otherwise.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Real for $t {
            const DTYPE: Dtype = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, trans_a);
                let (rsb, csb) = gemm_strides(k, n, trans_b);
                // SAFETY: slice lengths were checked above and the strides
                // describe dense row-major layouts of those slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, Dtype::Real32, matrixmultiply::sgemm);
impl_real!(f64, Dtype::Real64, matrixmultiply::dgemm);

/// Runtime element type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    Real32,
    Real64,
    Complex64,
    Complex128,
    Int32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Real32 => "real32",
            Dtype::Real64 => "real64",
            Dtype::Complex64 => "complex64",
            Dtype::Complex128 => "complex128",
            Dtype::Int32 => "int32",
        }
    }

    fn is_complex(self) -> bool {
        matches!(self, Dtype::Complex64 | Dtype::Complex128)
    }

    fn is_double(self) -> bool {
        matches!(self, Dtype::Real64 | Dtype::Complex128)
    }

    /// Common dtype of a binary operation, if one exists. Integers only
    /// combine with integers.
    pub fn promote(self, other: Dtype) -> Option<Dtype> {
        if self == other {
            return Some(self);
        }
        if self == Dtype::Int32 || other == Dtype::Int32 {
            return None;
        }
        let double = self.is_double() || other.is_double();
        let complex = self.is_complex() || other.is_complex();
        Some(match (complex, double) {
            (false, false) => Dtype::Real32,
            (false, true) => Dtype::Real64,
            (true, false) => Dtype::Complex64,
            (true, true) => Dtype::Complex128,
        })
    }
}

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &DataPreview(&self.data))
            .finish()
    }
}

struct DataPreview<'a, T>(&'a [T]);

impl<T: Debug> Debug for DataPreview<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOWN: usize = 8;
        let mut list = f.debug_list();
        list.entries(self.0.iter().take(SHOWN));
        if self.0.len() > SHOWN {
            list.entry(&format_args!("... {} more", self.0.len() - SHOWN));
        }
        list.finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * shape[k + 1];
    }
    out
}

impl<T: Clone> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid!("tensor shape must be non-empty and positive, got {shape:?}"));
        }
        if numel(&shape) != data.len() {
            return Err(invalid!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "invalid shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (k, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {index:?} out of bounds for shape {:?} (axis {k})", self.shape);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)].clone()
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_with<U: Clone, V: Clone>(
        &self,
        other: &Tensor<U>,
        op: &'static str,
        mut f: impl FnMut(&T, &U) -> V,
    ) -> Result<Tensor<V>> {
        ensure_same_shape(op, &self.shape, &other.shape)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        })
    }

    /// Sub-tensor `index` along the leading axis (e.g. one channel).
    pub fn channel(&self, index: usize) -> Tensor<T> {
        assert!(self.ndim() >= 2 && index < self.shape[0]);
        let inner = numel(&self.shape[1..]);
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Contiguous range of the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        if len == 0 || start + len > self.shape[0] {
            return Err(invalid!(
                "narrow {start}..{} outside leading axis of {:?}",
                start + len,
                self.shape
            ));
        }
        let inner = numel(&self.shape[1..]);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..(start + len) * inner].to_vec(),
        })
    }

    /// Concatenates along the leading axis; trailing shapes must agree.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| invalid!("concat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            ensure_same_shape("concat", tail, &p.shape[1..])?;
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Tensor { shape, data })
    }

    /// Adds a leading axis of length one.
    pub fn unsqueeze(self) -> Tensor<T> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.shape);
        Tensor {
            shape,
            data: self.data,
        }
    }
}

impl<T: Clone + Zero> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }
}

/// Elementwise operations shared by real and complex tensors.
impl<T> Tensor<T>
where
    T: Clone + Copy + NumAssign,
{
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |&a, &b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |&a, &b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |&a, &b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|&a| a * factor)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure_same_shape("add_assign", &self.shape, &other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }
}

impl<R: Real> Tensor<R> {
    pub fn abs(&self) -> Self {
        self.map(|a| a.abs())
    }

    pub fn mean(&self) -> R {
        self.sum() / R::from_usize(self.numel()).unwrap()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn norm2(&self) -> R {
        self.data.iter().map(|&x| x * x).sum::<R>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<R> {
        ensure_same_shape("dot", &self.shape, &other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn to_complex(&self) -> Tensor<Complex<R>> {
        self.map(|&a| Complex::new(a, R::zero()))
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        self.map(|&a| S::from_f64_lossy(a.to_f64_lossy()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<R: Real> Tensor<Complex<R>> {
    pub fn conj(&self) -> Self {
        self.map(|a| a.conj())
    }

    pub fn real(&self) -> Tensor<R> {
        self.map(|a| a.re)
    }

    pub fn imag(&self) -> Tensor<R> {
        self.map(|a| a.im)
    }

    pub fn abs(&self) -> Tensor<R> {
        self.map(|a| a.norm())
    }

    /// Multiplies by a real tensor of the same shape.
    pub fn mul_real(&self, other: &Tensor<R>) -> Result<Self> {
        self.zip_with(other, "mul_real", |&a, &b| a * b)
    }

    /// Real inner product `Re <self, other>` = Σ re·re + im·im.
    pub fn real_dot(&self, other: &Self) -> Result<R> {
        ensure_same_shape("real_dot", &self.shape, &other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum())
    }

    pub fn energy(&self) -> R {
        self.data.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn cast<S: Real>(&self) -> Tensor<Complex<S>> {
        self.map(|a| {
            Complex::new(
                S::from_f64_lossy(a.re.to_f64_lossy()),
                S::from_f64_lossy(a.im.to_f64_lossy()),
            )
        })
    }
}

/// A tensor whose dtype is known only at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Real32(Tensor<f32>),
    Real64(Tensor<f64>),
    Complex64(Tensor<Complex<f32>>),
    Complex128(Tensor<Complex<f64>>),
    Int32(Tensor<i32>),
}

/// Elementwise operation selector for [`AnyTensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Unary operation selector for [`AnyTensor::unary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Conj,
    Real,
    Imag,
    Abs,
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::Real32(_) => Dtype::Real32,
            AnyTensor::Real64(_) => Dtype::Real64,
            AnyTensor::Complex64(_) => Dtype::Complex64,
            AnyTensor::Complex128(_) => Dtype::Complex128,
            AnyTensor::Int32(_) => Dtype::Int32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real32(t) => t.shape(),
            AnyTensor::Real64(t) => t.shape(),
            AnyTensor::Complex64(t) => t.shape(),
            AnyTensor::Complex128(t) => t.shape(),
            AnyTensor::Int32(t) => t.shape(),
        }
    }

    /// Converts to `dtype`. Complex to real and anything to/from integers
    /// are not conversions but projections, so they are rejected here.
    pub fn convert(&self, dtype: Dtype) -> Result<AnyTensor> {
        let mismatch = || Error::DtypeMismatch {
            op: "convert",
            left: self.dtype().name(),
            right: dtype.name(),
        };
        if self.dtype() == dtype {
            return Ok(self.clone());
        }
        let as_c128 = match self {
            AnyTensor::Real32(t) => t.to_complex().cast::<f64>(),
            AnyTensor::Real64(t) => t.to_complex(),
            AnyTensor::Complex64(t) => t.cast::<f64>(),
            AnyTensor::Complex128(t) => t.clone(),
            AnyTensor::Int32(_) => return Err(mismatch()),
        };
        match dtype {
            Dtype::Complex128 => Ok(AnyTensor::Complex128(as_c128)),
            Dtype::Complex64 => Ok(AnyTensor::Complex64(as_c128.cast::<f32>())),
            Dtype::Real64 | Dtype::Real32 if !self.dtype().is_complex() => {
                let real = as_c128.real();
                Ok(if dtype == Dtype::Real64 {
                    AnyTensor::Real64(real)
                } else {
                    AnyTensor::Real32(real.cast())
                })
            }
            _ => Err(mismatch()),
        }
    }

    /// Binary elementwise op with dtype promotion.
    pub fn elementwise(&self, op: ElementwiseOp, other: &AnyTensor) -> Result<AnyTensor> {
        let name = match op {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
        };
        let dtype = self.dtype().promote(other.dtype()).ok_or(Error::DtypeMismatch {
            op: name,
            left: self.dtype().name(),
            right: other.dtype().name(),
        })?;
        ensure_same_shape(name, self.shape(), other.shape())?;
        fn apply<T: Copy + NumAssign>(op: ElementwiseOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
            match op {
                ElementwiseOp::Add => a.add(b),
                ElementwiseOp::Sub => a.sub(b),
                ElementwiseOp::Mul => a.mul(b),
            }
        }
        let (a, b) = (self.convert_or_same(dtype)?, other.convert_or_same(dtype)?);
        Ok(match (a, b) {
            (AnyTensor::Real32(a), AnyTensor::Real32(b)) => AnyTensor::Real32(apply(op, &a, &b)?),
            (AnyTensor::Real64(a), AnyTensor::Real64(b)) => AnyTensor::Real64(apply(op, &a, &b)?),
            (AnyTensor::Complex64(a), AnyTensor::Complex64(b)) => {
                AnyTensor::Complex64(apply(op, &a, &b)?)
            }
            (AnyTensor::Complex128(a), AnyTensor::Complex128(b)) => {
                AnyTensor::Complex128(apply(op, &a, &b)?)
            }
            (AnyTensor::Int32(a), AnyTensor::Int32(b)) => AnyTensor::Int32(apply(op, &a, &b)?),
            _ => unreachable!("operands were promoted to a common dtype"),
        })
    }

    fn convert_or_same(&self, dtype: Dtype) -> Result<AnyTensor> {
        if self.dtype() == dtype {
            Ok(self.clone())
        } else {
            self.convert(dtype)
        }
    }

    /// Multiplies by a real scalar.
    pub fn scale(&self, factor: f64) -> Result<AnyTensor> {
        Ok(match self {
            AnyTensor::Real32(t) => AnyTensor::Real32(t.scale(factor as f32)),
            AnyTensor::Real64(t) => AnyTensor::Real64(t.scale(factor)),
            AnyTensor::Complex64(t) => AnyTensor::Complex64(t.scale(Complex::new(factor as f32, 0.0))),
            AnyTensor::Complex128(t) => AnyTensor::Complex128(t.scale(Complex::new(factor, 0.0))),
            AnyTensor::Int32(_) => {
                return Err(Error::DtypeMismatch {
                    op: "scale",
                    left: "int32",
                    right: "real64",
                })
            }
        })
    }

    /// `real`, `imag`, `abs` produce real dtypes; `conj` keeps the dtype.
    /// On real tensors `conj`/`real` are identities and `imag` is zero.
    pub fn unary(&self, op: UnaryOp) -> Result<AnyTensor> {
        Ok(match (self, op) {
            (AnyTensor::Complex64(t), UnaryOp::Conj) => AnyTensor::Complex64(t.conj()),
            (AnyTensor::Complex64(t), UnaryOp::Real) => AnyTensor::Real32(t.real()),
            (AnyTensor::Complex64(t), UnaryOp::Imag) => AnyTensor::Real32(t.imag()),
            (AnyTensor::Complex64(t), UnaryOp::Abs) => AnyTensor::Real32(t.abs()),
            (AnyTensor::Complex128(t), UnaryOp::Conj) => AnyTensor::Complex128(t.conj()),
            (AnyTensor::Complex128(t), UnaryOp::Real) => AnyTensor::Real64(t.real()),
            (AnyTensor::Complex128(t), UnaryOp::Imag) => AnyTensor::Real64(t.imag()),
            (AnyTensor::Complex128(t), UnaryOp::Abs) => AnyTensor::Real64(t.abs()),
            (AnyTensor::Real32(t), UnaryOp::Conj | UnaryOp::Real) => AnyTensor::Real32(t.clone()),
            (AnyTensor::Real32(t), UnaryOp::Imag) => AnyTensor::Real32(t.zeros_like()),
            (AnyTensor::Real32(t), UnaryOp::Abs) => AnyTensor::Real32(t.map(|x| x.abs())),
            (AnyTensor::Real64(t), UnaryOp::Conj | UnaryOp::Real) => AnyTensor::Real64(t.clone()),
            (AnyTensor::Real64(t), UnaryOp::Imag) => AnyTensor::Real64(t.zeros_like()),
            (AnyTensor::Real64(t), UnaryOp::Abs) => AnyTensor::Real64(t.map(|x| x.abs())),
            (AnyTensor::Int32(t), UnaryOp::Abs) => AnyTensor::Int32(t.map(|x| x.abs())),
            (AnyTensor::Int32(t), UnaryOp::Conj | UnaryOp::Real) => AnyTensor::Int32(t.clone()),
            (AnyTensor::Int32(t), UnaryOp::Imag) => AnyTensor::Int32(t.zeros_like()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn add_componentwise() {
        let a = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn scale_by_zero_gives_zeros() {
        let x = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.5, 4.0]).unwrap();
        assert_eq!(x.scale(0.0), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn real_of_real_valued_complex() {
        let r = Tensor::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        assert_eq!(r.to_complex().real(), r);
    }

    #[test]
    fn row_major_strides() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as i32);
        assert_eq!(t.offset(&[1, 2, 3]), 12 + 8 + 3);
        assert_eq!(t.get(&[1, 2, 3]), 123);
    }

    #[test]
    fn rejects_empty_and_zero_dims() {
        assert!(Tensor::<f32>::from_vec(vec![], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn dtype_promotion() {
        let a = AnyTensor::Real32(Tensor::full(&[2], 1.5));
        let b = AnyTensor::Real64(Tensor::full(&[2], 0.25));
        let c = a.elementwise(ElementwiseOp::Add, &b).unwrap();
        assert_eq!(c, AnyTensor::Real64(Tensor::full(&[2], 1.75)));

        let z = AnyTensor::Complex64(Tensor::full(&[2], Complex::new(1.0, 2.0)));
        let w = a.elementwise(ElementwiseOp::Mul, &z).unwrap();
        assert_eq!(w.dtype(), Dtype::Complex64);

        let l = AnyTensor::Int32(Tensor::full(&[2], 3));
        assert!(matches!(
            a.elementwise(ElementwiseOp::Add, &l),
            Err(Error::DtypeMismatch { .. })
        ));
        assert_eq!(
            z.unary(UnaryOp::Imag).unwrap(),
            AnyTensor::Real32(Tensor::full(&[2], 2.0))
        );
    }

    fn complex_tensor() -> impl Strategy<Value = Tensor<Complex<f64>>> {
        proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40).prop_map(|v| {
            let n = v.len();
            Tensor::from_vec(vec![n], v.into_iter().map(|(a, b)| Complex::new(a, b)).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn conj_preserves_real_negates_imag(c in complex_tensor()) {
            prop_assert_eq!(c.conj().real(), c.real());
            prop_assert_eq!(c.conj().imag(), c.imag().scale(-1.0));
        }

        #[test]
        fn dyadic_scales_compose_exactly(
            v in proptest::collection::vec(-1e6f64..1e6, 1..50),
            a in -8i32..8, b in -8i32..8,
        ) {
            let x = Tensor::from_vec(vec![v.len()], v).unwrap();
            let (fa, fb) = (2f64.powi(a), 2f64.powi(b));
            prop_assert_eq!(x.scale(fa).scale(fb), x.scale(fa * fb));
        }

        #[test]
        fn add_commutes(
            v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
        ) {
            let n = v.len();
            let a = Tensor::from_vec(vec![n], v.iter().map(|p| p.0).collect()).unwrap();
            let b = Tensor::from_vec(vec![n], v.iter().map(|p| p.1).collect()).unwrap();
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
        }
    }
}
