use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetVariant, Step};
use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Ordered, uniquely named parameter tensors of a network (all cascades).
///
/// For each convolution of the plan, in order: `weight`, `bias` and, when
/// the layer is activated, `slope`. Cascades are prefixed `c{k}.`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<R> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
}

impl<R: Real> ModelParams<R> {
    /// Names and shapes in canonical order.
    pub fn layout(variant: &NetVariant) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = variant.plan()?;
        let mut out = Vec::new();
        for k in 0..variant.cascades {
            for step in &plan {
                let Step::Conv(c) = step else { continue };
                let prefix = format!("c{k}.{}", c.name);
                out.push((format!("{prefix}.weight"), c.weight_shape(variant.rank)));
                out.push((format!("{prefix}.bias"), vec![c.out_ch]));
                if c.activation {
                    out.push((format!("{prefix}.slope"), vec![c.out_ch]));
                }
            }
        }
        Ok(out)
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases, slopes 0.25.
    pub fn init(variant: &NetVariant, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(variant, |name, shape| {
            if name.ends_with(".weight") {
                // fan_in = input channels times kernel taps; the input
                // channel axis is 1 for convolutions and 0 for transposed ones.
                let taps: usize = shape[2..].iter().product();
                let ci = if name.ends_with(".up.weight") { shape[0] } else { shape[1] };
                let bound = 1.0 / ((ci * taps) as f64).sqrt();
                Tensor::from_fn(shape, |_| R::from_f64_lossy(rng.gen_range(-bound..bound)))
            } else {
                Self::default_tensor(name, shape)
            }
        })
    }

    /// All weights and biases zero, so the predicted field is identically zero.
    pub fn zeros(variant: &NetVariant) -> Result<Self> {
        Self::build(variant, Self::default_tensor)
    }

    fn default_tensor(name: &str, shape: &[usize]) -> Tensor<R> {
        if name.ends_with(".slope") {
            Tensor::full(shape, R::from_f64_lossy(PRELU_INIT))
        } else {
            Tensor::zeros(shape)
        }
    }

    fn build(variant: &NetVariant, mut make: impl FnMut(&str, &[usize]) -> Tensor<R>) -> Result<Self> {
        let (names, tensors) = Self::layout(variant)?
            .into_iter()
            .map(|(name, shape)| {
                let t = make(&name, &shape);
                (name, t)
            })
            .unzip();
        Ok(ModelParams { names, tensors })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// layout of `variant`.
    pub fn from_named(variant: &NetVariant, named: Vec<(String, Tensor<R>)>) -> Result<Self> {
        let layout = Self::layout(variant)?;
        if layout.len() != named.len() {
            return Err(invalid!("expected {} parameter tensors, got {}", layout.len(), named.len()));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(invalid!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                ));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(ModelParams { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count, PReLU slopes included.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar count of convolution weights and biases.
    pub fn conv_numel(&self) -> usize {
        self.iter().filter(|(n, _)| !n.ends_with(".slope")).map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
