use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// One compared coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: Vec<ProbeResult>,
    /// Coordinates rejected because a gradient discontinuity lies within
    /// `±eps` (only [`grad_check_piecewise`] rejects any).
    pub skipped: usize,
}

/// Relative jump of the second difference of the analytic gradient across
/// `[x - eps, x + eps]` above which a probe is taken to straddle a kink.
pub const KINK_TOLERANCE: f64 = 1e-5;

/// Compares backward gradients of the scalar `f` with central differences of
/// step `eps` at `n_probes` distinct coordinates drawn uniformly over all
/// elements of `inputs` (every coordinate when there are fewer).
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], n_probes: usize, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    run(&f, inputs, n_probes, eps, seed, false)
}

/// Like [`grad_check`] for piecewise-smooth functions (PReLU, linear
/// interpolation). The analytic gradient is also evaluated at `x ± eps`; when
/// its second difference exceeds [`KINK_TOLERANCE`] relative to its size, a
/// kink lies inside the stencil, central differences are meaningless there,
/// and the coordinate is replaced by another random one.
pub fn grad_check_piecewise<F>(f: F, inputs: &[Tensor<f64>], n_probes: usize, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    run(&f, inputs, n_probes, eps, seed, true)
}

/// Value of `f` and, with `at`, the gradient at coordinate `(input, index)`.
fn evaluate<F>(f: &F, values: &[Tensor<f64>], at: Option<(usize, usize)>) -> Result<(f64, f64)>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = match at {
        Some((input, _)) => values
            .iter()
            .enumerate()
            .map(|(i, t)| if i == input { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect(),
        None => values.iter().map(|t| g.constant(t.clone())).collect(),
    };
    let root = f(&g, &vars)?;
    let value = g.scalar(root)?;
    let grad = match at {
        Some((input, index)) => g.backward(root)?.get(vars[input]).map_or(0.0, |t| t.data()[index]),
        None => 0.0,
    };
    Ok((value, grad))
}

fn run<F>(f: &F, inputs: &[Tensor<f64>], n_probes: usize, eps: f64, seed: u64, piecewise: bool) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&g, &vars)?;
    if g.shape(root).iter().product::<usize>() != 1 {
        return Err(invalid!("grad_check needs a scalar function"));
    }
    let grads = g.backward(root)?;

    let sizes: Vec<usize> = inputs.iter().map(|t| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Smooth checks use exactly the first `n_probes` draws; piecewise checks
    // keep drawing to replace rejected coordinates.
    let draws = if piecewise { total } else { n_probes.min(total) };
    let order = sample(&mut rng, total, draws).into_vec();

    let mut values = inputs.to_vec();
    let mut probes = Vec::with_capacity(n_probes.min(total));
    let mut skipped = 0;
    for flat in order {
        if probes.len() == n_probes {
            break;
        }
        let (mut input, mut index) = (0, flat);
        while index >= sizes[input] {
            index -= sizes[input];
            input += 1;
        }
        let analytic = grads.get(vars[input]).map_or(0.0, |t| t.data()[index]);
        let at = piecewise.then_some((input, index));
        let original = values[input].data()[index];
        values[input].data_mut()[index] = original + eps;
        let (plus, g_plus) = evaluate(f, &values, at)?;
        values[input].data_mut()[index] = original - eps;
        let (minus, g_minus) = evaluate(f, &values, at)?;
        values[input].data_mut()[index] = original;
        if piecewise {
            let scale = analytic.abs().max(g_plus.abs()).max(g_minus.abs()).max(1e-6);
            if (g_plus - 2.0 * analytic + g_minus).abs() > KINK_TOLERANCE * scale {
                skipped += 1;
                continue;
            }
        }
        let numeric = (plus - minus) / (2.0 * eps);
        probes.push(ProbeResult {
            input,
            index,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    probes.sort_by_key(|p| (p.input, p.index));
    let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, probes, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_fn(&[4, 5], |i| (i[0] * 5 + i[1]) as f64 * 0.1);
        let w = Tensor::from_fn(&[4, 5], |i| 1.0 + i[0] as f64 - 0.5 * i[1] as f64);
        let report = grad_check(
            |g, v| {
                let c = g.constant(w.clone());
                g.sum(g.mul(v[0], c)?)
            },
            &[x],
            20,
            1e-5,
            0,
        )
        .unwrap();
        assert_eq!(report.probes.len(), 20);
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn quadratic_function_is_exact_up_to_rounding() {
        let x = Tensor::from_fn(&[30], |i| (i[0] as f64 - 12.0) * 0.37);
        let report = grad_check(|g, v| g.sum(g.square(v[0])?), &[x], 100, 1e-5, 1).unwrap();
        assert_eq!(report.probes.len(), 30);
        assert!(report.max_rel_err < 1e-7);
    }

    #[test]
    fn piecewise_check_skips_kinks_only() {
        // Sum of |x| as two ReLUs; coordinates within eps of zero straddle the kink.
        let x = Tensor::from_vec(vec![1, 6], vec![-2.0, -3e-6, 0.5, 4e-6, 1.5, 7.0]).unwrap();
        let abs = |g: &Graph<f64>, v: &[Var]| -> Result<Var> {
            let neg = g.scale(v[0], -1.0)?;
            let relu_sum = g.prelu(v[0], g.constant(Tensor::full(&[1], 0.0)))?;
            let relu_neg = g.prelu(neg, g.constant(Tensor::full(&[1], 0.0)))?;
            g.add(g.sum(relu_sum)?, g.sum(relu_neg)?)
        };
        let plain = grad_check(abs, &[x.clone()], 6, 1e-5, 0).unwrap();
        assert!(plain.max_rel_err > 0.1);
        assert_eq!(plain.skipped, 0);
        let piecewise = grad_check_piecewise(abs, &[x], 6, 1e-5, 0).unwrap();
        assert_eq!(piecewise.skipped, 2);
        assert_eq!(piecewise.probes.len(), 4);
        assert!(piecewise.max_rel_err < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
