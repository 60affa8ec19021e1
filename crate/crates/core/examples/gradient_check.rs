//! Compares reverse-mode gradients of the full training loss with central
//! finite differences and lists the worst probes.
//!
//! Run with `cargo run --release --example gradient_check [fourier-net|fourier-net-plus|...]`.

use bandreg::autodiff::{grad_check, grad_check_piecewise, Graph, Var};
use bandreg::model::{forward_graph, ModelKind, ModelParams, NetVariant};
use bandreg::train::{total_loss_graph, TrainConfig};
use bandreg::Tensor;

fn blob(cy: f64, cx: f64, s: f64) -> Tensor<f64> {
    Tensor::from_fn(&[1, 16, 16], |i| {
        let d2 = (i[1] as f64 - cy).powi(2) + (i[2] as f64 - cx).powi(2);
        (-d2 / (2.0 * s * s)).exp()
    })
}

fn main() -> bandreg::Result<()> {
    let kind = std::env::args().nth(1).map(|s| ModelKind::parse(&s)).transpose()?.unwrap_or(ModelKind::FourierNet);
    let mut variant = NetVariant::new(kind, 2);
    variant.base_channels = 4;
    let params = ModelParams::<f64>::init(&variant, 9)?;
    let (moving, fixed) = (blob(7.0, 8.0, 3.0), blob(8.5, 7.0, 3.5));
    let cfg = TrainConfig::default();
    let loss = |g: &Graph<f64>, vars: &[Var]| {
        let (m, f) = (g.constant(moving.clone()), g.constant(fixed.clone()));
        let out = forward_graph(g, &variant, vars, m, f)?;
        total_loss_graph(g, &cfg, &out, f)
    };
    let plain = grad_check(loss, params.tensors(), 500, 1e-5, 17)?;
    println!("all probes: max relative error {:.3e}", plain.max_rel_err);
    let report = grad_check_piecewise(loss, params.tensors(), 500, 1e-5, 17)?;
    println!("{} probes straddle a PReLU or interpolation kink and were replaced", report.skipped);
    println!("{}: {} probes, max relative error {:.3e}", kind.name(), report.probes.len(), report.max_rel_err);
    let mut probes = report.probes.clone();
    probes.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    for p in probes.iter().take(8) {
        println!(
            "  {:<24} [{:>4}] analytic {:+.6e} numeric {:+.6e} rel {:.2e}",
            params.names()[p.input],
            p.index,
            p.analytic,
            p.numeric,
            p.rel_err
        );
    }
    Ok(())
}
