//! Compares one and two Fourier-Net+ cascades trained identically on a
//! small synthetic set.
//!
//! Run with `cargo run --release --example cascades [epochs]`.

use bandreg::io::{generate_pairs, SyntheticConfig};
use bandreg::model::{forward, ModelKind, ModelParams, NetVariant};
use bandreg::train::{mean_dice, train_loop, TrainConfig};

fn main() -> bandreg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let data = SyntheticConfig { seed: 3, n_pairs: 60, test_pairs: 10, shape: vec![64, 64], deform_scale: 3.0 };
    let pairs = generate_pairs(&data)?;
    let (train, test) = pairs.split_at(data.n_pairs);
    let cfg = TrainConfig { epochs, lr: 1e-3, ..Default::default() };
    for k in [1, 2] {
        let mut v = NetVariant::new(ModelKind::FourierNetPlus, 2);
        v.cascades = k;
        let report = train_loop(&v, ModelParams::<f32>::init(&v, 0)?, train, test, &cfg, None)?;
        let dice = mean_dice(&v, &report.params, test)?;
        let pred = forward(&v, &report.params, &test[0].moving.cast(), &test[0].fixed.cast())?;
        let steps: Vec<String> = pred.increments.iter().map(|u| format!("{:.2}", u.as_tensor().max_abs())).collect();
        println!("{k} cascade(s): test Dice {dice:.4}, per-cascade max step [{}] voxels", steps.join(", "));
    }
    Ok(())
}
