//! Trains a 2D Fourier-Net on synthetic pairs and reports the Dice gain.
//!
//! Run with `RUST_LOG=info cargo run --release --example train_fourier_net [epochs] [lr]`.

use bandreg::io::{generate_pairs, SyntheticConfig};
use bandreg::model::{ModelKind, ModelParams, NetVariant};
use bandreg::train::{mean_dice, train_loop, TrainConfig};

fn main() -> bandreg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let lr = args.next().and_then(|a| a.parse().ok()).unwrap_or(1e-3);

    let data = SyntheticConfig { seed: 7, n_pairs: 200, test_pairs: 20, shape: vec![96, 96], deform_scale: 3.0 };
    let pairs = generate_pairs(&data)?;
    let (train, test) = pairs.split_at(data.n_pairs);

    let variant = NetVariant::new(ModelKind::FourierNet, 2);
    let init = ModelParams::<f32>::init(&variant, 0)?;
    let before = mean_dice(&variant, &ModelParams::<f32>::zeros(&variant)?, test)?;
    let cfg = TrainConfig { epochs, lr, seed: 0, ..Default::default() };
    let report = train_loop(&variant, init, train, test, &cfg, None)?;
    let after = mean_dice(&variant, &report.params, test)?;
    println!("test Dice {before:.4} -> {after:.4} (gain {:+.4})", after - before);
    for r in &report.curve {
        println!("epoch {:2}: loss {:.5}", r.epoch, r.loss);
    }
    Ok(())
}
