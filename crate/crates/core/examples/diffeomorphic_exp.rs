//! Integrates a stationary velocity field and counts folded voxels.
//!
//! A large velocity applied directly as a displacement folds; its
//! exponential does not.
//!
//! Run with `cargo run --release --example diffeomorphic_exp`.

use bandreg::deform::{exp_svf, jacobian_det, neg_jac_fraction, DisplacementField, VelocityField};
use bandreg::Tensor;

fn main() -> bandreg::Result<()> {
    let n = 64;
    let tau = std::f64::consts::TAU;
    let v = Tensor::from_fn(&[2, n, n], |i| {
        let (y, x) = (i[1] as f64 / n as f64, i[2] as f64 / n as f64);
        let amp = 15.0;
        if i[0] == 0 { amp * (tau * x).sin() } else { amp * (tau * y).cos() }
    });
    let direct = DisplacementField::new(v.clone())?;
    println!("velocity used as displacement: {:.2}% folded", neg_jac_fraction(&direct));
    let velocity = VelocityField::new(v)?;
    for steps in [1, 2, 4, 7, 10] {
        let phi = exp_svf(&velocity, steps)?;
        let det = jacobian_det(&phi);
        let min = det.data().iter().copied().fold(f64::MAX, f64::min);
        println!("{steps:2} squaring steps: {:.2}% folded, min det {min:+.3}", neg_jac_fraction(&phi));
    }
    Ok(())
}
