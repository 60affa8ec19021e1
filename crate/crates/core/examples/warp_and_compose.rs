//! Warping with displacement fields and composing two of them.
//!
//! Run with `cargo run --release --example warp_and_compose`.

use bandreg::deform::{compose, jacobian_det, warp, DisplacementField};
use bandreg::Tensor;

fn main() -> bandreg::Result<()> {
    let n = 48;
    let image = Tensor::from_fn(&[1, n, n], |i| {
        let (y, x) = (i[1] as f64 - 24.0, i[2] as f64 - 24.0);
        (-(y * y + x * x) / 60.0).exp()
    });
    // A uniform shift of 2.5 voxels along x, then a gentle swirl.
    let shift = DisplacementField::new(Tensor::from_fn(&[2, n, n], |i| if i[0] == 1 { 2.5 } else { 0.0 }))?;
    let swirl = DisplacementField::new(Tensor::from_fn(&[2, n, n], |i| {
        let (y, x) = (i[1] as f64 - 24.0, i[2] as f64 - 24.0);
        let a = 1.5 * (-(y * y + x * x) / 200.0).exp();
        if i[0] == 0 { a * x / 12.0 } else { -a * y / 12.0 }
    }))?;

    let shifted = warp(&image, &shift)?;
    let peak = shifted.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    // Warping samples the image at x + u, so content moves against u.
    println!("peak moves from (24, 24) to ({}, {})", peak / n, peak % n);

    let two_pass = warp(&warp(&image, &shift)?, &swirl)?;
    let composed = compose(&shift, &swirl)?;
    let one_pass = warp(&image, &composed)?;
    println!("two warps vs one composed warp: max difference {:.2e}", two_pass.sub(&one_pass)?.max_abs());

    let det = jacobian_det(&composed);
    let (lo, hi) = det.data().iter().fold((f64::MAX, f64::MIN), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    println!("Jacobian determinant of the composition in [{lo:.3}, {hi:.3}]");
    Ok(())
}
