//! Encodes a smooth displacement field into a small centered spectral patch
//! and decodes it back.
//!
//! Run with `cargo run --release --example dft_codec`.

use bandreg::fourier::{center_shift, crop_center, decode_field, dft_real, patch_to_spatial, FreqMask};
use bandreg::Tensor;

fn main() -> bandreg::Result<()> {
    let (h, w) = (64, 64);
    let reduction = [4, 4];
    let axes = [1, 2];
    // Two channels of low-frequency cosines: band-limited by construction.
    let field = Tensor::from_fn(&[2, h, w], |i| {
        let (y, x) = (i[1] as f64 / h as f64, i[2] as f64 / w as f64);
        let tau = std::f64::consts::TAU;
        if i[0] == 0 {
            1.5 * (tau * y).cos() + 0.5 * (2.0 * tau * x).sin()
        } else {
            (tau * (x + y)).sin()
        }
    });

    let spectrum = center_shift(&dft_real(&field, &axes)?, &axes);
    let mask = FreqMask::<f64>::new(&[h, w], &reduction)?;
    println!("energy outside the {}x{} band: {:.2e}", h / 4, w / 4, mask.energy_outside(&spectrum)?);

    let patch = crop_center(&spectrum, &reduction)?;
    println!("patch {:?} holds {} of {} coefficients", patch.coeffs().shape(), patch.coeffs().numel(), spectrum.numel());

    let decoded = decode_field(&patch)?;
    let err = decoded.field.sub(&field)?.max_abs();
    println!("decode error {err:.2e}, discarded imaginary part {:.2e}", decoded.imag_residue);

    // The patch's own inverse transform is a scaled subsample of the field.
    let low = patch_to_spatial(&patch)?;
    let scale = (reduction[0] * reduction[1]) as f64;
    for (i, j) in [(0, 0), (3, 5), (10, 2)] {
        println!(
            "low-res [{i:2},{j:2}] = {:+.5}   {scale} * field[{:2},{:2}] = {:+.5}",
            low.get(&[0, i, j]).re,
            4 * i,
            4 * j,
            scale * field.get(&[0, 4 * i, 4 * j])
        );
    }
    Ok(())
}
