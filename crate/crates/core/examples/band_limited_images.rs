//! Band-limited image inputs at reduced resolution.
//!
//! Run with `cargo run --release --example band_limited_images`.

use bandreg::deform::resize_linear;
use bandreg::fourier::encode_band_limited_image;
use bandreg::io::{generate_pairs, write_pgm, SyntheticConfig};

fn main() -> bandreg::Result<()> {
    let cfg = SyntheticConfig { seed: 1, n_pairs: 1, test_pairs: 0, shape: vec![96, 96], deform_scale: 3.0 };
    let pair = &generate_pairs(&cfg)?[0];
    let img = &pair.moving;
    for r in [1, 2, 4] {
        let spectral = encode_band_limited_image(img, &[r, r])?;
        // The small inverse transform carries a factor r^2 in the mean.
        let spectral = spectral.scale(1.0 / (r * r) as f64);
        let linear = resize_linear(img, &[96 / r, 96 / r])?;
        println!(
            "reduction {r}: {:?}, mean {:.4} (full {:.4}), max |spectral - linear| {:.3}",
            spectral.shape(),
            spectral.mean(),
            img.mean(),
            spectral.sub(&linear)?.max_abs()
        );
        if let Some(dir) = std::env::args().nth(1) {
            let path = std::path::Path::new(&dir).join(format!("band_limited_r{r}.pgm"));
            write_pgm(&path, &spectral.map(|x| x.clamp(0.0, 1.0)))?;
            println!("  wrote {}", path.display());
        }
    }
    Ok(())
}
