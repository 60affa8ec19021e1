//! Dice, Hausdorff distance and folding on hand-made masks.
//!
//! Run with `cargo run --release --example metrics`.

use bandreg::deform::{neg_jac_fraction, DisplacementField};
use bandreg::metrics::{dice, hausdorff, warp_labels, LabelMask};
use bandreg::Tensor;

fn squares(offset: usize) -> bandreg::Result<LabelMask> {
    LabelMask::new(Tensor::from_fn(&[32, 32], |i| {
        let (y, x) = (i[0], i[1]);
        if (8..16).contains(&y) && (4 + offset..12 + offset).contains(&x) {
            1
        } else if (20..28).contains(&y) && (18..26).contains(&x) {
            2
        } else {
            0
        }
    }))
}

fn main() -> bandreg::Result<()> {
    let (a, b) = (squares(0)?, squares(3)?);
    let d = dice(&a, &b)?;
    for (label, score) in &d.per_label {
        println!("label {label}: Dice {score:.3}, Hausdorff {:.1}", hausdorff(&a, &b, *label)?);
    }
    println!("mean Dice {:.3}", d.mean);

    // A constant shift of -3 voxels along x samples `a` three voxels to the left.
    let shift = DisplacementField::new(Tensor::from_fn(&[2, 32, 32], |i| if i[0] == 1 { -3.0 } else { 0.0 }))?;
    let moved = warp_labels(&a, &shift)?;
    println!("after warping: label 1 Dice {:.3}", dice(&moved, &b)?.per_label[0].1);
    println!("folded voxels of the shift: {}%", neg_jac_fraction(&shift));
    Ok(())
}
