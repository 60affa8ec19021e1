//! Parameter and multiply-add counts for every network kind.
//!
//! Run with `cargo run --release --example cost_accounting`.

use bandreg::model::{count_costs, ModelKind, ModelParams, NetVariant};

fn main() -> bandreg::Result<()> {
    for (rank, spatial) in [(2, vec![160, 192]), (3, vec![160, 192, 224])] {
        println!("{rank}D input {spatial:?}");
        for kind in ModelKind::ALL {
            let v = NetVariant::new(kind, rank);
            let c = count_costs(&v, &spatial)?;
            let built = ModelParams::<f32>::zeros(&v)?.conv_numel();
            println!(
                "  {:<18} params {:>9} (built {:>9})  mult-adds {:>10.2} M",
                kind.name(),
                c.params,
                built,
                c.mult_adds as f64 / 1e6
            );
        }
    }
    let mut v = NetVariant::new(ModelKind::FourierNetPlus, 2);
    v.cascades = 4;
    println!("\n{}", v.describe(&[96, 96])?);
    Ok(())
}
