//! Best rank-m embedding from a Gram matrix, up to rotation.
//!
//!     cargo run --example gram_recovery

use nalgebra::DMatrix;
use tripletfusion::prelude::*;

fn main() -> Result<()> {
    let points = Embedding::from_point_major(2, 5, vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0, -1.0, 1.0, 3.0, -1.0])?;
    let gram = points.gram();
    println!("Gram matrix:{gram:.3}");
    let recovered = recover_from_gram(&gram, 2)?;
    let again = recovered.gram();
    println!("max |G - G'| = {:.2e}", (&gram - &again).abs().max());

    let rank_one = recover_from_gram(&gram, 1)?;
    println!("rank-1 coordinates: {:?}", rank_one.coordinate(0).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    println!("indefinite input: {}", recover_from_gram(&indefinite, 1).unwrap_err());
    Ok(())
}
