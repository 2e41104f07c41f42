//! Fit the same labels with STE, t-STE, GNMDS hinge and CKL.
//!
//!     cargo run --release --example compare_losses

use std::time::Instant;

use tripletfusion::evaluation::aligned_pearson;
use tripletfusion::prelude::*;
use tripletfusion::seed;

fn main() -> Result<()> {
    let signal = Signal::generate(SignalKind::TaskALike, 100, 11)?;
    let queries = sample_triplets(signal.len(), 8_000, 12)?;
    let labels = AnnotatorModel::logistic("sim", 6.0)?.label_all(&signal, &queries, &mut seed::rng(&[13]))?;

    let losses = [
        LossSpec::default(),
        LossSpec::Tste { alpha: 1.0 },
        LossSpec::GnmdsHinge,
        LossSpec::Ckl { mu: 0.1 },
    ];
    let config = SolverConfig { restarts: 4, seed: 14, ..SolverConfig::default() };
    println!("{:<20} {:>8} {:>8} {:>9} {:>7} {:>8}", "loss", "risk", "tau_v", "nmse", "rho", "time");
    for loss in losses {
        let start = Instant::now();
        let fit = fit_embedding(&labels, 1, &loss, &config)?;
        let y = fit.embedding.coordinate(0);
        let aligned = affine_align_mse(&y, &signal)?;
        println!(
            "{:<20} {:>8.4} {:>8.4} {:>9.5} {:>7.4} {:>7.2}s",
            loss.to_string(),
            fit.risk,
            fit.violations,
            aligned.nmse,
            aligned_pearson(&y, signal.values())?,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
