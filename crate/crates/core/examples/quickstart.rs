//! Sample triplets over a synthetic signal, label them with a noisy simulated
//! annotator, fit a 1-d embedding and score it against the truth.
//!
//!     cargo run --release --example quickstart

use tripletfusion::evaluation::aligned_pearson;
use tripletfusion::prelude::*;
use tripletfusion::seed;

fn main() -> Result<()> {
    let signal = Signal::generate(SignalKind::TaskBLike, 80, 1)?;
    let budget = triplet_budget(signal.len(), 15.0)?;
    let queries = sample_triplets(signal.len(), budget, 2)?;
    let annotator = AnnotatorModel::logistic("sim", 20.0)?;
    let labels = annotator.label_all(&signal, &queries, &mut seed::rng(&[3]))?;

    let config = SolverConfig { restarts: 4, seed: 4, ..SolverConfig::default() };
    let fit = fit_embedding(&labels, 1, &LossSpec::default(), &config)?;
    let y = fit.embedding.coordinate(0);
    let aligned = affine_align_mse(&y, &signal)?;

    println!("n = {}, |T| = {}, labeled {}", signal.len(), triplet_universe_size(signal.len())?, labels.len());
    println!("risk {:.4}, violated {:.1}% of labels", fit.risk, 100.0 * fit.violations);
    println!("affine fit z ~ {:.4}*y {:+.4}: mse {:.5}, nmse {:.4}", aligned.a, -aligned.b, aligned.mse, aligned.nmse);
    println!("aligned rho {:.4}", aligned_pearson(&y, signal.values())?);
    println!("\n  t      z   aligned y");
    for (t, (z, v)) in signal.values().iter().zip(aligned.apply(&y)).enumerate().step_by(8) {
        println!("{:>3} {:>6.3} {:>11.3}", t + 1, z, v);
    }
    Ok(())
}
