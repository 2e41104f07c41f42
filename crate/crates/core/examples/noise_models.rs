//! Simulated annotators under constant and logistic noise: expected accuracy
//! from the Poisson-Binomial mean, and the success curve recovered from labels.
//!
//!     cargo run --release --example noise_models

use tripletfusion::evaluation::{correct_variance, violations_against_truth};
use tripletfusion::prelude::*;
use tripletfusion::seed;
use tripletfusion::simulate::Link;

fn main() -> Result<()> {
    let signal = Signal::generate(SignalKind::TaskBLike, 178, 7)?;
    let queries = sample_triplets(signal.len(), 20_000, 8)?;
    let links = [
        Link::Constant { mu: 0.7, eps_sd: 0.01 },
        Link::Constant { mu: 0.9, eps_sd: 0.01 },
        Link::Logistic { sigma: 2.0 },
        Link::Logistic { sigma: 6.0 },
        Link::Logistic { sigma: 20.0 },
    ];
    println!("{:<32} {:>9} {:>9} {:>8}", "annotator", "tau_v", "expected", "sd");
    for (idx, link) in links.iter().enumerate() {
        let model = AnnotatorModel::new(link.label(), *link)?;
        let mut rng = seed::rng(&[9, idx as u64]);
        let mut labels = LabeledTripletSet::new(signal.len());
        let mut probs = Vec::new();
        for &q in &queries {
            let draw = model.draw(&signal, q, &mut rng)?;
            probs.extend(draw.p_correct);
            labels.push(draw.label)?;
        }
        let s = labels.len() as f64;
        let expected = 1.0 - expected_correct(&probs)? / s;
        let sd = correct_variance(&probs)?.sqrt() / s;
        let tau = violations_against_truth(&signal, &labels)?;
        println!("{:<32} {tau:>9.4} {expected:>9.4} {sd:>8.4}", link.label());

        if let Link::Logistic { sigma } = link {
            if *sigma == 20.0 {
                let curve = estimate_success_probability(&labels, &signal, 8)?;
                println!("\n  success curve for sigma = 20 (gap, estimated, link):");
                for bin in &curve.bins {
                    println!("  {:>7.4} {:>9.4} {:>7.4}", bin.mean_gap, bin.estimated_p, link.success_probability(bin.mean_gap));
                }
            }
        }
    }
    Ok(())
}
