//! Three annotators label disjoint shares of one query pool; their sets are
//! written in the JSON Lines interchange format, read back, fused and fitted.
//! An overlapping file is rejected with the offending triplet.
//!
//!     cargo run --release --example multi_annotator_fusion

use tripletfusion::experiment::{run_fusion_pipeline, FusionRequest};
use tripletfusion::interchange::{find_overlaps, load_jsonl, write_jsonl};
use tripletfusion::prelude::*;
use tripletfusion::seed;
use tripletfusion::simulate::simulate_annotators;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("tripletfusion-fusion-example");
    std::fs::create_dir_all(&dir)?;
    let signal = Signal::generate(SignalKind::TaskBLike, 120, 5)?;
    std::fs::write(dir.join("signal.csv"), signal.to_csv())?;

    let queries = sample_triplets(signal.len(), triplet_budget(signal.len(), 15.0)?, 6)?;
    let annotators = vec![
        AnnotatorModel::logistic("careful", 20.0)?,
        AnnotatorModel::logistic("average", 6.0)?,
        AnnotatorModel::constant("hasty", 0.7, 0.01)?,
    ];
    let sets = simulate_annotators(&signal, &queries, &annotators, &mut seed::rng(&[7]))?;
    let fused = fuse(sets.iter())?;
    let labels_path = dir.join("labels.jsonl");
    write_jsonl(std::fs::File::create(&labels_path)?, fused.iter())?;
    println!("wrote {} labels to {}", fused.len(), labels_path.display());

    let mut req = FusionRequest::new(&labels_path, dir.join("fused"));
    req.signal_path = Some(dir.join("signal.csv"));
    req.solver.restarts = 4;
    let report = run_fusion_pipeline(&req)?;
    println!("per-annotator counts: {:?}", report.annotator_counts);
    println!("labels vs truth tau_v: {:.4}", report.tau_v_vs_truth.unwrap_or(f64::NAN));
    for fit in &report.fits {
        println!("fit {}: rho {:.4}, nmse {:.5}", fit.tag, fit.rho.unwrap_or(f64::NAN), fit.fit.map_or(f64::NAN, |f| f.nmse));
    }
    println!("tables in {}", dir.join("fused").display());

    // The same query answered by two annotators breaks disjointness.
    let mut clash = fused.labels().to_vec();
    let mut dup = clash[0].clone();
    dup.annotator = if dup.annotator == "average" { "careful".into() } else { "average".into() };
    clash.push(dup);
    let clash_path = dir.join("overlapping.jsonl");
    write_jsonl(std::fs::File::create(&clash_path)?, &clash)?;
    let err = run_fusion_pipeline(&FusionRequest::new(&clash_path, dir.join("rejected"))).unwrap_err();
    println!("\noverlapping file: {err}");
    for o in find_overlaps(&load_jsonl(&clash_path)?) {
        println!("  {} answered by {}", o.query, o.annotators.join(" and "));
    }
    Ok(())
}
