//! Universe size, budget policies and uniform sampling of canonical queries.
//!
//!     cargo run --example triplet_sampling

use tripletfusion::prelude::*;
use tripletfusion::triplet::fraction_budget;

fn main() -> Result<()> {
    for n in [12, 178, 267] {
        let universe = triplet_universe_size(n)?;
        println!(
            "n = {n:>3}: |T| = {universe:>9}, 0.5% -> {:>6}, K=15 -> {:>6}, K=31.5 -> {:>6}",
            fraction_budget(n, 0.005)?,
            triplet_budget(n, 15.0)?,
            triplet_budget(n, 31.5)?
        );
    }

    // Queries are canonical: reference i, then j < k. Mirrored answers normalize.
    let (q, swapped) = TripletQuery::canonical(4, 9, 2)?;
    println!("\n(4, 9, 2) -> {q}, mirrored: {swapped}");
    let label = LabeledTriplet::from_answer(4, 9, 2, Label::CloserToJ, "a", Source::Human)?;
    println!("'4 is closer to 9 than to 2' is stored as {} with w = {}", label.query, label.label.w());

    // Every query has a lexicographic rank in 0..|T|.
    let n = 10;
    let rank = q.rank(n);
    println!("rank of {q} among n = {n}: {rank}; unranks to {}", TripletQuery::from_rank(rank, n));

    let sample = sample_triplets(n, 8, 42)?;
    let shown: Vec<String> = sample.iter().map(|q| q.to_string()).collect();
    println!("\n8 queries for n = {n}, seed 42: {}", shown.join(" "));
    match sample_triplets(n, triplet_universe_size(n)? + 1, 0) {
        Err(e) => println!("oversized budget: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
