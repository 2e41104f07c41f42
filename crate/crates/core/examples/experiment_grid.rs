//! A small Simulation-2 style grid: three noise levels, three budgets, two
//! losses, a few trials. Writes records and plot tables to a temp directory.
//!
//!     cargo run --release --example experiment_grid

use tripletfusion::experiment::{
    emit_overlays, run_simulation, summarize, ExperimentConfig, RunOptions,
};
use tripletfusion::prelude::*;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("tripletfusion-grid-example");
    let config = ExperimentConfig::from_toml(&format!(
        r#"
seed = 1
trials = 3
restarts = 2
output_dir = "{}"

[signal]
kind = "task-b-like"
n = 90

[[noise]]
model = "logistic"
sigma = 2

[[noise]]
model = "logistic"
sigma = 6

[[noise]]
model = "logistic"
sigma = 20

[budget]
fractions = [0.0025, 0.01, 0.04]

[[losses]]
kind = "ste"
sigma = 0.7071067811865476

[[losses]]
kind = "gnmds-hinge"
"#,
        out.display()
    ))?;
    println!("config hash {}", config.hash());
    let outcome = run_simulation(&config, &RunOptions { resume: true, ..RunOptions::default() })?;
    println!("{} records ({} computed, {} resumed)", outcome.records.len(), outcome.computed, outcome.resumed);

    println!("\n{:<20} {:<22} {:>8} {:>10} {:>10}", "noise", "loss", "budget", "mse mean", "mse sd");
    for cell in summarize(&outcome.records) {
        println!("{:<20} {:<22} {:>8} {:>10.2e} {:>10.2e}", cell.noise, cell.loss, cell.budget, cell.mse_mean, cell.mse_sd);
    }
    let overlays = emit_overlays(&out, &outcome.records, &out.join("plots"))?;
    println!("\nrecords and tables in {}; {} overlay files", out.display(), overlays.len());
    Ok(())
}
