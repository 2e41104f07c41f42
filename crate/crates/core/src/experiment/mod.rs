//! Config-driven simulation grids and the end-to-end fusion pipeline.

mod config;
mod pipeline;
mod plot;
mod simulation;

pub use config::{default_fraction_grid, BudgetGrid, ExperimentConfig, SignalSpec, SolverSettings};
pub use pipeline::{evaluate_embedding, run_fusion_pipeline, EmbeddingSidecar, FitReport, FusionReport, FusionRequest};
pub use plot::{
    emit_overlays, emit_plot_data, fraction_tag, mean_sd, median, overlay_csv, summarize,
    write_csv, write_success_curves, CellSummary,
};
pub use simulation::{
    embedding_path, load_records, run_simulation, run_simulation_in, write_records_csv, CellIndex,
    ExperimentRecord, RunOptions, SimulationOutcome, FAILURE_THRESHOLD, RECORDS_CSV, RECORDS_LOG,
};
