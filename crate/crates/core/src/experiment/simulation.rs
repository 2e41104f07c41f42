use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::plot::{emit_plot_data, write_csv};
use crate::error::{Error, Result};
use crate::evaluation::{affine_align_mse, aligned_pearson};
use crate::seed;
use crate::signal::Signal;
use crate::simulate::AnnotatorModel;
use crate::solver::fit_embedding;
use crate::triplet::{sample_triplets, triplet_universe_size};

/// Share of failed cells above which a run counts as failed.
pub const FAILURE_THRESHOLD: f64 = 0.10;

pub const RECORDS_LOG: &str = "records.jsonl";
pub const RECORDS_CSV: &str = "records.csv";

/// Coordinates of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub noise: usize,
    pub loss: usize,
    pub budget: usize,
    pub trial: usize,
}

/// Outcome of one cell. Wall time is kept out of the CSV so that reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    #[serde(flatten)]
    pub cell: CellIndex,
    pub noise_model: String,
    pub loss_spec: String,
    pub fraction: f64,
    pub budget_count: u64,
    pub mse: f64,
    pub nmse: f64,
    pub rho: f64,
    pub tau_v: f64,
    pub risk: f64,
    pub status: String,
    #[serde(default)]
    pub wall_time_ms: u64,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Serialize)]
struct RecordRow<'a> {
    config_hash: &'a str,
    noise: &'a str,
    loss: &'a str,
    fraction_of_t: f64,
    budget: u64,
    trial: usize,
    mse: f64,
    nmse: f64,
    rho: f64,
    tau_v: f64,
    risk: f64,
    status: &'a str,
}

#[derive(Clone, Debug)]
pub struct SimulationOutcome {
    pub records: Vec<ExperimentRecord>,
    pub computed: usize,
    pub resumed: usize,
    pub failed: usize,
    pub output_dir: PathBuf,
}

impl SimulationOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.failed as f64 / self.records.len() as f64
        }
    }

    pub fn exceeds_failure_threshold(&self) -> bool {
        self.failure_rate() > FAILURE_THRESHOLD
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
    /// Keep completed cells of a previous run with the same config hash.
    pub resume: bool,
    /// Also write the trial-0 embedding of each cell for overlay plots.
    pub save_embeddings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            resume: false,
            save_embeddings: true,
        }
    }
}

fn cell_tag(c: &CellIndex) -> String {
    format!("n{}_l{}_b{}", c.noise, c.loss, c.budget)
}

pub fn embedding_path(dir: &Path, c: &CellIndex) -> PathBuf {
    dir.join("embeddings").join(format!("{}.csv", cell_tag(c)))
}

struct CellOutput {
    record: ExperimentRecord,
    embedding: Option<Vec<f64>>,
}

fn run_cell(
    config: &ExperimentConfig,
    hash: &str,
    signal: &Signal,
    budgets: &[u64],
    cell: CellIndex,
) -> CellOutput {
    let start = Instant::now();
    let universe = triplet_universe_size(signal.len()).expect("validated signal");
    let budget = budgets[cell.budget];
    let mut record = ExperimentRecord {
        config_hash: hash.to_owned(),
        cell,
        noise_model: config.noise[cell.noise].label(),
        loss_spec: config.losses[cell.loss].to_string(),
        fraction: budget as f64 / universe as f64,
        budget_count: budget,
        mse: f64::NAN,
        nmse: f64::NAN,
        rho: f64::NAN,
        tau_v: f64::NAN,
        risk: f64::NAN,
        status: String::new(),
        wall_time_ms: 0,
    };
    let base = config.seed;
    // Sampling and labels depend on (noise, budget, trial) only, so every loss
    // sees the same labeled set within a trial.
    let data_seed = seed::derive(&[base, 1, cell.noise as u64, cell.budget as u64, cell.trial as u64]);
    let solver_seed = seed::derive(&[
        base,
        2,
        cell.noise as u64,
        cell.loss as u64,
        cell.budget as u64,
        cell.trial as u64,
    ]);
    let result = (|| -> Result<(crate::solver::EmbeddingResult, f64, f64, f64)> {
        let queries = sample_triplets(signal.len(), budget, data_seed)?;
        let annotator = AnnotatorModel::new("sim", config.noise[cell.noise])?;
        let mut rng = seed::rng(&[data_seed, 0x1abe1]);
        let labels = annotator.label_all(signal, &queries, &mut rng)?;
        let fit = fit_embedding(
            &labels,
            config.dimension,
            &config.losses[cell.loss],
            &config.solver_config(solver_seed),
        )?;
        let y = fit.embedding.coordinate(0);
        let aligned = affine_align_mse(&y, signal)?;
        let rho = aligned_pearson(&y, signal.values()).unwrap_or(0.0);
        Ok((fit, aligned.mse, aligned.nmse, rho))
    })();
    let mut embedding = None;
    match result {
        Ok((fit, mse, nmse, rho)) => {
            record.mse = mse;
            record.nmse = nmse;
            record.rho = rho;
            record.tau_v = fit.violations;
            record.risk = fit.risk;
            record.status = "ok".into();
            embedding = Some(fit.embedding.coordinate(0));
        }
        Err(e) => {
            log::warn!("cell {cell:?} failed: {e}");
            record.status = format!("failed: {e}");
        }
    }
    record.wall_time_ms = start.elapsed().as_millis() as u64;
    CellOutput { record, embedding }
}

fn read_log(path: &Path, hash: &str) -> Result<Vec<ExperimentRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        // A crash can leave a torn final line; it is recomputed.
        if let Ok(r) = serde_json::from_str::<ExperimentRecord>(&line) {
            if r.config_hash == hash && r.is_ok() {
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Runs every grid cell, appending each finished record to `records.jsonl`
/// as it completes, then writes the sorted `records.csv`, timings and
/// per-cell summaries into the config's output directory.
pub fn run_simulation(config: &ExperimentConfig, options: &RunOptions) -> Result<SimulationOutcome> {
    run_simulation_in(config, options, Path::new("."))
}

/// Like [`run_simulation`], resolving a relative signal path against `base`.
pub fn run_simulation_in(config: &ExperimentConfig, options: &RunOptions, base: &Path) -> Result<SimulationOutcome> {
    config.validate()?;
    let signal = config.signal.resolve(base)?;
    let budgets = config
        .budget
        .counts(signal.len())
        .map_err(|e| Error::Config(e.to_string()))?;
    let hash = config.hash();
    let dir = config.output_dir.clone();
    fs::create_dir_all(dir.join("embeddings"))?;
    fs::write(dir.join("signal.csv"), signal.to_csv())?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;

    let log_path = dir.join(RECORDS_LOG);
    let previous = if options.resume {
        read_log(&log_path, &hash)?
    } else {
        Vec::new()
    };
    // Rewrite the log with only the retained records so torn lines disappear.
    {
        let mut f = File::create(&log_path)?;
        for r in &previous {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.sync_data()?;
    }
    let done: HashSet<CellIndex> = previous.iter().map(|r| r.cell).collect();

    let mut pending = Vec::new();
    for noise in 0..config.noise.len() {
        for loss in 0..config.losses.len() {
            for budget in 0..budgets.len() {
                for trial in 0..config.trials {
                    let cell = CellIndex { noise, loss, budget, trial };
                    if !done.contains(&cell) {
                        pending.push(cell);
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<CellOutput>();
    let writer_dir = dir.clone();
    let save = options.save_embeddings;
    let writer = std::thread::spawn(move || -> Result<Vec<ExperimentRecord>> {
        let mut log = OpenOptions::new().append(true).open(writer_dir.join(RECORDS_LOG))?;
        let mut fresh = Vec::new();
        for out in rx {
            serde_json::to_writer(&mut log, &out.record)?;
            log.write_all(b"\n")?;
            log.flush()?;
            if let (true, 0, Some(y)) = (save, out.record.cell.trial, &out.embedding) {
                let csv = crate::solver::Embedding::from_series(y).to_csv();
                fs::write(embedding_path(&writer_dir, &out.record.cell), csv)?;
            }
            fresh.push(out.record);
        }
        Ok(fresh)
    });
    pool.install(|| {
        pending.par_iter().for_each_with(tx, |tx, &cell| {
            let out = run_cell(config, &hash, &signal, &budgets, cell);
            tx.send(out).expect("record writer alive");
        })
    });
    let fresh = writer.join().expect("record writer panicked")?;

    let computed = fresh.len();
    let resumed = previous.len();
    let mut records = previous;
    records.extend(fresh);
    records.sort_by_key(|r| r.cell);
    let failed = records.iter().filter(|r| !r.is_ok()).count();

    write_records_csv(&dir.join(RECORDS_CSV), &records)?;
    write_csv(
        &dir.join("timings.csv"),
        records.iter().map(|r| TimingRow {
            noise: r.cell.noise,
            loss: r.cell.loss,
            budget: r.cell.budget,
            trial: r.cell.trial,
            wall_time_ms: r.wall_time_ms,
        }),
    )?;
    emit_plot_data(&records, &dir)?;

    Ok(SimulationOutcome {
        records,
        computed,
        resumed,
        failed,
        output_dir: dir,
    })
}

#[derive(Serialize)]
struct TimingRow {
    noise: usize,
    loss: usize,
    budget: usize,
    trial: usize,
    wall_time_ms: u64,
}

pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    write_csv(
        path,
        records.iter().map(|r| RecordRow {
            config_hash: &r.config_hash,
            noise: &r.noise_model,
            loss: &r.loss_spec,
            fraction_of_t: r.fraction,
            budget: r.budget_count,
            trial: r.cell.trial,
            mse: r.mse,
            nmse: r.nmse,
            rho: r.rho,
            tau_v: r.tau_v,
            risk: r.risk,
            status: &r.status,
        }),
    )
}

/// Loads the completed records of a run directory.
pub fn load_records(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let path = dir.join(RECORDS_LOG);
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.clone(),
            row: idx + 1,
            message: e.to_string(),
        })?);
    }
    out.sort_by_key(|r: &ExperimentRecord| r.cell);
    Ok(out)
}
