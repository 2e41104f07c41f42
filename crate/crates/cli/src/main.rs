use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use tripletfusion::experiment::{
    emit_overlays, emit_plot_data, evaluate_embedding, load_records, run_fusion_pipeline,
    run_simulation_in, ExperimentConfig, FusionRequest, RunOptions, SolverSettings,
};
use tripletfusion::interchange::{find_overlaps, load_jsonl};
use tripletfusion::loss::LossSpec;
use tripletfusion::signal::Signal;
use tripletfusion::solver::SolverConfig;
use tripletfusion::Error;
use tripletfusion_service::ServeConfig;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "tripletfusion", version, about = "Recover time-series labels from triplet comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid from a TOML experiment config.
    Simulate(SimulateArgs),
    /// Fuse a JSON Lines label file and fit an embedding.
    Fuse(FuseArgs),
    /// Score an embedding CSV against a ground-truth signal CSV.
    Evaluate(EvaluateArgs),
    /// Re-derive plot tables from a finished simulation run.
    PlotData(PlotArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Keep finished cells from a previous run of the same config.
    #[arg(long)]
    resume: bool,
    /// Skip writing trial-0 embeddings.
    #[arg(long)]
    no_embeddings: bool,
}

#[derive(Args)]
struct FuseArgs {
    /// JSON Lines label file.
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth signal CSV; enables the evaluation tables.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// TOML with `loss`, `restarts`, `fractions`, `num_bins`, `task` and `[solver]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "fusion")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    /// Write the scores as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory of a `simulate` run.
    #[arg(long)]
    run: PathBuf,
    /// Defaults to `<run>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML with `bind`, `data_dir`, `lease_timeout_s`, `grace_s`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory holding the event log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FuseConfig {
    loss: Option<LossSpec>,
    restarts: Option<usize>,
    fractions: Option<Vec<f64>>,
    num_bins: Option<usize>,
    task: Option<String>,
    solver: Option<SolverSettings>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ServeFile {
    bind: Option<String>,
    data_dir: Option<PathBuf>,
    lease_timeout_s: Option<f64>,
    grace_s: Option<f64>,
}

enum Failure {
    Config(String),
    Data(String),
    Partial(String),
}

impl Failure {
    fn data(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn rayon_jobs(jobs: usize) -> Result<(), Failure> {
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Config(format!("--jobs {jobs}: {e}")))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut config =
        ExperimentConfig::load(&args.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let options = RunOptions {
        jobs: args.jobs,
        resume: args.resume,
        save_embeddings: !args.no_embeddings,
    };
    let outcome = run_simulation_in(&config, &options, base).map_err(Failure::data)?;
    println!(
        "{} records ({} computed, {} resumed, {} failed) in {}",
        outcome.records.len(),
        outcome.computed,
        outcome.resumed,
        outcome.failed,
        outcome.output_dir.display()
    );
    if outcome.exceeds_failure_threshold() {
        return Err(Failure::Partial(format!(
            "{:.1}% of cells failed",
            100.0 * outcome.failure_rate()
        )));
    }
    Ok(())
}

fn fuse(args: FuseArgs) -> Result<(), Failure> {
    let file: FuseConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => FuseConfig::default(),
    };
    rayon_jobs(args.jobs)?;
    let mut req = FusionRequest::new(&args.labels, &args.out);
    req.signal_path = args.signal.clone();
    if let Some(loss) = file.loss {
        req.loss = loss;
    }
    req.loss.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let settings = file.solver.unwrap_or_default();
    req.solver = SolverConfig {
        restarts: file.restarts.unwrap_or(SolverConfig::default().restarts),
        max_iters: settings.max_iters,
        rel_tol: settings.rel_tol,
        init_scale: settings.init_scale,
        step_rule: settings.step_rule,
        seed: args.seed.unwrap_or(0),
    };
    req.solver.validate().map_err(|e| Failure::Config(e.to_string()))?;
    req.fractions = file.fractions.unwrap_or_default();
    if let Some(b) = file.num_bins {
        req.num_bins = b;
    }
    req.task = file.task;

    let report = match run_fusion_pipeline(&req) {
        Ok(r) => r,
        Err(e @ (Error::FusionConflict { .. } | Error::DuplicateQuery(_))) => {
            eprintln!("error: {e}");
            if let Ok(labels) = load_jsonl(&args.labels) {
                let overlaps = find_overlaps(&labels);
                eprintln!("{} triplet(s) labeled more than once:", overlaps.len());
                for o in overlaps {
                    eprintln!("  {}  {}", o.query, o.annotators.join(", "));
                }
            }
            return Err(Failure::Data("label file is not disjoint".into()));
        }
        Err(e) => return Err(Failure::data(e)),
    };
    println!(
        "fused {} labels from {} annotator(s) over n={}",
        report.total_labels,
        report.annotator_counts.len(),
        report.n
    );
    for fit in &report.fits {
        match fit.rho {
            Some(rho) => println!(
                "  {}: {} triplets, risk {:.4}, rho {:.4}, mse {:.5}",
                fit.tag,
                fit.triplets,
                fit.risk,
                rho,
                fit.fit.as_ref().map_or(f64::NAN, |f| f.mse)
            ),
            None => println!("  {}: {} triplets, risk {:.4}", fit.tag, fit.triplets, fit.risk),
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let (signal, warnings) = Signal::load_csv(&args.signal).map_err(Failure::data)?;
    for w in warnings {
        log::warn!("{w}");
    }
    let (fit, rho) = evaluate_embedding(&args.embedding, &signal).map_err(Failure::data)?;
    let out = serde_json::json!({
        "a": fit.a,
        "b": fit.b,
        "mse": fit.mse,
        "nmse": fit.nmse,
        "rho": rho,
    });
    let text = serde_json::to_string_pretty(&out).expect("plain json");
    match args.out {
        Some(p) => std::fs::write(&p, text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn plot_data(args: PlotArgs) -> Result<(), Failure> {
    let records = load_records(&args.run).map_err(Failure::data)?;
    if records.is_empty() {
        return Err(Failure::Data(format!("{} has no records", args.run.display())));
    }
    let out = args.out.unwrap_or_else(|| args.run.join("plots"));
    let mut written = emit_plot_data(&records, &out).map_err(Failure::data)?;
    written.extend(emit_overlays(&args.run, &records, &out).map_err(Failure::data)?);
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut cfg = ServeConfig::from_env().map_err(Failure::Config)?;
    if let Some(path) = &args.config {
        let file: ServeFile = read_toml(path)?;
        if let Some(b) = file.bind {
            cfg.bind = b.parse().map_err(|e| Failure::Config(format!("bind {b}: {e}")))?;
        }
        if let Some(d) = file.data_dir {
            cfg.data_dir = d;
        }
        if let Some(t) = file.lease_timeout_s {
            cfg.lease_timeout_s = t;
        }
        if let Some(g) = file.grace_s {
            cfg.grace_s = g;
        }
    }
    if let Some(b) = args.bind {
        cfg.bind = b.parse().map_err(|e| Failure::Config(format!("bind {b}: {e}")))?;
    }
    if let Some(out) = args.out {
        cfg.data_dir = out;
    }
    cfg.validate().map_err(Failure::Config)?;
    tripletfusion_service::run(&cfg).map_err(|e| Failure::Data(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fuse(a) => fuse(a),
        Command::Evaluate(a) => evaluate(a),
        Command::PlotData(a) => plot_data(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("partial failure: {m}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
