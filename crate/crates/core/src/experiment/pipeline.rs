use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{fraction_tag, overlay_csv, write_csv, write_success_curves};
use crate::error::{Error, Result};
use crate::evaluation::{
    affine_align_mse, aligned_pearson, estimate_success_probability, violations_against_truth,
    AffineFit,
};
use crate::interchange::{fuse_labels, load_jsonl};
use crate::loss::LossSpec;
use crate::signal::Signal;
use crate::solver::{fit_embedding, SolverConfig};
use crate::triplet::{fraction_budget, triplet_universe_size};

#[derive(Clone, Debug)]
pub struct FusionRequest {
    pub labels_path: PathBuf,
    pub signal_path: Option<PathBuf>,
    pub loss: LossSpec,
    pub solver: SolverConfig,
    /// Fit on the first `floor(f·|T|)` fused labels for each fraction; empty means all labels.
    pub fractions: Vec<f64>,
    pub num_bins: usize,
    pub out_dir: PathBuf,
    /// Task name used in the result tables; defaults to the signal name.
    pub task: Option<String>,
}

impl FusionRequest {
    pub fn new(labels_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            labels_path: labels_path.into(),
            signal_path: None,
            loss: LossSpec::default(),
            solver: SolverConfig::default(),
            fractions: Vec::new(),
            num_bins: 10,
            out_dir: out_dir.into(),
            task: None,
        }
    }
}

/// Sidecar written next to every embedding CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub risk: f64,
    pub restart_risks: Vec<f64>,
    pub violations: f64,
    pub loss_spec: LossSpec,
    pub config: SolverConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub tag: String,
    pub triplets: usize,
    pub fraction_of_t: f64,
    pub risk: f64,
    pub tau_v_embedding: f64,
    pub embedding_path: PathBuf,
    pub fit: Option<AffineFit>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionReport {
    pub task: String,
    pub n: usize,
    pub total_labels: usize,
    pub annotator_counts: BTreeMap<String, usize>,
    pub tau_v_vs_truth: Option<f64>,
    pub fits: Vec<FitReport>,
}

#[derive(Serialize)]
struct ResultRow<'a> {
    task: &'a str,
    method: String,
    fraction_of_t: f64,
    mse: f64,
    rho: f64,
}

#[derive(Serialize)]
struct ViolationRow<'a> {
    task: &'a str,
    fraction_of_t: f64,
    tau_v_vs_truth: f64,
    tau_v_embedding: f64,
}

/// Validates disjointness, fuses the labels of all annotators, fits one
/// embedding per requested budget and, when ground truth is given, writes the
/// alignment, correlation, violation and per-annotator success tables.
pub fn run_fusion_pipeline(req: &FusionRequest) -> Result<FusionReport> {
    let labels = load_jsonl(&req.labels_path)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels file has no triplets"));
    }
    let signal = match &req.signal_path {
        Some(p) => Some(Signal::load_csv(p)?.0),
        None => None,
    };
    let max_index = labels.iter().map(|l| l.query.max_index()).max().unwrap_or(0);
    let n = match &signal {
        Some(s) => s.len(),
        None => max_index,
    };
    let fused = fuse_labels(n, labels)?;
    let task = req
        .task
        .clone()
        .or_else(|| signal.as_ref().map(|s| s.name().to_owned()))
        .unwrap_or_else(|| "task".to_owned());
    let universe = triplet_universe_size(n)?;
    fs::create_dir_all(&req.out_dir)?;

    let mut subsets = Vec::new();
    if req.fractions.is_empty() {
        subsets.push(("all".to_owned(), fused.clone()));
    } else {
        for &f in &req.fractions {
            let want = fraction_budget(n, f)? as usize;
            if want > fused.len() {
                log::warn!(
                    "fraction {f} asks for {want} triplets but only {} are labeled; using all",
                    fused.len()
                );
            }
            subsets.push((fraction_tag(f), fused.prefix(want)));
        }
    }

    let tau_truth = match &signal {
        Some(s) => Some(violations_against_truth(s, &fused)?),
        None => None,
    };

    let mut fits = Vec::new();
    let mut overlay = Vec::new();
    for (tag, subset) in &subsets {
        let result = fit_embedding(subset, 1, &req.loss, &req.solver)?;
        let embedding_path = req.out_dir.join(format!("embedding_{tag}.csv"));
        fs::write(&embedding_path, result.embedding.to_csv())?;
        let sidecar = EmbeddingSidecar {
            risk: result.risk,
            restart_risks: result.restart_risks.clone(),
            violations: result.violations,
            loss_spec: req.loss,
            config: req.solver.clone(),
        };
        fs::write(
            req.out_dir.join(format!("embedding_{tag}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        let y = result.embedding.coordinate(0);
        let (fit, rho) = match &signal {
            Some(s) => (Some(affine_align_mse(&y, s)?), aligned_pearson(&y, s.values()).ok()),
            None => (None, None),
        };
        overlay.push((tag.clone(), y));
        fits.push(FitReport {
            tag: tag.clone(),
            triplets: subset.len(),
            fraction_of_t: subset.len() as f64 / universe as f64,
            risk: result.risk,
            tau_v_embedding: result.violations,
            embedding_path,
            fit,
            rho,
        });
    }

    if let Some(s) = &signal {
        let method = format!("triplet-embedding {}", req.loss);
        write_csv(
            &req.out_dir.join("results.csv"),
            fits.iter().map(|f| ResultRow {
                task: &task,
                method: method.clone(),
                fraction_of_t: f.fraction_of_t,
                mse: f.fit.map_or(f64::NAN, |a| a.mse),
                rho: f.rho.unwrap_or(f64::NAN),
            }),
        )?;
        write_csv(
            &req.out_dir.join("violations.csv"),
            fits.iter().map(|f| ViolationRow {
                task: &task,
                fraction_of_t: f.fraction_of_t,
                tau_v_vs_truth: tau_truth.unwrap_or(f64::NAN),
                tau_v_embedding: f.tau_v_embedding,
            }),
        )?;
        let mut curves = BTreeMap::new();
        for (annotator, part) in fused.by_annotator() {
            let bins = req.num_bins.min(part.len());
            match estimate_success_probability(&part, s, bins) {
                Ok(c) => {
                    curves.insert(annotator, c);
                }
                Err(Error::InvalidBins { .. }) => {
                    log::warn!("annotator {annotator}: too few non-tie labels for a success curve")
                }
                Err(e) => return Err(e),
            }
        }
        write_success_curves(&req.out_dir.join("success_probability.csv"), &curves)?;
        fs::write(req.out_dir.join("overlay.csv"), overlay_csv(s, &overlay)?)?;
    }

    let report = FusionReport {
        task,
        n,
        total_labels: fused.len(),
        annotator_counts: fused.annotator_counts(),
        tau_v_vs_truth: tau_truth,
        fits,
    };
    fs::write(req.out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Loads an embedding CSV and evaluates it against a ground-truth signal.
pub fn evaluate_embedding(embedding_csv: &Path, signal: &Signal) -> Result<(AffineFit, f64)> {
    let y = crate::solver::Embedding::from_csv(&fs::read_to_string(embedding_csv)?)?.coordinate(0);
    let fit = affine_align_mse(&y, signal)?;
    let rho = aligned_pearson(&y, signal.values())?;
    Ok((fit, rho))
}
