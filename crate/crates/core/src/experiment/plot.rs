//! Plot-ready CSV output: error-vs-budget curves with mean ± sd, success
//! probability curves, and aligned embedding overlays.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::simulation::{embedding_path, CellIndex, ExperimentRecord};
use crate::error::{Error, Result};
use crate::evaluation::{affine_align_mse, SuccessProbabilityCurve};
use crate::signal::Signal;
use crate::solver::Embedding;

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub noise: String,
    pub loss: String,
    pub fraction_of_t: f64,
    pub budget: u64,
    pub trials: usize,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub mse_median: f64,
    pub nmse_mean: f64,
    pub nmse_sd: f64,
    pub nmse_median: f64,
    pub rho_mean: f64,
    pub rho_sd: f64,
    pub tau_v_mean: f64,
    pub tau_v_sd: f64,
}

/// Aggregates successful records over trials, one row per (noise, loss, budget).
pub fn summarize(records: &[ExperimentRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        groups
            .entry((r.cell.noise, r.cell.loss, r.cell.budget))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let col = |f: fn(&ExperimentRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mse, nmse, rho, tau) = (col(|r| r.mse), col(|r| r.nmse), col(|r| r.rho), col(|r| r.tau_v));
            let (mse_mean, mse_sd) = mean_sd(&mse);
            let (nmse_mean, nmse_sd) = mean_sd(&nmse);
            let (rho_mean, rho_sd) = mean_sd(&rho);
            let (tau_v_mean, tau_v_sd) = mean_sd(&tau);
            CellSummary {
                noise: rs[0].noise_model.clone(),
                loss: rs[0].loss_spec.clone(),
                fraction_of_t: rs[0].fraction,
                budget: rs[0].budget_count,
                trials: rs.len(),
                mse_mean,
                mse_sd,
                mse_median: median(&mse),
                nmse_mean,
                nmse_sd,
                nmse_median: median(&nmse),
                rho_mean,
                rho_sd,
                tau_v_mean,
                tau_v_sd,
            }
        })
        .collect()
}

/// Writes `mse_vs_budget.csv` into `out_dir`.
pub fn emit_plot_data(records: &[ExperimentRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no experiment records"));
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("mse_vs_budget.csv");
    write_csv(&path, summarize(records))?;
    Ok(vec![path])
}

/// Column suffix for a budget fraction in basis points: 0.25% → `025`.
pub fn fraction_tag(fraction: f64) -> String {
    format!("{:03}", (fraction * 10_000.0).round() as u64)
}

/// Overlay CSV `t, z, y_aligned_<tag>...` with each series affinely aligned to `z`.
pub fn overlay_csv(signal: &Signal, series: &[(String, Vec<f64>)]) -> Result<String> {
    let mut aligned = Vec::with_capacity(series.len());
    for (_, y) in series {
        aligned.push(affine_align_mse(y, signal)?.apply(y));
    }
    let mut out = String::from("t,z");
    for (tag, _) in series {
        out.push_str(&format!(",y_aligned_{tag}"));
    }
    out.push('\n');
    for (t, z) in signal.values().iter().enumerate() {
        out.push_str(&format!("{},{z}", t + 1));
        for a in &aligned {
            out.push_str(&format!(",{}", a[t]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// One overlay file per (noise, loss) from the trial-0 embeddings of a run directory.
pub fn emit_overlays(run_dir: &Path, records: &[ExperimentRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (signal, _) = Signal::load_csv(run_dir.join("signal.csv"))?;
    let mut groups: BTreeMap<(usize, usize), Vec<(String, Vec<f64>)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.cell.trial == 0 && r.is_ok()) {
        let path = embedding_path(run_dir, &r.cell);
        if !path.exists() {
            continue;
        }
        let y = Embedding::from_csv(&fs::read_to_string(&path)?)?.coordinate(0);
        groups
            .entry((r.cell.noise, r.cell.loss))
            .or_default()
            .push((fraction_tag(r.fraction), y));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for ((noise, loss), series) in groups {
        let path = out_dir.join(format!(
            "overlay_{}.csv",
            embedding_tag(&CellIndex { noise, loss, budget: 0, trial: 0 })
        ));
        fs::write(&path, overlay_csv(&signal, &series)?)?;
        written.push(path);
    }
    Ok(written)
}

fn embedding_tag(c: &CellIndex) -> String {
    format!("n{}_l{}", c.noise, c.loss)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    annotator: &'a str,
    bin: usize,
    mean_gap: f64,
    estimated_p: f64,
    count: usize,
}

pub fn write_success_curves(path: &Path, curves: &BTreeMap<String, SuccessProbabilityCurve>) -> Result<()> {
    write_csv(
        path,
        curves.iter().flat_map(|(a, c)| {
            c.bins.iter().enumerate().map(move |(bin, b)| CurveRow {
                annotator: a,
                bin,
                mean_gap: b.mean_gap,
                estimated_p: b.estimated_p,
                count: b.count,
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_matches_spreadsheet() {
        let (m, sd) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0]);
        assert_eq!(m, 3.8);
        // STDEV.S of the same column
        assert!((sd - 1.095_445_115_010_332_2).abs() < 1e-12);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn tags() {
        assert_eq!(fraction_tag(0.0025), "025");
        assert_eq!(fraction_tag(0.005), "050");
        assert_eq!(fraction_tag(13_862.0 / 2_772_528.0), "050");
        assert_eq!(fraction_tag(0.1077), "1077");
    }

    #[test]
    fn overlay_format() {
        let z = Signal::new("z", vec![0.0, 0.5, 1.0]).unwrap();
        let csv = overlay_csv(
            &z,
            &[("025".into(), vec![2.0, 1.0, 0.0]), ("050".into(), vec![0.0, 1.0, 2.0])],
        )
        .unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,z,y_aligned_025,y_aligned_050"));
        assert_eq!(lines.next(), Some("1,0,0,0"));
        assert_eq!(lines.count(), 2);
    }
}
