use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::signal::{Signal, SignalKind};
use crate::simulate::Link;
use crate::solver::{SolverConfig, StepRule};
use crate::triplet::{fraction_budget, triplet_budget};

/// Eight log-spaced fractions of the triplet universe from 0.05% to 10.77%.
pub fn default_fraction_grid() -> Vec<f64> {
    let (lo, hi) = (0.0005f64, 0.1077f64);
    (0..8)
        .map(|i| {
            if i == 7 {
                hi
            } else {
                lo * (hi / lo).powf(i as f64 / 7.0)
            }
        })
        .collect()
}

/// Where the ground-truth construct comes from: a generator or a CSV file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl SignalSpec {
    pub fn generated(kind: &SignalKind, n: usize, seed: u64) -> Self {
        let knots = match kind {
            SignalKind::CustomPiecewise { knots } => Some(knots.clone()),
            _ => None,
        };
        Self {
            kind: Some(kind.label().to_owned()),
            n: Some(n),
            seed,
            knots,
            path: None,
        }
    }

    /// Relative paths resolve against `base` (the config file's directory).
    pub fn resolve(&self, base: &Path) -> Result<Signal> {
        match (&self.path, &self.kind) {
            (Some(_), Some(_)) => Err(Error::Config("signal: give either `path` or `kind`, not both".into())),
            (Some(p), None) => {
                let full = if p.is_relative() { base.join(p) } else { p.clone() };
                Ok(Signal::load_csv(full)?.0)
            }
            (None, Some(kind)) => {
                let n = self
                    .n
                    .ok_or_else(|| Error::Config("signal: generated signals need `n`".into()))?;
                let kind = match kind.as_str() {
                    "task-a-like" => SignalKind::TaskALike,
                    "task-b-like" => SignalKind::TaskBLike,
                    "sine" => SignalKind::Sine,
                    "custom-piecewise" => SignalKind::CustomPiecewise {
                        knots: self.knots.clone().ok_or_else(|| {
                            Error::Config("signal: custom-piecewise needs `knots`".into())
                        })?,
                    },
                    other => return Err(Error::Config(format!("signal: unknown kind {other:?}"))),
                };
                Signal::generate(kind, n, self.seed)
            }
            (None, None) => Err(Error::Config("signal: missing `kind` or `path`".into())),
        }
    }
}

/// Triplet budgets, either as fractions of `|T|` or as constants `K` in `K n ln n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetGrid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fractions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<f64>,
}

impl Default for BudgetGrid {
    fn default() -> Self {
        Self {
            fractions: default_fraction_grid(),
            k: Vec::new(),
        }
    }
}

impl BudgetGrid {
    pub fn counts(&self, n: usize) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for &f in &self.fractions {
            out.push(fraction_budget(n, f)?);
        }
        for &k in &self.k {
            out.push(triplet_budget(n, k)?);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.fractions.len() + self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solver settings shared by every cell; `restarts` and `seed` live on the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init_scale: f64,
    pub step_rule: StepRule,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_iters: d.max_iters,
            rel_tol: d.rel_tol,
            init_scale: d.init_scale,
            step_rule: d.step_rule,
        }
    }
}

fn default_noise() -> Vec<Link> {
    vec![Link::Logistic { sigma: 20.0 }]
}

fn default_losses() -> Vec<LossSpec> {
    vec![LossSpec::default()]
}

fn default_restarts() -> usize {
    30
}

fn default_trials() -> usize {
    30
}

fn default_dimension() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}

/// A simulation grid: every noise level × loss × budget × trial is one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub signal: SignalSpec,
    #[serde(default = "default_noise")]
    pub noise: Vec<Link>,
    #[serde(default)]
    pub budget: BudgetGrid,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossSpec>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(signal: SignalSpec) -> Self {
        Self {
            signal,
            noise: default_noise(),
            budget: BudgetGrid::default(),
            losses: default_losses(),
            restarts: default_restarts(),
            trials: default_trials(),
            seed: 0,
            dimension: default_dimension(),
            solver: SolverSettings::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return cfg("trials must be >= 1".into());
        }
        if self.restarts == 0 {
            return cfg("restarts must be >= 1".into());
        }
        if self.dimension == 0 {
            return cfg("dimension must be >= 1".into());
        }
        if self.noise.is_empty() || self.losses.is_empty() || self.budget.is_empty() {
            return cfg("noise, losses and budget grids must be non-empty".into());
        }
        if let Some(f) = self.budget.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return cfg(format!("budget fraction {f} outside (0, 1]"));
        }
        if let Some(k) = self.budget.k.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return cfg(format!("budget constant K = {k} must be positive"));
        }
        for link in &self.noise {
            link.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for loss in &self.losses {
            loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.solver_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            restarts: self.restarts,
            max_iters: self.solver.max_iters,
            rel_tol: self.solver.rel_tol,
            init_scale: self.solver.init_scale,
            step_rule: self.solver.step_rule,
            seed,
        }
    }

    /// Stable digest of everything that affects results (not the output location).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = default_fraction_grid();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.0005);
        assert_eq!(g[7], 0.1077);
        let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("[signal]\nkind = \"task-b-like\"\nn = 178\n").unwrap();
        assert_eq!(c.trials, 30);
        assert_eq!(c.restarts, 30);
        assert_eq!(c.noise, vec![Link::Logistic { sigma: 20.0 }]);
        assert_eq!(c.budget.counts(178).unwrap().len(), 8);
        assert_eq!(c.signal.resolve(Path::new(".")).unwrap().len(), 178);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 3
trials = 5
restarts = 2
output_dir = "out"

[signal]
kind = "task-a-like"
n = 60
seed = 9

[[noise]]
model = "constant"
mu = 0.9
eps_sd = 0.01

[[noise]]
model = "logistic"
sigma = 6

[budget]
fractions = [0.01, 0.05]
k = [15.0]

[[losses]]
kind = "ste"
sigma = 0.7071067811865476

[[losses]]
kind = "tste"
alpha = 2

[[losses]]
kind = "gnmds-hinge"

[[losses]]
kind = "ckl"
mu = 10

[solver]
max_iters = 200
step_rule = { rule = "fixed-with-decay", initial = 10.0, decay = 0.01 }
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.noise.len(), 2);
        assert_eq!(c.losses.len(), 4);
        assert_eq!(c.budget.len(), 3);
        assert_eq!(c.solver.max_iters, 200);
        assert_eq!(c.budget.counts(60).unwrap()[2], triplet_budget(60, 15.0).unwrap());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("trials = 3"), Err(Error::Config(_))));
        let bad = [
            "[signal]\nkind = \"sine\"\nn = 10\n[budget]\nfractions = [1.5]",
            "trials = 0\n[signal]\nkind = \"sine\"\nn = 10",
            "bogus = 1\n[signal]\nkind = \"sine\"\nn = 10",
            "[signal]\nkind = \"sine\"\nn = 10\n[[noise]]\nmodel = \"logistic\"\nsigma = -1",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
        let c = ExperimentConfig::from_toml("[signal]\nkind = \"wobble\"\nn = 10").unwrap();
        assert!(c.signal.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::new(SignalSpec::generated(&SignalKind::Sine, 10, 0));
        let h = a.hash();
        a.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), h);
        a.trials = 2;
        assert_ne!(a.hash(), h);
    }
}
