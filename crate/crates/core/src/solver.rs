//! Empirical-risk minimization over the embedding with random restarts.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::triplet_violations;
use crate::loss::{orient, risk_and_gradient_oriented, LossSpec, Oriented};
use crate::seed;
use crate::triplet::LabeledTripletSet;

/// `n` points in `R^m`, stored point-major (`data[p * m + d]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl Embedding {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: vec![0.0; m * n],
        }
    }

    pub fn from_point_major(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || data.len() != m * n {
            return Err(Error::InvalidSize(format!(
                "embedding of {m}x{n} needs {} values, got {}",
                m * n,
                data.len()
            )));
        }
        Ok(Self { m, n, data })
    }

    /// A one-dimensional embedding, i.e. a time series.
    pub fn from_series(values: &[f64]) -> Self {
        Self {
            m: 1,
            n: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Position of 0-based point `p`.
    pub fn point(&self, p: usize) -> &[f64] {
        &self.data[p * self.m..(p + 1) * self.m]
    }

    /// Values of dimension `d` across all points.
    pub fn coordinate(&self, d: usize) -> Vec<f64> {
        (0..self.n).map(|p| self.data[p * self.m + d]).collect()
    }

    /// `YᵀY`, the `n × n` Gram matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |a, b| {
            self.point(a).iter().zip(self.point(b)).map(|(x, y)| x * y).sum()
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            m: self.m,
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV with columns `t, y_1 .. y_m` and 1-based `t`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for d in 1..=self.m {
            out.push_str(&format!(",y_{d}"));
        }
        out.push('\n');
        for p in 0..self.n {
            out.push_str(&(p + 1).to_string());
            for v in self.point(p) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyInput("embedding csv"))?;
        let m = header.split(',').count().saturating_sub(1);
        if m == 0 {
            return Err(Error::InvalidParameter("embedding csv needs t and y columns".into()));
        }
        let mut data = Vec::new();
        let mut n = 0;
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != m + 1 {
                return Err(Error::InvalidParameter(format!(
                    "embedding csv row {}: expected {} columns",
                    idx + 1,
                    m + 1
                )));
            }
            for f in &fields[1..] {
                data.push(f.parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!("embedding csv row {}: bad value {f:?}", idx + 1))
                })?);
            }
            n += 1;
        }
        Self::from_point_major(m, n, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// Halve the step until the risk does not increase; grow by `grow` after each success.
    Backtracking { initial: f64, grow: f64 },
    /// `initial / (1 + decay · iteration)`, accepted unconditionally when finite.
    FixedWithDecay { initial: f64, decay: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            initial: 1.0,
            grow: 1.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once the relative risk decrease of an accepted step falls below this.
    pub rel_tol: f64,
    /// Standard deviation of the i.i.d. normal initialization.
    pub init_scale: f64,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 30,
            max_iters: 1000,
            rel_tol: 1e-7,
            init_scale: 1e-2,
            step_rule: StepRule::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be > 0".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter("init_scale must be > 0".into()));
        }
        let ok = match self.step_rule {
            StepRule::Backtracking { initial, grow } => initial > 0.0 && grow >= 1.0,
            StepRule::FixedWithDecay { initial, decay } => initial > 0.0 && decay >= 0.0,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid step rule {:?}", self.step_rule)));
        }
        Ok(())
    }
}

/// Outcome of a single descent from one initialization.
#[derive(Clone, Debug)]
pub struct Descent {
    pub embedding: Embedding,
    pub risk: f64,
    /// Risk after the initialization and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub embedding: Embedding,
    pub risk: f64,
    pub restart_risks: Vec<f64>,
    pub best_restart: usize,
    /// Fraction of training triplets the embedding violates.
    pub violations: f64,
    pub m: usize,
}

const MAX_HALVINGS: usize = 60;

pub fn random_init<R: Rng + ?Sized>(m: usize, n: usize, scale: f64, rng: &mut R) -> Embedding {
    let normal = Normal::new(0.0, scale).expect("positive init scale");
    Embedding {
        m,
        n,
        data: (0..m * n).map(|_| normal.sample(rng)).collect(),
    }
}

/// Gradient descent from `init` under the configured step rule.
pub fn descend(
    spec: &LossSpec,
    triplets: &[Oriented],
    init: Embedding,
    config: &SolverConfig,
) -> Result<Descent> {
    let len = init.data.len();
    let mut y = init;
    let mut grad = vec![0.0; len];
    let mut risk = risk_and_gradient_oriented(spec, &y, triplets, &mut grad)?;
    let mut cand = y.clone();
    let mut cand_grad = vec![0.0; len];
    let mut history = vec![risk];
    let mut iterations = 0;
    let mut step = match config.step_rule {
        StepRule::Backtracking { initial, .. } => initial,
        StepRule::FixedWithDecay { initial, .. } => initial,
    };

    for it in 0..config.max_iters {
        let backtrack = match config.step_rule {
            StepRule::Backtracking { .. } => true,
            StepRule::FixedWithDecay { initial, decay } => {
                step = initial / (1.0 + decay * it as f64);
                false
            }
        };
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..MAX_HALVINGS {
            for ((c, &v), &g) in cand.data.iter_mut().zip(&y.data).zip(&grad) {
                *c = v - step * g;
            }
            match risk_and_gradient_oriented(spec, &cand, triplets, &mut cand_grad) {
                Ok(r) => {
                    saw_finite = true;
                    if !backtrack || r <= risk {
                        accepted = Some(r);
                        break;
                    }
                }
                Err(Error::NumericalOverflow(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        if it == 0 && backtrack && accepted.is_some() {
            // Expand the first step while that keeps lowering the risk; the
            // small initialization sits near the saddle at the origin where
            // unit steps barely move.
            let mut best = accepted.expect("checked");
            let mut probe = cand.clone();
            let mut probe_grad = vec![0.0; len];
            for _ in 0..MAX_HALVINGS {
                let trial = step * 2.0;
                for ((c, &v), &g) in probe.data.iter_mut().zip(&y.data).zip(&grad) {
                    *c = v - trial * g;
                }
                match risk_and_gradient_oriented(spec, &probe, triplets, &mut probe_grad) {
                    Ok(r) if r < best => {
                        best = r;
                        step = trial;
                        std::mem::swap(&mut cand, &mut probe);
                        std::mem::swap(&mut cand_grad, &mut probe_grad);
                    }
                    Ok(_) | Err(Error::NumericalOverflow(_)) => break,
                    Err(e) => return Err(e),
                }
            }
            accepted = Some(best);
        }
        let Some(new_risk) = accepted else {
            if !saw_finite {
                return Err(Error::NumericalOverflow("descent step"));
            }
            // No step size decreases the risk: stationary up to precision.
            break;
        };
        let rel = (risk - new_risk).abs() / risk.abs().max(f64::MIN_POSITIVE);
        std::mem::swap(&mut y, &mut cand);
        std::mem::swap(&mut grad, &mut cand_grad);
        risk = new_risk;
        history.push(risk);
        iterations = it + 1;
        if let StepRule::Backtracking { grow, .. } = config.step_rule {
            step *= grow;
        }
        if rel < config.rel_tol {
            break;
        }
    }
    Ok(Descent {
        embedding: y,
        risk,
        history,
        iterations,
    })
}

/// Fits an `m`-dimensional embedding, keeping the restart with the lowest
/// final risk (ties go to the lowest restart index).
pub fn fit_embedding(
    labels: &LabeledTripletSet,
    m: usize,
    spec: &LossSpec,
    config: &SolverConfig,
) -> Result<EmbeddingResult> {
    if m == 0 {
        return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labeled triplets"));
    }
    spec.validate()?;
    config.validate()?;
    let triplets = orient(labels);
    let n = labels.n();
    let descents: Vec<Result<Descent>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(&[config.seed, r as u64]);
            let init = random_init(m, n, config.init_scale, &mut rng);
            descend(spec, &triplets, init, config)
        })
        .collect();
    let descents = descents.into_iter().collect::<Result<Vec<_>>>()?;
    let restart_risks: Vec<f64> = descents.iter().map(|d| d.risk).collect();
    let best_restart = restart_risks
        .iter()
        .enumerate()
        .fold(0, |best, (idx, &r)| if r < restart_risks[best] { idx } else { best });
    let best = descents.into_iter().nth(best_restart).expect("restarts >= 1");
    let violations = triplet_violations(&best.embedding, labels)?;
    Ok(EmbeddingResult {
        risk: best.risk,
        embedding: best.embedding,
        restart_risks,
        best_restart,
        violations,
        m,
    })
}

/// Top-`m` factor `Y` (m × n) with `YᵀY ≈ G`, from the eigendecomposition of `G`.
pub fn recover_from_gram(gram: &DMatrix<f64>, m: usize) -> Result<Embedding> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::InvalidSize(format!("Gram matrix must be square, got {}x{}", n, gram.ncols())));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("cannot recover {m} dimensions from {n} points")));
    }
    const TOL: f64 = 1e-8;
    let scale = gram.amax().max(1.0);
    if (gram - gram.transpose()).amax() > TOL * scale {
        return Err(Error::InvalidParameter("Gram matrix is not symmetric".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(gram.clone());
    let min = eig.eigenvalues.min();
    if min < -TOL * scale {
        return Err(Error::NotPsd(min));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut y = Embedding::zeros(m, n);
    for (d, &col) in order.iter().take(m).enumerate() {
        let root = eig.eigenvalues[col].max(0.0).sqrt();
        for p in 0..n {
            y.data[p * m + d] = root * eig.eigenvectors[(p, col)];
        }
    }
    Ok(y)
}
