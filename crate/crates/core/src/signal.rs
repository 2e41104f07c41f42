//! The hidden construct `Z`: generation, loading, rendering as color swatches,
//! and the ground-truth dissimilarity used by simulated annotators.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A scalar construct sampled at 1 Hz, so `len()` is also the duration in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    name: String,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalKind {
    /// Plateaus joined by ramps, with a few short-lived extremes.
    TaskALike,
    /// Smooth signal without any constant interval.
    TaskBLike,
    /// One period of `0.5 + 0.5 sin(2πt/n)`.
    Sine,
    /// Linear interpolation between knots `(position in [0, 1], value)`.
    CustomPiecewise { knots: Vec<(f64, f64)> },
}

impl SignalKind {
    pub fn label(&self) -> &'static str {
        match self {
            SignalKind::TaskALike => "task-a-like",
            SignalKind::TaskBLike => "task-b-like",
            SignalKind::Sine => "sine",
            SignalKind::CustomPiecewise { .. } => "custom-piecewise",
        }
    }
}

impl Signal {
    pub const SAMPLE_RATE_HZ: f64 = 1.0;

    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidSize(format!(
                "a signal needs at least 3 samples, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal value at t={} is not finite",
                pos + 1
            )));
        }
        Ok(Self {
            name: name.into(),
            values,
        })
    }

    /// Deterministic in `(kind, n, seed)`.
    pub fn generate(kind: SignalKind, n: usize, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!(
                "a signal needs at least 3 samples, got {n}"
            )));
        }
        let values = match &kind {
            SignalKind::Sine => (0..n)
                .map(|t| 0.5 + 0.5 * (TAU * t as f64 / n as f64).sin())
                .collect(),
            SignalKind::TaskALike => task_a_like(n, seed),
            SignalKind::TaskBLike => task_b_like(n, seed),
            SignalKind::CustomPiecewise { knots } => piecewise(knots, n)?,
        };
        Self::new(format!("{}-n{n}-s{seed}", kind.label()), values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a 1-based time index.
    pub fn at(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.values.len() {
            return Err(Error::Index {
                index: t,
                len: self.values.len(),
            });
        }
        Ok(self.values[t - 1])
    }

    /// Population variance, used to normalize reconstruction errors.
    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// Parses one value per line with an optional single header line.
    /// Values outside `[0, 1]` are accepted and reported in the returned warnings.
    pub fn parse_csv(name: &str, text: &str, origin: &Path) -> Result<(Self, Vec<String>)> {
        let mut values = Vec::new();
        let mut warnings = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let row = idx + 1;
            let field = line.split(',').next().unwrap_or("").trim();
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if !(0.0..=1.0).contains(&v) {
                        warnings.push(format!("row {row}: value {v} outside [0, 1]"));
                    }
                    values.push(v);
                }
                Ok(_) => {
                    return Err(Error::Format {
                        path: origin.to_path_buf(),
                        row,
                        message: format!("non-finite value {field:?}"),
                    })
                }
                Err(_) if row == 1 => {}
                Err(_) => {
                    return Err(Error::Format {
                        path: origin.to_path_buf(),
                        row,
                        message: format!("cannot parse {field:?} as a number"),
                    })
                }
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidSize(format!(
                "{} contains no samples",
                origin.display()
            )));
        }
        for w in &warnings {
            log::warn!("{}: {w}", origin.display());
        }
        Ok((Self::new(name, values)?, warnings))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "signal".to_owned());
        Self::parse_csv(&name, &text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value\n");
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn render_stimuli(&self) -> StimulusManifest {
        let entries = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let t = idx + 1;
                StimulusEntry {
                    t,
                    rgb: [0, green_level(v), 0],
                    asset_id: asset_id(&self.name, t),
                }
            })
            .collect();
        StimulusManifest { entries }
    }
}

/// `|z_i - z_j|` for 1-based indices.
pub fn dissimilarity(signal: &Signal, i: usize, j: usize) -> Result<f64> {
    Ok((signal.at(i)? - signal.at(j)?).abs())
}

pub fn green_level(value: f64) -> u8 {
    (255.0 * value.clamp(0.0, 1.0)).round() as u8
}

pub fn asset_id(signal_name: &str, t: usize) -> String {
    format!("{signal_name}-t{t:04}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub t: usize,
    pub rgb: [u8; 3],
    pub asset_id: String,
}

/// Per-frame green swatches; serialized as a bare JSON array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusManifest {
    pub entries: Vec<StimulusEntry>,
}

impl StimulusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks one entry per sample with `t` running 1..=n and pure-green colors.
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() < 3 {
            return Err(Error::InvalidSize(format!(
                "manifest has {} entries, need at least 3",
                self.entries.len()
            )));
        }
        for (idx, e) in self.entries.iter().enumerate() {
            if e.t != idx + 1 {
                return Err(Error::InvalidParameter(format!(
                    "manifest entry {idx} has time index {}, expected {}",
                    e.t,
                    idx + 1
                )));
            }
            if e.rgb[0] != 0 || e.rgb[2] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "manifest entry t={} is not a green swatch",
                    e.t
                )));
            }
        }
        Ok(())
    }
}

fn task_a_like(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(&[0xA, seed, n as u64]);
    let levels: [f64; 6] = [0.1, 0.25, 0.4, 0.55, 0.7, 0.85];
    let mut out = Vec::with_capacity(n);
    let mut level = levels[rng.gen_range(0..levels.len())];
    let mut segment = 0usize;
    while out.len() < n {
        match segment % 3 {
            0 => {
                let len = rng.gen_range((n / 12).max(3)..=(n / 6).max(4));
                out.extend(std::iter::repeat(level).take(len));
            }
            1 => {
                let mut next = level;
                while (next - level).abs() < 1e-9 {
                    next = levels[rng.gen_range(0..levels.len())];
                }
                let len = rng.gen_range((n / 30).max(2)..=(n / 12).max(3));
                out.extend((1..=len).map(|s| level + (next - level) * s as f64 / len as f64));
                level = next;
            }
            _ => {
                // Short-lived extreme: a few samples near 0 or 1, then back.
                let peak = if rng.gen_bool(0.5) {
                    rng.gen_range(0.95..=1.0)
                } else {
                    rng.gen_range(0.0..=0.05)
                };
                let len = rng.gen_range(2..=4);
                out.extend(std::iter::repeat(peak).take(len));
                out.extend(std::iter::repeat(level).take(2));
            }
        }
        segment += 1;
    }
    out.truncate(n);
    out
}

fn task_b_like(n: usize, seed: u64) -> Vec<f64> {
    let mut attempt = 0u64;
    loop {
        let mut rng = seed::rng(&[0xB, seed, n as u64, attempt]);
        let harmonics: Vec<(f64, f64, f64)> = (0..4)
            .map(|h| {
                let amp = rng.gen_range(0.3..1.0) / (h as f64 + 1.0);
                let cycles = rng.gen_range(0.5..1.5) * (h as f64 + 1.0);
                let phase = rng.gen_range(0.0..TAU);
                (amp, cycles, phase)
            })
            .collect();
        let slope = rng.gen_range(-0.5..0.5);
        let raw: Vec<f64> = (0..n)
            .map(|t| {
                let x = t as f64 / n as f64;
                slope * x
                    + harmonics
                        .iter()
                        .map(|&(a, c, p)| a * (TAU * c * x + p).sin())
                        .sum::<f64>()
            })
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-6 {
            let values: Vec<f64> = raw.iter().map(|v| 0.05 + 0.9 * (v - lo) / (hi - lo)).collect();
            let flat_run = values
                .windows(3)
                .any(|w| w[1] == w[0] && w[2] == w[1]);
            if !flat_run {
                return values;
            }
        }
        attempt += 1;
    }
}

fn piecewise(knots: &[(f64, f64)], n: usize) -> Result<Vec<f64>> {
    if knots.is_empty() {
        return Err(Error::InvalidParameter("piecewise signal needs knots".into()));
    }
    let mut sorted = knots.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.iter().any(|&(p, v)| !p.is_finite() || !v.is_finite()) {
        return Err(Error::InvalidParameter("piecewise knots must be finite".into()));
    }
    Ok((0..n)
        .map(|t| {
            let x = if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
            let first = sorted[0];
            let last = sorted[sorted.len() - 1];
            if x <= first.0 {
                return first.1;
            }
            if x >= last.0 {
                return last.1;
            }
            let seg = sorted.windows(2).find(|w| x <= w[1].0).expect("x within knots");
            let (p0, v0) = seg[0];
            let (p1, v1) = seg[1];
            if p1 - p0 <= 0.0 {
                v1
            } else {
                v0 + (v1 - v0) * (x - p0) / (p1 - p0)
            }
        })
        .collect())
}
