//! Simulated annotators under the constant-probability and logistic noise
//! models, and round-robin assignment of queries to annotators.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{dissimilarity, Signal};
use crate::triplet::{Label, LabeledTriplet, LabeledTripletSet, Source, TripletQuery};

/// Link function mapping the dissimilarity gap `d_ik - d_ij` to label probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Link {
    /// Correct with probability `clamp(mu + eps, 0, 1)`, `eps ~ N(0, eps_sd²)` drawn per triplet.
    Constant { mu: f64, eps_sd: f64 },
    /// `P(w = -1) = 1 / (1 + exp(-sigma (d_ik - d_ij)))`.
    Logistic { sigma: f64 },
}

impl Link {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Link::Constant { mu, eps_sd } => {
                if !(mu > 0.5 && mu <= 1.0) {
                    return Err(Error::InvalidParameter(format!("constant link mu must lie in (0.5, 1], got {mu}")));
                }
                if !(eps_sd >= 0.0 && eps_sd.is_finite()) {
                    return Err(Error::InvalidParameter(format!("eps_sd must be >= 0, got {eps_sd}")));
                }
            }
            Link::Logistic { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("logistic sigma must be > 0, got {sigma}")));
                }
            }
        }
        Ok(())
    }

    /// Expected probability of a correct label at absolute gap `|d_ik - d_ij|`.
    /// For the constant link this is `mu` (the mean before per-triplet jitter).
    pub fn success_probability(&self, gap: f64) -> f64 {
        match *self {
            Link::Constant { mu, .. } => mu.clamp(0.0, 1.0),
            Link::Logistic { sigma } => logistic(sigma * gap.abs()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Link::Constant { mu, eps_sd } => format!("constant(mu={mu},eps_sd={eps_sd})"),
            Link::Logistic { sigma } => format!("logistic(sigma={sigma})"),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub id: String,
    pub link: Link,
}

/// One simulated answer together with the probability that it was correct.
#[derive(Clone, Debug)]
pub struct Draw {
    pub label: LabeledTriplet,
    /// `None` for exact ties, where no answer is correct.
    pub p_correct: Option<f64>,
    pub correct: Option<bool>,
}

impl AnnotatorModel {
    pub fn new(id: impl Into<String>, link: Link) -> Result<Self> {
        link.validate()?;
        Ok(Self { id: id.into(), link })
    }

    pub fn logistic(id: impl Into<String>, sigma: f64) -> Result<Self> {
        Self::new(id, Link::Logistic { sigma })
    }

    pub fn constant(id: impl Into<String>, mu: f64, eps_sd: f64) -> Result<Self> {
        Self::new(id, Link::Constant { mu, eps_sd })
    }

    pub fn draw<R: Rng + ?Sized>(&self, signal: &Signal, query: TripletQuery, rng: &mut R) -> Result<Draw> {
        let d_ij = dissimilarity(signal, query.i, query.j)?;
        let d_ik = dissimilarity(signal, query.i, query.k)?;
        let gap = d_ik - d_ij;
        let truth = if gap > 0.0 {
            Some(Label::CloserToJ)
        } else if gap < 0.0 {
            Some(Label::CloserToK)
        } else {
            None
        };
        let (label, p_correct) = match self.link {
            Link::Logistic { sigma } => {
                let p_j = logistic(sigma * gap);
                let label = if rng.gen::<f64>() < p_j {
                    Label::CloserToJ
                } else {
                    Label::CloserToK
                };
                (label, truth.map(|_| logistic(sigma * gap.abs())))
            }
            Link::Constant { mu, eps_sd } => {
                let eps = if eps_sd > 0.0 {
                    Normal::new(0.0, eps_sd)
                        .map_err(|e| Error::InvalidParameter(e.to_string()))?
                        .sample(rng)
                } else {
                    0.0
                };
                let p = (mu + eps).clamp(0.0, 1.0);
                match truth {
                    Some(t) => {
                        let label = if rng.gen::<f64>() < p { t } else { t.flipped() };
                        (label, Some(p))
                    }
                    None => {
                        let label = if rng.gen_bool(0.5) {
                            Label::CloserToJ
                        } else {
                            Label::CloserToK
                        };
                        (label, None)
                    }
                }
            }
        };
        Ok(Draw {
            correct: truth.map(|t| t == label),
            label: LabeledTriplet {
                query,
                label,
                annotator: self.id.clone(),
                source: Source::Simulated,
            },
            p_correct,
        })
    }

    pub fn simulate_label<R: Rng + ?Sized>(
        &self,
        signal: &Signal,
        query: TripletQuery,
        rng: &mut R,
    ) -> Result<LabeledTriplet> {
        self.draw(signal, query, rng).map(|d| d.label)
    }

    pub fn label_all<R: Rng + ?Sized>(
        &self,
        signal: &Signal,
        queries: &[TripletQuery],
        rng: &mut R,
    ) -> Result<LabeledTripletSet> {
        let mut set = LabeledTripletSet::new(signal.len());
        for &q in queries {
            set.push(self.simulate_label(signal, q, rng)?)?;
        }
        Ok(set)
    }
}

/// Deals queries round-robin so every query goes to exactly one annotator.
pub fn partition_to_annotators(
    queries: &[TripletQuery],
    annotator_ids: &[String],
) -> Result<BTreeMap<String, Vec<TripletQuery>>> {
    if annotator_ids.is_empty() {
        return Err(Error::EmptyInput("no annotators"));
    }
    let mut ids = HashSet::new();
    for id in annotator_ids {
        if !ids.insert(id) {
            return Err(Error::InvalidParameter(format!("duplicate annotator id {id:?}")));
        }
    }
    let mut seen = HashSet::with_capacity(queries.len());
    let mut parts: BTreeMap<String, Vec<TripletQuery>> =
        annotator_ids.iter().map(|id| (id.clone(), Vec::new())).collect();
    for (idx, q) in queries.iter().enumerate() {
        if !seen.insert(*q) {
            return Err(Error::DuplicateQuery(*q));
        }
        let id = &annotator_ids[idx % annotator_ids.len()];
        parts.get_mut(id).expect("id registered").push(*q);
    }
    Ok(parts)
}

/// Partitions the queries over the given annotators and labels each part
/// with its own model, returning one disjoint set per annotator.
pub fn simulate_annotators<R: Rng + ?Sized>(
    signal: &Signal,
    queries: &[TripletQuery],
    annotators: &[AnnotatorModel],
    rng: &mut R,
) -> Result<Vec<LabeledTripletSet>> {
    let ids: Vec<String> = annotators.iter().map(|a| a.id.clone()).collect();
    let parts = partition_to_annotators(queries, &ids)?;
    annotators
        .iter()
        .map(|a| a.label_all(signal, &parts[&a.id], rng))
        .collect()
}
