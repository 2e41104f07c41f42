//! Triplet losses and their exact gradients with respect to the embedding.
//!
//! Every loss depends on a labeled triplet only through the squared distances
//! from the reference to the point the label calls nearer (`dn`) and to the
//! other one (`df`). The signed margin `w · ⟨L_t, G⟩` equals `dn - df`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::logistic;
use crate::solver::Embedding;
use crate::triplet::{LabeledTripletSet, TripletQuery};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    /// Logistic loss on `margin / (2σ²)`; `σ = 1/√2` gives the plain logistic loss.
    Ste { sigma: f64 },
    /// Student-t kernel with `alpha` degrees of freedom.
    Tste { alpha: f64 },
    /// `max(0, 1 + margin)`.
    GnmdsHinge,
    /// Crowd kernel probability `(μ + df) / (2μ + dn + df)`.
    Ckl { mu: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Ste {
            sigma: std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Ste { sigma } => write!(f, "ste(sigma={sigma:.4})"),
            LossSpec::Tste { alpha } => write!(f, "tste(alpha={alpha})"),
            LossSpec::GnmdsHinge => write!(f, "gnmds-hinge"),
            LossSpec::Ckl { mu } => write!(f, "ckl(mu={mu})"),
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LossSpec::Ste { sigma } => ("ste sigma", sigma),
            LossSpec::Tste { alpha } => ("tste alpha", alpha),
            LossSpec::Ckl { mu } => ("ckl mu", mu),
            LossSpec::GnmdsHinge => return Ok(()),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
        }
    }

    /// Whether the objective is convex in the Gram matrix.
    pub fn is_convex(&self) -> bool {
        matches!(self, LossSpec::Ste { .. } | LossSpec::GnmdsHinge)
    }

    /// Per-triplet loss and its partial derivatives with respect to `dn` and `df`.
    #[inline]
    fn eval(&self, dn: f64, df: f64) -> (f64, f64, f64) {
        match *self {
            LossSpec::Ste { sigma } => {
                let s = 1.0 / (2.0 * sigma * sigma);
                let u = s * (dn - df);
                let a = s * logistic(u);
                (softplus(u), a, -a)
            }
            LossSpec::GnmdsHinge => {
                let h = 1.0 + dn - df;
                if h > 0.0 {
                    (h, 1.0, -1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            LossSpec::Tste { alpha } => {
                let e = 0.5 * (alpha + 1.0);
                // ln K(d) = -e ln(1 + d/α);  -ln p = softplus(ln Kf - ln Kn)
                let z = e * ((dn / alpha).ln_1p() - (df / alpha).ln_1p());
                let q = logistic(z); // 1 - p
                (softplus(z), e * q / (alpha + dn), -e * q / (alpha + df))
            }
            LossSpec::Ckl { mu } => {
                let num = mu + df;
                let den = 2.0 * mu + dn + df;
                (den.ln() - num.ln(), 1.0 / den, 1.0 / den - 1.0 / num)
            }
        }
    }

    /// Probability the model assigns to the observed label.
    pub fn label_probability(&self, dn: f64, df: f64) -> Option<f64> {
        match *self {
            LossSpec::Ste { sigma } => Some(logistic(-(dn - df) / (2.0 * sigma * sigma))),
            LossSpec::Tste { alpha } => {
                let e = 0.5 * (alpha + 1.0);
                Some(logistic(-e * ((dn / alpha).ln_1p() - (df / alpha).ln_1p())))
            }
            LossSpec::Ckl { mu } => Some((mu + df) / (2.0 * mu + dn + df)),
            LossSpec::GnmdsHinge => None,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A labeled triplet reduced to `(reference, nearer, farther)` 0-based indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Oriented {
    pub reference: u32,
    pub near: u32,
    pub far: u32,
}

pub fn orient(labels: &LabeledTripletSet) -> Vec<Oriented> {
    labels
        .iter()
        .map(|l| {
            let (i, n, f) = l.oriented();
            Oriented {
                reference: i as u32,
                near: n as u32,
                far: f as u32,
            }
        })
        .collect()
}

#[inline]
fn sq_dist(y: &[f64], m: usize, a: usize, b: usize) -> f64 {
    let pa = &y[a * m..a * m + m];
    let pb = &y[b * m..b * m + m];
    pa.iter().zip(pb).map(|(x, z)| (x - z) * (x - z)).sum()
}

/// `‖y_i − y_k‖² − ‖y_i − y_j‖²`; positive when `j` sits closer to `i`.
pub fn triplet_margin(y: &Embedding, query: &TripletQuery) -> Result<f64> {
    query.check_bounds(y.n())?;
    let (i, j, k) = query.zero_based();
    let m = y.m();
    Ok(sq_dist(y.data(), m, i, k) - sq_dist(y.data(), m, i, j))
}

pub(crate) fn risk_oriented(spec: &LossSpec, y: &Embedding, triplets: &[Oriented]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("no labeled triplets"));
    }
    let m = y.m();
    let data = y.data();
    let mut total = 0.0;
    for t in triplets {
        let r = t.reference as usize;
        let dn = sq_dist(data, m, r, t.near as usize);
        let df = sq_dist(data, m, r, t.far as usize);
        total += spec.eval(dn, df).0;
    }
    let risk = total / triplets.len() as f64;
    if risk.is_finite() {
        Ok(risk)
    } else {
        Err(Error::NumericalOverflow("risk"))
    }
}

pub(crate) fn risk_and_gradient_oriented(
    spec: &LossSpec,
    y: &Embedding,
    triplets: &[Oriented],
    grad: &mut [f64],
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("no labeled triplets"));
    }
    let m = y.m();
    let data = y.data();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for t in triplets {
        let (r, nr, fr) = (t.reference as usize, t.near as usize, t.far as usize);
        let dn = sq_dist(data, m, r, nr);
        let df = sq_dist(data, m, r, fr);
        let (loss, a, b) = spec.eval(dn, df);
        total += loss;
        if a == 0.0 && b == 0.0 {
            continue;
        }
        for d in 0..m {
            let yi = data[r * m + d];
            let gn = 2.0 * a * (yi - data[nr * m + d]);
            let gf = 2.0 * b * (yi - data[fr * m + d]);
            grad[r * m + d] += gn + gf;
            grad[nr * m + d] -= gn;
            grad[fr * m + d] -= gf;
        }
    }
    let scale = 1.0 / triplets.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let risk = total * scale;
    if risk.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(risk)
    } else {
        Err(Error::NumericalOverflow("risk gradient"))
    }
}

fn check_dims(y: &Embedding, labels: &LabeledTripletSet) -> Result<()> {
    if y.n() != labels.n() {
        return Err(Error::LengthMismatch(y.n(), labels.n()));
    }
    Ok(())
}

/// Mean loss over the labeled set.
pub fn risk(spec: &LossSpec, y: &Embedding, labels: &LabeledTripletSet) -> Result<f64> {
    check_dims(y, labels)?;
    risk_oriented(spec, y, &orient(labels))
}

/// Mean loss over the labeled set and its exact gradient with respect to `y`.
pub fn risk_and_gradient(spec: &LossSpec, y: &Embedding, labels: &LabeledTripletSet) -> Result<(f64, Embedding)> {
    check_dims(y, labels)?;
    let mut grad = vec![0.0; y.data().len()];
    let risk = risk_and_gradient_oriented(spec, y, &orient(labels), &mut grad)?;
    Ok((risk, Embedding::from_point_major(y.m(), y.n(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::{Label, LabeledTriplet, Source};
    use approx::assert_abs_diff_eq;

    fn one(i: usize, j: usize, k: usize, label: Label, n: usize) -> LabeledTripletSet {
        LabeledTripletSet::from_labels(
            n,
            [LabeledTriplet {
                query: TripletQuery::new(i, j, k).unwrap(),
                label,
                annotator: "a".into(),
                source: Source::Simulated,
            }],
        )
        .unwrap()
    }

    #[test]
    fn margin_examples() {
        let y = Embedding::from_series(&[0.0, 1.0, 3.0]);
        let q = TripletQuery::new(1, 2, 3).unwrap();
        assert_eq!(triplet_margin(&y, &q).unwrap(), 8.0);
        let same = Embedding::from_series(&[0.0, 2.0, 2.0]);
        assert_eq!(triplet_margin(&same, &q).unwrap(), 0.0);
        let shifted = Embedding::from_series(&[5.0, 6.0, 8.0]);
        assert_eq!(triplet_margin(&shifted, &q).unwrap(), 8.0);
        let bad = TripletQuery::new(1, 2, 4).unwrap();
        assert!(matches!(triplet_margin(&y, &bad), Err(Error::Index { .. })));
    }

    #[test]
    fn ste_zero_margin_is_ln2() {
        let y = Embedding::from_series(&[0.0, 1.0, -1.0]);
        let labels = one(1, 2, 3, Label::CloserToJ, 3);
        let r = risk(&LossSpec::default(), &y, &labels).unwrap();
        assert_abs_diff_eq!(r, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn hinge_satisfied_triplet_has_no_loss() {
        let y = Embedding::from_series(&[0.0, 1.0, 3.0]);
        let labels = one(1, 2, 3, Label::CloserToJ, 3);
        let (r, g) = risk_and_gradient(&LossSpec::GnmdsHinge, &y, &labels).unwrap();
        assert_eq!(r, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        // Reversed label: 1 + 8 = 9
        let flipped = one(1, 2, 3, Label::CloserToK, 3);
        assert_eq!(risk(&LossSpec::GnmdsHinge, &y, &flipped).unwrap(), 9.0);
    }

    #[test]
    fn tste_and_ckl_closed_forms() {
        // dn = 1, df = 9
        let y = Embedding::from_series(&[0.0, 1.0, 3.0]);
        let labels = one(1, 2, 3, Label::CloserToJ, 3);
        let alpha: f64 = 2.0;
        let kn = (1.0 + 1.0 / alpha).powf(-(alpha + 1.0) / 2.0);
        let kf = (1.0 + 9.0 / alpha).powf(-(alpha + 1.0) / 2.0);
        let r = risk(&LossSpec::Tste { alpha }, &y, &labels).unwrap();
        assert_abs_diff_eq!(r, -(kn / (kn + kf)).ln(), epsilon = 1e-12);
        let mu = 10.0;
        let r = risk(&LossSpec::Ckl { mu }, &y, &labels).unwrap();
        assert_abs_diff_eq!(r, -((mu + 9.0) / (2.0 * mu + 10.0)).ln(), epsilon = 1e-12);
    }

    #[test]
    fn ste_link_is_symmetric() {
        let spec = LossSpec::Ste { sigma: 0.8 };
        for x in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let p = spec.label_probability(x, 0.0).unwrap();
            let q = spec.label_probability(-x, 0.0).unwrap();
            assert_abs_diff_eq!(p, 1.0 - q, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let y = Embedding::from_series(&[0.0, 1.0, 3.0]);
        let empty = LabeledTripletSet::new(3);
        assert!(matches!(risk(&LossSpec::default(), &y, &empty), Err(Error::EmptyInput(_))));
        let other = one(1, 2, 3, Label::CloserToJ, 4);
        assert!(matches!(risk(&LossSpec::default(), &y, &other), Err(Error::LengthMismatch(3, 4))));
    }

    #[test]
    fn overflow_is_reported() {
        let y = Embedding::from_series(&[0.0, 1e200, 1.0]);
        let labels = one(1, 2, 3, Label::CloserToJ, 3);
        assert!(matches!(
            risk_and_gradient(&LossSpec::GnmdsHinge, &y, &labels),
            Err(Error::NumericalOverflow(_))
        ));
    }

    #[test]
    fn invalid_parameters() {
        assert!(LossSpec::Ste { sigma: 0.0 }.validate().is_err());
        assert!(LossSpec::Tste { alpha: -1.0 }.validate().is_err());
        assert!(LossSpec::Ckl { mu: f64::NAN }.validate().is_err());
        assert!(LossSpec::GnmdsHinge.validate().is_ok());
    }
}
