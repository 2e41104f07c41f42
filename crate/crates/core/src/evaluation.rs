//! Quality measures for a recovered embedding against ground truth, internal
//! consistency of labeled sets, and annotator accuracy estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::solver::Embedding;
use crate::triplet::LabeledTripletSet;

/// Best affine map `a·Y − b` onto the ground truth, and its residual error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub a: f64,
    pub b: f64,
    pub mse: f64,
    /// `mse / Var(Z)`: 0 for a perfect fit, 1 for the best constant.
    pub nmse: f64,
    /// The embedding was constant, so only the bias could be fitted.
    pub degenerate: bool,
}

impl AffineFit {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.a * v - self.b).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_pair(y: &[f64], z: &[f64]) -> Result<()> {
    if y.len() != z.len() {
        return Err(Error::LengthMismatch(y.len(), z.len()));
    }
    if y.len() < 2 {
        return Err(Error::InvalidSize(format!("need at least 2 samples, got {}", y.len())));
    }
    Ok(())
}

/// Closed-form least squares for `inf_{a,b} (1/n) ‖aY − b·1 − Z‖²`.
pub fn affine_align_mse(y: &[f64], z: &Signal) -> Result<AffineFit> {
    affine_align(y, z.values())
}

pub fn affine_align(y: &[f64], z: &[f64]) -> Result<AffineFit> {
    check_pair(y, z)?;
    let (my, mz) = (mean(y), mean(z));
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let syz: f64 = y.iter().zip(z).map(|(a, b)| (a - my) * (b - mz)).sum();
    let var_z = z.iter().map(|v| (v - mz).powi(2)).sum::<f64>() / z.len() as f64;
    let degenerate = syy <= f64::EPSILON * f64::EPSILON * y.len() as f64 * (1.0 + my * my);
    let (a, b) = if degenerate {
        (0.0, -mz)
    } else {
        let a = syz / syy;
        (a, -(mz - a * my))
    };
    let mse = y
        .iter()
        .zip(z)
        .map(|(yv, zv)| (a * yv - b - zv).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    let nmse = if var_z > 0.0 {
        mse / var_z
    } else if mse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(AffineFit {
        a,
        b,
        mse,
        nmse,
        degenerate,
    })
}

pub fn pearson(y: &[f64], z: &[f64]) -> Result<f64> {
    check_pair(y, z)?;
    let (my, mz) = (mean(y), mean(z));
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let szz: f64 = z.iter().map(|v| (v - mz).powi(2)).sum();
    if syy == 0.0 || szz == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let syz: f64 = y.iter().zip(z).map(|(a, b)| (a - my) * (b - mz)).sum();
    Ok((syz / (syy.sqrt() * szz.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation after affine alignment, so a reflected embedding is not
/// reported as anti-correlated.
pub fn aligned_pearson(y: &[f64], z: &[f64]) -> Result<f64> {
    Ok(pearson(y, z)?.abs())
}

/// Fraction of labeled triplets whose asserted ordering the embedding
/// contradicts, i.e. `‖y_i − y_far‖ < ‖y_i − y_near‖`. Exact ties agree.
pub fn triplet_violations(y: &Embedding, labels: &LabeledTripletSet) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labeled triplets"));
    }
    if y.n() != labels.n() {
        return Err(Error::LengthMismatch(y.n(), labels.n()));
    }
    let sq = |a: usize, b: usize| -> f64 {
        y.point(a)
            .iter()
            .zip(y.point(b))
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    };
    let violated = labels
        .iter()
        .filter(|l| {
            let (i, near, far) = l.oriented();
            sq(i, far) < sq(i, near)
        })
        .count();
    Ok(violated as f64 / labels.len() as f64)
}

/// Violations of the labels against the ground-truth signal itself.
pub fn violations_against_truth(signal: &Signal, labels: &LabeledTripletSet) -> Result<f64> {
    triplet_violations(&Embedding::from_series(signal.values()), labels)
}

fn check_probs(probs: &[f64]) -> Result<()> {
    match probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(Error::Domain(p)),
        None => Ok(()),
    }
}

/// Mean of the Poisson-Binomial count of correct labels: `Σ p_t`.
pub fn expected_correct(probs: &[f64]) -> Result<f64> {
    check_probs(probs)?;
    Ok(probs.iter().sum())
}

/// Variance of the Poisson-Binomial count: `Σ p_t (1 − p_t)`.
pub fn correct_variance(probs: &[f64]) -> Result<f64> {
    check_probs(probs)?;
    Ok(probs.iter().map(|p| p * (1.0 - p)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessBin {
    pub mean_gap: f64,
    pub estimated_p: f64,
    pub count: usize,
}

impl SuccessBin {
    pub fn standard_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.count as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessProbabilityCurve {
    pub bins: Vec<SuccessBin>,
    /// Labels on exact ties `d_ij = d_ik`, which have no correct answer.
    pub ties_excluded: usize,
}

/// Equal-count binning of `|d_ij − d_ik|` with the fraction of correct labels per bin.
pub fn estimate_success_probability(
    labels: &LabeledTripletSet,
    signal: &Signal,
    num_bins: usize,
) -> Result<SuccessProbabilityCurve> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labeled triplets"));
    }
    if labels.n() != signal.len() {
        return Err(Error::LengthMismatch(labels.n(), signal.len()));
    }
    let z = signal.values();
    let mut scored = Vec::with_capacity(labels.len());
    let mut ties = 0;
    for l in labels {
        let (i, near, far) = l.oriented();
        let d_near = (z[i] - z[near]).abs();
        let d_far = (z[i] - z[far]).abs();
        if d_near == d_far {
            ties += 1;
            continue;
        }
        scored.push(((d_near - d_far).abs(), d_near < d_far));
    }
    if num_bins == 0 || num_bins > scored.len() {
        return Err(Error::InvalidBins {
            bins: num_bins,
            labels: scored.len(),
        });
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = scored.len();
    let bins = (0..num_bins)
        .map(|b| {
            let chunk = &scored[b * total / num_bins..(b + 1) * total / num_bins];
            let count = chunk.len();
            let correct = chunk.iter().filter(|s| s.1).count();
            SuccessBin {
                mean_gap: chunk.iter().map(|s| s.0).sum::<f64>() / count as f64,
                estimated_p: correct as f64 / count as f64,
                count,
            }
        })
        .collect();
    Ok(SuccessProbabilityCurve {
        bins,
        ties_excluded: ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::{Label, LabeledTriplet, Source, TripletQuery};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_and_exact_affine() {
        let z = Signal::new("z", vec![0.1, 0.4, 0.2, 0.9]).unwrap();
        let fit = affine_align_mse(z.values(), &z).unwrap();
        assert_abs_diff_eq!(fit.a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.b, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.mse, 0.0, epsilon = 1e-24);

        let fit = affine_align(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(fit.a, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.b, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.mse, 0.0, epsilon = 1e-24);
        assert!(!fit.degenerate);
    }

    #[test]
    fn reflected_embedding_gets_negative_scale() {
        let fit = affine_align(&[3.0, 2.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert_abs_diff_eq!(fit.a, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.mse, 0.0, epsilon = 1e-24);
        assert_eq!(fit.apply(&[3.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn constant_embedding_is_degenerate() {
        let fit = affine_align(&[2.0, 2.0, 2.0], &[0.0, 0.3, 0.6]).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.a, 0.0);
        assert_abs_diff_eq!(fit.b, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.nmse, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&y, &y).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&y, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&y, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-12);
        assert!(matches!(pearson(&y, &[1.0; 4]), Err(Error::UndefinedCorrelation)));
        assert!(matches!(pearson(&y, &[1.0; 3]), Err(Error::LengthMismatch(4, 3))));
    }

    fn all_labels(z: &[f64], flip: bool) -> LabeledTripletSet {
        let n = z.len();
        let mut set = LabeledTripletSet::new(n);
        for i in 1..=n {
            for j in 1..=n {
                for k in (j + 1)..=n {
                    if i == j || i == k {
                        continue;
                    }
                    let dj = (z[i - 1] - z[j - 1]).abs();
                    let dk = (z[i - 1] - z[k - 1]).abs();
                    let mut label = if dj < dk { Label::CloserToJ } else { Label::CloserToK };
                    if flip {
                        label = label.flipped();
                    }
                    set.push(LabeledTriplet {
                        query: TripletQuery { i, j, k },
                        label,
                        annotator: "truth".into(),
                        source: Source::Simulated,
                    })
                    .unwrap();
                }
            }
        }
        set
    }

    #[test]
    fn violations_noiseless_and_flipped() {
        let z = [0.1, 0.72, 0.33, 0.95, 0.58, 0.0];
        let y = Embedding::from_series(&z);
        assert_eq!(triplet_violations(&y, &all_labels(&z, false)).unwrap(), 0.0);
        assert_eq!(triplet_violations(&y, &all_labels(&z, true)).unwrap(), 1.0);
        let scaled = y.map(|v| -3.0 * v + 7.0);
        assert_eq!(triplet_violations(&scaled, &all_labels(&z, false)).unwrap(), 0.0);

        // A signal with ties: flipped labels only violate the non-tie triplets.
        let tied = [0.0, 0.5, 1.0, 0.5];
        let labels = all_labels(&tied, true);
        let yt = Embedding::from_series(&tied);
        let ties = labels
            .iter()
            .filter(|l| {
                let (i, j, k) = l.query.zero_based();
                (tied[i] - tied[j]).abs() == (tied[i] - tied[k]).abs()
            })
            .count() as f64
            / labels.len() as f64;
        assert!(ties > 0.0);
        assert_abs_diff_eq!(triplet_violations(&yt, &labels).unwrap(), 1.0 - ties, epsilon = 1e-12);

        assert!(matches!(
            triplet_violations(&y, &LabeledTripletSet::new(6)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn poisson_binomial_moments() {
        let p = vec![0.9; 1000];
        assert_abs_diff_eq!(expected_correct(&p).unwrap(), 900.0, epsilon = 1e-9);
        assert_abs_diff_eq!(correct_variance(&p).unwrap(), 90.0, epsilon = 1e-9);
        assert_eq!(expected_correct(&[]).unwrap(), 0.0);
        assert!(matches!(expected_correct(&[0.5, 1.2]), Err(Error::Domain(_))));
        assert!(matches!(correct_variance(&[-0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn success_curve_noiseless_and_single_bin() {
        let z: Vec<f64> = (0..9).map(|t| (t as f64 * 0.37).sin()).collect();
        let s = Signal::new("z", z.clone()).unwrap();
        let labels = all_labels(&z, false);
        let curve = estimate_success_probability(&labels, &s, 10).unwrap();
        assert!(curve.bins.iter().all(|b| b.estimated_p == 1.0));
        assert!(curve.bins.windows(2).all(|w| w[0].mean_gap <= w[1].mean_gap));
        let counts: Vec<usize> = curve.bins.iter().map(|b| b.count).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(counts.iter().sum::<usize>() + curve.ties_excluded, labels.len());

        // Flip every third label; a single bin reports the overall correct fraction.
        let mut mixed = LabeledTripletSet::new(9);
        let mut correct = 0;
        for (idx, l) in labels.iter().enumerate() {
            let mut l = l.clone();
            if idx % 3 == 0 {
                l.label = l.label.flipped();
            } else {
                correct += 1;
            }
            mixed.push(l).unwrap();
        }
        let one = estimate_success_probability(&mixed, &s, 1).unwrap();
        assert_eq!(one.ties_excluded, 0);
        assert_abs_diff_eq!(one.bins[0].estimated_p, correct as f64 / labels.len() as f64, epsilon = 1e-12);

        assert!(matches!(
            estimate_success_probability(&labels, &s, labels.len() + 1),
            Err(Error::InvalidBins { .. })
        ));
    }

    proptest! {
        #[test]
        fn affine_invariance(y in prop::collection::vec(-5.0f64..5.0, 5..40), c in prop_oneof![-4.0f64..-0.1, 0.1f64..4.0], d in -10.0f64..10.0, seed in 0u64..1000) {
            let z: Vec<f64> = (0..y.len()).map(|t| ((t as f64 + seed as f64) * 0.77).sin()).collect();
            let base = affine_align(&y, &z).unwrap();
            prop_assume!(!base.degenerate);
            let moved: Vec<f64> = y.iter().map(|v| c * v + d).collect();
            let fit = affine_align(&moved, &z).unwrap();
            prop_assert!((fit.mse - base.mse).abs() <= 1e-9 * (1.0 + base.mse));
            let var_z = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            prop_assert!(fit.mse <= var_z + 1e-12);

            let r = pearson(&y, &z).unwrap();
            let r2 = pearson(&moved, &z).unwrap();
            prop_assert!((r2 - c.signum() * r).abs() < 1e-9);
        }

        #[test]
        fn violations_equal_one_minus_agreement(z in prop::collection::vec(0.0f64..1.0, 4..9), y in prop::collection::vec(-1.0f64..1.0, 9), flips in prop::collection::vec(any::<bool>(), 84)) {
            let n = z.len();
            let base = all_labels(&z, false);
            let mut labels = LabeledTripletSet::new(n);
            for (l, &f) in base.iter().zip(flips.iter().cycle()) {
                let mut l = l.clone();
                if f { l.label = l.label.flipped(); }
                labels.push(l).unwrap();
            }
            let emb = Embedding::from_series(&y[..n]);
            let agree = labels.iter().filter(|l| {
                let (i, near, far) = l.oriented();
                (y[i] - y[far]).abs() >= (y[i] - y[near]).abs()
            }).count();
            let tau = triplet_violations(&emb, &labels).unwrap();
            prop_assert!((tau - (1.0 - agree as f64 / labels.len() as f64)).abs() < 1e-12);
        }
    }
}
