//! Recover a one-dimensional, time-indexed label of a hidden construct from
//! triplet comparisons ("is frame `i` more like frame `j` or frame `k`?").
//!
//! Several annotators each label a disjoint subset of the triplet universe;
//! their answers are fused by set union and a single ordinal embedding is
//! fitted to the result. The crate also ships a simulation harness with
//! noisy synthetic annotators, evaluation metrics against known ground truth,
//! and the state machine behind a live annotation-collection service.
//!
//! ```
//! use tripletfusion::prelude::*;
//! use rand::SeedableRng;
//!
//! let signal = Signal::generate(SignalKind::Sine, 12, 0).unwrap();
//! let annotator = AnnotatorModel::logistic("sim", 20.0).unwrap();
//! let queries = sample_triplets(signal.len(), 200, 7).unwrap();
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let labels = annotator.label_all(&signal, &queries, &mut rng).unwrap();
//!
//! let config = SolverConfig { restarts: 2, ..SolverConfig::default() };
//! let fit = fit_embedding(&labels, 1, &LossSpec::default(), &config).unwrap();
//! let aligned = affine_align_mse(fit.embedding.coordinate(0), &signal).unwrap();
//! assert!(aligned.mse < 0.05);
//! ```

pub mod annotation;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod interchange;
pub mod loss;
pub mod seed;
pub mod signal;
pub mod simulate;
pub mod solver;
pub mod triplet;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::evaluation::{
        affine_align_mse, estimate_success_probability, expected_correct, pearson,
        triplet_violations, AffineFit, SuccessProbabilityCurve,
    };
    pub use crate::loss::{risk_and_gradient, triplet_margin, LossSpec};
    pub use crate::signal::{dissimilarity, Signal, SignalKind};
    pub use crate::simulate::{partition_to_annotators, AnnotatorModel, Link};
    pub use crate::solver::{fit_embedding, recover_from_gram, Embedding, EmbeddingResult, SolverConfig};
    pub use crate::triplet::{
        fuse, sample_triplets, triplet_budget, triplet_universe_size, Label, LabeledTriplet,
        LabeledTripletSet, Source, TripletQuery,
    };
    pub use crate::{Error, Result};
}
