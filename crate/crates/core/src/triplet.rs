//! Triplet queries, labels, the triplet universe and uniform sampling from it,
//! and fusion of disjoint per-annotator label sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seed;

/// "Is `i` closer to `j` or to `k`?" with 1-based time indices.
///
/// Always stored with `j < k`; a query and its `(i, k, j)` mirror are the
/// same element of the triplet universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletQuery {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl TripletQuery {
    /// Builds the canonical form, reporting whether `j` and `k` were swapped.
    pub fn canonical(i: usize, j: usize, k: usize) -> Result<(Self, bool)> {
        if i == j || i == k || j == k || i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidTriplet { i, j, k });
        }
        if j < k {
            Ok((Self { i, j, k }, false))
        } else {
            Ok((Self { i, j: k, k: j }, true))
        }
    }

    pub fn new(i: usize, j: usize, k: usize) -> Result<Self> {
        Self::canonical(i, j, k).map(|(q, _)| q)
    }

    pub fn max_index(&self) -> usize {
        self.i.max(self.j).max(self.k)
    }

    pub fn check_bounds(&self, n: usize) -> Result<()> {
        let m = self.max_index();
        if m > n {
            return Err(Error::Index { index: m, len: n });
        }
        Ok(())
    }

    /// Zero-based `(i, j, k)`.
    pub fn zero_based(&self) -> (usize, usize, usize) {
        (self.i - 1, self.j - 1, self.k - 1)
    }

    /// Position of this query in the lexicographic enumeration of the universe.
    pub fn rank(&self, n: usize) -> u64 {
        let (i, j, k) = self.zero_based();
        let squeeze = |x: usize| if x > i { x - 1 } else { x };
        let (a, b) = (squeeze(j) as u64, squeeze(k) as u64);
        let m = (n - 1) as u64;
        let pairs = m * (m - 1) / 2;
        // pairs (a', b') with a' < a come first: sum_{x<a} (m - 1 - x)
        let before = a * (2 * m - a - 1) / 2;
        i as u64 * pairs + before + (b - a - 1)
    }

    /// Inverse of [`TripletQuery::rank`].
    pub fn from_rank(rank: u64, n: usize) -> Self {
        let m = (n - 1) as u64;
        let pairs = m * (m - 1) / 2;
        let i = rank / pairs;
        let q = rank % pairs;
        // largest a with a(2m - a - 1)/2 <= q
        let start = |a: u64| a * (2 * m - a - 1) / 2;
        let disc = ((2 * m - 1) as f64).powi(2) - 8.0 * q as f64;
        let mut a = ((((2 * m - 1) as f64) - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
        a = a.min(m - 2);
        while a > 0 && start(a) > q {
            a -= 1;
        }
        while a + 1 <= m - 2 && start(a + 1) <= q {
            a += 1;
        }
        let b = a + 1 + (q - start(a));
        let unsqueeze = |x: u64| if x >= i { x + 1 } else { x };
        Self {
            i: i as usize + 1,
            j: unsqueeze(a) as usize + 1,
            k: unsqueeze(b) as usize + 1,
        }
    }
}

impl fmt::Display for TripletQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

/// The annotator's answer: `w = -1` means `i` was judged closer to `j`,
/// `w = +1` means closer to `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    CloserToJ,
    CloserToK,
}

impl Label {
    pub fn w(self) -> i8 {
        match self {
            Label::CloserToJ => -1,
            Label::CloserToK => 1,
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.w())
    }

    pub fn from_w(w: i64) -> Result<Self> {
        match w {
            -1 => Ok(Label::CloserToJ),
            1 => Ok(Label::CloserToK),
            other => Err(Error::InvalidParameter(format!("label w must be -1 or 1, got {other}"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::CloserToJ => Label::CloserToK,
            Label::CloserToK => Label::CloserToJ,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.w())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = i64::deserialize(d)?;
        Label::from_w(w).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulated,
    Human,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledTriplet {
    pub query: TripletQuery,
    pub label: Label,
    pub annotator: String,
    pub source: Source,
}

impl LabeledTriplet {
    /// Normalizes a possibly mirrored `(i, j, k)` answer: when `j > k` the
    /// indices are swapped and the label negated so its meaning is preserved.
    pub fn from_answer(
        i: usize,
        j: usize,
        k: usize,
        label: Label,
        annotator: impl Into<String>,
        source: Source,
    ) -> Result<Self> {
        let (query, swapped) = TripletQuery::canonical(i, j, k)?;
        Ok(Self {
            query,
            label: if swapped { label.flipped() } else { label },
            annotator: annotator.into(),
            source,
        })
    }

    /// `(reference, nearer, farther)` as asserted by the label, 0-based.
    pub fn oriented(&self) -> (usize, usize, usize) {
        let (i, j, k) = self.query.zero_based();
        match self.label {
            Label::CloserToJ => (i, j, k),
            Label::CloserToK => (i, k, j),
        }
    }
}

/// Labels over a signal of length `n`, each canonical query at most once.
#[derive(Clone, Debug, Default)]
pub struct LabeledTripletSet {
    n: usize,
    labels: Vec<LabeledTriplet>,
    seen: HashMap<TripletQuery, usize>,
}

impl LabeledTripletSet {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            labels: Vec::new(),
            seen: HashMap::new(),
        }
    }

    pub fn from_labels(n: usize, labels: impl IntoIterator<Item = LabeledTriplet>) -> Result<Self> {
        let mut set = Self::new(n);
        for l in labels {
            set.push(l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, label: LabeledTriplet) -> Result<()> {
        label.query.check_bounds(self.n)?;
        if let Some(&idx) = self.seen.get(&label.query) {
            let first = &self.labels[idx];
            if first.annotator == label.annotator {
                return Err(Error::DuplicateQuery(label.query));
            }
            return Err(Error::FusionConflict {
                query: label.query,
                first: first.annotator.clone(),
                second: label.annotator,
            });
        }
        self.seen.insert(label.query, self.labels.len());
        self.labels.push(label);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledTriplet> {
        self.labels.iter()
    }

    pub fn labels(&self) -> &[LabeledTriplet] {
        &self.labels
    }

    pub fn contains(&self, query: &TripletQuery) -> bool {
        self.seen.contains_key(query)
    }

    /// The first `len` labels, in insertion order.
    pub fn prefix(&self, len: usize) -> Self {
        let mut out = Self::new(self.n);
        for l in self.labels.iter().take(len) {
            out.seen.insert(l.query, out.labels.len());
            out.labels.push(l.clone());
        }
        out
    }

    pub fn annotator_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for l in &self.labels {
            *counts.entry(l.annotator.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Splits the set by annotator, preserving order within each part.
    pub fn by_annotator(&self) -> BTreeMap<String, LabeledTripletSet> {
        let mut parts: BTreeMap<String, LabeledTripletSet> = BTreeMap::new();
        for l in &self.labels {
            let part = parts
                .entry(l.annotator.clone())
                .or_insert_with(|| LabeledTripletSet::new(self.n));
            part.seen.insert(l.query, part.labels.len());
            part.labels.push(l.clone());
        }
        parts
    }
}

impl<'a> IntoIterator for &'a LabeledTripletSet {
    type Item = &'a LabeledTriplet;
    type IntoIter = std::slice::Iter<'a, LabeledTriplet>;

    fn into_iter(self) -> Self::IntoIter {
        self.labels.iter()
    }
}

/// `|T| = n (n-1)(n-2) / 2`.
pub fn triplet_universe_size(n: usize) -> Result<u64> {
    if n < 3 {
        return Err(Error::InvalidSize(format!("no triplet exists for n = {n}")));
    }
    let n = n as u64;
    Ok(n * (n - 1) * (n - 2) / 2)
}

/// `round(K n ln n)`, clamped to `[1, |T|]`.
pub fn triplet_budget(n: usize, k: f64) -> Result<u64> {
    let universe = triplet_universe_size(n)?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidParameter(format!("budget constant K must be positive, got {k}")));
    }
    let raw = (k * n as f64 * (n as f64).ln()).round();
    Ok((raw.max(1.0) as u64).min(universe))
}

/// `floor(fraction · |T|)`, clamped to `[1, |T|]`.
pub fn fraction_budget(n: usize, fraction: f64) -> Result<u64> {
    let universe = triplet_universe_size(n)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "budget fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let raw = (fraction * universe as f64).floor() as u64;
    Ok(raw.clamp(1, universe))
}

/// Draws `budget` distinct queries uniformly without replacement.
///
/// Ranks are chosen with Floyd's algorithm so the universe is never
/// materialized, then shuffled.
pub fn sample_triplets(n: usize, budget: u64, seed: u64) -> Result<Vec<TripletQuery>> {
    let universe = triplet_universe_size(n)?;
    if budget > universe {
        return Err(Error::BudgetExceedsUniverse { budget, universe });
    }
    let mut rng = seed::rng(&[0x7319, seed]);
    let mut chosen: HashSet<u64> = HashSet::with_capacity(budget as usize);
    let mut ranks = Vec::with_capacity(budget as usize);
    for top in (universe - budget)..universe {
        let r = rng.gen_range(0..=top);
        let pick = if chosen.contains(&r) { top } else { r };
        chosen.insert(pick);
        ranks.push(pick);
    }
    ranks.shuffle(&mut rng);
    Ok(ranks.into_iter().map(|r| TripletQuery::from_rank(r, n)).collect())
}

/// Union of disjoint label sets; any canonical query labeled in two inputs is a conflict.
pub fn fuse<'a>(sets: impl IntoIterator<Item = &'a LabeledTripletSet>) -> Result<LabeledTripletSet> {
    let mut out: Option<LabeledTripletSet> = None;
    for set in sets {
        let acc = out.get_or_insert_with(|| LabeledTripletSet::new(set.n()));
        if acc.n() != set.n() {
            return Err(Error::LengthMismatch(acc.n(), set.n()));
        }
        for l in set {
            if let Some(&idx) = acc.seen.get(&l.query) {
                return Err(Error::FusionConflict {
                    query: l.query,
                    first: acc.labels[idx].annotator.clone(),
                    second: l.annotator.clone(),
                });
            }
            acc.push(l.clone())?;
        }
    }
    out.ok_or(Error::EmptyInput("no label sets to fuse"))
}
