//! Heterogeneous expert roster.
//!
//! Each expert is a self-contained training oracle: given a dense feature
//! matrix and labels it returns a fitted model that maps a feature vector to
//! a class-probability vector. Experts share nothing but that contract.
//!
//! Two kinds are structural rather than learned: `mean_aggregate` averages
//! sibling experts of the same level, and `passthrough` re-emits an output
//! block already present in its input row.

mod gbt;
mod knn;
mod linear;
mod naive_bayes;
mod prior;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use gbt::{fit_with_trace as fit_gbt_with_trace, GbtConfig};

/// Lower/upper probability clamp applied before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("empty training data")]
    Empty,
    #[error("invalid {kind} spec: {reason}")]
    InvalidSpec { kind: &'static str, reason: String },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("label {label} outside 0..{num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("{0} rows of features but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("mean_aggregate needs the outputs of its sibling experts")]
    NeedsSiblings,
    #[error("passthrough block {block} not present in input layout ({available} blocks)")]
    MissingBlock { block: usize, available: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
}

pub type Result<T> = std::result::Result<T, ExpertError>;

/// Class-probability vector: non-negative entries summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ExpertError::InvalidProbs("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ExpertError::InvalidProbs(format!(
                "negative or non-finite entry in {probs:?}"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > Self::TOLERANCE {
            return Err(ExpertError::InvalidProbs(format!("entries sum to {s}")));
        }
        Ok(Self(probs))
    }

    /// Clips negatives to zero and rescales to unit sum.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        for p in v.iter_mut() {
            if p.is_nan() {
                return Err(ExpertError::InvalidProbs("NaN entry".into()));
            }
            *p = p.max(0.0);
        }
        let s: f64 = v.iter().sum();
        if !(s.is_finite() && s > 0.0) {
            return Err(ExpertError::InvalidProbs(format!("cannot normalize mass {s}")));
        }
        v.iter_mut().for_each(|p| *p /= s);
        Ok(Self(v))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Trusted constructor for kernels that produce a simplex point by construction.
    pub(crate) fn from_simplex(v: Vec<f64>) -> Self {
        debug_assert!(
            (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "not a simplex point: {v:?}"
        );
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn default_l2() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    200
}
fn default_lr() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_k() -> usize {
    15
}
fn default_cart_depth() -> usize {
    6
}
fn default_min_leaf() -> usize {
    5
}
fn default_rounds() -> usize {
    50
}
fn default_gbt_depth() -> usize {
    3
}
fn default_shrinkage() -> f64 {
    0.1
}
fn default_gbt_l2() -> f64 {
    1.0
}
fn default_gbt_min_leaf() -> usize {
    1
}

/// Expert kind plus its hyperparameters. Omitted hyperparameters take the
/// roster defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSpec {
    /// Empirical class prior.
    Majority,
    /// Multinomial logistic regression, full-batch gradient descent on
    /// standardized features.
    Logistic {
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_lr")]
        learning_rate: f64,
    },
    /// Multinomial naive Bayes with additive smoothing; switches to the
    /// Gaussian variant when any training feature is negative.
    NaiveBayes {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// Euclidean k-nearest neighbours with Laplace-smoothed vote fractions.
    Knn {
        #[serde(default = "default_k")]
        k: usize,
    },
    /// Gini CART classification tree.
    CartTree {
        #[serde(default = "default_cart_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    /// One-vs-rest gradient-boosted regression trees on the logistic loss.
    Gbt {
        #[serde(default = "default_rounds")]
        rounds: usize,
        #[serde(default = "default_gbt_depth")]
        max_depth: usize,
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
        #[serde(default = "default_gbt_l2")]
        l2: f64,
        #[serde(default = "default_gbt_min_leaf")]
        min_leaf: usize,
    },
    /// Unweighted mean of earlier experts of the same level, addressed by
    /// roster position. Empty means every earlier non-aggregate expert.
    MeanAggregate {
        #[serde(default)]
        members: Vec<usize>,
    },
    /// Copies output block `block` of the input layout.
    Passthrough { block: usize },
}

impl ExpertSpec {
    pub fn logistic() -> Self {
        Self::Logistic {
            l2: default_l2(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
        }
    }

    pub fn naive_bayes() -> Self {
        Self::NaiveBayes { alpha: default_alpha() }
    }

    pub fn knn(k: usize) -> Self {
        Self::Knn { k }
    }

    pub fn cart() -> Self {
        Self::CartTree {
            max_depth: default_cart_depth(),
            min_leaf: default_min_leaf(),
        }
    }

    pub fn gbt() -> Self {
        Self::Gbt {
            rounds: default_rounds(),
            max_depth: default_gbt_depth(),
            shrinkage: default_shrinkage(),
            l2: default_gbt_l2(),
            min_leaf: default_gbt_min_leaf(),
        }
    }

    pub fn mean_aggregate() -> Self {
        Self::MeanAggregate { members: Vec::new() }
    }

    /// The scaled default roster, in canonical order.
    pub fn default_roster() -> Vec<ExpertSpec> {
        vec![
            Self::logistic(),
            Self::gbt(),
            Self::cart(),
            Self::knn(default_k()),
            Self::naive_bayes(),
            Self::Majority,
            Self::mean_aggregate(),
        ]
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Majority => "majority",
            Self::Logistic { .. } => "logistic",
            Self::NaiveBayes { .. } => "naive_bayes",
            Self::Knn { .. } => "knn",
            Self::CartTree { .. } => "cart_tree",
            Self::Gbt { .. } => "gbt",
            Self::MeanAggregate { .. } => "mean_aggregate",
            Self::Passthrough { .. } => "passthrough",
        }
    }

    /// Aggregates are evaluated from sibling outputs, not from the input row.
    pub fn is_aggregate(&self) -> bool {
        matches!(self, Self::MeanAggregate { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind();
        let bad = |reason: &str| {
            Err(ExpertError::InvalidSpec {
                kind,
                reason: reason.to_string(),
            })
        };
        match *self {
            Self::Logistic {
                l2,
                epochs,
                learning_rate,
            } => {
                if !(l2.is_finite() && l2 >= 0.0) {
                    return bad("l2 must be finite and >= 0");
                }
                if epochs == 0 {
                    return bad("epochs must be >= 1");
                }
                if !(learning_rate.is_finite() && learning_rate > 0.0) {
                    return bad("learning_rate must be > 0");
                }
            }
            Self::NaiveBayes { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                return bad("alpha must be > 0");
            }
            Self::Knn { k: 0 } => return bad("k must be >= 1"),
            Self::CartTree { max_depth, min_leaf } => {
                if max_depth == 0 || min_leaf == 0 {
                    return bad("max_depth and min_leaf must be >= 1");
                }
            }
            Self::Gbt {
                rounds,
                max_depth,
                shrinkage,
                l2,
                min_leaf,
            } => {
                if rounds == 0 || max_depth == 0 || min_leaf == 0 {
                    return bad("rounds, max_depth and min_leaf must be >= 1");
                }
                if !(shrinkage > 0.0 && shrinkage <= 1.0) {
                    return bad("shrinkage must be in (0, 1]");
                }
                if !(l2.is_finite() && l2 >= 0.0) {
                    return bad("l2 must be finite and >= 0");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Column range of one expert output block inside an augmented row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub offset: usize,
    pub width: usize,
}

/// Training data handed to an expert oracle.
#[derive(Debug, Clone, Copy)]
pub struct ExpertInput<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    pub ids: &'a [usize],
    pub num_classes: usize,
    /// Output blocks already present in `features` (empty at level 1).
    pub blocks: &'a [BlockRange],
}

impl ExpertInput<'_> {
    fn check(&self) -> Result<()> {
        if self.features.rows() == 0 {
            return Err(ExpertError::Empty);
        }
        if self.features.rows() != self.labels.len() {
            return Err(ExpertError::LengthMismatch(self.features.rows(), self.labels.len()));
        }
        if self.ids.len() != self.labels.len() {
            return Err(ExpertError::LengthMismatch(self.ids.len(), self.labels.len()));
        }
        if self.num_classes < 2 {
            return Err(ExpertError::InvalidSpec {
                kind: "input",
                reason: "need at least 2 classes".into(),
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(ExpertError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub(crate) fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Fitted state of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ExpertParams {
    Prior(prior::Prior),
    Logistic(linear::Logistic),
    MultinomialNb(naive_bayes::MultinomialNb),
    GaussianNb(naive_bayes::GaussianNb),
    Knn(knn::Knn),
    Cart(tree::Tree),
    Gbt(gbt::Gbt),
    Aggregate { members: Vec<usize> },
    Passthrough(BlockRange),
}

/// A fitted expert. `trained_on` records the instance ids it was fitted on;
/// it is instrumentation and is not persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedExpert {
    pub spec: ExpertSpec,
    pub params: ExpertParams,
    pub input_width: usize,
    pub num_classes: usize,
    #[serde(skip)]
    pub trained_on: Vec<usize>,
}

/// Fits `spec` on `input`. Deterministic in `(spec, input, seed)`; none of the
/// current kinds consume randomness, but the seed is part of the contract.
pub fn fit_expert(spec: &ExpertSpec, input: &ExpertInput<'_>, seed: u64) -> Result<TrainedExpert> {
    let _ = seed;
    spec.validate()?;
    input.check()?;
    let params = match *spec {
        ExpertSpec::Majority => ExpertParams::Prior(prior::Prior::fit(input)),
        ExpertSpec::Logistic {
            l2,
            epochs,
            learning_rate,
        } => ExpertParams::Logistic(linear::Logistic::fit(input, l2, epochs, learning_rate)),
        ExpertSpec::NaiveBayes { alpha } => {
            if input.features.as_slice().iter().any(|&v| v < 0.0) {
                ExpertParams::GaussianNb(naive_bayes::GaussianNb::fit(input))
            } else {
                ExpertParams::MultinomialNb(naive_bayes::MultinomialNb::fit(input, alpha))
            }
        }
        ExpertSpec::Knn { k } => ExpertParams::Knn(knn::Knn::fit(input, k)),
        ExpertSpec::CartTree { max_depth, min_leaf } => ExpertParams::Cart(tree::fit_cart(input, max_depth, min_leaf)),
        ExpertSpec::Gbt {
            rounds,
            max_depth,
            shrinkage,
            l2,
            min_leaf,
        } => ExpertParams::Gbt(
            gbt::fit_with_trace(
                input,
                &gbt::GbtConfig {
                    rounds,
                    max_depth,
                    shrinkage,
                    l2,
                    min_leaf,
                },
            )
            .0,
        ),
        ExpertSpec::MeanAggregate { ref members } => ExpertParams::Aggregate {
            members: members.clone(),
        },
        ExpertSpec::Passthrough { block } => {
            let range = *input.blocks.get(block).ok_or(ExpertError::MissingBlock {
                block,
                available: input.blocks.len(),
            })?;
            if range.width != input.num_classes || range.offset + range.width > input.features.cols() {
                return Err(ExpertError::InvalidSpec {
                    kind: "passthrough",
                    reason: format!("block {block} ({range:?}) is not a class-probability block"),
                });
            }
            ExpertParams::Passthrough(range)
        }
    };
    Ok(TrainedExpert {
        spec: spec.clone(),
        params,
        input_width: input.features.cols(),
        num_classes: input.num_classes,
        trained_on: input.ids.to_vec(),
    })
}

impl TrainedExpert {
    /// Class probabilities for one input row.
    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.input_width {
            return Err(ExpertError::WidthMismatch {
                expected: self.input_width,
                got: x.len(),
            });
        }
        Ok(match &self.params {
            ExpertParams::Prior(m) => m.predict(),
            ExpertParams::Logistic(m) => m.predict(x),
            ExpertParams::MultinomialNb(m) => m.predict(x),
            ExpertParams::GaussianNb(m) => m.predict(x),
            ExpertParams::Knn(m) => m.predict(x),
            ExpertParams::Cart(t) => ProbVector::from_simplex(t.leaf(x).to_vec()),
            ExpertParams::Gbt(m) => m.predict(x),
            ExpertParams::Aggregate { .. } => return Err(ExpertError::NeedsSiblings),
            ExpertParams::Passthrough(r) => ProbVector::normalized(x[r.offset..r.offset + r.width].to_vec())?,
        })
    }

    /// Like [`predict`](Self::predict), but resolves aggregates from the
    /// outputs of earlier roster entries of the same level.
    pub fn predict_with_siblings(&self, x: &[f64], siblings: &[ProbVector]) -> Result<ProbVector> {
        match &self.params {
            ExpertParams::Aggregate { .. } => {
                let members = self.aggregate_members(siblings.len())?;
                let mut acc = vec![0.0; self.num_classes];
                for &m in &members {
                    for (a, p) in acc.iter_mut().zip(siblings[m].as_slice()) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= members.len() as f64);
                ProbVector::normalized(acc)
            }
            _ => self.predict(x),
        }
    }

    /// Roster positions an aggregate averages, given its own position.
    pub fn aggregate_members(&self, own_position: usize) -> Result<Vec<usize>> {
        let ExpertParams::Aggregate { members } = &self.params else {
            return Ok(Vec::new());
        };
        let members = if members.is_empty() {
            (0..own_position).collect::<Vec<_>>()
        } else {
            members.clone()
        };
        if members.is_empty() || members.iter().any(|&m| m >= own_position) {
            return Err(ExpertError::InvalidSpec {
                kind: "mean_aggregate",
                reason: format!("members {members:?} must be non-empty and precede position {own_position}"),
            });
        }
        Ok(members)
    }
}

/// Resolves aggregate membership for a whole level roster: explicit members
/// must precede the aggregate; an empty list means all earlier
/// non-aggregate experts.
pub fn resolve_aggregate_members(roster: &[ExpertSpec]) -> Result<Vec<Vec<usize>>> {
    roster
        .iter()
        .enumerate()
        .map(|(pos, spec)| match spec {
            ExpertSpec::MeanAggregate { members } => {
                let resolved: Vec<usize> = if members.is_empty() {
                    (0..pos).filter(|&j| !roster[j].is_aggregate()).collect()
                } else {
                    members.clone()
                };
                if resolved.is_empty() || resolved.iter().any(|&m| m >= pos) {
                    return Err(ExpertError::InvalidSpec {
                        kind: "mean_aggregate",
                        reason: format!(
                            "at roster position {pos}: members {resolved:?} must be non-empty and precede it"
                        ),
                    });
                }
                Ok(resolved)
            }
            _ => Ok(Vec::new()),
        })
        .collect()
}

/// Numerically stable softmax into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}
