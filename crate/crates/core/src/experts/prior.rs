use serde::{Deserialize, Serialize};

use super::{ExpertInput, ProbVector};

/// Empirical class prior; ignores its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    #[serde(with = "crate::hexfloat::vec")]
    probs: Vec<f64>,
}

impl Prior {
    pub(super) fn fit(input: &ExpertInput<'_>) -> Self {
        let n = input.labels.len() as f64;
        Self {
            probs: input.class_counts().into_iter().map(|c| c as f64 / n).collect(),
        }
    }

    pub(super) fn predict(&self) -> ProbVector {
        ProbVector::from_simplex(self.probs.clone())
    }
}
