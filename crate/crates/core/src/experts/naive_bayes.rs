//! Multinomial and Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use super::{softmax_into, ExpertInput, ProbVector};

fn log_priors(input: &ExpertInput<'_>) -> Vec<f64> {
    let n = input.labels.len() as f64;
    input
        .class_counts()
        .into_iter()
        .map(|c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
        .collect()
}

/// `P(c | x) ∝ P(c) Π_i θ_ci^x_i` with `θ_ci = (N_ci + α) / (N_c + α d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialNb {
    #[serde(with = "crate::hexfloat::vec")]
    log_prior: Vec<f64>,
    /// `classes x features`, row-major.
    #[serde(with = "crate::hexfloat::vec")]
    log_theta: Vec<f64>,
}

impl MultinomialNb {
    pub(super) fn fit(input: &ExpertInput<'_>, alpha: f64) -> Self {
        let (d, c) = (input.features.cols(), input.num_classes);
        let mut counts = vec![0.0; c * d];
        for (row, &y) in input.features.iter_rows().zip(input.labels) {
            for (acc, v) in counts[y * d..(y + 1) * d].iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut log_theta = vec![0.0; c * d];
        for k in 0..c {
            let total: f64 = counts[k * d..(k + 1) * d].iter().sum::<f64>() + alpha * d as f64;
            for j in 0..d {
                log_theta[k * d + j] = ((counts[k * d + j] + alpha) / total).ln();
            }
        }
        Self {
            log_prior: log_priors(input),
            log_theta,
        }
    }

    pub(super) fn predict(&self, x: &[f64]) -> ProbVector {
        let c = self.log_prior.len();
        let d = x.len();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                self.log_prior[k]
                    + self.log_theta[k * d..(k + 1) * d]
                        .iter()
                        .zip(x)
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(t, v)| t * v)
                        .sum::<f64>()
            })
            .collect();
        let mut p = vec![0.0; c];
        softmax_into(&logits, &mut p);
        ProbVector::from_simplex(p)
    }
}

/// Per-class independent normals; variances floored at `1e-9 * max variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    #[serde(with = "crate::hexfloat::vec")]
    log_prior: Vec<f64>,
    #[serde(with = "crate::hexfloat::vec")]
    mean: Vec<f64>,
    #[serde(with = "crate::hexfloat::vec")]
    var: Vec<f64>,
}

impl GaussianNb {
    pub(super) fn fit(input: &ExpertInput<'_>) -> Self {
        let (d, c) = (input.features.cols(), input.num_classes);
        let counts = input.class_counts();
        let mut mean = vec![0.0; c * d];
        for (row, &y) in input.features.iter_rows().zip(input.labels) {
            for (m, v) in mean[y * d..(y + 1) * d].iter_mut().zip(row) {
                *m += v;
            }
        }
        for k in 0..c {
            let nk = counts[k].max(1) as f64;
            mean[k * d..(k + 1) * d].iter_mut().for_each(|m| *m /= nk);
        }
        let mut var = vec![0.0; c * d];
        for (row, &y) in input.features.iter_rows().zip(input.labels) {
            for j in 0..d {
                let e = row[j] - mean[y * d + j];
                var[y * d + j] += e * e;
            }
        }
        for k in 0..c {
            let nk = counts[k].max(1) as f64;
            var[k * d..(k + 1) * d].iter_mut().for_each(|v| *v /= nk);
        }
        let floor = (1e-9 * var.iter().copied().fold(0.0, f64::max)).max(1e-12);
        var.iter_mut().for_each(|v| *v += floor);
        Self {
            log_prior: log_priors(input),
            mean,
            var,
        }
    }

    pub(super) fn predict(&self, x: &[f64]) -> ProbVector {
        let c = self.log_prior.len();
        let d = x.len();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                let mut s = self.log_prior[k];
                for j in 0..d {
                    let v = self.var[k * d + j];
                    let e = x[j] - self.mean[k * d + j];
                    s -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + e * e / v);
                }
                s
            })
            .collect();
        let mut p = vec![0.0; c];
        softmax_into(&logits, &mut p);
        ProbVector::from_simplex(p)
    }
}
