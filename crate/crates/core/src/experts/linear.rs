//! Multinomial logistic regression.

use serde::{Deserialize, Serialize};

use super::{softmax_into, ExpertInput, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    /// Per-feature centering applied before the linear map.
    #[serde(with = "crate::hexfloat::vec")]
    mean: Vec<f64>,
    /// Per-feature inverse standard deviation (1 for constant features).
    #[serde(with = "crate::hexfloat::vec")]
    inv_std: Vec<f64>,
    /// `classes x features`, row-major.
    #[serde(with = "crate::hexfloat::vec")]
    weights: Vec<f64>,
    #[serde(with = "crate::hexfloat::vec")]
    bias: Vec<f64>,
}

impl Logistic {
    /// Full-batch gradient descent on mean cross-entropy plus `l2/2 * |W|^2`,
    /// starting from zero weights.
    pub(super) fn fit(input: &ExpertInput<'_>, l2: f64, epochs: usize, lr: f64) -> Self {
        let x = input.features;
        let (n, d, c) = (x.rows(), x.cols(), input.num_classes);

        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();

        let mut z = vec![0.0; n * d];
        for (i, row) in x.iter_rows().enumerate() {
            for j in 0..d {
                z[i * d + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }

        let mut weights = vec![0.0; c * d];
        let mut bias = vec![0.0; c];
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        let mut logits = vec![0.0; c];
        let mut probs = vec![0.0; c];
        let inv_n = 1.0 / n as f64;
        for _ in 0..epochs {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let zi = &z[i * d..(i + 1) * d];
                for k in 0..c {
                    let w = &weights[k * d..(k + 1) * d];
                    logits[k] = bias[k] + w.iter().zip(zi).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_into(&logits, &mut probs);
                probs[input.labels[i]] -= 1.0;
                for k in 0..c {
                    let r = probs[k];
                    if r == 0.0 {
                        continue;
                    }
                    gb[k] += r;
                    for (g, v) in gw[k * d..(k + 1) * d].iter_mut().zip(zi) {
                        *g += r * v;
                    }
                }
            }
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= lr * (g * inv_n + l2 * *w);
            }
            for (b, g) in bias.iter_mut().zip(&gb) {
                *b -= lr * g * inv_n;
            }
        }
        Self {
            mean,
            inv_std,
            weights,
            bias,
        }
    }

    pub(super) fn predict(&self, x: &[f64]) -> ProbVector {
        let d = self.mean.len();
        let c = self.bias.len();
        let z: Vec<f64> = (0..d).map(|j| (x[j] - self.mean[j]) * self.inv_std[j]).collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                self.bias[k]
                    + self.weights[k * d..(k + 1) * d]
                        .iter()
                        .zip(&z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let mut p = vec![0.0; c];
        softmax_into(&logits, &mut p);
        ProbVector::from_simplex(p)
    }
}
