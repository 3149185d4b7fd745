//! Brute-force Euclidean k-nearest neighbours over sparse training rows.

use serde::{Deserialize, Serialize};

use super::{ExpertInput, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    num_classes: usize,
    /// CSR row pointers into `indices` / `values`.
    indptr: Vec<usize>,
    indices: Vec<u32>,
    #[serde(with = "crate::hexfloat::vec")]
    values: Vec<f64>,
    #[serde(with = "crate::hexfloat::vec")]
    sq_norms: Vec<f64>,
    labels: Vec<usize>,
}

fn sparse_sq_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

impl Knn {
    pub(super) fn fit(input: &ExpertInput<'_>, k: usize) -> Self {
        let n = input.features.rows();
        let k = if k > n {
            log::warn!("knn: k = {k} exceeds {n} training rows; clamping");
            n
        } else {
            k
        };
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut sq_norms = Vec::with_capacity(n);
        indptr.push(0);
        for row in input.features.iter_rows() {
            let start = values.len();
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            sq_norms.push(sparse_sq_norm(&values[start..]));
            indptr.push(values.len());
        }
        Self {
            k,
            num_classes: input.num_classes,
            indptr,
            indices,
            values,
            sq_norms,
            labels: input.labels.to_vec(),
        }
    }

    /// Vote fractions `(n_c + 1) / (k + |classes|)` over the `k` nearest
    /// rows; distance ties go to the lower training row.
    pub(super) fn predict(&self, x: &[f64]) -> ProbVector {
        // the norm is accumulated over nonzeros in index order, exactly as the
        // training norms are, so a training point is at distance 0 from itself
        let x_nz: Vec<f64> = x.iter().copied().filter(|&v| v != 0.0).collect();
        let qn = sparse_sq_norm(&x_nz);
        let n = self.labels.len();
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|r| {
                let (a, b) = (self.indptr[r], self.indptr[r + 1]);
                let dot: f64 = self.indices[a..b]
                    .iter()
                    .zip(&self.values[a..b])
                    .map(|(&j, &v)| x[j as usize] * v)
                    .sum();
                ((qn + self.sq_norms[r] - 2.0 * dot).max(0.0), r)
            })
            .collect();
        let k = self.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let mut votes = vec![1.0; self.num_classes];
        for &(_, r) in &dist[..k] {
            votes[self.labels[r]] += 1.0;
        }
        let denom = (k + self.num_classes) as f64;
        ProbVector::from_simplex(votes.into_iter().map(|v| v / denom).collect())
    }
}
