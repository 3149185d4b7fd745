//! One-vs-rest gradient boosting on the logistic loss.
//!
//! Two-class problems use a single booster on class 1. Each round fits a
//! regression tree to the gradient/hessian pairs with Newton leaf values
//! `-G / (H + l2)`, scaled by the shrinkage. A round whose tree would raise
//! the training loss is halved until it does not (or dropped), which keeps
//! the per-booster training loss non-increasing.

use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowConfig, Presorted, SplitStats, Tree};
use super::{ExpertInput, ProbVector};

#[derive(Debug, Clone)]
pub struct GbtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub l2: f64,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    #[serde(with = "crate::hexfloat::scalar")]
    base: f64,
    trees: Vec<Tree>,
}

impl Booster {
    fn margin(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.leaf(x)[0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    num_classes: usize,
    /// One booster for two classes, one per class otherwise.
    boosters: Vec<Booster>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn binary_log_loss(margins: &[f64], targets: &[f64]) -> f64 {
    // log(1 + e^{-z}) for y = 1, log(1 + e^{z}) for y = 0, computed stably
    let softplus = |z: f64| {
        if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        }
    };
    margins
        .iter()
        .zip(targets)
        .map(|(&z, &y)| if y > 0.5 { softplus(-z) } else { softplus(z) })
        .sum::<f64>()
        / margins.len() as f64
}

#[derive(Clone)]
struct GradStats<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    l2: f64,
    g: f64,
    h: f64,
    n: usize,
}

impl SplitStats for GradStats<'_> {
    fn add_row(&mut self, row: usize) {
        self.g += self.grad[row];
        self.h += self.hess[row];
        self.n += 1;
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            g: self.g - other.g,
            h: self.h - other.h,
            n: self.n - other.n,
            ..self.clone()
        }
    }

    fn count(&self) -> usize {
        self.n
    }

    fn score(&self) -> f64 {
        self.g * self.g / (self.h + self.l2)
    }
}

fn fit_booster(input: &ExpertInput<'_>, sorted: &Presorted, targets: &[f64], cfg: &GbtConfig) -> (Booster, Vec<f64>) {
    let x = input.features;
    let n = x.rows();
    let prior = (targets.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base = (prior / (1.0 - prior)).ln();
    let mut margins = vec![base; n];
    let mut loss = binary_log_loss(&margins, targets);
    let mut trace = vec![loss];
    let mut trees = Vec::new();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - targets[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let empty = GradStats {
            grad: &grad,
            hess: &hess,
            l2: cfg.l2,
            g: 0.0,
            h: 0.0,
            n: 0,
        };
        let shrink = cfg.shrinkage;
        let l2 = cfg.l2;
        let tree = grow(
            x,
            sorted,
            &empty,
            &GrowConfig {
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_leaf,
            },
            |s| vec![-shrink * s.g / (s.h + l2)],
        );
        let step: Vec<f64> = x.iter_rows().map(|r| tree.leaf(r)[0]).collect();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let trial: Vec<f64> = margins.iter().zip(&step).map(|(m, s)| m + scale * s).collect();
            let trial_loss = binary_log_loss(&trial, targets);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            scale *= 0.5;
        }
        if let Some((trial, trial_loss)) = accepted {
            margins = trial;
            loss = trial_loss;
            trees.push(if scale == 1.0 { tree } else { scaled(tree, scale) });
        }
        trace.push(loss);
    }
    (Booster { base, trees }, trace)
}

fn scaled(tree: Tree, scale: f64) -> Tree {
    tree.map_leaves(|v| v.iter().map(|x| x * scale).collect())
}

/// Fits the booster set and returns, per booster, the mean training
/// log-loss before the first round and after every round.
pub fn fit_with_trace(input: &ExpertInput<'_>, cfg: &GbtConfig) -> (Gbt, Vec<Vec<f64>>) {
    let sorted = Presorted::new(input.features);
    let c = input.num_classes;
    let targets_for = |k: usize| -> Vec<f64> { input.labels.iter().map(|&l| f64::from(u8::from(l == k))).collect() };
    let classes: Vec<usize> = if c == 2 { vec![1] } else { (0..c).collect() };
    let (boosters, traces) = classes
        .into_iter()
        .map(|k| fit_booster(input, &sorted, &targets_for(k), cfg))
        .unzip();
    (
        Gbt {
            num_classes: c,
            boosters,
        },
        traces,
    )
}

impl Gbt {
    pub(super) fn predict(&self, x: &[f64]) -> ProbVector {
        if self.num_classes == 2 {
            let p = sigmoid(self.boosters[0].margin(x));
            return ProbVector::from_simplex(vec![1.0 - p, p]);
        }
        let raw: Vec<f64> = self.boosters.iter().map(|b| sigmoid(b.margin(x))).collect();
        let s: f64 = raw.iter().sum();
        ProbVector::from_simplex(raw.into_iter().map(|p| p / s).collect())
    }
}
