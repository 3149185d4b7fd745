//! Level-wise exact-greedy tree growth over presorted columns, shared by
//! the CART expert and the boosted regression trees.
//!
//! Each depth level scans every feature once in sorted order and keeps one
//! running accumulator per frontier node, so a level costs
//! `O(features * rows)` regardless of how many nodes it holds. Split ties go
//! to the lowest feature index, then the lowest threshold.

use serde::{Deserialize, Serialize};

use super::ExpertInput;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        #[serde(with = "crate::hexfloat::scalar")]
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        #[serde(with = "crate::hexfloat::vec")]
        value: Vec<f64>,
    },
}

/// Binary tree; `x[feature] <= threshold` goes left. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub(super) fn map_leaves(mut self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value = f(value);
            }
        }
        self
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Row order per feature, ascending by value then by row.
pub(super) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub(super) fn new(x: &Matrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

/// Additive node statistics with a split score; gain of a split is
/// `score(left) + score(right) - score(parent)`.
pub(super) trait SplitStats: Clone {
    fn add_row(&mut self, row: usize);
    fn minus(&self, other: &Self) -> Self;
    fn count(&self) -> usize;
    fn score(&self) -> f64;
}

pub(super) struct GrowConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

const MIN_GAIN: f64 = 1e-12;

/// Grows a tree over all rows of `x`.
pub(super) fn grow<S: SplitStats>(
    x: &Matrix,
    sorted: &Presorted,
    empty: &S,
    cfg: &GrowConfig,
    leaf_value: impl Fn(&S) -> Vec<f64>,
) -> Tree {
    let n = x.rows();
    let d = x.cols();
    let mut root = empty.clone();
    for r in 0..n {
        root.add_row(r);
    }
    // node id in `nodes` of the frontier node each row sits in
    let mut slot_of: Vec<Option<usize>> = vec![Some(0); n];
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: Vec::new() }];
    // frontier: (node id, stats)
    let mut frontier: Vec<(usize, S)> = vec![(0, root)];

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut node_to_slot = vec![usize::MAX; nodes.len()];
        for (s, (id, _)) in frontier.iter().enumerate() {
            node_to_slot[*id] = s;
        }
        let slot_of_row: Vec<usize> = slot_of
            .iter()
            .map(|s| s.map_or(usize::MAX, |id| node_to_slot[id]))
            .collect();

        // best (gain, feature, threshold) per frontier slot
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; frontier.len()];
        for (j, order) in sorted.order.iter().enumerate().take(d) {
            let mut left: Vec<S> = vec![empty.clone(); frontier.len()];
            let mut last: Vec<Option<f64>> = vec![None; frontier.len()];
            for &r in order {
                let r = r as usize;
                let s = slot_of_row[r];
                if s == usize::MAX {
                    continue;
                }
                let v = x.get(r, j);
                if let Some(prev) = last[s] {
                    if v > prev {
                        let parent = &frontier[s].1;
                        let nl = left[s].count();
                        let nr = parent.count() - nl;
                        if nl >= cfg.min_leaf && nr >= cfg.min_leaf {
                            let right = parent.minus(&left[s]);
                            let gain = left[s].score() + right.score() - parent.score();
                            if gain > MIN_GAIN && best[s].is_none_or(|(g, _, _)| gain > g) {
                                let mid = prev + (v - prev) / 2.0;
                                let thr = if mid < v { mid } else { prev };
                                best[s] = Some((gain, j, thr));
                            }
                        }
                    }
                }
                left[s].add_row(r);
                last[s] = Some(v);
            }
        }

        let mut next = Vec::new();
        let old_frontier = std::mem::take(&mut frontier);
        let mut split_of_slot: Vec<Option<(usize, f64, usize, usize)>> = vec![None; old_frontier.len()];
        for (s, (id, stats)) in old_frontier.into_iter().enumerate() {
            match best[s] {
                Some((_, feature, threshold)) => {
                    let l = nodes.len();
                    nodes.push(Node::Leaf { value: Vec::new() });
                    nodes.push(Node::Leaf { value: Vec::new() });
                    nodes[id] = Node::Split {
                        feature,
                        threshold,
                        left: l,
                        right: l + 1,
                    };
                    split_of_slot[s] = Some((feature, threshold, l, l + 1));
                    next.push((l, empty.clone()));
                    next.push((l + 1, empty.clone()));
                }
                None => {
                    nodes[id] = Node::Leaf {
                        value: leaf_value(&stats),
                    }
                }
            }
        }
        // route rows into children and rebuild child stats
        let mut child_index = vec![usize::MAX; nodes.len()];
        for (i, (id, _)) in next.iter().enumerate() {
            child_index[*id] = i;
        }
        for r in 0..n {
            let s = slot_of_row[r];
            if s == usize::MAX {
                continue;
            }
            match split_of_slot[s] {
                Some((feature, threshold, l, rr)) => {
                    let child = if x.get(r, feature) <= threshold { l } else { rr };
                    slot_of[r] = Some(child);
                    next[child_index[child]].1.add_row(r);
                }
                None => slot_of[r] = None,
            }
        }
        frontier = next;
    }
    for (id, stats) in frontier {
        nodes[id] = Node::Leaf {
            value: leaf_value(&stats),
        };
    }
    Tree { nodes }
}

/// Class counts with Gini score `Σ n_c² / n − n` (that is `−n · gini`).
#[derive(Clone)]
struct GiniStats<'a> {
    labels: &'a [usize],
    counts: Vec<f64>,
    n: usize,
}

impl SplitStats for GiniStats<'_> {
    fn add_row(&mut self, row: usize) {
        self.counts[self.labels[row]] += 1.0;
        self.n += 1;
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            labels: self.labels,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a - b).collect(),
            n: self.n - other.n,
        }
    }

    fn count(&self) -> usize {
        self.n
    }

    fn score(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        self.counts.iter().map(|c| c * c).sum::<f64>() / n - n
    }
}

/// Gini CART; leaves hold class fractions.
pub(super) fn fit_cart(input: &ExpertInput<'_>, max_depth: usize, min_leaf: usize) -> Tree {
    let sorted = Presorted::new(input.features);
    let empty = GiniStats {
        labels: input.labels,
        counts: vec![0.0; input.num_classes],
        n: 0,
    };
    grow(
        input.features,
        &sorted,
        &empty,
        &GrowConfig { max_depth, min_leaf },
        |s| {
            let n = s.n.max(1) as f64;
            s.counts.iter().map(|c| c / n).collect()
        },
    )
}
