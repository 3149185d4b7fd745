//! Cross-validated recursive stacking and the meta-optimization pipeline.
//!
//! Level `k` appends one out-of-fold probability block per roster expert to
//! every level `k - 1` row. The combination network sees the concept columns
//! and every block of every level; the meta parameters are fitted against
//! these frozen blocks, then the experts are refitted on the full training
//! data of their level for serving.

mod model;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, Dataset, FoldMap};
use crate::experts::{
    fit_expert, resolve_aggregate_members, BlockRange, ExpertError, ExpertInput, ExpertSpec, ProbVector,
};
use crate::matrix::Matrix;
use crate::neural::{MetaParams, NeuralConfig, NeuralError};
use crate::seed;

pub use model::{
    adapt_experts, attention_report, train_supercone, AttentionEntry, AttentionReport, SuperConeModel, Timings,
    TrainOutcome,
};
pub use train::{meta_train, MetaTrace};

/// Drift beyond which a stored block is renormalized before mixing.
pub const BLOCK_DRIFT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StackError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("level {level} expert {expert} ({kind}): {source}")]
    Expert {
        level: usize,
        expert: usize,
        kind: &'static str,
        #[source]
        source: ExpertError,
    },
    #[error("neural: {0}")]
    Neural(#[from] NeuralError),
    #[error("meta training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("layout: {0}")]
    Layout(String),
    #[error("empty dataset")]
    Empty,
}

pub type Result<T> = std::result::Result<T, StackError>;

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// One Adam step per epoch over all rows.
    #[serde(default)]
    pub full_batch: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            full_batch: false,
        }
    }
}

/// Everything `train_supercone` needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    /// Expert depth `K`; 0 trains the complementary expert alone.
    pub levels: usize,
    /// Fold count `V` used to build every level.
    pub folds: usize,
    /// One roster per level `1..=K`.
    pub rosters: Vec<Vec<ExpertSpec>>,
    pub neural: NeuralConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl StackConfig {
    /// `levels` copies of one roster, default network and optimizer.
    pub fn uniform(levels: usize, folds: usize, roster: Vec<ExpertSpec>, seed: u64) -> Self {
        Self {
            levels,
            folds,
            rosters: vec![roster; levels],
            neural: NeuralConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StackError::Config(m));
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.rosters.len() != self.levels {
            return bad(format!("{} rosters for {} levels", self.rosters.len(), self.levels));
        }
        for (k, roster) in self.rosters.iter().enumerate() {
            if roster.is_empty() {
                return bad(format!("roster for level {} is empty", k + 1));
            }
            for (j, spec) in roster.iter().enumerate() {
                spec.validate()
                    .map_err(|e| StackError::Config(format!("level {} expert {j}: {e}", k + 1)))?;
            }
            resolve_aggregate_members(roster).map_err(|e| StackError::Config(format!("level {}: {e}", k + 1)))?;
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", o.lr));
        }
        if o.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }
}

/// One expert output block inside an augmented row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    /// 1-based level.
    pub level: usize,
    /// Roster position within the level.
    pub expert: usize,
    pub name: String,
    pub range: BlockRange,
}

/// Fit/predict record of one cross-validation replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaRecord {
    pub level: usize,
    pub expert: usize,
    pub fold: usize,
    pub trained_on: Vec<usize>,
    pub predicted: Vec<usize>,
}

/// Rows `[concepts | level-1 blocks | ... | level-k blocks]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub level: usize,
    pub rows: Matrix,
    pub layout: Vec<BlockInfo>,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
    pub concept_width: usize,
    pub num_classes: usize,
    /// Replicas that built this level's blocks.
    pub replicas: Vec<ReplicaRecord>,
    pub warnings: Vec<String>,
}

impl AugmentedDataset {
    /// Level 0: the densified concept vectors.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(StackError::Empty);
        }
        Ok(Self {
            level: 0,
            rows: data.densify(),
            layout: Vec::new(),
            labels: data.labels(),
            ids: data.ids(),
            concept_width: data.vocab_size(),
            num_classes: data.num_classes(),
            replicas: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn block_ranges(&self) -> Vec<BlockRange> {
        self.layout.iter().map(|b| b.range).collect()
    }

    /// Replica/instance pairs where the replica predicted a row it was
    /// fitted on. Empty by construction.
    pub fn leakage_violations(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for r in &self.replicas {
            let trained: std::collections::HashSet<usize> = r.trained_on.iter().copied().collect();
            for &id in &r.predicted {
                if trained.contains(&id) {
                    out.push((r.level, r.expert, r.fold, id));
                }
            }
        }
        out
    }
}

/// Layout after appending one block per roster entry to `prev`.
pub(crate) fn extend_layout(
    prev: &[BlockInfo],
    base_width: usize,
    level: usize,
    roster: &[ExpertSpec],
    c: usize,
) -> Vec<BlockInfo> {
    let mut layout = prev.to_vec();
    for (j, spec) in roster.iter().enumerate() {
        layout.push(BlockInfo {
            level,
            expert: j,
            name: format!("L{level}.{j}.{}", spec.kind()),
            range: BlockRange {
                offset: base_width + j * c,
                width: c,
            },
        });
    }
    layout
}

/// Spec with aggregate membership made explicit.
pub(crate) fn resolved_roster(roster: &[ExpertSpec]) -> std::result::Result<Vec<ExpertSpec>, ExpertError> {
    let members = resolve_aggregate_members(roster)?;
    Ok(roster
        .iter()
        .zip(members)
        .map(|(spec, m)| match spec {
            ExpertSpec::MeanAggregate { .. } => ExpertSpec::MeanAggregate { members: m },
            other => other.clone(),
        })
        .collect())
}

struct FoldJob {
    expert: usize,
    fold: usize,
}

enum FoldOutcome {
    Fitted {
        trained_on: Vec<usize>,
        preds: Vec<ProbVector>,
    },
    Failed {
        reason: String,
    },
}

type FoldResult = (Vec<usize>, Vec<ProbVector>);

/// Builds level `k` from level `k - 1`: for every expert and fold, fit on the
/// fold complement and predict the fold. Aggregates average their members'
/// out-of-fold outputs, so they inherit the members' training sets.
pub fn build_meta_level(
    k: usize,
    prev: &AugmentedDataset,
    roster: &[ExpertSpec],
    fold_map: &FoldMap,
    seed: u64,
) -> Result<AugmentedDataset> {
    if k != prev.level + 1 {
        return Err(StackError::Layout(format!(
            "level {k} cannot follow level {}",
            prev.level
        )));
    }
    if fold_map.folds() < 2 {
        return Err(StackError::Config("folds must be at least 2".into()));
    }
    if fold_map.len() != prev.len() {
        return Err(StackError::Data(DataError::Folds(format!(
            "fold map covers {} rows, level has {}",
            fold_map.len(),
            prev.len()
        ))));
    }
    if roster.is_empty() {
        return Err(StackError::Config(format!("roster for level {k} is empty")));
    }
    let roster = resolved_roster(roster).map_err(|e| StackError::Config(format!("level {k}: {e}")))?;
    let c = prev.num_classes;
    let v_count = fold_map.folds();
    let blocks = prev.block_ranges();
    let members: Vec<Vec<usize>> = (0..v_count).map(|v| fold_map.members(v)).collect();
    let complements: Vec<Vec<usize>> = (0..v_count).map(|v| fold_map.complement(v)).collect();

    let jobs: Vec<FoldJob> = roster
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_aggregate())
        .flat_map(|(expert, _)| (0..v_count).map(move |fold| FoldJob { expert, fold }))
        .collect();
    let outcomes: Vec<FoldOutcome> = jobs
        .par_iter()
        .map(|job| {
            let train_pos = &complements[job.fold];
            let x = prev.rows.select_rows(train_pos);
            let y: Vec<usize> = train_pos.iter().map(|&p| prev.labels[p]).collect();
            let ids: Vec<usize> = train_pos.iter().map(|&p| prev.ids[p]).collect();
            let input = ExpertInput {
                features: &x,
                labels: &y,
                ids: &ids,
                num_classes: c,
                blocks: &blocks,
            };
            let fit_seed = seed::derive(seed, &[k as u64, job.expert as u64, job.fold as u64]);
            let fitted = fit_expert(&roster[job.expert], &input, fit_seed).and_then(|m| {
                let preds = members[job.fold]
                    .iter()
                    .map(|&p| m.predict(prev.rows.row(p)))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok((m, preds))
            });
            match fitted {
                Ok((m, preds)) => FoldOutcome::Fitted {
                    trained_on: m.trained_on,
                    preds,
                },
                Err(e) => FoldOutcome::Failed { reason: e.to_string() },
            }
        })
        .collect();

    let mut warnings = Vec::new();
    for (v, comp) in complements.iter().enumerate() {
        let mut seen = vec![false; c];
        comp.iter().for_each(|&p| seen[prev.labels[p]] = true);
        let missing: Vec<usize> = (0..c).filter(|&y| !seen[y]).collect();
        if !missing.is_empty() {
            warnings.push(format!(
                "level {k} fold {v}: training complement lacks classes {missing:?}"
            ));
        }
    }

    // per (expert, fold): trained ids and predictions for the fold's rows
    let mut results: Vec<Vec<Option<FoldResult>>> = vec![vec![None; v_count]; roster.len()];
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let entry = match outcome {
            FoldOutcome::Fitted { trained_on, preds } => (trained_on, preds),
            FoldOutcome::Failed { reason } => {
                let msg = format!(
                    "level {k} expert {} ({}) fold {}: {reason}; using a uniform block",
                    job.expert,
                    roster[job.expert].kind(),
                    job.fold
                );
                log::warn!("{msg}");
                warnings.push(msg);
                (Vec::new(), vec![ProbVector::uniform(c); members[job.fold].len()])
            }
        };
        results[job.expert][job.fold] = Some(entry);
    }
    for (j, spec) in roster.iter().enumerate() {
        let ExpertSpec::MeanAggregate { members: agg } = spec else {
            continue;
        };
        for v in 0..v_count {
            let mut trained: Vec<usize> = agg
                .iter()
                .flat_map(|&m| results[m][v].as_ref().expect("members precede").0.iter().copied())
                .collect();
            trained.sort_unstable();
            trained.dedup();
            let preds = (0..members[v].len())
                .map(|r| {
                    let mut acc = vec![0.0; c];
                    for &m in agg {
                        let p = &results[m][v].as_ref().expect("members precede").1[r];
                        acc.iter_mut().zip(p.as_slice()).for_each(|(a, q)| *a += q);
                    }
                    ProbVector::normalized(acc).map_err(|source| StackError::Expert {
                        level: k,
                        expert: j,
                        kind: spec.kind(),
                        source,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            results[j][v] = Some((trained, preds));
        }
    }

    let base = prev.width();
    let width = base + roster.len() * c;
    let mut rows = Matrix::zeros(prev.len(), width);
    for p in 0..prev.len() {
        rows.row_mut(p)[..base].copy_from_slice(prev.rows.row(p));
    }
    let mut replicas = Vec::with_capacity(roster.len() * v_count);
    for (j, per_fold) in results.into_iter().enumerate() {
        for (v, entry) in per_fold.into_iter().enumerate() {
            let (trained_on, preds) = entry.expect("every (expert, fold) filled");
            for (&p, pred) in members[v].iter().zip(&preds) {
                rows.row_mut(p)[base + j * c..base + (j + 1) * c].copy_from_slice(pred.as_slice());
            }
            replicas.push(ReplicaRecord {
                level: k,
                expert: j,
                fold: v,
                trained_on,
                predicted: members[v].iter().map(|&p| prev.ids[p]).collect(),
            });
        }
    }
    Ok(AugmentedDataset {
        level: k,
        rows,
        layout: extend_layout(&prev.layout, base, k, &roster, c),
        labels: prev.labels.clone(),
        ids: prev.ids.clone(),
        concept_width: prev.concept_width,
        num_classes: c,
        replicas,
        warnings,
    })
}

/// Splits an augmented row into its concept part and its blocks, renormalizing
/// any block whose mass drifted beyond [`BLOCK_DRIFT`].
pub(crate) fn split_row(row: &[f64], concept_width: usize, layout: &[BlockInfo]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let expected = concept_width + layout.iter().map(|b| b.range.width).sum::<usize>();
    if row.len() != expected {
        return Err(StackError::Layout(format!(
            "row width {} does not match layout width {expected}",
            row.len()
        )));
    }
    let blocks = layout
        .iter()
        .map(|b| {
            let mut v = row[b.range.offset..b.range.offset + b.range.width].to_vec();
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > BLOCK_DRIFT {
                if !(s.is_finite() && s > 0.0) {
                    return Err(StackError::Layout(format!("block {} has mass {s}", b.name)));
                }
                v.iter_mut().for_each(|p| *p /= s);
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((row[..concept_width].to_vec(), blocks))
}

/// Meta-training surrogate: the combination of the complementary expert and
/// the stored blocks of one augmented row.
pub fn h_train_forward(params: &MetaParams, row: &[f64], layout: &[BlockInfo]) -> Result<ProbVector> {
    if layout.len() != params.structure.num_blocks {
        return Err(StackError::Layout(format!(
            "layout has {} blocks, parameters expect {}",
            layout.len(),
            params.structure.num_blocks
        )));
    }
    let (concepts, blocks) = split_row(row, params.structure.concept_width, layout)?;
    let refs: Vec<&[f64]> = blocks.iter().map(Vec::as_slice).collect();
    Ok(params.mixture(&concepts, &refs)?.0)
}
