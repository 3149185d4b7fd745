use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_meta_level, extend_layout, meta_train, resolved_roster, AugmentedDataset, BlockInfo, MetaTrace, Result,
    StackConfig, StackError,
};
use crate::dataio::{assign_folds, ConceptVector, DataError, Dataset, LabelSpace};
use crate::experts::{fit_expert, ExpertInput, ProbVector, TrainedExpert};
use crate::neural::MetaParams;
use crate::seed;

/// Fits every level-`k` roster expert on the whole level `k - 1` training
/// data (`levels[k - 1]`, whose blocks are the out-of-fold ones). Experts of
/// one level are fitted concurrently.
pub fn adapt_experts(cfg: &StackConfig, levels: &[AugmentedDataset]) -> Result<Vec<Vec<TrainedExpert>>> {
    if levels.len() < cfg.levels {
        return Err(StackError::Layout(format!(
            "adaptation needs levels 0..{}, got {}",
            cfg.levels,
            levels.len()
        )));
    }
    (1..=cfg.levels)
        .map(|k| {
            let data = &levels[k - 1];
            if data.level != k - 1 {
                return Err(StackError::Layout(format!(
                    "expected level {} data, got {}",
                    k - 1,
                    data.level
                )));
            }
            let roster = resolved_roster(&cfg.rosters[k - 1]).map_err(|e| StackError::Config(e.to_string()))?;
            let blocks = data.block_ranges();
            let input = ExpertInput {
                features: &data.rows,
                labels: &data.labels,
                ids: &data.ids,
                num_classes: data.num_classes,
                blocks: &blocks,
            };
            roster
                .par_iter()
                .enumerate()
                .map(|(j, spec)| {
                    fit_expert(spec, &input, seed::derive(cfg.seed, &[0xADA9, k as u64, j as u64])).map_err(|source| {
                        StackError::Expert {
                            level: k,
                            expert: j,
                            kind: spec.kind(),
                            source,
                        }
                    })
                })
                .collect()
        })
        .collect()
}

/// The served predictor: adapted expert stacks plus meta parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperConeModel {
    pub meta: MetaParams,
    /// `stacks[k - 1][j]`: expert `j` of level `k`.
    pub stacks: Vec<Vec<TrainedExpert>>,
    pub layout: Vec<BlockInfo>,
    pub label_space: LabelSpace,
    pub vocab_size: usize,
}

impl SuperConeModel {
    /// Checks that stacks, layout and meta parameters agree on every width.
    pub fn validate(&self) -> Result<()> {
        let c = self.label_space.len();
        let s = &self.meta.structure;
        if s.concept_width != self.vocab_size || s.num_classes != c {
            return Err(StackError::Layout(
                "meta parameters disagree with vocab or label space".into(),
            ));
        }
        let mut layout = Vec::new();
        let mut width = self.vocab_size;
        for (k, stack) in self.stacks.iter().enumerate() {
            for e in stack {
                if e.input_width != width || e.num_classes != c {
                    return Err(StackError::Layout(format!(
                        "level {} expert {} expects width {}, layout gives {width}",
                        k + 1,
                        e.spec.kind(),
                        e.input_width
                    )));
                }
            }
            let specs: Vec<_> = stack.iter().map(|e| e.spec.clone()).collect();
            layout = extend_layout(&layout, width, k + 1, &specs, c);
            width += stack.len() * c;
        }
        if layout != self.layout || s.num_blocks != layout.len() {
            return Err(StackError::Layout("block layout disagrees with expert stacks".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.layout.len() + 1
    }

    /// Candidate names: the complementary expert, then every block.
    pub fn candidate_names(&self) -> Vec<String> {
        std::iter::once("complementary".to_string())
            .chain(self.layout.iter().map(|b| b.name.clone()))
            .collect()
    }

    pub fn densify(&self, c: &ConceptVector) -> Result<Vec<f64>> {
        Ok(c.densify(self.vocab_size)?)
    }

    /// Appends the blocks of level `level` (1-based) to `row`, which must
    /// hold the concepts and every earlier level's blocks.
    pub fn run_level(&self, level: usize, row: &mut Vec<f64>) -> Result<()> {
        let stack = &self.stacks[level - 1];
        let mut outs: Vec<ProbVector> = Vec::with_capacity(stack.len());
        for (j, e) in stack.iter().enumerate() {
            let p = e
                .predict_with_siblings(row, &outs)
                .map_err(|source| StackError::Expert {
                    level,
                    expert: j,
                    kind: e.spec.kind(),
                    source,
                })?;
            outs.push(p);
        }
        outs.iter().for_each(|p| row.extend_from_slice(p.as_slice()));
        Ok(())
    }

    /// Full augmented row for a dense concept vector.
    pub fn augment(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.vocab_size {
            return Err(StackError::Layout(format!(
                "concept width {} does not match vocab size {}",
                x.len(),
                self.vocab_size
            )));
        }
        let mut row = Vec::with_capacity(self.vocab_size + self.layout.len() * self.num_classes());
        row.extend_from_slice(x);
        for level in 1..=self.stacks.len() {
            self.run_level(level, &mut row)?;
        }
        Ok(row)
    }

    /// Combination of the complementary expert and live expert outputs, plus
    /// the combination weights.
    pub fn predict_dense_with_weights(&self, x: &[f64]) -> Result<(ProbVector, ProbVector)> {
        let row = self.augment(x)?;
        let c = self.num_classes();
        let blocks: Vec<&[f64]> = row[self.vocab_size..].chunks_exact(c).collect();
        Ok(self.meta.mixture(x, &blocks)?)
    }

    pub fn predict_dense(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(self.predict_dense_with_weights(x)?.0)
    }

    pub fn predict_final(&self, c: &ConceptVector) -> Result<ProbVector> {
        self.predict_dense(&self.densify(c)?)
    }

    pub fn combination_weights(&self, c: &ConceptVector) -> Result<ProbVector> {
        Ok(self.meta.forward_comb(&self.densify(c)?)?)
    }

    /// Predictions for every instance, in dataset order.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<ProbVector>> {
        self.check_dataset(data)?;
        data.instances()
            .par_iter()
            .map(|i| self.predict_final(&i.concepts))
            .collect()
    }

    /// Same vocabulary and the same class list.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.vocab_size() > self.vocab_size {
            return Err(DataError::VocabMismatch {
                index: data.vocab_size() - 1,
                vocab_size: self.vocab_size,
            }
            .into());
        }
        if data.label_space().classes() != self.label_space.classes() {
            return Err(DataError::LabelSpace("dataset classes differ from the model's".into()).into());
        }
        Ok(())
    }
}

/// Wall-clock seconds per training phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub build_levels: Vec<f64>,
    pub meta_train: f64,
    pub adapt: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SuperConeModel,
    pub trace: MetaTrace,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

/// Fold assignment and level construction for `1..=K`, meta training on the
/// top level, then expert adaptation.
pub fn train_supercone(cfg: &StackConfig, train: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(StackError::Empty);
    }
    let mut timings = Timings::default();
    let mut levels = vec![AugmentedDataset::from_dataset(train)?];
    let mut warnings = Vec::new();
    for k in 1..=cfg.levels {
        let start = Instant::now();
        let folds = assign_folds(train.len(), cfg.folds, k, cfg.seed)?;
        let prev = levels.last().expect("level 0 present");
        let next = build_meta_level(k, prev, &cfg.rosters[k - 1], &folds, seed::derive(cfg.seed, &[0xB11D]))?;
        warnings.extend(next.warnings.iter().cloned());
        levels.push(next);
        timings.build_levels.push(start.elapsed().as_secs_f64());
        log::info!("built level {k} in {:.2}s", timings.build_levels[k - 1]);
    }
    let top = levels.last().expect("level 0 present");
    let start = Instant::now();
    let (meta, trace) = meta_train(top, cfg)?;
    timings.meta_train = start.elapsed().as_secs_f64();
    log::info!(
        "meta training: loss {:.6} -> {:.6} in {:.2}s",
        trace.initial_loss,
        trace.final_loss(),
        timings.meta_train
    );
    let start = Instant::now();
    let stacks = adapt_experts(cfg, &levels)?;
    timings.adapt = start.elapsed().as_secs_f64();
    let model = SuperConeModel {
        meta,
        stacks,
        layout: top.layout.clone(),
        label_space: train.label_space().clone(),
        vocab_size: train.vocab_size(),
    };
    model.validate()?;
    Ok(TrainOutcome {
        model,
        trace,
        warnings,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub expert_name: String,
    pub mean_weight: f64,
}

/// Mean combination weight per candidate over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub entries: Vec<AttentionEntry>,
}

impl AttentionReport {
    /// `expert_name,mean_weight`, complementary first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("expert_name,mean_weight\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:.17e}\n", e.expert_name, e.mean_weight));
        }
        out
    }
}

pub fn attention_report(model: &SuperConeModel, data: &Dataset) -> Result<AttentionReport> {
    if data.is_empty() {
        return Err(StackError::Empty);
    }
    model.check_dataset(data)?;
    let mut sum = vec![0.0; model.num_candidates()];
    for inst in data.instances() {
        let w = model.combination_weights(&inst.concepts)?;
        sum.iter_mut().zip(w.as_slice()).for_each(|(s, v)| *s += v);
    }
    let n = data.len() as f64;
    Ok(AttentionReport {
        entries: model
            .candidate_names()
            .into_iter()
            .zip(sum)
            .map(|(expert_name, s)| AttentionEntry {
                expert_name,
                mean_weight: s / n,
            })
            .collect(),
    })
}
