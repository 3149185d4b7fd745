use rand::seq::SliceRandom;

use super::{split_row, AugmentedDataset, Result, StackConfig, StackError};
use crate::neural::{adam_step, AdamConfig, AdamState, MetaParams, MetaStructure};
use crate::seed;

/// Mean training loss before the first update and after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrace {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl MetaTrace {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }

    /// `epoch,loss` with one row per epoch, epochs counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{l:.17e}\n", e + 1));
        }
        out
    }
}

/// Fits the meta parameters against the frozen blocks of `aug` with Adam on
/// seeded mini-batches (or full batches).
pub fn meta_train(aug: &AugmentedDataset, cfg: &StackConfig) -> Result<(MetaParams, MetaTrace)> {
    if aug.is_empty() {
        return Err(StackError::Empty);
    }
    let structure = MetaStructure {
        concept_width: aug.concept_width,
        num_classes: aug.num_classes,
        num_blocks: aug.layout.len(),
        levels: aug.level,
        folds: cfg.folds,
        neural: cfg.neural.clone(),
    };
    // blocks must sit contiguously after the concepts, one class row each
    for (t, b) in aug.layout.iter().enumerate() {
        if b.range.offset != aug.concept_width + t * aug.num_classes || b.range.width != aug.num_classes {
            return Err(StackError::Layout(format!(
                "block {} is not in canonical position",
                b.name
            )));
        }
    }
    let rows: Vec<Vec<f64>> = aug
        .rows
        .iter_rows()
        .map(|r| {
            let (mut concepts, blocks) = split_row(r, aug.concept_width, &aug.layout)?;
            blocks.iter().for_each(|b| concepts.extend_from_slice(b));
            Ok(concepts)
        })
        .collect::<Result<_>>()?;
    let labels = &aug.labels;

    let mut params = MetaParams::init(structure, seed::derive(cfg.seed, &[0x3E7A]))?;
    let adam = AdamConfig::with_lr(cfg.optimizer.lr);
    let mut state = AdamState::new(&params);
    let initial_loss = params.loss(&rows, labels)?;
    let mut epoch_losses = Vec::with_capacity(cfg.optimizer.epochs);
    let batch = if cfg.optimizer.full_batch {
        rows.len()
    } else {
        cfg.optimizer.batch_size
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..cfg.optimizer.epochs {
        if !cfg.optimizer.full_batch {
            order.shuffle(&mut seed::rng(cfg.seed, &[0x5A4F, epoch as u64]));
        }
        for (b, chunk) in order.chunks(batch).enumerate() {
            let batch_rows: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = params
                .loss_and_gradients(&batch_rows, &batch_labels)
                .map_err(|e| match e {
                    crate::neural::NeuralError::NonFiniteLoss(loss) => StackError::Diverged { epoch, batch: b, loss },
                    other => other.into(),
                })?;
            log::trace!("epoch {epoch} batch {b}: loss {loss}");
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
        let loss = params.loss(&rows, labels).map_err(|e| match e {
            crate::neural::NeuralError::NonFiniteLoss(loss) => StackError::Diverged {
                epoch,
                batch: usize::MAX,
                loss,
            },
            other => other.into(),
        })?;
        log::debug!("epoch {}: loss {loss:.6}", epoch + 1);
        epoch_losses.push(loss);
    }
    Ok((
        params,
        MetaTrace {
            initial_loss,
            epoch_losses,
        },
    ))
}
