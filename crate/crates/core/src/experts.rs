//! Expert partitioning and best-expert tracking.
//!
//! An expert is the shared input/output components plus one contiguous
//! partition of blocks. The best expert is kept as a frozen snapshot of its
//! partition (shared tensors are aliased by every expert, so only partitions
//! differ), taken at the step its loss was observed.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{BlockParams, ParamId, ParamStore};
use crate::tensor::Scalar;
use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

/// Index view of one expert: which blocks it owns and which tensors it
/// shares. Holds no data; resolve against the owning `ParamStore`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertView {
    pub expert_id: usize,
    /// Half-open global block range `[id * lpe, (id+1) * lpe)`.
    pub block_range: Range<usize>,
}

impl ExpertView {
    /// Parameter ids of this expert (shared + partition), canonical order.
    pub fn param_ids<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<ParamId> {
        let mut ids = alloc::vec![ParamId::TokenEmbedding, ParamId::PosEmbedding];
        for b in self.block_range.clone() {
            for f in crate::params::BlockField::ALL {
                ids.push(ParamId::Block(b, f));
            }
        }
        ids.push(ParamId::FinalLnGain);
        ids.push(ParamId::FinalLnBias);
        if store.head.is_some() {
            ids.push(ParamId::Head);
        }
        ids
    }

    /// Deep copy of the partition blocks, ascending.
    pub fn copy_partition<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<BlockParams<T>> {
        store.blocks[self.block_range.clone()].to_vec()
    }
}

/// Splits the model into `n_experts` contiguous, disjoint, covering block
/// ranges in ascending order.
pub fn make_experts<T: Scalar>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Vec<ExpertView>> {
    cfg.validate()?;
    if store.config != *cfg {
        return Err(Error::Usage(format!(
            "parameter store was built for a different config ({:?} vs {:?})",
            store.config, cfg
        )));
    }
    if store.blocks.len() != cfg.n_layers_total {
        return Err(Error::Usage(format!(
            "store has {} blocks, config wants {}",
            store.blocks.len(),
            cfg.n_layers_total
        )));
    }
    let lpe = cfg.layers_per_expert();
    Ok((0..cfg.n_experts)
        .map(|id| ExpertView {
            expert_id: id,
            block_range: id * lpe..(id + 1) * lpe,
        })
        .collect())
}

/// Frozen copy of the best expert's partition and the loss that earned it.
#[derive(Debug, Clone, PartialEq)]
pub struct BestExpertSnapshot<T> {
    pub source_expert_id: usize,
    /// Minimal batch loss observed so far.
    pub loss: T,
    /// Deep copy of the partition at the step the snapshot was taken.
    pub partition_copy: Vec<BlockParams<T>>,
    pub step_taken: u64,
}

/// Replaces the snapshot when `batch_loss` strictly improves on it (ties
/// keep the incumbent). A non-finite loss is rejected with a warning and the
/// snapshot is returned unchanged.
pub fn maybe_update_best<T: Scalar>(
    best: Option<BestExpertSnapshot<T>>,
    expert: &ExpertView,
    store: &ParamStore<T>,
    batch_loss: T,
    step: u64,
) -> Option<BestExpertSnapshot<T>> {
    if !batch_loss.is_finite() {
        log::warn!(
            "ignoring non-finite batch loss {batch_loss} from expert {} at step {step}",
            expert.expert_id
        );
        return best;
    }
    let improves = match &best {
        None => true,
        Some(b) => batch_loss < b.loss,
    };
    if improves {
        Some(BestExpertSnapshot {
            source_expert_id: expert.expert_id,
            loss: batch_loss,
            partition_copy: expert.copy_partition(store),
            step_taken: step,
        })
    } else {
        best
    }
}
