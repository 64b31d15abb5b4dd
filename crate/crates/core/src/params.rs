//! Named dense parameter tensors grouped into input / block / output
//! components, plus the gradient container produced by the backward pass.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// One tensor slot inside a transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockField {
    Ln1Gain,
    Ln1Bias,
    QkvWeight,
    QkvBias,
    ProjWeight,
    ProjBias,
    Ln2Gain,
    Ln2Bias,
    UpWeight,
    UpBias,
    DownWeight,
    DownBias,
}

impl BlockField {
    /// Canonical serialization / iteration order.
    pub const ALL: [BlockField; 12] = [
        BlockField::Ln1Gain,
        BlockField::Ln1Bias,
        BlockField::QkvWeight,
        BlockField::QkvBias,
        BlockField::ProjWeight,
        BlockField::ProjBias,
        BlockField::Ln2Gain,
        BlockField::Ln2Bias,
        BlockField::UpWeight,
        BlockField::UpBias,
        BlockField::DownWeight,
        BlockField::DownBias,
    ];

    pub fn shape(self, cfg: &ModelConfig) -> Vec<usize> {
        let d = cfg.d_model;
        let dff = cfg.d_ff;
        match self {
            BlockField::Ln1Gain | BlockField::Ln1Bias => alloc::vec![d],
            BlockField::QkvWeight => alloc::vec![3 * d, d],
            BlockField::QkvBias => alloc::vec![3 * d],
            BlockField::ProjWeight => alloc::vec![d, d],
            BlockField::ProjBias => alloc::vec![d],
            BlockField::Ln2Gain | BlockField::Ln2Bias => alloc::vec![d],
            BlockField::UpWeight => alloc::vec![dff, d],
            BlockField::UpBias => alloc::vec![dff],
            BlockField::DownWeight => alloc::vec![d, dff],
            BlockField::DownBias => alloc::vec![d],
        }
    }

    pub fn is_gaussian_weight(self) -> bool {
        matches!(
            self,
            BlockField::QkvWeight
                | BlockField::ProjWeight
                | BlockField::UpWeight
                | BlockField::DownWeight
        )
    }

    /// Projections that write into the residual stream get the extra
    /// depth-dependent init scaling.
    pub fn is_residual_proj(self) -> bool {
        matches!(self, BlockField::ProjWeight | BlockField::DownWeight)
    }

    pub fn is_ln_gain(self) -> bool {
        matches!(self, BlockField::Ln1Gain | BlockField::Ln2Gain)
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockField::Ln1Gain => "ln1_gain",
            BlockField::Ln1Bias => "ln1_bias",
            BlockField::QkvWeight => "qkv_w",
            BlockField::QkvBias => "qkv_b",
            BlockField::ProjWeight => "proj_w",
            BlockField::ProjBias => "proj_b",
            BlockField::Ln2Gain => "ln2_gain",
            BlockField::Ln2Bias => "ln2_bias",
            BlockField::UpWeight => "up_w",
            BlockField::UpBias => "up_b",
            BlockField::DownWeight => "down_w",
            BlockField::DownBias => "down_b",
        }
    }
}

/// Stable identifier of one parameter tensor. Ordering is the canonical
/// serialization order: embeddings, blocks by ascending index, final
/// layernorm, untied head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamId {
    TokenEmbedding,
    PosEmbedding,
    Block(usize, BlockField),
    FinalLnGain,
    FinalLnBias,
    Head,
}

impl ParamId {
    pub fn name(self) -> String {
        match self {
            ParamId::TokenEmbedding => String::from("token_embedding"),
            ParamId::PosEmbedding => String::from("pos_embedding"),
            ParamId::Block(b, f) => format!("block{b}.{}", f.name()),
            ParamId::FinalLnGain => String::from("final_ln_gain"),
            ParamId::FinalLnBias => String::from("final_ln_bias"),
            ParamId::Head => String::from("head"),
        }
    }
}

/// The twelve tensors of one pre-LN transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub up_w: Tensor<T>,
    pub up_b: Tensor<T>,
    pub down_w: Tensor<T>,
    pub down_b: Tensor<T>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let t = |f: BlockField| Tensor::zeros(&f.shape(cfg));
        BlockParams {
            ln1_gain: t(BlockField::Ln1Gain),
            ln1_bias: t(BlockField::Ln1Bias),
            qkv_w: t(BlockField::QkvWeight),
            qkv_b: t(BlockField::QkvBias),
            proj_w: t(BlockField::ProjWeight),
            proj_b: t(BlockField::ProjBias),
            ln2_gain: t(BlockField::Ln2Gain),
            ln2_bias: t(BlockField::Ln2Bias),
            up_w: t(BlockField::UpWeight),
            up_b: t(BlockField::UpBias),
            down_w: t(BlockField::DownWeight),
            down_b: t(BlockField::DownBias),
        }
    }

    pub fn field(&self, f: BlockField) -> &Tensor<T> {
        match f {
            BlockField::Ln1Gain => &self.ln1_gain,
            BlockField::Ln1Bias => &self.ln1_bias,
            BlockField::QkvWeight => &self.qkv_w,
            BlockField::QkvBias => &self.qkv_b,
            BlockField::ProjWeight => &self.proj_w,
            BlockField::ProjBias => &self.proj_b,
            BlockField::Ln2Gain => &self.ln2_gain,
            BlockField::Ln2Bias => &self.ln2_bias,
            BlockField::UpWeight => &self.up_w,
            BlockField::UpBias => &self.up_b,
            BlockField::DownWeight => &self.down_w,
            BlockField::DownBias => &self.down_b,
        }
    }

    pub fn field_mut(&mut self, f: BlockField) -> &mut Tensor<T> {
        match f {
            BlockField::Ln1Gain => &mut self.ln1_gain,
            BlockField::Ln1Bias => &mut self.ln1_bias,
            BlockField::QkvWeight => &mut self.qkv_w,
            BlockField::QkvBias => &mut self.qkv_b,
            BlockField::ProjWeight => &mut self.proj_w,
            BlockField::ProjBias => &mut self.proj_b,
            BlockField::Ln2Gain => &mut self.ln2_gain,
            BlockField::Ln2Bias => &mut self.ln2_bias,
            BlockField::UpWeight => &mut self.up_w,
            BlockField::UpBias => &mut self.up_b,
            BlockField::DownWeight => &mut self.down_w,
            BlockField::DownBias => &mut self.down_b,
        }
    }

    pub fn scalar_count(&self) -> u64 {
        BlockField::ALL.iter().map(|&f| self.field(f).len() as u64).sum()
    }
}

/// All parameters of the full model, with the owning config embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub config: ModelConfig,
    /// `[vocab, d_model]`; doubles as the output head when tied.
    pub token_embedding: Tensor<T>,
    /// `[ctx_len, d_model]`.
    pub pos_embedding: Tensor<T>,
    /// `n_layers_total` blocks; block `b` belongs to partition
    /// `b / layers_per_expert`.
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln_gain: Tensor<T>,
    pub final_ln_bias: Tensor<T>,
    /// `[vocab, d_model]` when the head is untied, absent otherwise.
    pub head: Option<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// All-zero store (layernorm gains included; see `init_params` for the
    /// trained initialization).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        ParamStore {
            config: cfg.clone(),
            token_embedding: Tensor::zeros(&[cfg.vocab_size, d]),
            pos_embedding: Tensor::zeros(&[cfg.ctx_len, d]),
            blocks: (0..cfg.n_layers_total).map(|_| BlockParams::zeros(cfg)).collect(),
            final_ln_gain: Tensor::zeros(&[d]),
            final_ln_bias: Tensor::zeros(&[d]),
            head: if cfg.tie_head {
                None
            } else {
                Some(Tensor::zeros(&[cfg.vocab_size, d]))
            },
        }
    }

    /// Zero weights but unit layernorm gains: the reference "uniform output"
    /// model whose loss is exactly `ln(vocab_size)`.
    pub fn zeros_unit_ln(cfg: &ModelConfig) -> Self {
        let mut store = Self::zeros(cfg);
        let one = T::one();
        store.final_ln_gain.data_mut().fill(one);
        for block in &mut store.blocks {
            block.ln1_gain.data_mut().fill(one);
            block.ln2_gain.data_mut().fill(one);
        }
        store
    }

    pub fn tensor(&self, id: ParamId) -> Result<&Tensor<T>> {
        match id {
            ParamId::TokenEmbedding => Ok(&self.token_embedding),
            ParamId::PosEmbedding => Ok(&self.pos_embedding),
            ParamId::Block(b, f) => self
                .blocks
                .get(b)
                .map(|blk| blk.field(f))
                .ok_or_else(|| Error::Usage(format!("block index {b} out of range"))),
            ParamId::FinalLnGain => Ok(&self.final_ln_gain),
            ParamId::FinalLnBias => Ok(&self.final_ln_bias),
            ParamId::Head => self
                .head
                .as_ref()
                .ok_or_else(|| Error::Usage(String::from("head is tied to the token embedding"))),
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> Result<&mut Tensor<T>> {
        match id {
            ParamId::TokenEmbedding => Ok(&mut self.token_embedding),
            ParamId::PosEmbedding => Ok(&mut self.pos_embedding),
            ParamId::Block(b, f) => self
                .blocks
                .get_mut(b)
                .map(|blk| blk.field_mut(f))
                .ok_or_else(|| Error::Usage(format!("block index {b} out of range"))),
            ParamId::FinalLnGain => Ok(&mut self.final_ln_gain),
            ParamId::FinalLnBias => Ok(&mut self.final_ln_bias),
            ParamId::Head => self
                .head
                .as_mut()
                .ok_or_else(|| Error::Usage(String::from("head is tied to the token embedding"))),
        }
    }

    /// Every parameter id of the full model, in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        ids.push(ParamId::TokenEmbedding);
        ids.push(ParamId::PosEmbedding);
        for b in 0..self.blocks.len() {
            for f in BlockField::ALL {
                ids.push(ParamId::Block(b, f));
            }
        }
        ids.push(ParamId::FinalLnGain);
        ids.push(ParamId::FinalLnBias);
        if self.head.is_some() {
            ids.push(ParamId::Head);
        }
        ids
    }

    /// Ids of the shared input/output components, in canonical order.
    pub fn shared_param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![
            ParamId::TokenEmbedding,
            ParamId::PosEmbedding,
            ParamId::FinalLnGain,
            ParamId::FinalLnBias,
        ];
        if self.head.is_some() {
            ids.push(ParamId::Head);
        }
        ids
    }

    pub fn scalar_count(&self) -> u64 {
        self.param_ids()
            .into_iter()
            .map(|id| self.tensor(id).expect("id from param_ids").len() as u64)
            .sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for id in self.param_ids() {
            self.tensor(id)?.validate_finite(&id.name())?;
        }
        Ok(())
    }
}

const INIT_STD: f64 = 0.02;

/// Seeded initialization: weights ~ N(0, 0.02^2); residual projections
/// additionally scaled by `1/sqrt(2 * layers_per_expert)` (the executed
/// network is one partition deep); biases zero; layernorm gains one.
///
/// Draw order is the canonical parameter order with one gaussian per weight
/// element, so the same seed gives a bitwise-identical store.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, rng: &mut Rng) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::<T>::zeros(cfg);
    let resid_scale = 1.0 / libm::sqrt(2.0 * cfg.layers_per_expert() as f64);
    let var = INIT_STD * INIT_STD;

    let fill_gaussian = |t: &mut Tensor<T>, scale: f64, rng: &mut Rng| -> Result<()> {
        for v in t.data_mut() {
            *v = T::from_f64(rng.gaussian(var)? * scale);
        }
        Ok(())
    };

    fill_gaussian(&mut store.token_embedding, 1.0, rng)?;
    fill_gaussian(&mut store.pos_embedding, 1.0, rng)?;
    for block in &mut store.blocks {
        for f in BlockField::ALL {
            let tensor = block.field_mut(f);
            if f.is_gaussian_weight() {
                let scale = if f.is_residual_proj() { resid_scale } else { 1.0 };
                fill_gaussian(tensor, scale, rng)?;
            } else if f.is_ln_gain() {
                tensor.data_mut().fill(T::one());
            }
        }
    }
    store.final_ln_gain.data_mut().fill(T::one());
    if let Some(head) = store.head.as_mut() {
        fill_gaussian(head, 1.0, rng)?;
    }
    Ok(store)
}

/// Gradients for exactly one expert's tensors: the shared components plus
/// the blocks of that expert's partition. Tensors of other partitions are
/// absent, never merely zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore<T> {
    pub expert_id: usize,
    /// Global index of the first block in the partition.
    pub first_block: usize,
    pub token_embedding: Tensor<T>,
    pub pos_embedding: Tensor<T>,
    /// Partition blocks only, ascending; local index `b - first_block`.
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln_gain: Tensor<T>,
    pub final_ln_bias: Tensor<T>,
    pub head: Option<Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros(cfg: &ModelConfig, expert_id: usize) -> Self {
        let d = cfg.d_model;
        let lpe = cfg.layers_per_expert();
        GradStore {
            expert_id,
            first_block: expert_id * lpe,
            token_embedding: Tensor::zeros(&[cfg.vocab_size, d]),
            pos_embedding: Tensor::zeros(&[cfg.ctx_len, d]),
            blocks: (0..lpe).map(|_| BlockParams::zeros(cfg)).collect(),
            final_ln_gain: Tensor::zeros(&[d]),
            final_ln_bias: Tensor::zeros(&[d]),
            head: if cfg.tie_head {
                None
            } else {
                Some(Tensor::zeros(&[cfg.vocab_size, d]))
            },
        }
    }

    /// Gradient for the given parameter, or `None` when the tensor lies
    /// outside this expert.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        match id {
            ParamId::TokenEmbedding => Some(&self.token_embedding),
            ParamId::PosEmbedding => Some(&self.pos_embedding),
            ParamId::Block(b, f) => {
                let local = b.checked_sub(self.first_block)?;
                self.blocks.get(local).map(|blk| blk.field(f))
            }
            ParamId::FinalLnGain => Some(&self.final_ln_gain),
            ParamId::FinalLnBias => Some(&self.final_ln_bias),
            ParamId::Head => self.head.as_ref(),
        }
    }

    /// Ids covered by this gradient store, in canonical order.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![ParamId::TokenEmbedding, ParamId::PosEmbedding];
        for local in 0..self.blocks.len() {
            for f in BlockField::ALL {
                ids.push(ParamId::Block(self.first_block + local, f));
            }
        }
        ids.push(ParamId::FinalLnGain);
        ids.push(ParamId::FinalLnBias);
        if self.head.is_some() {
            ids.push(ParamId::Head);
        }
        ids
    }
}
