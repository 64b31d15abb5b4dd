//! Architecture and partitioning hyperparameters, plus parameter/FLOP
//! accounting that depends only on the config.

use crate::error::{Error, Result};
use alloc::format;

/// Whether an accounting query covers the full model or a single expert
/// (shared input/output components plus one block partition).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    Full,
    Expert,
}

/// GPT-style decoder configuration with expert partitioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum sequence length T.
    pub ctx_len: usize,
    /// Blocks in the full model.
    pub n_layers_total: usize,
    pub n_experts: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Feed-forward inner width; conventionally `4 * d_model`.
    pub d_ff: usize,
    /// Share the token embedding with the output head.
    pub tie_head: bool,
}

impl ModelConfig {
    /// Config with `d_ff = 4 * d_model` and a tied head.
    pub fn new(
        vocab_size: usize,
        ctx_len: usize,
        n_layers_total: usize,
        n_experts: usize,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            vocab_size,
            ctx_len,
            n_layers_total,
            n_experts,
            d_model,
            n_heads,
            d_ff: 4 * d_model,
            tie_head: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("ctx_len", self.ctx_len),
            ("n_layers_total", self.n_layers_total),
            ("n_experts", self.n_experts),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return Err(Error::Input(format!("{name} must be positive")));
            }
        }
        if self.n_layers_total % self.n_experts != 0 {
            return Err(Error::Input(format!(
                "n_layers_total {} is not divisible by n_experts {}",
                self.n_layers_total, self.n_experts
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Input(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn layers_per_expert(&self) -> usize {
        self.n_layers_total / self.n_experts
    }

    /// Token id reserved as the ignore marker in loss targets: one past the
    /// vocabulary, so ragged batches need no mask tensor.
    pub fn ignore_token_id(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Scalars in one transformer block.
    pub fn params_per_block(&self) -> u64 {
        let d = self.d_model as u64;
        let dff = self.d_ff as u64;
        let ln = 2 * d; // gain + bias
        let qkv = 3 * d * d + 3 * d;
        let proj = d * d + d;
        let up = dff * d + dff;
        let down = d * dff + d;
        2 * ln + qkv + proj + up + down
    }

    /// Scalars in the shared input/output components (embeddings, final
    /// layernorm, head). The tied head is counted once, inside the token
    /// embedding.
    pub fn params_shared(&self) -> u64 {
        let d = self.d_model as u64;
        let mut n = self.vocab_size as u64 * d // token embedding
            + self.ctx_len as u64 * d // positional embedding
            + 2 * d; // final layernorm
        if !self.tie_head {
            n += self.vocab_size as u64 * d;
        }
        n
    }

    /// Exact scalar count of the full model or of one expert.
    pub fn count_params(&self, scope: ParamScope) -> u64 {
        let blocks = match scope {
            ParamScope::Full => self.n_layers_total as u64,
            ParamScope::Expert => self.layers_per_expert() as u64,
        };
        self.params_shared() + blocks * self.params_per_block()
    }

    /// Parameter + AdamW moment scalars resident while training the scoped
    /// model (weights, first moment, second moment).
    pub fn resident_training_scalars(&self, scope: ParamScope) -> u64 {
        3 * self.count_params(scope)
    }

    /// Matmul FLOPs per token through the scoped computation path, split by
    /// term. Attention score/value products are charged at the full context
    /// length.
    pub fn flops_breakdown(&self, scope: ParamScope) -> FlopsBreakdown {
        let d = self.d_model as u64;
        let dff = self.d_ff as u64;
        let t = self.ctx_len as u64;
        let blocks = match scope {
            ParamScope::Full => self.n_layers_total as u64,
            ParamScope::Expert => self.layers_per_expert() as u64,
        };
        let attn_per_block = 2 * d * 3 * d // qkv projection
            + 2 * t * d // scores
            + 2 * t * d // value mix
            + 2 * d * d; // output projection
        let ffn_per_block = 2 * d * dff + 2 * dff * d;
        FlopsBreakdown {
            attn: blocks * attn_per_block,
            ffn: blocks * ffn_per_block,
            head: 2 * d * self.vocab_size as u64,
        }
    }

    /// Total matmul FLOPs per token for the scoped path.
    pub fn flops_per_token(&self, scope: ParamScope) -> u64 {
        self.flops_breakdown(scope).total()
    }
}

/// Per-token FLOP count split into the terms that scale differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsBreakdown {
    /// Attention projections and score/value products, all scoped blocks.
    pub attn: u64,
    /// Feed-forward up/down projections, all scoped blocks.
    pub ffn: u64,
    /// Final head projection.
    pub head: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.attn + self.ffn + self.head
    }

    /// FLOPs of the block stack only (the part that scales with depth).
    pub fn encoder(&self) -> u64 {
        self.attn + self.ffn
    }
}
