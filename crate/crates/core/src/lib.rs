//! Evolutionary optimization of experts (EOE) for decoder-only transformers.
//!
//! A full model of `n_layers_total` blocks is split into `n_experts` equal
//! partitions. Each expert is the union of the shared input component
//! (token + positional embeddings), one contiguous block partition, and the
//! shared output component (final layernorm + head). Experts are trained one
//! at a time with AdamW; after every optimizer step the current expert is
//! pulled toward the best expert seen so far by three evolutionary operators
//! (PSO social pull, one-way crossover, gaussian mutation). Only the best
//! expert is kept for inference.
//!
//! This crate is `no_std`-compatible (with `alloc`); all file formats and the
//! training driver live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
pub mod data;
pub mod error;
pub mod evo;
pub mod experts;
pub mod model;
mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use config::{FlopsBreakdown, ModelConfig, ParamScope};
pub use data::{sample_batch, TokenBatch, TokenShard};
pub use error::{Error, Result};
pub use evo::{apply_evolution, crossover, mutate, pso_pull, EvoConfig, EvoOperator, EvoReport};
pub use experts::{make_experts, maybe_update_best, BestExpertSnapshot, ExpertView};
pub use model::{backward, forward, loss, ActivationTape};
pub use optim::{adamw_step, lr_at, AdamWConfig, AdamWState, LrSchedule};
pub use params::{init_params, BlockField, BlockParams, GradStore, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{finite_diff_grad, matmul, Scalar, Tensor};
