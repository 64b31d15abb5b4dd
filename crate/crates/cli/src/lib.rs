//! Training driver, binary file formats, and CLI plumbing on top of the
//! `eoe-core` algorithms.

pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod runconfig;
pub mod shard_io;
pub mod trainer;

pub use checkpoint::{load_checkpoint, materialize_best, save_best_checkpoint, CheckpointMeta};
pub use error::CliError;
pub use metrics::{format_sig6, MetricsRecord, MetricsWriter, METRICS_HEADER};
pub use runconfig::{load_run_config, parse_run_config, RunConfig};
pub use shard_io::{decode_shard, encode_shard, read_shard, write_shard};
pub use trainer::{evaluate, train, TrainConfig, TrainOutcome};

/// Deterministic mode is forced by `EOE_DETERMINISTIC=1`: throughput is
/// reported as zero so metrics files are byte-stable across runs.
pub fn deterministic_mode() -> bool {
    std::env::var("EOE_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}
