//! Plain-text run configuration: `key = value` lines with `#` comments and
//! dotted sections. Unknown keys are rejected with their line number; every
//! key has a default except the model dimensions and the paths.

use crate::error::CliError;
use crate::trainer::TrainConfig;
use eoe_core::{AdamWConfig, EvoConfig, EvoOperator, LrSchedule, ModelConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// `(key, default)`; `None` marks a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("model.vocab_size", None),
    ("model.ctx_len", None),
    ("model.n_layers", None),
    ("model.n_experts", None),
    ("model.d_model", None),
    ("model.n_heads", None),
    // d_ff defaults to 4 * model.d_model; seq_len to min(256, model.ctx_len).
    ("model.d_ff", Some("")),
    ("model.tie_head", Some("true")),
    ("train.shard", None),
    ("train.val_shard", Some("")),
    ("train.checkpoint_path", None),
    ("train.metrics_path", None),
    ("train.total_steps", Some("1000")),
    ("train.batches_per_expert", Some("32")),
    ("train.batch_size", Some("8")),
    ("train.seq_len", Some("")),
    ("train.eval_every", Some("0")),
    ("train.eval_batches", Some("8")),
    ("train.seed", Some("42")),
    ("adamw.lr", Some("0.0003")),
    ("adamw.beta1", Some("0.9")),
    ("adamw.beta2", Some("0.999")),
    ("adamw.eps", Some("1e-8")),
    ("adamw.weight_decay", Some("0")),
    ("adamw.schedule", Some("constant")),
    ("adamw.warmup_steps", Some("100")),
    ("adamw.min_lr_fraction", Some("0.1")),
    ("adamw.grad_clip", Some("0")),
    ("evo.enabled", Some("true")),
    ("evo.r_social", Some("0.1")),
    ("evo.r_c", Some("0.01")),
    ("evo.r_m", Some("0.001")),
    ("evo.mutation_scale", Some("1")),
    ("evo.operator_order", Some("pso,crossover,mutation")),
];

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub shard_path: PathBuf,
    pub val_shard_path: Option<PathBuf>,
}

fn known_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    fn get(&self, key: &str) -> Result<&str, CliError> {
        match self.values.get(key).map(String::as_str) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(CliError::Usage(format!("missing required key {key}"))),
        }
    }

    fn get_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| CliError::Usage(format!("key {key} has invalid value {v:?}")))
    }

    fn parse_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(CliError::Usage(format!("key {key} must be true or false, got {v:?}"))),
        }
    }
}

/// Parses config text plus `key=value` command-line overrides (overrides
/// win over file values, file values over defaults).
pub fn parse_run_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut values: BTreeMap<String, String> = KEYS
        .iter()
        .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
        .collect();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("line {line_no}: expected `key = value`, got {raw:?}"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !known_key(key) {
            return Err(CliError::Usage(format!("line {line_no}: unknown key {key:?}")));
        }
        if let Some(first) = seen.insert(key.to_string(), line_no) {
            return Err(CliError::Usage(format!(
                "line {line_no}: key {key:?} already set on line {first}"
            )));
        }
        values.insert(key.to_string(), value.to_string());
    }

    for ov in overrides {
        let (key, value) = ov.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("override {ov:?}: expected key=value"))
        })?;
        let key = key.trim();
        if !known_key(key) {
            return Err(CliError::Usage(format!("override: unknown key {key:?}")));
        }
        values.insert(key.to_string(), value.trim().to_string());
    }

    build(Resolved { values })
}

fn build(r: Resolved) -> Result<RunConfig, CliError> {
    let d_model: usize = r.parse("model.d_model")?;
    let ctx_len: usize = r.parse("model.ctx_len")?;
    let model = ModelConfig {
        vocab_size: r.parse("model.vocab_size")?,
        ctx_len,
        n_layers_total: r.parse("model.n_layers")?,
        n_experts: r.parse("model.n_experts")?,
        d_model,
        n_heads: r.parse("model.n_heads")?,
        d_ff: match r.get_opt("model.d_ff") {
            Some(_) => r.parse("model.d_ff")?,
            None => 4 * d_model,
        },
        tie_head: r.parse_bool("model.tie_head")?,
    };
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let schedule = match r.get("adamw.schedule")? {
        "constant" => LrSchedule::Constant,
        "warmup-cosine" => LrSchedule::WarmupCosine {
            warmup_steps: r.parse("adamw.warmup_steps")?,
            min_lr_fraction: r.parse("adamw.min_lr_fraction")?,
        },
        v => {
            return Err(CliError::Usage(format!(
                "adamw.schedule must be constant or warmup-cosine, got {v:?}"
            )))
        }
    };
    let adamw = AdamWConfig {
        lr: r.parse("adamw.lr")?,
        beta1: r.parse("adamw.beta1")?,
        beta2: r.parse("adamw.beta2")?,
        eps: r.parse("adamw.eps")?,
        weight_decay: r.parse("adamw.weight_decay")?,
        schedule,
        grad_clip: r.parse("adamw.grad_clip")?,
    };
    adamw.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let operator_order = r
        .get("evo.operator_order")?
        .split(',')
        .map(|s| match s.trim() {
            "pso" => Ok(EvoOperator::Pso),
            "crossover" => Ok(EvoOperator::Crossover),
            "mutation" => Ok(EvoOperator::Mutation),
            other => Err(CliError::Usage(format!(
                "evo.operator_order entry must be pso, crossover, or mutation, got {other:?}"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let evo = EvoConfig {
        r_social: r.parse("evo.r_social")?,
        r_c: r.parse("evo.r_c")?,
        r_m: r.parse("evo.r_m")?,
        mutation_scale: r.parse("evo.mutation_scale")?,
        operator_order,
        enabled: r.parse_bool("evo.enabled")?,
    };
    evo.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let seq_len = match r.get_opt("train.seq_len") {
        Some(_) => r.parse("train.seq_len")?,
        None => ctx_len.min(256),
    };
    let train = TrainConfig {
        total_steps: r.parse("train.total_steps")?,
        batches_per_expert: r.parse("train.batches_per_expert")?,
        batch_size: r.parse("train.batch_size")?,
        seq_len,
        eval_every: r.parse("train.eval_every")?,
        eval_batches: r.parse("train.eval_batches")?,
        seed: r.parse("train.seed")?,
        adamw,
        evo,
        checkpoint_path: PathBuf::from(r.get("train.checkpoint_path")?),
        metrics_path: PathBuf::from(r.get("train.metrics_path")?),
        deterministic: crate::deterministic_mode(),
    };
    train
        .validate(&model)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    Ok(RunConfig {
        model,
        train,
        shard_path: PathBuf::from(r.get("train.shard")?),
        val_shard_path: r.get_opt("train.val_shard").map(PathBuf::from),
    })
}

pub fn load_run_config(
    path: impl AsRef<std::path::Path>,
    overrides: &[String],
) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        CliError::Usage(format!("reading config {}: {e}", path.as_ref().display()))
    })?;
    parse_run_config(&text, overrides)
}
