//! Training loop: expert rotation, AdamW + evolutionary steps, best-expert
//! tracking, metrics, periodic evaluation, and best-expert checkpointing.

use crate::checkpoint::save_best_checkpoint;
use crate::error::CliError;
use crate::metrics::{MetricsRecord, MetricsWriter};
use eoe_core::{
    adamw_step, apply_evolution, backward, forward, init_params, loss, lr_at, make_experts,
    maybe_update_best, sample_batch, AdamWConfig, AdamWState, BestExpertSnapshot, Error,
    EvoConfig, ModelConfig, ParamStore, Rng, Scalar, TokenShard,
};
use eoe_core::rng::derive_seed;
use std::path::PathBuf;
use std::time::Instant;

// Sub-seed stream indices derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_EVO: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Rotation interval: consecutive batches given to one expert.
    pub batches_per_expert: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Evaluate every this many steps; 0 disables evaluation.
    pub eval_every: u64,
    pub eval_batches: u64,
    pub seed: u64,
    pub adamw: AdamWConfig,
    pub evo: EvoConfig,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    /// Report zero throughput so outputs are byte-stable across runs.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<(), Error> {
        model.validate()?;
        self.adamw.validate()?;
        self.evo.validate()?;
        if self.batches_per_expert == 0 || self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Input(
                "batches_per_expert, batch_size, and seq_len must be positive".into(),
            ));
        }
        if self.seq_len > model.ctx_len {
            return Err(Error::Input(format!(
                "seq_len {} exceeds model ctx_len {}",
                self.seq_len, model.ctx_len
            )));
        }
        if self.eval_every > 0 && self.eval_batches == 0 {
            return Err(Error::Input("eval_batches must be positive when evaluating".into()));
        }
        Ok(())
    }
}

/// Expert trained at a given global step under round-robin rotation.
pub fn expert_for_step(step: u64, batches_per_expert: u64, n_experts: usize) -> usize {
    ((step / batches_per_expert) % n_experts as u64) as usize
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub best: Option<BestExpertSnapshot<f32>>,
    /// Validation losses emitted by periodic evaluation, `(step, loss)`.
    pub eval_losses: Vec<(u64, f64)>,
}

/// Mean loss over `n_batches` sampled batches through the given expert's
/// path; parameters are untouched.
pub fn evaluate<T: Scalar>(
    params: &ParamStore<T>,
    expert_id: usize,
    shard: &TokenShard,
    n_batches: u64,
    batch_size: usize,
    seq_len: usize,
    rng: &mut Rng,
) -> Result<f64, Error> {
    if n_batches == 0 {
        return Err(Error::Input("n_batches must be positive".into()));
    }
    let mut sum = 0.0f64;
    for _ in 0..n_batches {
        let batch = sample_batch(shard, batch_size, seq_len, rng)?;
        let (logits, _) = forward(params, expert_id, &batch)?;
        sum += loss(&logits, &batch)?.as_f64();
    }
    Ok(sum / n_batches as f64)
}

/// Runs the full evolutionary training loop.
///
/// Per step: pick the rotation expert, sample a batch, forward, loss,
/// backward, AdamW, best-expert update, evolutionary operators, metrics row.
/// The final best expert is written to `checkpoint_path` when one exists.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_shard: &TokenShard,
    val_shard: Option<&TokenShard>,
) -> Result<TrainOutcome, CliError> {
    cfg.validate(model).map_err(|e| CliError::Usage(e.to_string()))?;
    if train_shard.vocab_size() as usize != model.vocab_size {
        return Err(CliError::Usage(format!(
            "shard vocab {} does not match model vocab {}",
            train_shard.vocab_size(),
            model.vocab_size
        )));
    }

    let mut init_rng = Rng::from_seed(derive_seed(cfg.seed, STREAM_INIT));
    let mut data_rng = Rng::from_seed(derive_seed(cfg.seed, STREAM_DATA));
    let mut evo_rng = Rng::from_seed(derive_seed(cfg.seed, STREAM_EVO));
    let mut eval_rng = Rng::from_seed(derive_seed(cfg.seed, STREAM_EVAL));

    let mut params =
        init_params::<f32>(model, &mut init_rng).map_err(|e| CliError::Usage(e.to_string()))?;
    let experts = make_experts(model, &params).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut state = AdamWState::<f32>::new();
    let mut best: Option<BestExpertSnapshot<f32>> = None;
    let mut metrics =
        MetricsWriter::create(&cfg.metrics_path).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut eval_losses = Vec::new();

    let abort = |step: u64, e: Error| CliError::Runtime(format!("step {step}: {e}"));

    for step in 0..cfg.total_steps {
        let expert_id = expert_for_step(step, cfg.batches_per_expert, model.n_experts);
        let expert = &experts[expert_id];
        let batch = sample_batch(train_shard, cfg.batch_size, cfg.seq_len, &mut data_rng)
            .map_err(|e| abort(step, e))?;

        let started = Instant::now();
        let (logits, tape) = forward(&params, expert_id, &batch).map_err(|e| abort(step, e))?;
        let batch_loss = loss(&logits, &batch).map_err(|e| abort(step, e))?;
        if !batch_loss.is_finite() {
            return Err(abort(step, Error::NonFinite(format!("batch loss {batch_loss}"))));
        }
        let grads = backward(&params, expert_id, &tape, &batch).map_err(|e| abort(step, e))?;
        adamw_step(&mut params, expert, &grads, &mut state, &cfg.adamw, step, cfg.total_steps)
            .map_err(|e| abort(step, e))?;
        best = maybe_update_best(best, expert, &params, batch_loss, step);
        let report = apply_evolution(
            &mut params,
            expert,
            best.as_ref(),
            &state,
            &cfg.evo,
            &cfg.adamw,
            &mut evo_rng,
        )
        .map_err(|e| abort(step, e))?;

        let tokens_per_sec = if cfg.deterministic {
            0.0
        } else {
            let secs = started.elapsed().as_secs_f64();
            if secs > 0.0 {
                (cfg.batch_size * cfg.seq_len) as f64 / secs
            } else {
                0.0
            }
        };
        metrics
            .append(&MetricsRecord {
                step,
                expert_id,
                train_loss: batch_loss.as_f64(),
                best_loss: best.as_ref().map(|b| b.loss.as_f64()).unwrap_or(f64::INFINITY),
                lr: lr_at(&cfg.adamw, step, cfg.total_steps),
                tokens_per_sec,
                copied: report.copied,
                mutated: report.mutated,
            })
            .map_err(|e| abort(step, e))?;

        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let shard = val_shard.unwrap_or(train_shard);
            let val_loss = evaluate(
                &params,
                expert_id,
                shard,
                cfg.eval_batches,
                cfg.batch_size,
                cfg.seq_len,
                &mut eval_rng,
            )
            .map_err(|e| abort(step, e))?;
            eval_losses.push((step, val_loss));
            println!("step {step} expert {expert_id} val_loss {}", crate::format_sig6(val_loss));
        }
    }

    if let Some(b) = &best {
        save_best_checkpoint(&params, b, &cfg.checkpoint_path)
            .map_err(|e| CliError::Runtime(format!("writing checkpoint: {e}")))?;
    }
    Ok(TrainOutcome {
        params,
        best,
        eval_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use eoe_core::ParamScope;

    fn tiny_model() -> ModelConfig {
        ModelConfig::new(256, 32, 4, 2, 16, 2).unwrap()
    }

    fn shard() -> TokenShard {
        let tokens: Vec<u32> = (0..500u32).map(|i| (i * 31 + 7) % 256).collect();
        TokenShard::new(256, &tokens).unwrap()
    }

    fn cfg(dir: &std::path::Path, steps: u64) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batches_per_expert: 3,
            batch_size: 2,
            seq_len: 16,
            eval_every: 0,
            eval_batches: 2,
            seed: 9,
            adamw: AdamWConfig::default(),
            evo: EvoConfig::default(),
            checkpoint_path: dir.join("best.eoec"),
            metrics_path: dir.join("metrics.csv"),
            deterministic: true,
        }
    }

    #[test]
    fn rotation_schedule() {
        let sched: Vec<usize> = (0..9).map(|s| expert_for_step(s, 3, 2)).collect();
        assert_eq!(sched, vec![0, 0, 0, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn zero_steps_returns_init_and_no_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model();
        let out = train(&model, &cfg(dir.path(), 0), &shard(), None).unwrap();
        assert!(out.best.is_none());
        assert_eq!(out.params.scalar_count(), model.count_params(ParamScope::Full));
        // Metrics file exists with just the header.
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(!dir.path().join("best.eoec").exists());
    }

    #[test]
    fn metrics_row_per_step_and_monotone_best() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny_model(), &cfg(dir.path(), 12), &shard(), None).unwrap();
        assert!(out.best.is_some());
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 12);
        let mut last = f64::INFINITY;
        for row in rows {
            let best: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
            assert!(best <= last);
            last = best;
        }
        assert!(dir.path().join("best.eoec").exists());
    }

    #[test]
    fn two_runs_same_seed_are_byte_identical() {
        let model = tiny_model();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train(&model, &cfg(d1.path(), 8), &shard(), None).unwrap();
        train(&model, &cfg(d2.path(), 8), &shard(), None).unwrap();
        let m1 = std::fs::read(d1.path().join("metrics.csv")).unwrap();
        let m2 = std::fs::read(d2.path().join("metrics.csv")).unwrap();
        assert_eq!(m1, m2);
        let c1 = std::fs::read(d1.path().join("best.eoec")).unwrap();
        let c2 = std::fs::read(d2.path().join("best.eoec")).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn evaluate_is_deterministic_and_pure() {
        let model = tiny_model();
        let params = init_params::<f32>(&model, &mut Rng::from_seed(1)).unwrap();
        let reference = params.clone();
        let s = shard();
        let a = evaluate(&params, 0, &s, 4, 2, 16, &mut Rng::from_seed(2)).unwrap();
        let b = evaluate(&params, 0, &s, 4, 2, 16, &mut Rng::from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(params, reference);
    }

    #[test]
    fn evaluate_uniform_model_is_log_vocab() {
        let model = tiny_model();
        let params = ParamStore::<f32>::zeros_unit_ln(&model);
        let got = evaluate(&params, 0, &shard(), 3, 2, 16, &mut Rng::from_seed(3)).unwrap();
        assert!((got - 256f64.ln()).abs() < 1e-5, "{got}");
    }

    #[test]
    fn evaluate_single_window_shard_matches_direct_average() {
        // A shard with exactly one window: every sampled batch is that
        // window, so the mean equals the full-corpus average exactly.
        let model = tiny_model();
        let params = init_params::<f32>(&model, &mut Rng::from_seed(4)).unwrap();
        let tokens: Vec<u32> = (0..17u32).map(|i| i * 3 % 256).collect();
        let s = TokenShard::new(256, &tokens).unwrap();
        let got = evaluate(&params, 0, &s, 5, 1, 16, &mut Rng::from_seed(5)).unwrap();

        let batch = sample_batch(&s, 1, 16, &mut Rng::from_seed(6)).unwrap();
        let (logits, _) = forward(&params, 0, &batch).unwrap();
        let direct = loss(&logits, &batch).unwrap().as_f64();
        assert!((got - direct).abs() < 1e-6 * direct.abs().max(1.0));
    }

    #[test]
    fn mismatched_shard_vocab_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let tokens: Vec<u32> = (0..100).collect();
        let s = TokenShard::new(128, &tokens).unwrap();
        assert!(matches!(
            train(&tiny_model(), &cfg(dir.path(), 1), &s, None),
            Err(CliError::Usage(_))
        ));
    }
}
