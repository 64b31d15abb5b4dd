//! End-to-end behavior of the `eoe` binary: exit codes, command outputs,
//! and idempotence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn eoe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eoe"))
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = eoe();
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    let text = format!(
        "model.vocab_size = 256\n\
         model.ctx_len = 32\n\
         model.n_layers = 2\n\
         model.n_experts = 2\n\
         model.d_model = 16\n\
         model.n_heads = 2\n\
         train.shard = {shard}\n\
         train.checkpoint_path = {ckpt}\n\
         train.metrics_path = {metrics}\n\
         train.total_steps = 6\n\
         train.batches_per_expert = 2\n\
         train.batch_size = 2\n\
         train.seq_len = 16\n\
         {extra}",
        shard = dir.join("corpus.eoet").display(),
        ckpt = dir.join("best.eoec").display(),
        metrics = dir.join("metrics.csv").display(),
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn prepare_corpus(dir: &Path) {
    let text: String = "the quick brown fox jumps over the lazy dog. ".repeat(30);
    let input = dir.join("corpus.txt");
    std::fs::write(&input, &text).unwrap();
    let out = run(
        &[
            "prepare",
            input.to_str().unwrap(),
            dir.join("corpus.eoet").to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn prepare_writes_byte_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("abc.txt");
    std::fs::write(&input, "abc").unwrap();
    let shard = dir.path().join("abc.eoet");
    let out = run(
        &["prepare", input.to_str().unwrap(), shard.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success());
    let loaded = eoe_cli::read_shard(&shard).unwrap();
    assert_eq!(loaded.tokens_u32(), vec![97, 98, 99]);
    assert_eq!(loaded.vocab_size(), 256);

    // Empty input is a valid zero-token shard.
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let shard2 = dir.path().join("empty.eoet");
    let out = run(
        &["prepare", empty.to_str().unwrap(), shard2.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success());
    assert_eq!(std::fs::metadata(&shard2).unwrap().len(), 20);
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "hello shards").unwrap();
    let a = dir.path().join("a.eoet");
    let b = dir.path().join("b.eoet");
    run(&["prepare", input.to_str().unwrap(), a.to_str().unwrap()], &[]);
    run(&["prepare", input.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn train_produces_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let config = write_config(dir.path(), "");
    let out = run(
        &["train", config.to_str().unwrap()],
        &[("EOE_DETERMINISTIC", "1")],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("final best loss"));

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7); // header + 6 steps
    assert!(metrics.starts_with(eoe_cli::METRICS_HEADER));
    assert!(dir.path().join("best.eoec").exists());
}

#[test]
fn train_missing_required_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let config = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("model.d_model = 16\n", "");
    std::fs::write(&config, text).unwrap();
    let out = run(&["train", config.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model.d_model"), "{}", stderr(&out));
}

#[test]
fn train_unknown_key_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let config = write_config(dir.path(), "model.striped = yes\n");
    let out = run(&["train", config.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("line 14") && msg.contains("model.striped"), "{msg}");
}

#[test]
fn train_same_seed_twice_identical_checkpoints() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [d1.path(), d2.path()] {
        prepare_corpus(d);
        let config = write_config(d, "");
        let out = run(
            &["train", config.to_str().unwrap()],
            &[("EOE_DETERMINISTIC", "1")],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(
        std::fs::read(d1.path().join("best.eoec")).unwrap(),
        std::fs::read(d2.path().join("best.eoec")).unwrap()
    );
}

#[test]
fn eval_prints_log_vocab_for_fresh_uniform_model() {
    // A checkpoint holding an all-zero-weight unit-gain model evaluates to
    // exactly ln(vocab) on any shard.
    let dir = tempfile::tempdir().unwrap();
    prepare_corpus(dir.path());
    let cfg = eoe_core::ModelConfig::new(256, 32, 2, 1, 16, 2).unwrap();
    let params = eoe_core::ParamStore::<f32>::zeros_unit_ln(&cfg);
    let experts = eoe_core::make_experts(&cfg, &params).unwrap();
    let best = eoe_core::maybe_update_best(None, &experts[0], &params, 5.0f32, 0).unwrap();
    let ckpt = dir.path().join("uniform.eoec");
    eoe_cli::save_best_checkpoint(&params, &best, &ckpt).unwrap();

    let out = run(
        &[
            "eval",
            ckpt.to_str().unwrap(),
            dir.path().join("corpus.eoet").to_str().unwrap(),
            "--batches",
            "2",
            "--seq-len",
            "16",
            "--seed",
            "7",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let printed: f64 = stdout(&out).trim().parse().unwrap();
    assert!((printed - 256f64.ln()).abs() < 1e-4, "{printed}");

    // Same seed, same output text.
    let again = run(
        &[
            "eval",
            ckpt.to_str().unwrap(),
            dir.path().join("corpus.eoet").to_str().unwrap(),
            "--batches",
            "2",
            "--seq-len",
            "16",
            "--seed",
            "7",
        ],
        &[],
    );
    assert_eq!(stdout(&out), stdout(&again));
}

#[test]
fn eval_on_undersized_shard_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eoe_core::ModelConfig::new(256, 32, 2, 1, 16, 2).unwrap();
    let params = eoe_core::ParamStore::<f32>::zeros_unit_ln(&cfg);
    let experts = eoe_core::make_experts(&cfg, &params).unwrap();
    let best = eoe_core::maybe_update_best(None, &experts[0], &params, 5.0f32, 0).unwrap();
    let ckpt = dir.path().join("m.eoec");
    eoe_cli::save_best_checkpoint(&params, &best, &ckpt).unwrap();

    // 5 tokens cannot fill a 16-token window.
    let shard = dir.path().join("tiny.eoet");
    eoe_cli::write_shard(&shard, &[1, 2, 3, 4, 5], 256).unwrap();
    let out = run(
        &[
            "eval",
            ckpt.to_str().unwrap(),
            shard.to_str().unwrap(),
            "--seq-len",
            "16",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("capacity"), "{}", stderr(&out));
}

#[test]
fn inspect_shard_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("s.eoet");
    eoe_cli::write_shard(&shard, &(0..100u32).collect::<Vec<_>>(), 256).unwrap();
    let out = run(&["inspect", shard.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("token_count: 100"), "{text}");
    assert!(text.contains("vocab_size: 256"), "{text}");

    let cfg = eoe_core::ModelConfig::new(64, 16, 4, 2, 16, 2).unwrap();
    let params =
        eoe_core::init_params::<f32>(&cfg, &mut eoe_core::Rng::from_seed(3)).unwrap();
    let experts = eoe_core::make_experts(&cfg, &params).unwrap();
    let best = eoe_core::maybe_update_best(None, &experts[1], &params, 3.0f32, 9).unwrap();
    let ckpt = dir.path().join("c.eoec");
    eoe_cli::save_best_checkpoint(&params, &best, &ckpt).unwrap();
    let out = run(&["inspect", ckpt.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let text = stdout(&out);
    let expert_params = cfg.count_params(eoe_core::ParamScope::Expert);
    assert!(text.contains(&format!("total_scalars: {expert_params}")), "{text}");
    assert!(text.contains(&format!("expert_params: {expert_params}")), "{text}");
    assert!(text.contains("token_embedding"), "{text}");
    assert!(text.contains("n_layers: 2"), "{text}");
}

#[test]
fn inspect_garbage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"not a real file").unwrap();
    let out = run(&["inspect", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_bad_checkpoint_format_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.eoec");
    std::fs::write(&ckpt, b"EOECgarbagegarbage").unwrap();
    let shard = dir.path().join("s.eoet");
    eoe_cli::write_shard(&shard, &(0..40u32).collect::<Vec<_>>(), 256).unwrap();
    let out = run(&["eval", ckpt.to_str().unwrap(), shard.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
}
