//! `eoe` — train expert-partitioned GPT models with evolutionary operators.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or format error.

use clap::{Parser, Subcommand};
use eoe_cli::{
    deterministic_mode, evaluate, format_sig6, load_checkpoint, load_run_config, read_shard,
    train, write_shard, CliError,
};
use eoe_core::{ParamScope, Rng};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "eoe", version, about = "Evolutionary optimization of experts for GPT training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Byte-tokenize a text file (vocab 256) into a token shard.
    Prepare {
        /// Input text file.
        input: PathBuf,
        /// Output shard path.
        output: PathBuf,
    },
    /// Run the training loop described by a config file.
    Train {
        /// `key = value` config file.
        config: PathBuf,
        /// Override config values, e.g. `--set train.total_steps=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a saved best-expert checkpoint on a shard.
    Eval {
        checkpoint: PathBuf,
        shard: PathBuf,
        /// Number of sampled batches.
        #[arg(long, default_value_t = 8)]
        batches: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Defaults to min(256, checkpoint ctx_len).
        #[arg(long)]
        seq_len: Option<usize>,
    },
    /// Print header fields and tensor inventory of a shard or checkpoint.
    Inspect { path: PathBuf },
}

fn cmd_prepare(input: &PathBuf, output: &PathBuf) -> Result<(), CliError> {
    let bytes = std::fs::read(input)
        .map_err(|e| CliError::Usage(format!("reading {}: {e}", input.display())))?;
    let tokens: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
    write_shard(output, &tokens, 256)?;
    println!("wrote {} tokens (vocab 256) to {}", tokens.len(), output.display());
    Ok(())
}

fn cmd_train(config: &PathBuf, overrides: &[String]) -> Result<(), CliError> {
    let rc = load_run_config(config, overrides)?;
    let train_shard = read_shard(&rc.shard_path)?;
    let val_shard = match &rc.val_shard_path {
        Some(p) => Some(read_shard(p)?),
        None => None,
    };
    let outcome = train(&rc.model, &rc.train, &train_shard, val_shard.as_ref())?;
    match &outcome.best {
        Some(b) => println!(
            "final best loss {} (expert {} at step {}); checkpoint {}",
            format_sig6(b.loss as f64),
            b.source_expert_id,
            b.step_taken,
            rc.train.checkpoint_path.display()
        ),
        None => println!("no steps run; no checkpoint written"),
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &PathBuf,
    shard: &PathBuf,
    batches: u64,
    seed: u64,
    batch_size: usize,
    seq_len: Option<usize>,
) -> Result<(), CliError> {
    let (cfg, params, _meta) = load_checkpoint(checkpoint)?;
    let shard = read_shard(shard)?;
    if shard.vocab_size() as usize != cfg.vocab_size {
        return Err(CliError::Usage(format!(
            "shard vocab {} does not match checkpoint vocab {}",
            shard.vocab_size(),
            cfg.vocab_size
        )));
    }
    let seq_len = seq_len.unwrap_or(cfg.ctx_len.min(256));
    let mut rng = Rng::from_seed(seed);
    let mean = evaluate(&params, 0, &shard, batches, batch_size, seq_len, &mut rng)?;
    println!("{}", format_sig6(mean));
    Ok(())
}

fn cmd_inspect(path: &PathBuf) -> Result<(), CliError> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)
            .map_err(|e| CliError::Usage(format!("opening {}: {e}", path.display())))?;
        f.read_exact(&mut magic)
            .map_err(|_| CliError::Usage(format!("{} is too short to identify", path.display())))?;
    }
    match &magic {
        b"EOET" => {
            let shard = read_shard(path)?;
            println!("format: token shard (EOET v1)");
            println!("vocab_size: {}", shard.vocab_size());
            println!("token_count: {}", shard.token_count());
            println!("token_width: {} bytes", if shard.is_u16() { 2 } else { 4 });
        }
        b"EOEC" => {
            let (cfg, store, meta) = load_checkpoint(path)?;
            println!("format: best-expert checkpoint (EOEC v1)");
            println!("vocab_size: {}", cfg.vocab_size);
            println!("ctx_len: {}", cfg.ctx_len);
            println!("n_layers: {}", cfg.n_layers_total);
            println!("d_model: {}", cfg.d_model);
            println!("n_heads: {}", cfg.n_heads);
            println!("d_ff: {}", cfg.d_ff);
            println!("tie_head: {}", cfg.tie_head);
            println!("source_expert_id: {}", meta.source_expert_id);
            println!("best_loss: {}", format_sig6(meta.best_loss));
            println!("step_taken: {}", meta.step_taken);
            println!("tensors:");
            let mut total: u64 = 0;
            for id in store.param_ids() {
                let t = store.tensor(id).expect("id from param_ids");
                println!("  {:<24} {:?}", id.name(), t.shape());
                total += t.len() as u64;
            }
            println!("total_scalars: {total}");
            println!(
                "expert_params: {}",
                cfg.count_params(ParamScope::Expert)
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "{}: unknown magic {other:?} (expected EOET or EOEC)",
                path.display()
            )))
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare { input, output } => cmd_prepare(input, output),
        Command::Train { config, set } => cmd_train(config, set),
        Command::Eval {
            checkpoint,
            shard,
            batches,
            seed,
            batch_size,
            seq_len,
        } => cmd_eval(checkpoint, shard, *batches, *seed, *batch_size, *seq_len),
        Command::Inspect { path } => cmd_inspect(path),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if deterministic_mode() {
        log::debug!("deterministic mode: throughput reported as zero");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
