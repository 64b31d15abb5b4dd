//! GPT-2-style decoder (token+positional embedding, pre-LN blocks with causal
//! MHSA and a GELU FFN, final layernorm, tied output head) with hand-derived
//! forward and backward passes.
//!
//! A pass is instantiated per expert: it traverses the embedding, the blocks
//! of that expert's partition only, and the shared output component. Other
//! partitions are never read, so activation memory and compute scale with
//! `layers_per_expert`, not `n_layers_total`.

use crate::config::ModelConfig;
use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::ops;
use crate::params::{BlockParams, GradStore, ParamStore};
use crate::tensor::{Scalar, Tensor};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Cached forward intermediates for one block of the executed partition.
#[derive(Debug, Clone)]
struct BlockTape<T> {
    ln1_mean: Tensor<T>,
    ln1_rstd: Tensor<T>,
    ln1_out: Tensor<T>,
    qkv: Tensor<T>,
    att_probs: Tensor<T>,
    att_ctx: Tensor<T>,
    /// Residual stream after the attention branch (input to ln2).
    res_attn: Tensor<T>,
    ln2_mean: Tensor<T>,
    ln2_rstd: Tensor<T>,
    ln2_out: Tensor<T>,
    ffn_pre: Tensor<T>,
    ffn_act: Tensor<T>,
    /// Block output (next block's input).
    res_ffn: Tensor<T>,
}

/// Forward intermediates for one batch through one expert's blocks.
/// Depth equals `layers_per_expert`, never `n_layers_total`.
#[derive(Debug, Clone)]
pub struct ActivationTape<T> {
    expert_id: usize,
    batch_size: usize,
    seq_len: usize,
    tokens: Vec<u32>,
    embedded: Tensor<T>,
    blocks: Vec<BlockTape<T>>,
    final_ln_mean: Tensor<T>,
    final_ln_rstd: Tensor<T>,
    final_ln_out: Tensor<T>,
    logits: Tensor<T>,
}

impl<T> ActivationTape<T> {
    pub fn expert_id(&self) -> usize {
        self.expert_id
    }

    /// Number of cached block entries (the executed partition depth).
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

fn validate_tokens(cfg: &ModelConfig, batch: &TokenBatch) -> Result<()> {
    if batch.seq_len > cfg.ctx_len {
        return Err(Error::Input(format!(
            "seq_len {} exceeds ctx_len {}",
            batch.seq_len, cfg.ctx_len
        )));
    }
    if batch.inputs.len() != batch.batch_size * batch.seq_len {
        return Err(Error::ShapeMismatch(format!(
            "inputs length {} != batch {} x seq {}",
            batch.inputs.len(),
            batch.batch_size,
            batch.seq_len
        )));
    }
    for (pos, &tok) in batch.inputs.iter().enumerate() {
        if tok as usize >= cfg.vocab_size {
            return Err(Error::Input(format!(
                "input token {tok} at flat position {pos} is out of range for vocab {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(())
}

/// Runs the embedding, the blocks of partition `expert_id` in ascending
/// order, the final layernorm, and the (tied) head. Attention is causal.
pub fn forward<T: Scalar>(
    params: &ParamStore<T>,
    expert_id: usize,
    batch: &TokenBatch,
) -> Result<(Tensor<T>, ActivationTape<T>)> {
    let cfg = &params.config;
    if expert_id >= cfg.n_experts {
        return Err(Error::Input(format!(
            "expert_id {expert_id} out of range for {} experts",
            cfg.n_experts
        )));
    }
    validate_tokens(cfg, batch)?;

    let (b, t, d) = (batch.batch_size, batch.seq_len, cfg.d_model);
    let (h, dff, vocab) = (cfg.n_heads, cfg.d_ff, cfg.vocab_size);
    let bt = b * t;
    let lpe = cfg.layers_per_expert();
    let first_block = expert_id * lpe;

    let mut embedded = Tensor::zeros(&[bt, d]);
    ops::encoder_forward(
        embedded.data_mut(),
        &batch.inputs,
        params.token_embedding.data(),
        params.pos_embedding.data(),
        b,
        t,
        d,
    );

    let mut blocks = Vec::with_capacity(lpe);
    let mut x = embedded.clone();
    for li in 0..lpe {
        let p = &params.blocks[first_block + li];

        let mut ln1_out = Tensor::zeros(&[bt, d]);
        let mut ln1_mean = Tensor::zeros(&[bt]);
        let mut ln1_rstd = Tensor::zeros(&[bt]);
        ops::layernorm_forward(
            ln1_out.data_mut(),
            ln1_mean.data_mut(),
            ln1_rstd.data_mut(),
            x.data(),
            p.ln1_gain.data(),
            p.ln1_bias.data(),
            bt,
            d,
        );

        let mut qkv = Tensor::zeros(&[bt, 3 * d]);
        ops::linear_forward(
            qkv.data_mut(),
            ln1_out.data(),
            p.qkv_w.data(),
            Some(p.qkv_b.data()),
            bt,
            d,
            3 * d,
        );

        let mut att_ctx = Tensor::zeros(&[bt, d]);
        let mut att_probs = Tensor::zeros(&[b * h, t, t]);
        ops::attention_forward(att_ctx.data_mut(), att_probs.data_mut(), qkv.data(), b, t, d, h);

        let mut att_out = vec![T::zero(); bt * d];
        ops::linear_forward(
            &mut att_out,
            att_ctx.data(),
            p.proj_w.data(),
            Some(p.proj_b.data()),
            bt,
            d,
            d,
        );
        let mut res_attn = Tensor::zeros(&[bt, d]);
        for i in 0..bt * d {
            res_attn.data_mut()[i] = x.data()[i] + att_out[i];
        }

        let mut ln2_out = Tensor::zeros(&[bt, d]);
        let mut ln2_mean = Tensor::zeros(&[bt]);
        let mut ln2_rstd = Tensor::zeros(&[bt]);
        ops::layernorm_forward(
            ln2_out.data_mut(),
            ln2_mean.data_mut(),
            ln2_rstd.data_mut(),
            res_attn.data(),
            p.ln2_gain.data(),
            p.ln2_bias.data(),
            bt,
            d,
        );

        let mut ffn_pre = Tensor::zeros(&[bt, dff]);
        ops::linear_forward(
            ffn_pre.data_mut(),
            ln2_out.data(),
            p.up_w.data(),
            Some(p.up_b.data()),
            bt,
            d,
            dff,
        );
        let mut ffn_act = Tensor::zeros(&[bt, dff]);
        ops::gelu_forward(ffn_act.data_mut(), ffn_pre.data());

        let mut ffn_out = vec![T::zero(); bt * d];
        ops::linear_forward(
            &mut ffn_out,
            ffn_act.data(),
            p.down_w.data(),
            Some(p.down_b.data()),
            bt,
            dff,
            d,
        );
        let mut res_ffn = Tensor::zeros(&[bt, d]);
        for i in 0..bt * d {
            res_ffn.data_mut()[i] = res_attn.data()[i] + ffn_out[i];
        }

        x = res_ffn.clone();
        blocks.push(BlockTape {
            ln1_mean,
            ln1_rstd,
            ln1_out,
            qkv,
            att_probs,
            att_ctx,
            res_attn,
            ln2_mean,
            ln2_rstd,
            ln2_out,
            ffn_pre,
            ffn_act,
            res_ffn,
        });
    }

    let mut final_ln_out = Tensor::zeros(&[bt, d]);
    let mut final_ln_mean = Tensor::zeros(&[bt]);
    let mut final_ln_rstd = Tensor::zeros(&[bt]);
    ops::layernorm_forward(
        final_ln_out.data_mut(),
        final_ln_mean.data_mut(),
        final_ln_rstd.data_mut(),
        x.data(),
        params.final_ln_gain.data(),
        params.final_ln_bias.data(),
        bt,
        d,
    );

    let head_w = match &params.head {
        Some(w) => w,
        None => &params.token_embedding,
    };
    let mut logits = Tensor::zeros(&[b, t, vocab]);
    ops::linear_forward(logits.data_mut(), final_ln_out.data(), head_w.data(), None, bt, d, vocab);
    logits.validate_finite("logits")?;

    let tape = ActivationTape {
        expert_id,
        batch_size: b,
        seq_len: t,
        tokens: batch.inputs.clone(),
        embedded,
        blocks,
        final_ln_mean,
        final_ln_rstd,
        final_ln_out,
        logits: logits.clone(),
    };
    Ok((logits, tape))
}

fn validate_targets(vocab: usize, ignore_id: u32, logits: &Tensor<impl Scalar>, batch: &TokenBatch) -> Result<(usize, usize)> {
    let (b, t) = match logits.shape() {
        [b, t, v] if *v == vocab => (*b, *t),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "logits shape {s:?} does not end in vocab {vocab}"
            )))
        }
    };
    if b != batch.batch_size || t != batch.seq_len {
        return Err(Error::ShapeMismatch(format!(
            "logits are {b}x{t} but targets are {}x{}",
            batch.batch_size, batch.seq_len
        )));
    }
    for (pos, &tok) in batch.targets.iter().enumerate() {
        if tok != ignore_id && tok as usize >= vocab {
            return Err(Error::Input(format!(
                "target token {tok} at flat position {pos} is out of range for vocab {vocab}"
            )));
        }
    }
    Ok((b, t))
}

/// Mean cross-entropy over all non-ignored (batch, position) pairs. The
/// ignore marker is the id equal to the vocabulary size.
pub fn loss<T: Scalar>(logits: &Tensor<T>, targets: &TokenBatch) -> Result<T> {
    let vocab = *logits.shape().last().ok_or_else(|| {
        Error::ShapeMismatch("logits must be [batch, seq, vocab]".into())
    })?;
    let ignore_id = vocab as u32;
    let (b, t) = validate_targets(vocab, ignore_id, logits, targets)?;
    let (sum, count) = ops::xent_sum(logits.data(), &targets.targets, ignore_id, b * t, vocab);
    if count == 0 {
        return Err(Error::Domain("all target positions are ignored".into()));
    }
    Ok(T::from_f64(sum / count as f64))
}

/// Backward pass through the same expert path the tape was recorded on.
/// Returns gradients for exactly the expert's tensors; other partitions are
/// absent from the result.
pub fn backward<T: Scalar>(
    params: &ParamStore<T>,
    expert_id: usize,
    tape: &ActivationTape<T>,
    targets: &TokenBatch,
) -> Result<GradStore<T>> {
    let cfg = &params.config;
    if tape.expert_id != expert_id {
        return Err(Error::Usage(format!(
            "tape was recorded for expert {} but backward was asked for expert {expert_id}",
            tape.expert_id
        )));
    }
    let (b, t, d) = (tape.batch_size, tape.seq_len, cfg.d_model);
    let (h, dff, vocab) = (cfg.n_heads, cfg.d_ff, cfg.vocab_size);
    let bt = b * t;
    let ignore_id = cfg.ignore_token_id();
    let (_, _) = validate_targets(vocab, ignore_id, &tape.logits, targets)?;
    let (_, n_valid) =
        ops::xent_sum(tape.logits.data(), &targets.targets, ignore_id, bt, vocab);
    if n_valid == 0 {
        return Err(Error::Domain("all target positions are ignored".into()));
    }

    let mut grads = GradStore::zeros(cfg, expert_id);

    let mut dlogits = vec![T::zero(); bt * vocab];
    ops::xent_backward(
        &mut dlogits,
        tape.logits.data(),
        &targets.targets,
        ignore_id,
        bt,
        vocab,
        n_valid,
    );

    // Head: logits = final_ln_out @ head_w^T (no bias). Tied weights route
    // the head gradient into the token embedding.
    let head_w = match &params.head {
        Some(w) => w.data(),
        None => params.token_embedding.data(),
    };
    let dhead = match grads.head.as_mut() {
        Some(t) => t.data_mut(),
        None => grads.token_embedding.data_mut(),
    };
    let mut dfinal = vec![T::zero(); bt * d];
    ops::linear_backward(
        Some(&mut dfinal),
        dhead,
        None,
        &dlogits,
        tape.final_ln_out.data(),
        head_w,
        bt,
        d,
        vocab,
    );
    drop(dlogits);

    // Final layernorm; its raw input is the last block's output.
    let lpe = cfg.layers_per_expert();
    let first_block = expert_id * lpe;
    let final_in = tape.blocks.last().map(|bl| &bl.res_ffn).unwrap_or(&tape.embedded);
    let mut dres = vec![T::zero(); bt * d];
    ops::layernorm_backward(
        &mut dres,
        grads.final_ln_gain.data_mut(),
        grads.final_ln_bias.data_mut(),
        &dfinal,
        final_in.data(),
        tape.final_ln_mean.data(),
        tape.final_ln_rstd.data(),
        params.final_ln_gain.data(),
        bt,
        d,
    );
    drop(dfinal);

    for li in (0..lpe).rev() {
        let p = &params.blocks[first_block + li];
        let g: &mut BlockParams<T> = &mut grads.blocks[li];
        let tape_bl = &tape.blocks[li];
        let block_in = if li == 0 { &tape.embedded } else { &tape.blocks[li - 1].res_ffn };

        // FFN branch: res_ffn = res_attn + down(gelu(up(ln2(res_attn)))).
        let mut d_res_attn = dres.clone();
        let mut dffn_act = vec![T::zero(); bt * dff];
        ops::linear_backward(
            Some(&mut dffn_act),
            g.down_w.data_mut(),
            Some(g.down_b.data_mut()),
            &dres,
            tape_bl.ffn_act.data(),
            p.down_w.data(),
            bt,
            dff,
            d,
        );
        let mut dffn_pre = vec![T::zero(); bt * dff];
        ops::gelu_backward(&mut dffn_pre, &dffn_act, tape_bl.ffn_pre.data());
        drop(dffn_act);
        let mut dln2_out = vec![T::zero(); bt * d];
        ops::linear_backward(
            Some(&mut dln2_out),
            g.up_w.data_mut(),
            Some(g.up_b.data_mut()),
            &dffn_pre,
            tape_bl.ln2_out.data(),
            p.up_w.data(),
            bt,
            d,
            dff,
        );
        drop(dffn_pre);
        ops::layernorm_backward(
            &mut d_res_attn,
            g.ln2_gain.data_mut(),
            g.ln2_bias.data_mut(),
            &dln2_out,
            tape_bl.res_attn.data(),
            tape_bl.ln2_mean.data(),
            tape_bl.ln2_rstd.data(),
            p.ln2_gain.data(),
            bt,
            d,
        );
        drop(dln2_out);

        // Attention branch: res_attn = block_in + proj(attn(qkv(ln1(block_in)))).
        let mut dx = d_res_attn.clone();
        let mut datt_ctx = vec![T::zero(); bt * d];
        ops::linear_backward(
            Some(&mut datt_ctx),
            g.proj_w.data_mut(),
            Some(g.proj_b.data_mut()),
            &d_res_attn,
            tape_bl.att_ctx.data(),
            p.proj_w.data(),
            bt,
            d,
            d,
        );
        drop(d_res_attn);
        let mut dqkv = vec![T::zero(); bt * 3 * d];
        ops::attention_backward(
            &mut dqkv,
            &datt_ctx,
            tape_bl.qkv.data(),
            tape_bl.att_probs.data(),
            b,
            t,
            d,
            h,
        );
        drop(datt_ctx);
        let mut dln1_out = vec![T::zero(); bt * d];
        ops::linear_backward(
            Some(&mut dln1_out),
            g.qkv_w.data_mut(),
            Some(g.qkv_b.data_mut()),
            &dqkv,
            tape_bl.ln1_out.data(),
            p.qkv_w.data(),
            bt,
            d,
            3 * d,
        );
        drop(dqkv);
        ops::layernorm_backward(
            &mut dx,
            g.ln1_gain.data_mut(),
            g.ln1_bias.data_mut(),
            &dln1_out,
            block_in.data(),
            tape_bl.ln1_mean.data(),
            tape_bl.ln1_rstd.data(),
            p.ln1_gain.data(),
            bt,
            d,
        );
        dres = dx;
    }

    ops::encoder_backward(
        grads.token_embedding.data_mut(),
        grads.pos_embedding.data_mut(),
        &dres,
        &tape.tokens,
        b,
        t,
        d,
    );
    Ok(grads)
}
