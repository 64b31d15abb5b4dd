//! Best-expert checkpoint format: a standalone `layers_per_expert`-deep
//! model assembled from the live shared components and the frozen best
//! partition.
//!
//! Layout, little-endian throughout:
//!   magic "EOEC" (4 bytes) | version u32 = 1 | header_len u32 |
//!   header (canonical `key = value` text) | raw f32 tensors
//! Tensor order: token_embedding, pos_embedding, partition blocks ascending
//! (twelve tensors each in canonical field order), final layernorm gain and
//! bias, then the head when untied.

use eoe_core::{
    BestExpertSnapshot, BlockField, Error, ModelConfig, ParamStore, Tensor,
};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EOEC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance of a saved best expert.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub source_expert_id: usize,
    pub best_loss: f64,
    pub step_taken: u64,
}

/// Builds the standalone single-expert model a checkpoint stores: shared
/// input/output tensors from the live store, blocks from the snapshot.
pub fn materialize_best(
    params: &ParamStore<f32>,
    best: &BestExpertSnapshot<f32>,
) -> Result<(ModelConfig, ParamStore<f32>), Error> {
    let src = &params.config;
    if best.partition_copy.len() != src.layers_per_expert() {
        return Err(Error::Usage(format!(
            "snapshot holds {} blocks but the config partitions into {}",
            best.partition_copy.len(),
            src.layers_per_expert()
        )));
    }
    let cfg = ModelConfig {
        n_layers_total: src.layers_per_expert(),
        n_experts: 1,
        ..src.clone()
    };
    let mut store = ParamStore::<f32>::zeros(&cfg);
    store.token_embedding = params.token_embedding.clone();
    store.pos_embedding = params.pos_embedding.clone();
    store.blocks = best.partition_copy.clone();
    store.final_ln_gain = params.final_ln_gain.clone();
    store.final_ln_bias = params.final_ln_bias.clone();
    store.head = params.head.clone();
    Ok((cfg, store))
}

fn header_text(cfg: &ModelConfig, meta: &CheckpointMeta) -> String {
    // Canonical key order; floats use shortest-roundtrip formatting.
    format!(
        "vocab_size = {}\nctx_len = {}\nn_layers = {}\nn_experts = {}\nd_model = {}\n\
         n_heads = {}\nd_ff = {}\ntie_head = {}\nsource_expert_id = {}\nbest_loss = {}\n\
         step_taken = {}\n",
        cfg.vocab_size,
        cfg.ctx_len,
        cfg.n_layers_total,
        cfg.n_experts,
        cfg.d_model,
        cfg.n_heads,
        cfg.d_ff,
        cfg.tie_head,
        meta.source_expert_id,
        meta.best_loss,
        meta.step_taken
    )
}

fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> std::io::Result<()> {
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn checkpoint_tensors(store: &ParamStore<f32>) -> Vec<&Tensor<f32>> {
    let mut out = vec![&store.token_embedding, &store.pos_embedding];
    for block in &store.blocks {
        for f in BlockField::ALL {
            out.push(block.field(f));
        }
    }
    out.push(&store.final_ln_gain);
    out.push(&store.final_ln_bias);
    if let Some(head) = &store.head {
        out.push(head);
    }
    out
}

/// Saves only the best expert: a standalone model with `n_layers` equal to
/// the partition depth.
pub fn save_best_checkpoint(
    params: &ParamStore<f32>,
    best: &BestExpertSnapshot<f32>,
    path: impl AsRef<Path>,
) -> Result<(), Error> {
    let (cfg, store) = materialize_best(params, best)?;
    let meta = CheckpointMeta {
        source_expert_id: best.source_expert_id,
        best_loss: best.loss as f64,
        step_taken: best.step_taken,
    };
    let io_err = |e: std::io::Error| Error::Input(format!("writing {}: {e}", path.as_ref().display()));

    let file = File::create(path.as_ref()).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let header = header_text(&cfg, &meta);
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(header.as_bytes()).map_err(io_err)?;
    for t in checkpoint_tensors(&store) {
        write_tensor(&mut w, t).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn parse_header(text: &str) -> Result<(ModelConfig, CheckpointMeta), Error> {
    let mut pairs = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("checkpoint header line without '=': {line:?}"))
        })?;
        if pairs.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("duplicate header key {:?}", k.trim())));
        }
    }
    let mut get = |key: &str| -> Result<String, Error> {
        pairs
            .remove(key)
            .ok_or_else(|| Error::Format(format!("checkpoint header missing key {key:?}")))
    };
    fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T, Error> {
        v.parse()
            .map_err(|_| Error::Format(format!("checkpoint header key {key:?} has bad value {v:?}")))
    }

    let cfg = ModelConfig {
        vocab_size: num("vocab_size", get("vocab_size")?)?,
        ctx_len: num("ctx_len", get("ctx_len")?)?,
        n_layers_total: num("n_layers", get("n_layers")?)?,
        n_experts: num("n_experts", get("n_experts")?)?,
        d_model: num("d_model", get("d_model")?)?,
        n_heads: num("n_heads", get("n_heads")?)?,
        d_ff: num("d_ff", get("d_ff")?)?,
        tie_head: match get("tie_head")?.as_str() {
            "true" => true,
            "false" => false,
            v => return Err(Error::Format(format!("tie_head must be true/false, got {v:?}"))),
        },
    };
    let meta = CheckpointMeta {
        source_expert_id: num("source_expert_id", get("source_expert_id")?)?,
        best_loss: num("best_loss", get("best_loss")?)?,
        step_taken: num("step_taken", get("step_taken")?)?,
    };
    if let Some(key) = pairs.keys().next() {
        return Err(Error::Format(format!("unknown checkpoint header key {key:?}")));
    }
    cfg.validate()?;
    Ok((cfg, meta))
}

fn read_exact_or_length(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), Error> {
    r.read_exact(buf)
        .map_err(|_| Error::Length(format!("checkpoint truncated while reading {what}")))
}

/// Loads a checkpoint back into a standalone model usable by
/// `forward`/`evaluate`; every byte is validated.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ModelConfig, ParamStore<f32>, CheckpointMeta), Error> {
    let file = File::open(path.as_ref())
        .map_err(|e| Error::Input(format!("opening {}: {e}", path.as_ref().display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or_length(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut word = [0u8; 4];
    read_exact_or_length(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    read_exact_or_length(&mut r, &mut word, "header length")?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header = vec![0u8; header_len];
    read_exact_or_length(&mut r, &mut header, "header")?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let (cfg, meta) = parse_header(&header)?;

    let mut store = ParamStore::<f32>::zeros(&cfg);
    {
        let ids = store.param_ids();
        for id in ids {
            let tensor = store.tensor_mut(id)?;
            let mut bytes = vec![0u8; tensor.len() * 4];
            read_exact_or_length(&mut r, &mut bytes, &id.name())?;
            for (slot, chunk) in tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *slot = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::Input(format!("read: {e}")))? != 0 {
        return Err(Error::Length(
            "checkpoint has trailing bytes after the declared tensors".into(),
        ));
    }
    store.validate_finite()?;
    Ok((cfg, store, meta))
}

/// Scalar count a checkpoint stores for this source config (the expert
/// scope of the accounting op).
pub fn checkpoint_scalar_count(cfg: &ModelConfig) -> u64 {
    cfg.count_params(eoe_core::ParamScope::Expert)
}
