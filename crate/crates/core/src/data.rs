//! Tokenized corpus storage and deterministic batch sampling.
//!
//! The on-disk shard format lives in the CLI crate; this module owns the
//! validated in-memory form and the sampler.

use crate::error::{Error, Result};
use crate::rng::Rng;
use alloc::format;
use alloc::vec::Vec;

/// Token payload, width chosen by vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenData {
    U16(Vec<u16>),
    U32(Vec<u32>),
}

/// A validated tokenized corpus: every id is `< vocab_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenShard {
    vocab_size: u32,
    data: TokenData,
}

fn check_vocab(vocab_size: u32) -> Result<()> {
    if vocab_size == 0 {
        return Err(Error::Input("vocab_size must be positive".into()));
    }
    Ok(())
}

fn check_token(vocab_size: u32, token: u32, index: usize) -> Result<()> {
    if token >= vocab_size {
        return Err(Error::Input(format!(
            "token {token} at index {index} is out of range for vocab_size {vocab_size}"
        )));
    }
    Ok(())
}

impl TokenShard {
    /// Builds a shard from 32-bit ids, narrowing to u16 storage when the
    /// vocabulary fits. Errors with the index of the first out-of-range id.
    pub fn new(vocab_size: u32, tokens: &[u32]) -> Result<Self> {
        check_vocab(vocab_size)?;
        for (i, &t) in tokens.iter().enumerate() {
            check_token(vocab_size, t, i)?;
        }
        let data = if vocab_size <= u16::MAX as u32 {
            TokenData::U16(tokens.iter().map(|&t| t as u16).collect())
        } else {
            TokenData::U32(tokens.to_vec())
        };
        Ok(TokenShard { vocab_size, data })
    }

    /// Takes ownership of an already-narrow payload; lets file readers
    /// validate without a widened intermediate copy.
    pub fn from_u16(vocab_size: u32, tokens: Vec<u16>) -> Result<Self> {
        check_vocab(vocab_size)?;
        if vocab_size > u16::MAX as u32 {
            return Err(Error::Usage(format!(
                "vocab_size {vocab_size} does not fit a u16 payload"
            )));
        }
        for (i, &t) in tokens.iter().enumerate() {
            check_token(vocab_size, t as u32, i)?;
        }
        Ok(TokenShard {
            vocab_size,
            data: TokenData::U16(tokens),
        })
    }

    /// Takes ownership of a wide payload (vocabularies beyond u16).
    pub fn from_u32(vocab_size: u32, tokens: Vec<u32>) -> Result<Self> {
        check_vocab(vocab_size)?;
        for (i, &t) in tokens.iter().enumerate() {
            check_token(vocab_size, t, i)?;
        }
        Ok(TokenShard {
            vocab_size,
            data: TokenData::U32(tokens),
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn token_count(&self) -> usize {
        match &self.data {
            TokenData::U16(v) => v.len(),
            TokenData::U32(v) => v.len(),
        }
    }

    pub fn token(&self, i: usize) -> u32 {
        match &self.data {
            TokenData::U16(v) => v[i] as u32,
            TokenData::U32(v) => v[i],
        }
    }

    /// True when the payload is stored 2 bytes wide.
    pub fn is_u16(&self) -> bool {
        matches!(self.data, TokenData::U16(_))
    }

    pub fn tokens_u32(&self) -> Vec<u32> {
        (0..self.token_count()).map(|i| self.token(i)).collect()
    }
}

/// One training batch: `targets` are `inputs` shifted one position forward
/// within the same sampled window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// `[batch_size * seq_len]`, row-major.
    pub inputs: Vec<u32>,
    /// `[batch_size * seq_len]`; the ignore marker is permitted.
    pub targets: Vec<u32>,
}

/// Samples `batch_size` windows uniformly (with replacement) from the shard:
/// starts in `[0, token_count - seq_len - 1]`, inputs `window[0..T)`,
/// targets `window[1..T+1)`. One `next_below` draw per row.
pub fn sample_batch(
    shard: &TokenShard,
    batch_size: usize,
    seq_len: usize,
    rng: &mut Rng,
) -> Result<TokenBatch> {
    if batch_size == 0 || seq_len == 0 {
        return Err(Error::Input("batch_size and seq_len must be positive".into()));
    }
    let needed = seq_len + 1;
    if shard.token_count() < needed {
        return Err(Error::Capacity(format!(
            "shard has {} tokens but a window needs {needed}",
            shard.token_count()
        )));
    }
    let n_starts = (shard.token_count() - seq_len) as u64;
    let mut inputs = Vec::with_capacity(batch_size * seq_len);
    let mut targets = Vec::with_capacity(batch_size * seq_len);
    for _ in 0..batch_size {
        let start = rng.next_below(n_starts) as usize;
        for t in 0..seq_len {
            inputs.push(shard.token(start + t));
            targets.push(shard.token(start + t + 1));
        }
    }
    Ok(TokenBatch {
        batch_size,
        seq_len,
        inputs,
        targets,
    })
}
