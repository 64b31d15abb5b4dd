//! Binary token-shard format.
//!
//! Layout, little-endian throughout:
//!   magic "EOET" (4 bytes) | version u32 = 1 | vocab_size u32 |
//!   token_count u64 | payload
//! The payload is u16 ids when `vocab_size <= 65536`, u32 otherwise, so the
//! file length is exactly `20 + token_count * width`.

use eoe_core::{Error, TokenShard};
use std::fs;
use std::path::Path;

pub const SHARD_MAGIC: &[u8; 4] = b"EOET";
pub const SHARD_VERSION: u32 = 1;
pub const SHARD_HEADER_LEN: usize = 20;

fn token_width(vocab_size: u32) -> usize {
    if vocab_size <= u16::MAX as u32 {
        2
    } else {
        4
    }
}

/// Serializes validated tokens to the shard byte format.
pub fn encode_shard(tokens: &[u32], vocab_size: u32) -> Result<Vec<u8>, Error> {
    let shard = TokenShard::new(vocab_size, tokens)?;
    let width = token_width(vocab_size);
    let mut out = Vec::with_capacity(SHARD_HEADER_LEN + tokens.len() * width);
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab_size.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    for i in 0..shard.token_count() {
        let t = shard.token(i);
        if width == 2 {
            out.extend_from_slice(&(t as u16).to_le_bytes());
        } else {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    Ok(out)
}

struct ShardHeader {
    vocab_size: u32,
    token_count: usize,
}

fn parse_header(header: &[u8; SHARD_HEADER_LEN]) -> Result<ShardHeader, Error> {
    if &header[0..4] != SHARD_MAGIC {
        return Err(Error::Format(format!(
            "bad shard magic {:?}, expected {:?}",
            &header[0..4],
            SHARD_MAGIC
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != SHARD_VERSION {
        return Err(Error::Format(format!(
            "unsupported shard version {version}, expected {SHARD_VERSION}"
        )));
    }
    Ok(ShardHeader {
        vocab_size: u32::from_le_bytes(header[8..12].try_into().unwrap()),
        token_count: u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize,
    })
}

fn build_shard(vocab_size: u32, payload: &[u8]) -> Result<TokenShard, Error> {
    if token_width(vocab_size) == 2 {
        let tokens: Vec<u16> = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        TokenShard::from_u16(vocab_size, tokens)
    } else {
        let tokens: Vec<u32> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        TokenShard::from_u32(vocab_size, tokens)
    }
}

/// Parses and validates shard bytes: magic, version, declared length, and
/// every token id.
pub fn decode_shard(bytes: &[u8]) -> Result<TokenShard, Error> {
    if bytes.len() < SHARD_HEADER_LEN {
        return Err(Error::Length(format!(
            "shard header needs {SHARD_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let header = parse_header(bytes[..SHARD_HEADER_LEN].try_into().unwrap())?;
    let want = SHARD_HEADER_LEN + header.token_count * token_width(header.vocab_size);
    if bytes.len() != want {
        return Err(Error::Length(format!(
            "shard declares {} tokens ({want} bytes) but the file has {} bytes",
            header.token_count,
            bytes.len()
        )));
    }
    build_shard(header.vocab_size, &bytes[SHARD_HEADER_LEN..])
}

/// Writes a shard file; `read_shard(write_shard(x)) == x` bit-exactly.
pub fn write_shard(path: impl AsRef<Path>, tokens: &[u32], vocab_size: u32) -> Result<(), Error> {
    let bytes = encode_shard(tokens, vocab_size)?;
    fs::write(path.as_ref(), bytes)
        .map_err(|e| Error::Input(format!("writing {}: {e}", path.as_ref().display())))
}

/// Reads a shard, checking the declared length against the file size before
/// touching the payload; allocation stays within header + payload.
pub fn read_shard(path: impl AsRef<Path>) -> Result<TokenShard, Error> {
    use std::io::Read;
    let io_err = |e: std::io::Error| Error::Input(format!("reading {}: {e}", path.as_ref().display()));
    let mut file = std::fs::File::open(path.as_ref()).map_err(io_err)?;
    let file_len = file.metadata().map_err(io_err)?.len();

    let mut header = [0u8; SHARD_HEADER_LEN];
    file.read_exact(&mut header).map_err(|_| {
        Error::Length(format!(
            "shard header needs {SHARD_HEADER_LEN} bytes, file has {file_len}"
        ))
    })?;
    let parsed = parse_header(&header)?;
    let want = (SHARD_HEADER_LEN + parsed.token_count * token_width(parsed.vocab_size)) as u64;
    if file_len != want {
        return Err(Error::Length(format!(
            "shard declares {} tokens ({want} bytes) but the file has {file_len} bytes",
            parsed.token_count
        )));
    }
    // Stream the payload through a small fixed buffer straight into the
    // token vector, so peak allocation is the payload plus a constant.
    let width = token_width(parsed.vocab_size);
    let mut remaining = (want as usize) - SHARD_HEADER_LEN;
    let mut buf = [0u8; 8192];
    let truncated = |_| Error::Length("shard payload shorter than its declared length".into());
    if width == 2 {
        let mut tokens: Vec<u16> = Vec::with_capacity(parsed.token_count);
        while remaining > 0 {
            let take = remaining.min(buf.len());
            file.read_exact(&mut buf[..take]).map_err(truncated)?;
            tokens.extend(
                buf[..take]
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap())),
            );
            remaining -= take;
        }
        TokenShard::from_u16(parsed.vocab_size, tokens)
    } else {
        let mut tokens: Vec<u32> = Vec::with_capacity(parsed.token_count);
        while remaining > 0 {
            let take = remaining.min(buf.len());
            file.read_exact(&mut buf[..take]).map_err(truncated)?;
            tokens.extend(
                buf[..take]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap())),
            );
            remaining -= take;
        }
        TokenShard::from_u32(parsed.vocab_size, tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eoe_core::Rng;

    #[test]
    fn empty_sequence_is_a_20_byte_file() {
        let bytes = encode_shard(&[], 256).unwrap();
        assert_eq!(bytes.len(), 20);
        let shard = decode_shard(&bytes).unwrap();
        assert_eq!(shard.token_count(), 0);
        assert_eq!(shard.vocab_size(), 256);
    }

    #[test]
    fn known_payload_bytes() {
        // [0,1,2] at vocab 4: 26 bytes, u16 little-endian payload.
        let bytes = encode_shard(&[0, 1, 2], 4).unwrap();
        assert_eq!(bytes.len(), 26);
        assert_eq!(&bytes[20..], &[0, 0, 1, 0, 2, 0]);
    }

    #[test]
    fn wide_vocab_uses_u32_payload() {
        let bytes = encode_shard(&[70000], 100_000).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[20..], &70000u32.to_le_bytes());
        let shard = decode_shard(&bytes).unwrap();
        assert_eq!(shard.token(0), 70000);
        assert!(!shard.is_u16());
    }

    #[test]
    fn roundtrip_100k_random_tokens() {
        let mut rng = Rng::from_seed(1);
        let tokens: Vec<u32> = (0..100_000).map(|_| rng.next_below(50257) as u32).collect();
        let shard = decode_shard(&encode_shard(&tokens, 50257).unwrap()).unwrap();
        assert_eq!(shard.tokens_u32(), tokens);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_shard(&[1, 2, 3], 256).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_shard(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = encode_shard(&[1, 2, 3], 256).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode_shard(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_length_error() {
        // Header declares 10 tokens but only 9 are present.
        let mut bytes = encode_shard(&(0..10u32).collect::<Vec<_>>(), 256).unwrap();
        bytes.truncate(bytes.len() - 2);
        match decode_shard(&bytes) {
            Err(Error::Length(msg)) => assert!(msg.contains("10 tokens"), "{msg}"),
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_is_length_error() {
        let mut bytes = encode_shard(&[1, 2], 256).unwrap();
        bytes.push(0xFF);
        assert!(matches!(decode_shard(&bytes), Err(Error::Length(_))));
    }

    #[test]
    fn out_of_range_token_id_is_rejected_on_read() {
        // Hand-craft a payload with id 300 under vocab 256.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(SHARD_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&256u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&300u16.to_le_bytes());
        assert!(matches!(decode_shard(&bytes), Err(Error::Input(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.eoet");
        let tokens: Vec<u32> = (0..1000u32).map(|i| i % 256).collect();
        write_shard(&path, &tokens, 256).unwrap();
        let shard = read_shard(&path).unwrap();
        assert_eq!(shard.tokens_u32(), tokens);
    }
}
