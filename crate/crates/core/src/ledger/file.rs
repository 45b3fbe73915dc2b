//! Append-only chain file: each block as a `u32` big-endian length followed by its
//! canonical bytes.

use super::state::{verify_chain, AppendError, ChainFault};
use super::{Authenticator, Block};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

pub fn encode_chain(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        let bytes = b.canonical_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

/// Byte ranges of each framed block (excluding the length prefix).
pub fn block_spans(data: &[u8]) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos + 4 <= data.len() {
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        let start = pos + 4;
        let end = (start + len).min(data.len());
        spans.push(start..end);
        pos = end;
    }
    spans
}

/// Decodes framed blocks; a block that fails to decode faults at its position.
pub fn decode_chain(data: &[u8]) -> Result<Vec<Block>, ChainFault> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < data.len() {
        let height = blocks.len() as u64;
        let fault = |msg: String| ChainFault { height, reason: AppendError::Decode(msg) };
        let header = data.get(pos..pos + 4).ok_or_else(|| fault("truncated length prefix".into()))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        let body = data.get(pos + 4..pos + 4 + len).ok_or_else(|| fault("truncated block".into()))?;
        blocks.push(Block::from_bytes(body).map_err(|e| fault(e.to_string()))?);
        pos += 4 + len;
    }
    Ok(blocks)
}

/// Decode and verify in one pass; returns the tip height.
pub fn verify_chain_bytes(data: &[u8], auth: &dyn Authenticator) -> Result<u64, ChainFault> {
    let blocks = decode_chain(data)?;
    verify_chain(&blocks, auth)?;
    Ok(blocks.len() as u64 - 1)
}

pub fn read_chain(path: &Path) -> std::io::Result<Vec<u8>> {
    std::fs::read(path)
}

pub fn write_chain(path: &Path, blocks: &[Block]) -> std::io::Result<()> {
    std::fs::write(path, encode_chain(blocks))
}

pub fn append_blocks(path: &Path, blocks: &[Block]) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&encode_chain(blocks))?;
    f.sync_data()
}

/// One line per block, then one indented line per transaction.
pub fn dump(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        let _ = writeln!(
            out,
            "block height={} txs={} prev={} digest={}",
            b.height,
            b.txs.len(),
            &b.prev_digest_hex()[..16],
            b.digest_hex()
        );
        for (tx, en) in &b.txs {
            let _ = writeln!(
                out,
                "  tx id={} meter={} reading={} ts={} image={} geo={},{} endorser={}",
                tx.tx_id, tx.meter_id, tx.reading, tx.timestamp_ms, tx.image_digest, tx.geo.lat, tx.geo.lon, en.endorser_id
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{HmacKeyring, LedgerState};

    #[test]
    fn persisted_chain_reloads_and_verifies() {
        let auth = HmacKeyring::from_seed(4);
        let mut state = LedgerState::new(&auth);
        for _ in 0..3 {
            let tip = state.tip().clone();
            state.append_block(Block::seal(tip.height + 1, tip.digest, vec![], &auth), &auth).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        write_chain(&path, &state.chain()[..2]).unwrap();
        append_blocks(&path, &state.chain()[2..]).unwrap();
        let data = read_chain(&path).unwrap();
        assert_eq!(data, state.chain_bytes());
        assert_eq!(verify_chain_bytes(&data, &auth).unwrap(), 3);
        assert_eq!(block_spans(&data).len(), 4);
        let fault = verify_chain_bytes(&data[..data.len() - 3], &auth).unwrap_err();
        assert_eq!(fault.height, 3);
        assert!(dump(state.chain()).lines().next().unwrap().starts_with("block height=0 txs=0 prev=0000000000000000"));
    }
}
