use super::{Authenticator, Block, NodeId, GENESIS_PREV};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppendError {
    #[error("chain mismatch: {0}")]
    ChainMismatch(String),
    #[error("block digest does not recompute")]
    BadDigest,
    #[error("bad signature: {0}")]
    BadSig(String),
    #[error("reading for meter `{0}` decreases")]
    NonMonotonic(String),
    #[error("transaction `{0}` already on chain")]
    DuplicateTx(String),
    #[error("undecodable block: {0}")]
    Decode(String),
}

/// First violation found while walking a chain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("chain invalid at height {height}: {reason}")]
pub struct ChainFault {
    pub height: u64,
    pub reason: AppendError,
}

/// Compares two equal-length digit strings numerically.
pub(crate) fn reading_lt(a: &str, b: &str) -> bool {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x < y,
        _ => a < b,
    }
}

/// Checks one block against the chain tip it should extend.
fn check_block(
    block: &Block,
    expected_height: u64,
    prev_digest: &[u8; 32],
    last_reading: &BTreeMap<String, String>,
    seen_tx: &HashSet<String>,
    auth: &dyn Authenticator,
) -> Result<(), AppendError> {
    if block.height != expected_height {
        return Err(AppendError::ChainMismatch(format!("height {} where {expected_height} expected", block.height)));
    }
    if &block.prev_digest != prev_digest {
        return Err(AppendError::ChainMismatch("prev_digest does not match tip".into()));
    }
    if block.compute_digest() != block.digest {
        return Err(AppendError::BadDigest);
    }
    if !auth.verify(NodeId::Orderer, &block.body_bytes(), &block.orderer_sig) {
        return Err(AppendError::BadSig("orderer".into()));
    }
    if block.height == 0 && !block.txs.is_empty() {
        return Err(AppendError::ChainMismatch("genesis carries transactions".into()));
    }
    let mut batch: BTreeMap<&str, &str> = BTreeMap::new();
    let mut batch_ids = HashSet::new();
    for (tx, en) in &block.txs {
        if !tx.verify(auth) {
            return Err(AppendError::BadSig(format!("submitter of {}", tx.tx_id)));
        }
        if !en.verify(tx, auth) {
            return Err(AppendError::BadSig(format!("endorsement of {}", tx.tx_id)));
        }
        if seen_tx.contains(&tx.tx_id) || !batch_ids.insert(tx.tx_id.as_str()) {
            return Err(AppendError::DuplicateTx(tx.tx_id.clone()));
        }
        let prior = batch.get(tx.meter_id.as_str()).copied().or(last_reading.get(&tx.meter_id).map(String::as_str));
        if let Some(prior) = prior {
            if reading_lt(&tx.reading, prior) {
                return Err(AppendError::NonMonotonic(tx.meter_id.clone()));
            }
        }
        batch.insert(&tx.meter_id, &tx.reading);
    }
    Ok(())
}

/// One node's copy of the chain plus the derived per-meter latest reading.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerState {
    chain: Vec<Block>,
    last_reading: BTreeMap<String, String>,
    tx_ids: HashSet<String>,
}

impl LedgerState {
    pub fn new(auth: &dyn Authenticator) -> Self {
        Self { chain: vec![Block::genesis(auth)], last_reading: BTreeMap::new(), tx_ids: HashSet::new() }
    }

    /// Replays and verifies `blocks` from genesis.
    pub fn from_blocks(blocks: Vec<Block>, auth: &dyn Authenticator) -> Result<Self, ChainFault> {
        verify_chain(&blocks, auth)?;
        let mut state = Self { chain: Vec::new(), last_reading: BTreeMap::new(), tx_ids: HashSet::new() };
        for block in blocks {
            state.apply(block);
        }
        Ok(state)
    }

    fn apply(&mut self, block: Block) {
        for (tx, _) in &block.txs {
            self.last_reading.insert(tx.meter_id.clone(), tx.reading.clone());
            self.tx_ids.insert(tx.tx_id.clone());
        }
        self.chain.push(block);
    }

    pub fn append_block(&mut self, block: Block, auth: &dyn Authenticator) -> Result<(), AppendError> {
        let tip = self.tip();
        check_block(&block, tip.height + 1, &tip.digest, &self.last_reading, &self.tx_ids, auth)?;
        self.apply(block);
        Ok(())
    }

    pub fn tip(&self) -> &Block {
        self.chain.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn tx_count(&self) -> usize {
        self.tx_ids.len()
    }

    pub fn contains_tx(&self, tx_id: &str) -> bool {
        self.tx_ids.contains(tx_id)
    }

    pub fn last_reading(&self, meter_id: &str) -> Option<&str> {
        self.last_reading.get(meter_id).map(String::as_str)
    }

    pub fn last_readings(&self) -> &BTreeMap<String, String> {
        &self.last_reading
    }

    /// Recomputes the per-meter map from the chain alone.
    pub fn rebuild_last_readings(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for (tx, _) in self.chain.iter().flat_map(|b| &b.txs) {
            map.insert(tx.meter_id.clone(), tx.reading.clone());
        }
        map
    }

    pub fn chain_bytes(&self) -> Vec<u8> {
        super::file::encode_chain(&self.chain)
    }
}

/// Full walk from genesis: linkage, digests, signatures, per-meter monotonicity.
pub fn verify_chain(blocks: &[Block], auth: &dyn Authenticator) -> Result<(), ChainFault> {
    let mut last = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut prev = GENESIS_PREV;
    if blocks.is_empty() {
        return Err(ChainFault { height: 0, reason: AppendError::ChainMismatch("no genesis block".into()) });
    }
    for (i, block) in blocks.iter().enumerate() {
        let height = i as u64;
        check_block(block, height, &prev, &last, &seen, auth).map_err(|reason| ChainFault { height, reason })?;
        for (tx, _) in &block.txs {
            last.insert(tx.meter_id.clone(), tx.reading.clone());
            seen.insert(tx.tx_id.clone());
        }
        prev = block.digest;
    }
    Ok(())
}
