//! The three node state machines. Each consumes one message at a time and returns
//! the messages it wants sent; none of them touches the network directly.

use super::state::{reading_lt, LedgerState};
use super::{Authenticator, Block, Endorsement, Geo, NodeId, ReadingTx};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum Rejection {
    #[error("BadSig")]
    BadSig,
    #[error("UnknownMeter")]
    UnknownMeter,
    #[error("NonMonotonic")]
    NonMonotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum OrderError {
    #[error("BadEndorsement")]
    BadEndorsement,
    #[error("Duplicate")]
    Duplicate,
    /// Superseded by an earlier transaction for the same meter with a higher reading.
    #[error("NonMonotonic")]
    NonMonotonic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Propose(ReadingTx),
    Endorsed { tx: ReadingTx, endorsement: Endorsement },
    EndorseRejected { tx_id: String, reason: Rejection },
    Submit { tx: ReadingTx, endorsement: Endorsement },
    Queued { tx_id: String },
    OrderRejected { tx_id: String, reason: OrderError },
    Block(Block),
}

pub type Outbox = Vec<(NodeId, Message)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    Endorsement(Rejection),
    Ordering(OrderError),
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::Endorsement(r) => write!(f, "{r}"),
            RejectReason::Ordering(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxStatus {
    Proposed,
    Endorsed,
    Queued,
    Committed { height: u64 },
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProposeError {
    #[error("transaction signature does not verify")]
    InvalidSignature,
}

fn append_logged(ledger: &mut LedgerState, node: NodeId, block: Block, auth: &dyn Authenticator) -> Option<u64> {
    let height = block.height;
    match ledger.append_block(block, auth) {
        Ok(()) => Some(height),
        Err(e) => {
            log::warn!("{node} rejected block {height}: {e}");
            None
        }
    }
}

/// Submits readings on behalf of customers and tracks their progress.
#[derive(Debug)]
pub struct CustomerNode {
    auth: Arc<dyn Authenticator>,
    ledger: LedgerState,
    status: BTreeMap<String, TxStatus>,
    counter: u64,
}

impl CustomerNode {
    pub fn new(auth: Arc<dyn Authenticator>, ledger: LedgerState) -> Self {
        let counter = ledger.tx_count() as u64;
        Self { auth, ledger, status: BTreeMap::new(), counter }
    }

    /// Builds and signs a transaction with a fresh id.
    pub fn prepare(&mut self, meter_id: &str, reading: &str, timestamp_ms: u64, image_digest: &str, geo: Geo) -> ReadingTx {
        self.counter += 1;
        let id = Sha256::new()
            .chain_update(self.counter.to_be_bytes())
            .chain_update(meter_id.as_bytes())
            .chain_update(reading.as_bytes())
            .chain_update(timestamp_ms.to_be_bytes())
            .chain_update(image_digest.as_bytes())
            .finalize();
        let mut tx = ReadingTx {
            tx_id: hex::encode(&id[..16]),
            meter_id: meter_id.to_string(),
            reading: reading.to_string(),
            timestamp_ms,
            image_digest: image_digest.to_string(),
            geo,
            submitter_sig: Vec::new(),
        };
        tx.sign(self.auth.as_ref());
        tx
    }

    pub fn propose(&mut self, tx: ReadingTx) -> Result<Outbox, ProposeError> {
        if !tx.verify(self.auth.as_ref()) {
            return Err(ProposeError::InvalidSignature);
        }
        self.status.insert(tx.tx_id.clone(), TxStatus::Proposed);
        Ok(vec![(NodeId::Endorser, Message::Propose(tx))])
    }

    pub fn handle(&mut self, _from: NodeId, msg: Message) -> Outbox {
        match msg {
            Message::Endorsed { tx, endorsement } => {
                if !endorsement.verify(&tx, self.auth.as_ref()) {
                    self.set(&tx.tx_id, TxStatus::Rejected(RejectReason::Ordering(OrderError::BadEndorsement)));
                    return Vec::new();
                }
                self.set(&tx.tx_id, TxStatus::Endorsed);
                vec![(NodeId::Orderer, Message::Submit { tx, endorsement })]
            }
            Message::EndorseRejected { tx_id, reason } => {
                self.set(&tx_id, TxStatus::Rejected(RejectReason::Endorsement(reason)));
                Vec::new()
            }
            Message::Queued { tx_id } => {
                if self.status.get(&tx_id) == Some(&TxStatus::Endorsed) {
                    self.set(&tx_id, TxStatus::Queued);
                }
                Vec::new()
            }
            Message::OrderRejected { tx_id, reason } => {
                self.set(&tx_id, TxStatus::Rejected(RejectReason::Ordering(reason)));
                Vec::new()
            }
            Message::Block(block) => {
                let ids: Vec<String> = block.txs.iter().map(|(tx, _)| tx.tx_id.clone()).collect();
                if let Some(height) = append_logged(&mut self.ledger, NodeId::Customer, block, self.auth.as_ref()) {
                    for id in ids {
                        self.set(&id, TxStatus::Committed { height });
                    }
                }
                Vec::new()
            }
            Message::Propose(_) | Message::Submit { .. } => Vec::new(),
        }
    }

    fn set(&mut self, tx_id: &str, status: TxStatus) {
        self.status.insert(tx_id.to_string(), status);
    }

    pub fn status(&self, tx_id: &str) -> Option<TxStatus> {
        self.status.get(tx_id).copied()
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }
}

/// Validates proposals against its own ledger copy and signs endorsements.
#[derive(Debug)]
pub struct EndorserNode {
    auth: Arc<dyn Authenticator>,
    ledger: LedgerState,
    meters: BTreeMap<String, String>,
}

impl EndorserNode {
    pub fn new(auth: Arc<dyn Authenticator>, ledger: LedgerState) -> Self {
        Self { auth, ledger, meters: BTreeMap::new() }
    }

    pub fn register_meter(&mut self, meter_id: &str, initial_reading: &str) {
        self.meters.insert(meter_id.to_string(), initial_reading.to_string());
    }

    pub fn knows_meter(&self, meter_id: &str) -> bool {
        self.meters.contains_key(meter_id)
    }

    /// Signature, known meter, and no decrease from the last committed (or initial)
    /// reading. An unchanged reading is accepted.
    pub fn endorse(&self, tx: &ReadingTx) -> Result<Endorsement, Rejection> {
        if !tx.verify(self.auth.as_ref()) {
            return Err(Rejection::BadSig);
        }
        let initial = self.meters.get(&tx.meter_id).ok_or(Rejection::UnknownMeter)?;
        if tx.reading.len() != initial.len() || !tx.reading.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Rejection::NonMonotonic);
        }
        let floor = self.ledger.last_reading(&tx.meter_id).unwrap_or(initial);
        if reading_lt(&tx.reading, floor) {
            return Err(Rejection::NonMonotonic);
        }
        Ok(Endorsement::issue(tx, self.auth.as_ref()))
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Outbox {
        match msg {
            Message::Propose(tx) => {
                let reply = match self.endorse(&tx) {
                    Ok(endorsement) => Message::Endorsed { tx, endorsement },
                    Err(reason) => Message::EndorseRejected { tx_id: tx.tx_id, reason },
                };
                vec![(from, reply)]
            }
            Message::Block(block) => {
                append_logged(&mut self.ledger, NodeId::Endorser, block, self.auth.as_ref());
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }
}

#[derive(Debug, Clone)]
struct Pending {
    tx: ReadingTx,
    endorsement: Endorsement,
    arrived_at: u64,
    from: NodeId,
}

/// Queues endorsed transactions and cuts them into signed blocks.
#[derive(Debug)]
pub struct OrdererNode {
    auth: Arc<dyn Authenticator>,
    ledger: LedgerState,
    pending: VecDeque<Pending>,
    pending_ids: HashSet<String>,
    batch_size: usize,
    flush_timeout: Option<u64>,
}

impl OrdererNode {
    pub fn new(auth: Arc<dyn Authenticator>, ledger: LedgerState, batch_size: usize, flush_timeout: Option<u64>) -> Self {
        Self {
            auth,
            ledger,
            pending: VecDeque::new(),
            pending_ids: HashSet::new(),
            batch_size: batch_size.max(1),
            flush_timeout,
        }
    }

    pub fn submit_endorsed(&mut self, tx: ReadingTx, endorsement: Endorsement, now: u64) -> Result<(), OrderError> {
        self.enqueue(tx, endorsement, now, NodeId::Customer)
    }

    fn enqueue(&mut self, tx: ReadingTx, endorsement: Endorsement, now: u64, from: NodeId) -> Result<(), OrderError> {
        if !endorsement.verify(&tx, self.auth.as_ref()) {
            return Err(OrderError::BadEndorsement);
        }
        if self.pending_ids.contains(&tx.tx_id) || self.ledger.contains_tx(&tx.tx_id) {
            return Err(OrderError::Duplicate);
        }
        self.pending_ids.insert(tx.tx_id.clone());
        self.pending.push_back(Pending { tx, endorsement, arrived_at: now, from });
        Ok(())
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_ids(&self) -> Vec<&str> {
        self.pending.iter().map(|p| p.tx.tx_id.as_str()).collect()
    }

    pub fn handle(&mut self, from: NodeId, msg: Message, now: u64) -> Outbox {
        let Message::Submit { tx, endorsement } = msg else {
            return Vec::new();
        };
        let tx_id = tx.tx_id.clone();
        let mut out = match self.enqueue(tx, endorsement, now, from) {
            Ok(()) => vec![(from, Message::Queued { tx_id })],
            Err(reason) => vec![(from, Message::OrderRejected { tx_id, reason })],
        };
        while self.pending.len() >= self.batch_size {
            out.extend(self.cut_block());
        }
        out
    }

    /// Cuts a block when the oldest pending transaction has waited out the flush
    /// timeout.
    pub fn tick(&mut self, now: u64) -> Outbox {
        let mut out = Vec::new();
        while self.pending.len() >= self.batch_size {
            out.extend(self.cut_block());
        }
        if let (Some(timeout), Some(oldest)) = (self.flush_timeout, self.pending.front()) {
            if now.saturating_sub(oldest.arrived_at) >= timeout {
                out.extend(self.cut_block());
            }
        }
        out
    }

    /// Cuts every pending transaction into blocks of at most `batch_size`.
    pub fn flush(&mut self) -> Outbox {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            out.extend(self.cut_block());
        }
        out
    }

    /// Forms one block from up to `batch_size` pending transactions, appends it
    /// locally and addresses it to both peers. Transactions that would lower a
    /// meter's reading are bounced instead. No-op on an empty queue.
    pub fn cut_block(&mut self) -> Outbox {
        let take = self.pending.len().min(self.batch_size);
        if take == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut batch = Vec::with_capacity(take);
        let mut latest: BTreeMap<String, String> = BTreeMap::new();
        for p in self.pending.drain(..take) {
            self.pending_ids.remove(&p.tx.tx_id);
            let prior = latest.get(&p.tx.meter_id).map(String::as_str).or(self.ledger.last_reading(&p.tx.meter_id));
            if prior.is_some_and(|prior| reading_lt(&p.tx.reading, prior)) {
                out.push((p.from, Message::OrderRejected { tx_id: p.tx.tx_id, reason: OrderError::NonMonotonic }));
                continue;
            }
            latest.insert(p.tx.meter_id.clone(), p.tx.reading.clone());
            batch.push((p.tx, p.endorsement));
        }
        if batch.is_empty() {
            return out;
        }
        let tip = self.ledger.tip();
        let block = Block::seal(tip.height + 1, tip.digest, batch, self.auth.as_ref());
        if let Err(e) = self.ledger.append_block(block.clone(), self.auth.as_ref()) {
            debug_assert!(false, "orderer built an invalid block: {e}");
            log::error!("orderer built an invalid block: {e}");
            return out;
        }
        out.push((NodeId::Customer, Message::Block(block.clone())));
        out.push((NodeId::Endorser, Message::Block(block)));
        out
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }
}
