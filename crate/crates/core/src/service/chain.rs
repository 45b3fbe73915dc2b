//! The service's seat on the ledger network, plus chain-file persistence.

use super::config::LedgerSection;
use crate::ledger::file::{append_blocks, decode_chain, read_chain};
use crate::ledger::{Authenticator, Block, ChainFault, Geo, Network, NodeId, ReadingTx, TxStatus};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("chain file I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fault(#[from] ChainFault),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed(u64),
    Rejected(crate::ledger::RejectReason),
    TimedOut,
}

struct Inner {
    net: Network,
    persisted_height: u64,
}

pub struct LedgerHandle {
    inner: Mutex<Inner>,
    chain_path: Option<PathBuf>,
    logical: bool,
    commit_timeout: Duration,
    started: Instant,
}

impl std::fmt::Debug for LedgerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LedgerHandle").field("chain_path", &self.chain_path).field("logical", &self.logical).finish()
    }
}

impl LedgerHandle {
    /// Restores from `chain_path` when it exists, otherwise starts at genesis and
    /// writes it out.
    pub fn open(cfg: &LedgerSection, auth: Arc<dyn Authenticator>, chain_path: Option<PathBuf>) -> Result<Self, ChainError> {
        let net_cfg = cfg.network_config();
        let (net, persisted_height) = match &chain_path {
            Some(p) if p.exists() => {
                let blocks = decode_chain(&read_chain(p)?)?;
                let net = Network::from_chain(net_cfg, auth, blocks)?;
                let h = net.ledger(NodeId::Customer).height();
                (net, h)
            }
            Some(p) => {
                let net = Network::new(net_cfg, auth);
                append_blocks(p, net.ledger(NodeId::Customer).chain())?;
                (net, 0)
            }
            None => (Network::new(net_cfg, auth), 0),
        };
        Ok(Self {
            inner: Mutex::new(Inner { net, persisted_height }),
            chain_path,
            logical: cfg.logical_time,
            commit_timeout: Duration::from_millis(cfg.commit_timeout_ms),
            started: Instant::now(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("ledger lock")
    }

    fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn persist(&self, inner: &mut Inner) -> Result<(), ChainError> {
        let chain = inner.net.ledger(NodeId::Customer).chain();
        let tip = chain.last().map_or(0, |b| b.height);
        if tip > inner.persisted_height {
            if let Some(path) = &self.chain_path {
                append_blocks(path, &chain[inner.persisted_height as usize + 1..])?;
            }
            inner.persisted_height = tip;
        }
        Ok(())
    }

    pub fn register_meter(&self, meter_id: &str, initial_reading: &str) {
        self.lock().net.register_meter(meter_id, initial_reading);
    }

    /// Last committed reading as seen by the service's own node.
    pub fn last_reading(&self, meter_id: &str) -> Option<String> {
        self.lock().net.ledger(NodeId::Customer).last_reading(meter_id).map(str::to_string)
    }

    pub fn prepare(&self, meter_id: &str, reading: &str, timestamp_ms: u64, image_digest: &str, geo: Geo) -> ReadingTx {
        self.lock().net.prepare(meter_id, reading, timestamp_ms, image_digest, geo)
    }

    /// Proposes `tx` and drives the network as far as it goes without waiting.
    pub fn propose(&self, tx: ReadingTx) -> Result<(), ChainError> {
        let tx_id = tx.tx_id.clone();
        let mut inner = self.lock();
        if !self.logical {
            let now = self.elapsed_ms();
            inner.net.advance_to(now);
        }
        inner.net.propose(tx).expect("prepared transactions are signed");
        inner.net.run_until_quiescent();
        if self.logical && inner.net.status(&tx_id) == Some(TxStatus::Queued) {
            inner.net.flush();
        }
        self.persist(&mut inner)
    }

    /// Lets timers fire up to the current wall-clock offset.
    pub fn tick(&self) -> Result<(), ChainError> {
        let mut inner = self.lock();
        if self.logical {
            inner.net.run_until_quiescent();
        } else {
            let now = self.elapsed_ms();
            inner.net.advance_to(now);
        }
        self.persist(&mut inner)
    }

    pub fn status(&self, tx_id: &str) -> Option<TxStatus> {
        self.lock().net.status(tx_id)
    }

    pub async fn wait_commit(&self, tx_id: &str) -> Result<CommitOutcome, ChainError> {
        let deadline = Instant::now() + self.commit_timeout;
        loop {
            match self.status(tx_id) {
                Some(TxStatus::Committed { height }) => return Ok(CommitOutcome::Committed(height)),
                Some(TxStatus::Rejected(r)) => return Ok(CommitOutcome::Rejected(r)),
                _ => {}
            }
            if Instant::now() >= deadline {
                return Ok(CommitOutcome::TimedOut);
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
            self.tick()?;
        }
    }

    /// `(height, tx_count)` of the service node's chain.
    pub fn summary(&self) -> (u64, usize) {
        let inner = self.lock();
        let l = inner.net.ledger(NodeId::Customer);
        (l.height(), l.tx_count())
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.lock().net.ledger(NodeId::Customer).chain().to_vec()
    }

    pub fn is_logical(&self) -> bool {
        self.logical
    }
}
