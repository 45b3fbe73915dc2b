//! REST backend: accounts and meters, content-addressed image upload, scan with
//! refinement, confirm onto the ledger, and a read-only admin audit view.

pub mod api;
pub mod auth;
pub mod chain;
pub mod config;
pub mod images;
pub mod store;

pub use api::{router, AppState, ConfirmResponse, LedgerStatus, ScanResponse};
pub use config::{Role, ServiceConfig, StoreKind, TokenEntry};
pub use store::{CustomerAccount, FileStore, MemoryStore, MeterRecord, ReadingRecord, ReadingSource, ReadingStore};

use crate::ledger::{Authenticator, Block, HmacKeyring, TxStatus};
use crate::ocr::{OcrError, TextDetector};
use auth::TokenTable;
use chain::{ChainError, LedgerHandle};
use images::ImageStore;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("backend: {0}")]
    Backend(#[from] OcrError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of comparing store records with chain transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    pub committed_records: usize,
    pub chain_txs: usize,
    pub mismatches: Vec<String>,
}

impl ReconcileReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Every committed record must name exactly one chain transaction with the same
/// meter, reading and image digest at its recorded height, and every chain
/// transaction must have a committed record.
pub fn reconcile(store: &dyn ReadingStore, chain: &[Block]) -> ReconcileReport {
    let mut on_chain = HashMap::new();
    for b in chain {
        for (tx, _) in &b.txs {
            on_chain.insert(tx.tx_id.as_str(), (b.height, tx));
        }
    }
    let mut report = ReconcileReport { chain_txs: on_chain.len(), ..Default::default() };
    let mut claimed = HashMap::new();
    for r in store.readings().iter().filter(|r| r.is_committed()) {
        report.committed_records += 1;
        *claimed.entry(r.tx_id.clone()).or_insert(0usize) += 1;
        match on_chain.get(r.tx_id.as_str()) {
            None => report.mismatches.push(format!("record {} has no chain tx", r.tx_id)),
            Some((height, tx)) => {
                if Some(*height) != r.ledger_height {
                    report.mismatches.push(format!("record {} at height {:?}, chain has {height}", r.tx_id, r.ledger_height));
                }
                if tx.meter_id != r.meter_id || tx.reading != r.reading || tx.image_digest != r.image_digest {
                    report.mismatches.push(format!("record {} differs from its chain tx", r.tx_id));
                }
            }
        }
    }
    let mut orphans: Vec<&str> = on_chain.keys().filter(|id| !claimed.contains_key(**id)).copied().collect();
    orphans.sort_unstable();
    report.mismatches.extend(orphans.into_iter().map(|id| format!("chain tx {id} has no committed record")));
    report
}

fn node_keys(cfg: &ServiceConfig) -> Result<HmacKeyring, ServiceError> {
    if let Some(var) = &cfg.ledger.secret_env {
        match std::env::var(var) {
            Ok(secret) if !secret.is_empty() => return Ok(HmacKeyring::from_secret(&secret)),
            _ => log::warn!("{var} is unset, falling back to a generated node key"),
        }
    }
    if cfg.store == StoreKind::Memory {
        let mut key = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut key);
        return Ok(HmacKeyring::from_secret(&hex::encode(key)));
    }
    let path = cfg.data_dir.join("node.key");
    let secret = match std::fs::read_to_string(&path) {
        Ok(s) => s.trim().to_string(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let mut key = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut key);
            let s = hex::encode(key);
            std::fs::write(&path, &s)?;
            s
        }
        Err(e) => return Err(e.into()),
    };
    Ok(HmacKeyring::from_secret(&secret))
}

#[derive(Clone)]
pub struct Service {
    state: AppState,
}

impl Service {
    /// Builds the configured OCR backend and opens storage.
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        let backend: Arc<dyn TextDetector> = Arc::from(config.backend.build()?);
        Self::with_backend(config, backend)
    }

    pub fn with_backend(config: ServiceConfig, backend: Arc<dyn TextDetector>) -> Result<Self, ServiceError> {
        config.validate()?;
        let auth: Arc<dyn Authenticator> = match config.store {
            StoreKind::File => {
                std::fs::create_dir_all(&config.data_dir)?;
                Arc::new(node_keys(&config)?)
            }
            StoreKind::Memory => Arc::new(node_keys(&config)?),
        };
        Self::with_parts(config, backend, auth)
    }

    /// Full control over node keys; used by tests that need to re-open with the same keys.
    pub fn with_parts(config: ServiceConfig, backend: Arc<dyn TextDetector>, auth: Arc<dyn Authenticator>) -> Result<Self, ServiceError> {
        config.validate()?;
        let (store, images, chain_path): (Arc<dyn ReadingStore>, ImageStore, _) = match config.store {
            StoreKind::Memory => (Arc::new(MemoryStore::new()), ImageStore::memory(), None),
            StoreKind::File => {
                std::fs::create_dir_all(&config.data_dir)?;
                (
                    Arc::new(FileStore::open(config.data_dir.join("store.log"))?),
                    ImageStore::dir(config.data_dir.join("images"))?,
                    Some(config.data_dir.join("chain.bin")),
                )
            }
        };
        let ledger = LedgerHandle::open(&config.ledger, auth, chain_path)?;
        for m in store.meters() {
            ledger.register_meter(&m.meter_id, &m.initial_reading);
        }
        let state = AppState {
            tokens: Arc::new(TokenTable::new(&config.tokens)),
            config: Arc::new(config),
            store,
            images: Arc::new(images),
            backend,
            ledger: Arc::new(ledger),
            scans: Arc::new(Mutex::new(HashMap::new())),
        };
        let svc = Self { state };
        svc.settle(true)?;
        Ok(svc)
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn router(&self) -> axum::Router {
        router(self.state.clone())
    }

    pub fn reconcile(&self) -> ReconcileReport {
        reconcile(self.state.store.as_ref(), &self.state.ledger.blocks())
    }

    /// Marks pending records whose transaction reached the chain as committed and
    /// drops those the ledger rejected.
    pub fn settle_pending(&self) -> Result<usize, ServiceError> {
        self.settle(false)
    }

    fn settle(&self, startup: bool) -> Result<usize, ServiceError> {
        let blocks = self.state.ledger.blocks();
        let heights: HashMap<&str, u64> =
            blocks.iter().flat_map(|b| b.txs.iter().map(move |(tx, _)| (tx.tx_id.as_str(), b.height))).collect();
        let mut settled = 0;
        for r in self.state.store.readings().into_iter().filter(|r| !r.is_committed()) {
            if let Some(&h) = heights.get(r.tx_id.as_str()) {
                self.state.store.put_reading(ReadingRecord { ledger_height: Some(h), ..r })?;
                settled += 1;
                continue;
            }
            let dead = match self.state.ledger.status(&r.tx_id) {
                Some(TxStatus::Rejected(_)) => true,
                // After a restart nothing in flight survives.
                None => startup,
                Some(_) => false,
            };
            if dead {
                self.state.store.remove_reading(&r.tx_id)?;
            }
        }
        Ok(settled)
    }

    /// Serves until Ctrl-C, ticking the ledger clock in the background.
    pub async fn serve(self) -> Result<(), ServiceError> {
        let addr = self.state.config.listen;
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        let ticker = self.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(Duration::from_millis(100));
            loop {
                interval.tick().await;
                if let Err(e) = ticker.state.ledger.tick() {
                    log::error!("ledger tick failed: {e}");
                }
                if let Err(e) = ticker.settle_pending() {
                    log::error!("settling pending records failed: {e}");
                }
            }
        });
        axum::serve(listener, self.router())
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    }
}
