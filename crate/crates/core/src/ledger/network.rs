//! Drives the three nodes over a [`SimBus`] under a single-threaded scheduler.

use super::bus::{BusConfig, BusStats, Envelope, SimBus};
use super::node::{CustomerNode, EndorserNode, Message, OrdererNode, Outbox, ProposeError, TxStatus};
use super::{Authenticator, Block, ChainFault, Geo, LedgerState, NodeId, ReadingTx};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Digest as _;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_FLUSH_TIMEOUT_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    pub batch_size: usize,
    pub flush_timeout_ms: u64,
    /// Disables the flush timeout; blocks are cut on a full batch or explicit flush.
    pub logical_time: bool,
    pub bus: BusConfig,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            flush_timeout_ms: DEFAULT_FLUSH_TIMEOUT_MS,
            logical_time: false,
            bus: BusConfig::default(),
        }
    }
}

impl LedgerConfig {
    pub fn logical(batch_size: usize) -> Self {
        Self { batch_size, logical_time: true, ..Self::default() }
    }

    pub fn with_bus(mut self, bus: BusConfig) -> Self {
        self.bus = bus;
        self
    }
}

#[derive(Debug)]
pub struct Network {
    auth: Arc<dyn Authenticator>,
    customer: CustomerNode,
    endorser: EndorserNode,
    orderer: OrdererNode,
    bus: SimBus,
    inboxes: BTreeMap<NodeId, VecDeque<Envelope>>,
}

impl Network {
    pub fn new(config: LedgerConfig, auth: Arc<dyn Authenticator>) -> Self {
        let genesis = LedgerState::new(auth.as_ref());
        Self::with_state(config, auth, genesis)
    }

    /// Restores every node from a persisted chain after verifying it.
    pub fn from_chain(config: LedgerConfig, auth: Arc<dyn Authenticator>, blocks: Vec<Block>) -> Result<Self, ChainFault> {
        let state = LedgerState::from_blocks(blocks, auth.as_ref())?;
        Ok(Self::with_state(config, auth, state))
    }

    fn with_state(config: LedgerConfig, auth: Arc<dyn Authenticator>, state: LedgerState) -> Self {
        let timeout = (!config.logical_time).then_some(config.flush_timeout_ms);
        Self {
            customer: CustomerNode::new(auth.clone(), state.clone()),
            endorser: EndorserNode::new(auth.clone(), state.clone()),
            orderer: OrdererNode::new(auth.clone(), state, config.batch_size, timeout),
            bus: SimBus::new(config.bus),
            inboxes: NodeId::ALL.iter().map(|&id| (id, VecDeque::new())).collect(),
            auth,
        }
    }

    pub fn auth(&self) -> &dyn Authenticator {
        self.auth.as_ref()
    }

    pub fn register_meter(&mut self, meter_id: &str, initial_reading: &str) {
        self.endorser.register_meter(meter_id, initial_reading);
    }

    pub fn prepare(&mut self, meter_id: &str, reading: &str, timestamp_ms: u64, image_digest: &str, geo: Geo) -> ReadingTx {
        self.customer.prepare(meter_id, reading, timestamp_ms, image_digest, geo)
    }

    /// Hands a signed transaction to the customer node, which sends it to the endorser.
    pub fn propose(&mut self, tx: ReadingTx) -> Result<(), ProposeError> {
        let out = self.customer.propose(tx)?;
        self.send_all(NodeId::Customer, out);
        Ok(())
    }

    /// Prepares and proposes in one step, returning the transaction id.
    pub fn submit(&mut self, meter_id: &str, reading: &str, timestamp_ms: u64, image_digest: &str, geo: Geo) -> String {
        let tx = self.prepare(meter_id, reading, timestamp_ms, image_digest, geo);
        let id = tx.tx_id.clone();
        self.propose(tx).expect("freshly signed transaction verifies");
        id
    }

    fn send_all(&mut self, from: NodeId, out: Outbox) {
        for (to, msg) in out {
            self.bus.send(from, to, msg);
        }
    }

    /// Moves the next delivered bus message into its recipient's inbox.
    pub fn deliver_next(&mut self) -> bool {
        match self.bus.step() {
            Some(env) => {
                self.inboxes.get_mut(&env.to).expect("inbox per node").push_back(env);
                self.tick_orderer();
                true
            }
            None => false,
        }
    }

    pub fn inbox_len(&self, node: NodeId) -> usize {
        self.inboxes[&node].len()
    }

    /// Lets each node consume its inbox one message at a time until all are empty.
    pub fn process_inboxes(&mut self) {
        loop {
            let mut progressed = false;
            for id in NodeId::ALL {
                if let Some(env) = self.inboxes.get_mut(&id).expect("inbox per node").pop_front() {
                    let now = self.bus.now();
                    let out = match id {
                        NodeId::Customer => self.customer.handle(env.from, env.msg),
                        NodeId::Endorser => self.endorser.handle(env.from, env.msg),
                        NodeId::Orderer => self.orderer.handle(env.from, env.msg, now),
                    };
                    self.send_all(id, out);
                    progressed = true;
                }
            }
            if !progressed {
                return;
            }
        }
    }

    fn tick_orderer(&mut self) {
        let out = self.orderer.tick(self.bus.now());
        self.send_all(NodeId::Orderer, out);
    }

    /// Runs until no message is in flight and every inbox is empty.
    pub fn run_until_quiescent(&mut self) {
        loop {
            self.process_inboxes();
            if !self.deliver_next() {
                self.process_inboxes();
                if self.bus.is_idle() {
                    return;
                }
            }
        }
    }

    /// Advances logical time to `t`, firing any flush timeouts on the way.
    pub fn advance_to(&mut self, t: u64) {
        loop {
            self.process_inboxes();
            match self.bus.step_until(t) {
                Some(env) => {
                    self.inboxes.get_mut(&env.to).expect("inbox per node").push_back(env);
                    self.tick_orderer();
                }
                None => break,
            }
        }
        self.bus.advance_clock(t);
        self.tick_orderer();
        self.run_until_quiescent();
    }

    /// Same timer check the orderer runs between deliveries.
    pub fn tick(&mut self) {
        self.tick_orderer();
        self.run_until_quiescent();
    }

    /// Cuts every queued transaction into blocks and waits for them to propagate.
    pub fn flush(&mut self) {
        self.run_until_quiescent();
        let out = self.orderer.flush();
        self.send_all(NodeId::Orderer, out);
        self.run_until_quiescent();
    }

    pub fn now(&self) -> u64 {
        self.bus.now()
    }

    pub fn status(&self, tx_id: &str) -> Option<TxStatus> {
        self.customer.status(tx_id)
    }

    pub fn pending_len(&self) -> usize {
        self.orderer.pending_len()
    }

    pub fn ledger(&self, node: NodeId) -> &LedgerState {
        match node {
            NodeId::Customer => self.customer.ledger(),
            NodeId::Endorser => self.endorser.ledger(),
            NodeId::Orderer => self.orderer.ledger(),
        }
    }

    pub fn customer(&self) -> &CustomerNode {
        &self.customer
    }

    pub fn endorser(&self) -> &EndorserNode {
        &self.endorser
    }

    pub fn orderer_mut(&mut self) -> &mut OrdererNode {
        &mut self.orderer
    }

    pub fn in_transit_to(&self, node: NodeId) -> usize {
        self.bus.in_transit_to(node)
    }

    pub fn bus_stats(&self) -> BusStats {
        self.bus.stats()
    }

    /// True once all three chains serialize identically.
    pub fn converged(&self) -> bool {
        let c = self.customer.ledger().chain_bytes();
        c == self.endorser.ledger().chain_bytes() && c == self.orderer.ledger().chain_bytes()
    }

    /// Injects a raw message as though `from` had sent it.
    pub fn inject(&mut self, from: NodeId, to: NodeId, msg: Message) {
        self.bus.send(from, to, msg);
    }
}

/// One reading in a generated workload.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadTx {
    pub meter_id: String,
    pub reading: String,
    pub timestamp_ms: u64,
    pub geo: Geo,
}

/// Seeded workload over `meters` meters with 5-digit registers. Readings per meter
/// never decrease. Returns the registered initial readings and the transactions.
pub fn demo_workload(seed: u64, txs: usize, meters: usize) -> (Vec<(String, String)>, Vec<WorkloadTx>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meters = meters.max(1);
    let mut current: Vec<u64> = (0..meters).map(|_| rng.gen_range(0..50_000)).collect();
    let initial = current.iter().enumerate().map(|(i, v)| (format!("M{:03}", i + 1), format!("{v:05}"))).collect();
    let mut out = Vec::with_capacity(txs);
    for i in 0..txs {
        let m = rng.gen_range(0..meters);
        current[m] = (current[m] + rng.gen_range(0..=40)).min(99_999);
        out.push(WorkloadTx {
            meter_id: format!("M{:03}", m + 1),
            reading: format!("{:05}", current[m]),
            timestamp_ms: 1_700_000_000_000 + i as u64 * 60_000,
            geo: Geo::new(12.97 + rng.gen_range(-0.05..0.05), 77.59 + rng.gen_range(-0.05..0.05)),
        });
    }
    (initial, out)
}

/// Runs a workload through a fresh network and flushes. Used by the demo and tests.
pub fn run_workload(config: LedgerConfig, auth: Arc<dyn Authenticator>, seed: u64, txs: usize, meters: usize) -> Network {
    let (initial, work) = demo_workload(seed, txs, meters);
    let mut net = Network::new(config, auth);
    for (id, reading) in &initial {
        net.register_meter(id, reading);
    }
    for w in work {
        let digest = hex::encode(sha2::Sha256::digest(format!("{}:{}", w.meter_id, w.reading)));
        net.submit(&w.meter_id, &w.reading, w.timestamp_ms, &digest, w.geo);
        net.run_until_quiescent();
    }
    net.flush();
    net
}
