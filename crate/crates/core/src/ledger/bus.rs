//! Deterministic message bus with per-link delay and loss. Each directed link runs
//! stop-and-wait: one message in flight, the receiver acks every copy it sees, and
//! the sender retransmits on timeout until acked. Delivery is exactly-once and FIFO
//! per link no matter how many copies are lost.

use super::node::Message;
use super::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusConfig {
    pub seed: u64,
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    pub drop_rate: f64,
    pub retransmit_ms: u64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self { seed: 0, min_delay_ms: 1, max_delay_ms: 5, drop_rate: 0.0, retransmit_ms: 50 }
    }
}

impl BusConfig {
    pub fn lossy(seed: u64, drop_rate: f64) -> Self {
        Self { seed, drop_rate, ..Self::default() }
    }
}

type Link = (NodeId, NodeId);

#[derive(Debug)]
enum Event {
    Data { link: Link, seq: u64 },
    Ack { link: Link, seq: u64 },
    Timeout { link: Link, seq: u64 },
}

#[derive(Debug, Default)]
struct LinkState {
    outgoing: VecDeque<(u64, Message)>,
    next_seq: u64,
    delivered_upto: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BusStats {
    pub sent: u64,
    pub dropped: u64,
    pub retransmitted: u64,
    pub delivered: u64,
}

/// A delivered message.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: NodeId,
    pub to: NodeId,
    pub at: u64,
    pub msg: Message,
}

#[derive(Debug)]
pub struct SimBus {
    config: BusConfig,
    rng: ChaCha8Rng,
    now: u64,
    order: u64,
    events: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: BTreeMap<u64, Event>,
    links: BTreeMap<Link, LinkState>,
    stats: BusStats,
}

impl SimBus {
    pub fn new(config: BusConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            now: 0,
            order: 0,
            events: BinaryHeap::new(),
            payloads: BTreeMap::new(),
            links: BTreeMap::new(),
            stats: BusStats::default(),
        }
    }

    pub fn config(&self) -> &BusConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.order += 1;
        self.events.push(Reverse((at, self.order)));
        self.payloads.insert(self.order, event);
    }

    fn delay(&mut self) -> u64 {
        let (lo, hi) = (self.config.min_delay_ms, self.config.max_delay_ms.max(self.config.min_delay_ms));
        self.rng.gen_range(lo..=hi)
    }

    fn lost(&mut self) -> bool {
        self.config.drop_rate > 0.0 && self.rng.gen::<f64>() < self.config.drop_rate
    }

    fn transmit(&mut self, link: Link, seq: u64) {
        self.stats.sent += 1;
        if self.lost() {
            self.stats.dropped += 1;
        } else {
            let at = self.now + self.delay();
            self.schedule(at, Event::Data { link, seq });
        }
        let at = self.now + self.config.retransmit_ms.max(1);
        self.schedule(at, Event::Timeout { link, seq });
    }

    /// Queues `msg` on the `from → to` link.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let link = (from, to);
        let state = self.links.entry(link).or_default();
        let seq = state.next_seq;
        state.next_seq += 1;
        state.outgoing.push_back((seq, msg));
        if state.outgoing.len() == 1 {
            self.transmit(link, seq);
        }
    }

    fn head_seq(&self, link: Link) -> Option<u64> {
        self.links.get(&link).and_then(|s| s.outgoing.front()).map(|(seq, _)| *seq)
    }

    /// Time of the next scheduled event.
    pub fn next_event_at(&self) -> Option<u64> {
        self.events.peek().map(|Reverse((at, _))| *at)
    }

    /// Processes events in time order until one delivers a message or none remain.
    pub fn step(&mut self) -> Option<Envelope> {
        self.step_until(u64::MAX)
    }

    /// Like [`SimBus::step`] but leaves events later than `deadline` queued.
    pub fn step_until(&mut self, deadline: u64) -> Option<Envelope> {
        while let Some(&Reverse((at, id))) = self.events.peek() {
            if at > deadline {
                return None;
            }
            self.events.pop();
            let event = self.payloads.remove(&id).expect("scheduled event has a payload");
            if let Event::Timeout { link, seq } = event {
                // Already acked: drop without moving the clock.
                if self.head_seq(link) != Some(seq) {
                    continue;
                }
            }
            self.now = self.now.max(at);
            if let Some(env) = self.handle(event) {
                return Some(env);
            }
        }
        None
    }

    fn handle(&mut self, event: Event) -> Option<Envelope> {
        match event {
            Event::Data { link, seq } => {
                if self.lost() {
                    self.stats.dropped += 1;
                } else {
                    let at = self.now + self.delay();
                    self.schedule(at, Event::Ack { link, seq });
                }
                let state = self.links.get_mut(&link)?;
                if seq != state.delivered_upto {
                    return None;
                }
                state.delivered_upto += 1;
                let msg = state.outgoing.front().filter(|(s, _)| *s == seq)?.1.clone();
                self.stats.delivered += 1;
                Some(Envelope { from: link.0, to: link.1, at: self.now, msg })
            }
            Event::Ack { link, seq } => {
                if self.head_seq(link) == Some(seq) {
                    let state = self.links.get_mut(&link)?;
                    state.outgoing.pop_front();
                    if let Some(&(next, _)) = state.outgoing.front() {
                        self.transmit(link, next);
                    }
                }
                None
            }
            Event::Timeout { link, seq } => {
                if self.head_seq(link) == Some(seq) {
                    self.stats.retransmitted += 1;
                    self.transmit(link, seq);
                }
                None
            }
        }
    }

    /// Moves the clock forward without delivering anything due after `t`.
    pub fn advance_clock(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    /// Messages addressed to `to` that have not been delivered yet.
    pub fn in_transit_to(&self, to: NodeId) -> usize {
        self.links
            .iter()
            .filter(|((_, dst), _)| *dst == to)
            .map(|(_, s)| s.outgoing.iter().filter(|(seq, _)| *seq >= s.delivered_upto).count())
            .sum()
    }

    /// No undelivered or unacknowledged messages remain.
    pub fn is_idle(&self) -> bool {
        self.links.values().all(|s| s.outgoing.is_empty())
    }
}
