//! Deterministic discrete-event message passing between simulated peers.
//!
//! Time is a logical tick counter. Every envelope is delivered one tick after
//! it is sent, envelopes due in the same tick are delivered in the order they
//! were enqueued, and every remote delivery is accounted per directed edge.
//! Self-addressed envelopes are delivered but cost nothing.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u64);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("peer {0} already exists")]
    DuplicatePeer(PeerId),
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),
    #[error("tick budget exhausted with {pending} envelopes still queued")]
    TickBudgetExceeded { pending: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: PeerId,
    pub to: PeerId,
    pub payload: Vec<u8>,
    pub deliver_at: u64,
}

impl Envelope {
    pub fn size(&self) -> usize {
        self.payload.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetworkStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    /// Self-addressed deliveries; not part of the totals.
    pub local_messages: u64,
    /// Envelopes whose recipient left before delivery.
    pub dropped: u64,
    pub per_edge: BTreeMap<(PeerId, PeerId), EdgeStats>,
}

impl NetworkStats {
    fn record(&mut self, from: PeerId, to: PeerId, bytes: u64) {
        self.messages_sent += 1;
        self.bytes_sent += bytes;
        let edge = self.per_edge.entry((from, to)).or_default();
        edge.messages += 1;
        edge.bytes += bytes;
    }

    /// What happened since `before`, assuming `before` is an earlier snapshot
    /// of the same counters.
    pub fn since(&self, before: &NetworkStats) -> NetworkStats {
        let mut per_edge = BTreeMap::new();
        for (edge, now) in &self.per_edge {
            let then = before.per_edge.get(edge).copied().unwrap_or_default();
            if now.messages > then.messages {
                per_edge.insert(
                    *edge,
                    EdgeStats {
                        messages: now.messages - then.messages,
                        bytes: now.bytes - then.bytes,
                    },
                );
            }
        }
        NetworkStats {
            messages_sent: self.messages_sent - before.messages_sent,
            bytes_sent: self.bytes_sent - before.bytes_sent,
            local_messages: self.local_messages - before.local_messages,
            dropped: self.dropped - before.dropped,
            per_edge,
        }
    }

    /// Totals agree with the per-edge breakdown.
    pub fn is_consistent(&self) -> bool {
        let (m, b) = self
            .per_edge
            .values()
            .fold((0, 0), |(m, b), e| (m + e.messages, b + e.bytes));
        m == self.messages_sent && b == self.bytes_sent
    }

    /// Flat text report: `from to messages bytes` per edge, then a totals line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for ((from, to), e) in &self.per_edge {
            let _ = writeln!(out, "{from} {to} {} {}", e.messages, e.bytes);
        }
        let _ = writeln!(out, "total {} {}", self.messages_sent, self.bytes_sent);
        out
    }
}

/// Messages a handler wants sent in reaction to a delivery.
#[derive(Debug)]
pub struct Outbox {
    me: PeerId,
    pending: Vec<(PeerId, Vec<u8>)>,
}

impl Outbox {
    pub fn me(&self) -> PeerId {
        self.me
    }

    pub fn send(&mut self, to: PeerId, payload: Vec<u8>) {
        self.pending.push((to, payload));
    }
}

pub trait PeerHandler {
    fn on_message(&mut self, envelope: &Envelope, outbox: &mut Outbox);
}

impl<F> PeerHandler for F
where
    F: FnMut(&Envelope, &mut Outbox),
{
    fn on_message(&mut self, envelope: &Envelope, outbox: &mut Outbox) {
        self(envelope, outbox)
    }
}

/// Handler that accepts and ignores everything.
pub struct Sink;

impl PeerHandler for Sink {
    fn on_message(&mut self, _: &Envelope, _: &mut Outbox) {}
}

pub struct Network {
    peers: BTreeMap<PeerId, Box<dyn PeerHandler>>,
    queue: VecDeque<Envelope>,
    tick: u64,
    header_overhead: u64,
    stats: NetworkStats,
}

impl Default for Network {
    fn default() -> Self {
        Self::new()
    }
}

impl Network {
    pub fn new() -> Self {
        Self {
            peers: BTreeMap::new(),
            queue: VecDeque::new(),
            tick: 0,
            header_overhead: 0,
            stats: NetworkStats::default(),
        }
    }

    /// Adds a fixed number of bytes to every remote delivery.
    pub fn with_header_overhead(mut self, bytes: u64) -> Self {
        self.header_overhead = bytes;
        self
    }

    pub fn spawn_peer(&mut self, id: PeerId, handler: impl PeerHandler + 'static) -> Result<(), NetError> {
        if self.peers.contains_key(&id) {
            return Err(NetError::DuplicatePeer(id));
        }
        self.peers.insert(id, Box::new(handler));
        Ok(())
    }

    pub fn remove_peer(&mut self, id: PeerId) -> Result<(), NetError> {
        self.peers
            .remove(&id)
            .map(|_| ())
            .ok_or(NetError::UnknownPeer(id))
    }

    pub fn contains(&self, id: PeerId) -> bool {
        self.peers.contains_key(&id)
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.peers.keys().copied()
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn stats(&self) -> &NetworkStats {
        &self.stats
    }

    pub fn send(&mut self, from: PeerId, to: PeerId, payload: Vec<u8>) -> Result<(), NetError> {
        for id in [from, to] {
            if !self.peers.contains_key(&id) {
                return Err(NetError::UnknownPeer(id));
            }
        }
        self.enqueue(from, to, payload);
        Ok(())
    }

    fn enqueue(&mut self, from: PeerId, to: PeerId, payload: Vec<u8>) {
        self.queue.push_back(Envelope {
            from,
            to,
            payload,
            deliver_at: self.tick + 1,
        });
    }

    /// Delivers queued envelopes tick by tick until nothing is left, running
    /// at most `max_ticks` ticks. Returns the accumulated stats.
    pub fn run_until_quiescent(&mut self, max_ticks: u64) -> Result<NetworkStats, NetError> {
        let mut ticks = 0;
        while let Some(front) = self.queue.front() {
            if ticks == max_ticks {
                return Err(NetError::TickBudgetExceeded {
                    pending: self.queue.len(),
                });
            }
            ticks += 1;
            self.tick = front.deliver_at;
            while self.queue.front().is_some_and(|e| e.deliver_at == self.tick) {
                let envelope = self.queue.pop_front().expect("checked front");
                self.deliver(envelope);
            }
        }
        Ok(self.stats.clone())
    }

    fn deliver(&mut self, envelope: Envelope) {
        let Some(handler) = self.peers.get_mut(&envelope.to) else {
            self.stats.dropped += 1;
            return;
        };
        if envelope.from == envelope.to {
            self.stats.local_messages += 1;
        } else {
            self.stats.record(
                envelope.from,
                envelope.to,
                envelope.size() as u64 + self.header_overhead,
            );
        }
        let mut outbox = Outbox {
            me: envelope.to,
            pending: Vec::new(),
        };
        handler.on_message(&envelope, &mut outbox);
        for (to, payload) in outbox.pending {
            self.enqueue(envelope.to, to, payload);
        }
    }

    /// Sends one envelope and runs the loop until it (and anything it
    /// triggers) has been delivered.
    pub fn transmit(&mut self, from: PeerId, to: PeerId, payload: Vec<u8>) -> Result<(), NetError> {
        self.send(from, to, payload)?;
        self.run_until_quiescent(u64::MAX)?;
        Ok(())
    }
}
