//! Coexisting overlays over the simulated network.
//!
//! A [`DhtService`] owns the [`Network`] and any number of overlays, each
//! identified by a [`DhtId`]. A peer can be a member of any subset of them and
//! is then an endpoint for that overlay's join/leave/put/get. Hash overlays
//! are Chord-style rings; range overlays partition an ordered key domain and
//! additionally answer interval queries.
//!
//! Overlay state lives here, keyed by peer; every hop, reply and key transfer
//! is sent through the network so byte accounting reflects real traffic.

mod range;
mod ring;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::net::{NetError, Network, NetworkStats, PeerId, Sink};
use range::RangePartition;
use ring::HashRing;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DhtError {
    #[error("unknown overlay {0}")]
    UnknownDht(DhtId),
    #[error("overlay {0} already exists")]
    DuplicateDht(DhtId),
    #[error("peer {0} is already a member")]
    AlreadyMember(PeerId),
    #[error("peer {0} is not a member")]
    NotMember(PeerId),
    #[error("overlay has no members")]
    NoMembers,
    #[error("overlay {0} does not support interval queries")]
    NotRangeCapable(DhtId),
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("ring position of peer {0} is already taken")]
    PositionTaken(PeerId),
    #[error("no range is wide enough to split")]
    CannotSplit,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtId(pub u16);

impl fmt::Display for DhtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Nonempty key text.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtKey(String);

impl DhtKey {
    pub fn new(text: impl Into<String>) -> Result<Self, DhtError> {
        let text = text.into();
        if text.is_empty() {
            return Err(DhtError::InvalidKey(text));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ring position under the given key mode.
    pub fn ring_position(&self, mode: KeyMode) -> u64 {
        match mode {
            KeyMode::Numeric => self.0.parse().unwrap_or_else(|_| fnv1a64(self.0.as_bytes())),
            KeyMode::Hashed => fnv1a64(self.0.as_bytes()),
        }
    }
}

impl fmt::Display for DhtKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtValue(pub Vec<u8>);

pub(crate) type StoreMap = BTreeMap<String, Vec<DhtValue>>;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// How keys (and, on rings, peers) are mapped to positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyMode {
    /// FNV-1a on rings, order-preserving byte embedding on ranges.
    Hashed,
    /// Decimal key text is its own position; ring peers sit at their id.
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Forward along successor links only.
    Successor,
    /// Every member knows every other member; one hop to the owner.
    Shortcut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlayKind {
    Hash,
    Range,
}

impl fmt::Display for OverlayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlayKind::Hash => "hash",
            OverlayKind::Range => "range",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayConfig {
    pub kind: OverlayKind,
    pub mode: KeyMode,
    pub routing: Routing,
    /// Position domain of a range overlay; defaults depend on the key mode.
    pub domain: Option<(u128, u128)>,
}

impl OverlayConfig {
    pub fn hash() -> Self {
        Self {
            kind: OverlayKind::Hash,
            mode: KeyMode::Hashed,
            routing: Routing::Successor,
            domain: None,
        }
    }

    pub fn range() -> Self {
        Self {
            kind: OverlayKind::Range,
            ..Self::hash()
        }
    }

    pub fn numeric(mut self) -> Self {
        self.mode = KeyMode::Numeric;
        self
    }

    pub fn routing(mut self, routing: Routing) -> Self {
        self.routing = routing;
        self
    }

    pub fn domain(mut self, lo: u128, hi: u128) -> Self {
        self.domain = Some((lo, hi));
        self
    }
}

enum Overlay {
    Hash(HashRing),
    Range(RangePartition),
}

impl Overlay {
    fn len(&self) -> usize {
        match self {
            Overlay::Hash(r) => r.len(),
            Overlay::Range(r) => r.len(),
        }
    }

    fn is_member(&self, peer: PeerId) -> bool {
        match self {
            Overlay::Hash(r) => r.is_member(peer),
            Overlay::Range(r) => r.is_member(peer),
        }
    }
}

/// Wire encoding of overlay messages. Only the sizes matter to the
/// simulation, but the layout is a real one.
mod wire {
    use super::DhtValue;

    pub const PUT: u8 = 1;
    pub const GET: u8 = 2;
    pub const REPLY: u8 = 3;
    pub const COUNT: u8 = 4;
    pub const COUNT_REPLY: u8 = 5;
    pub const RANGE: u8 = 6;
    pub const RANGE_REPLY: u8 = 7;
    pub const JOIN: u8 = 8;
    pub const TRANSFER: u8 = 9;

    pub struct Msg(Vec<u8>);

    impl Msg {
        pub fn new(op: u8) -> Self {
            Msg(vec![op])
        }

        pub fn u32(mut self, v: u32) -> Self {
            self.0.extend_from_slice(&v.to_be_bytes());
            self
        }

        pub fn u64(mut self, v: u64) -> Self {
            self.0.extend_from_slice(&v.to_be_bytes());
            self
        }

        pub fn text(mut self, s: &str) -> Self {
            self.0.extend_from_slice(&(s.len() as u16).to_be_bytes());
            self.0.extend_from_slice(s.as_bytes());
            self
        }

        pub fn value(mut self, v: &DhtValue) -> Self {
            self.0.extend_from_slice(&(v.0.len() as u32).to_be_bytes());
            self.0.extend_from_slice(&v.0);
            self
        }

        pub fn values<'a>(self, vs: impl ExactSizeIterator<Item = &'a DhtValue>) -> Self {
            let mut m = self.u32(vs.len() as u32);
            for v in vs {
                m = m.value(v);
            }
            m
        }

        pub fn pairs<'a>(self, n: usize, items: impl Iterator<Item = (&'a str, &'a DhtValue)>) -> Self {
            let mut m = self.u32(n as u32);
            for (k, v) in items {
                m = m.text(k).value(v);
            }
            m
        }

        pub fn finish(self) -> Vec<u8> {
            self.0
        }
    }
}

use wire::Msg;

/// Result of an interval query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeAnswer {
    pub items: Vec<(String, DhtValue)>,
    /// Members asked to scan, in key order.
    pub contacted: Vec<PeerId>,
}

pub struct DhtService {
    net: Network,
    seed: u64,
    overlays: BTreeMap<DhtId, Overlay>,
    version: u64,
}

impl DhtService {
    pub fn new(seed: u64) -> Self {
        Self::with_network(Network::new(), seed)
    }

    pub fn with_network(net: Network, seed: u64) -> Self {
        Self {
            net,
            seed,
            overlays: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn stats(&self) -> &NetworkStats {
        self.net.stats()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bumped by every successful put.
    pub fn write_version(&self) -> u64 {
        self.version
    }

    pub fn add_peer(&mut self, peer: PeerId) -> Result<(), DhtError> {
        Ok(self.net.spawn_peer(peer, Sink)?)
    }

    /// Leaves every overlay gracefully, then drops the peer from the network.
    pub fn remove_peer(&mut self, peer: PeerId) -> Result<(), DhtError> {
        let ids: Vec<DhtId> = self
            .overlays
            .iter()
            .filter(|(_, o)| o.is_member(peer))
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            self.leave(id, peer)?;
        }
        Ok(self.net.remove_peer(peer)?)
    }

    pub fn create_overlay(&mut self, id: DhtId, config: OverlayConfig) -> Result<(), DhtError> {
        if self.overlays.contains_key(&id) {
            return Err(DhtError::DuplicateDht(id));
        }
        let overlay = match config.kind {
            OverlayKind::Hash => Overlay::Hash(HashRing::new(config.mode, config.routing, self.seed)),
            OverlayKind::Range => Overlay::Range(RangePartition::new(config.mode, config.domain)),
        };
        self.overlays.insert(id, overlay);
        Ok(())
    }

    pub fn overlay_ids(&self) -> impl Iterator<Item = DhtId> + '_ {
        self.overlays.keys().copied()
    }

    pub fn kind(&self, dht: DhtId) -> Result<OverlayKind, DhtError> {
        Ok(match self.overlay(dht)? {
            Overlay::Hash(_) => OverlayKind::Hash,
            Overlay::Range(_) => OverlayKind::Range,
        })
    }

    fn overlay(&self, dht: DhtId) -> Result<&Overlay, DhtError> {
        self.overlays.get(&dht).ok_or(DhtError::UnknownDht(dht))
    }

    fn overlay_mut(&mut self, dht: DhtId) -> Result<&mut Overlay, DhtError> {
        self.overlays.get_mut(&dht).ok_or(DhtError::UnknownDht(dht))
    }

    /// Members of `dht`, in ring or key order.
    pub fn members(&self, dht: DhtId) -> Result<Vec<PeerId>, DhtError> {
        Ok(match self.overlay(dht)? {
            Overlay::Hash(r) => r.members().collect(),
            Overlay::Range(r) => r.members().collect(),
        })
    }

    pub fn is_member(&self, dht: DhtId, peer: PeerId) -> Result<bool, DhtError> {
        Ok(self.overlay(dht)?.is_member(peer))
    }

    fn check_via(&self, dht: DhtId, via: PeerId) -> Result<&Overlay, DhtError> {
        let overlay = self.overlay(dht)?;
        if overlay.len() == 0 {
            return Err(DhtError::NoMembers);
        }
        if !overlay.is_member(via) {
            return Err(DhtError::NotMember(via));
        }
        Ok(overlay)
    }

    fn transmit(&mut self, from: PeerId, to: PeerId, payload: Vec<u8>) -> Result<(), DhtError> {
        Ok(self.net.transmit(from, to, payload)?)
    }

    fn transmit_path(&mut self, path: &[PeerId], payload: &[u8]) -> Result<(), DhtError> {
        for hop in path.windows(2) {
            self.transmit(hop[0], hop[1], payload.to_vec())?;
        }
        Ok(())
    }

    pub fn join(&mut self, dht: DhtId, peer: PeerId) -> Result<(), DhtError> {
        if !self.net.contains(peer) {
            return Err(NetError::UnknownPeer(peer).into());
        }
        let handoff = match self.overlay_mut(dht)? {
            Overlay::Hash(r) => r.join(peer)?.map(|(from, moved)| {
                let n = moved.values().map(Vec::len).sum();
                let items = moved.iter().flat_map(|(k, vs)| vs.iter().map(move |v| (k.as_str(), v)));
                (from, Msg::new(wire::TRANSFER).pairs(n, items).finish())
            }),
            Overlay::Range(r) => r.join(peer)?.map(|(from, moved)| {
                let n = moved.values().map(Vec::len).sum();
                let items = moved
                    .iter()
                    .flat_map(|((_, k), vs)| vs.iter().map(move |v| (k.as_str(), v)));
                (from, Msg::new(wire::TRANSFER).pairs(n, items).finish())
            }),
        };
        if let Some((from, transfer)) = handoff {
            self.transmit(peer, from, Msg::new(wire::JOIN).u64(peer.0).finish())?;
            self.transmit(from, peer, transfer)?;
        }
        Ok(())
    }

    pub fn leave(&mut self, dht: DhtId, peer: PeerId) -> Result<(), DhtError> {
        let handoff = match self.overlay_mut(dht)? {
            Overlay::Hash(r) => r.leave(peer)?.map(|(to, keys)| {
                let n = keys.values().map(Vec::len).sum();
                let items = keys.iter().flat_map(|(k, vs)| vs.iter().map(move |v| (k.as_str(), v)));
                (to, Msg::new(wire::TRANSFER).pairs(n, items).finish())
            }),
            Overlay::Range(r) => r.leave(peer)?.map(|(to, keys)| {
                let n = keys.values().map(Vec::len).sum();
                let items = keys
                    .iter()
                    .flat_map(|((_, k), vs)| vs.iter().map(move |v| (k.as_str(), v)));
                (to, Msg::new(wire::TRANSFER).pairs(n, items).finish())
            }),
        };
        if let Some((to, transfer)) = handoff {
            self.transmit(peer, to, transfer)?;
        }
        Ok(())
    }

    /// Member responsible for `key`; no traffic.
    pub fn owner(&self, dht: DhtId, key: &DhtKey) -> Result<PeerId, DhtError> {
        match self.overlay(dht)? {
            Overlay::Hash(r) => r.owner(r.key_position(key.as_str())).ok_or(DhtError::NoMembers),
            Overlay::Range(r) => {
                let pos = r.position(key.as_str())?;
                r.owner(pos).ok_or(DhtError::NoMembers)
            }
        }
    }

    /// Path a request from `via` takes to the owner of `key`.
    fn path(&self, dht: DhtId, via: PeerId, key: &DhtKey) -> Result<Vec<PeerId>, DhtError> {
        match self.check_via(dht, via)? {
            Overlay::Hash(r) => Ok(r.route(via, r.key_position(key.as_str()))),
            Overlay::Range(r) => {
                let owner = r.owner(r.position(key.as_str())?).ok_or(DhtError::NoMembers)?;
                Ok(if owner == via { vec![via] } else { vec![via, owner] })
            }
        }
    }

    pub fn put(&mut self, dht: DhtId, via: PeerId, key: &DhtKey, value: DhtValue) -> Result<(), DhtError> {
        let path = self.path(dht, via, key)?;
        let msg = Msg::new(wire::PUT).text(key.as_str()).value(&value).finish();
        self.transmit_path(&path, &msg)?;
        let owner = *path.last().expect("path ends at owner");
        match self.overlay_mut(dht)? {
            Overlay::Hash(r) => r.append(owner, key.as_str(), value),
            Overlay::Range(r) => {
                let pos = r.position(key.as_str())?;
                r.store
                    .get_mut(&owner)
                    .expect("owner store")
                    .entry((pos, key.as_str().to_string()))
                    .or_default()
                    .push(value);
            }
        }
        self.version += 1;
        Ok(())
    }

    fn stored(&self, dht: DhtId, owner: PeerId, key: &DhtKey) -> Result<Vec<DhtValue>, DhtError> {
        Ok(match self.overlay(dht)? {
            Overlay::Hash(r) => r.values(owner, key.as_str()).to_vec(),
            Overlay::Range(r) => {
                let pos = r.position(key.as_str())?;
                r.store[&owner]
                    .get(&(pos, key.as_str().to_string()))
                    .cloned()
                    .unwrap_or_default()
            }
        })
    }

    /// All values stored under `key`, in insertion order.
    pub fn get(&mut self, dht: DhtId, via: PeerId, key: &DhtKey) -> Result<Vec<DhtValue>, DhtError> {
        let path = self.path(dht, via, key)?;
        self.transmit_path(&path, &Msg::new(wire::GET).text(key.as_str()).finish())?;
        let owner = *path.last().expect("path ends at owner");
        let values = self.stored(dht, owner, key)?;
        self.transmit(owner, via, Msg::new(wire::REPLY).values(values.iter()).finish())?;
        Ok(values)
    }

    /// Number of values under `key`; the reply carries only the count.
    pub fn count(&mut self, dht: DhtId, via: PeerId, key: &DhtKey) -> Result<usize, DhtError> {
        let path = self.path(dht, via, key)?;
        self.transmit_path(&path, &Msg::new(wire::COUNT).text(key.as_str()).finish())?;
        let owner = *path.last().expect("path ends at owner");
        let n = self.stored(dht, owner, key)?.len();
        self.transmit(owner, via, Msg::new(wire::COUNT_REPLY).u64(n as u64).finish())?;
        Ok(n)
    }

    /// All pairs with `lo <= key < hi` in key order. Only range overlays
    /// answer; exactly the members whose ranges intersect the interval are
    /// contacted.
    pub fn get_range(&mut self, dht: DhtId, via: PeerId, lo: &str, hi: &str) -> Result<RangeAnswer, DhtError> {
        let overlay = self.check_via(dht, via)?;
        let Overlay::Range(r) = overlay else {
            return Err(DhtError::NotRangeCapable(dht));
        };
        let (peers, lo_key, hi_key) = r.intersecting(lo, hi)?;
        let mut replies = Vec::new();
        for &peer in &peers {
            let part: Vec<(String, DhtValue)> = r.store[&peer]
                .range(lo_key.clone()..hi_key.clone())
                .flat_map(|((_, k), vs)| vs.iter().map(move |v| (k.clone(), v.clone())))
                .collect();
            replies.push((peer, part));
        }
        let request = Msg::new(wire::RANGE).text(lo).text(hi).finish();
        let mut items = Vec::new();
        for (peer, part) in replies {
            self.transmit(via, peer, request.clone())?;
            let reply = Msg::new(wire::RANGE_REPLY)
                .pairs(part.len(), part.iter().map(|(k, v)| (k.as_str(), v)))
                .finish();
            self.transmit(peer, via, reply)?;
            items.extend(part);
        }
        Ok(RangeAnswer {
            items,
            contacted: peers,
        })
    }

    /// Ring integrity / partition invariants of one overlay.
    pub fn check_invariants(&self, dht: DhtId) -> Result<(), String> {
        match self.overlay(dht).map_err(|e| e.to_string())? {
            Overlay::Hash(r) => r.check(),
            Overlay::Range(r) => r.check(),
        }
    }

    /// Successor of `peer` on a hash overlay.
    pub fn successor(&self, dht: DhtId, peer: PeerId) -> Result<PeerId, DhtError> {
        match self.overlay(dht)? {
            Overlay::Hash(r) if r.is_member(peer) => Ok(r.successor(peer)),
            Overlay::Hash(_) => Err(DhtError::NotMember(peer)),
            Overlay::Range(_) => Err(DhtError::NotRangeCapable(dht)),
        }
    }

    /// Ring position of a hash-overlay member.
    pub fn ring_position(&self, dht: DhtId, peer: PeerId) -> Result<u64, DhtError> {
        match self.overlay(dht)? {
            Overlay::Hash(r) => r.position_of(peer).ok_or(DhtError::NotMember(peer)),
            Overlay::Range(_) => Err(DhtError::NotRangeCapable(dht)),
        }
    }

    /// Range owned by a range-overlay member.
    pub fn range_of(&self, dht: DhtId, peer: PeerId) -> Result<(u128, u128), DhtError> {
        match self.overlay(dht)? {
            Overlay::Range(r) => r.range_of(peer).ok_or(DhtError::NotMember(peer)),
            Overlay::Hash(_) => Err(DhtError::NotRangeCapable(dht)),
        }
    }

    /// One line per member: `dht_id peer_id range_or_position key_count`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, overlay) in &self.overlays {
            match overlay {
                Overlay::Hash(r) => {
                    for peer in r.members() {
                        let pos = r.position_of(peer).expect("member");
                        let _ = writeln!(out, "{id} {peer} {pos} {}", r.store[&peer].len());
                    }
                }
                Overlay::Range(r) => {
                    for peer in r.members() {
                        let (lo, hi) = r.range_of(peer).expect("member");
                        let _ = writeln!(out, "{id} {peer} [{lo},{hi}) {}", r.store[&peer].len());
                    }
                }
            }
        }
        out
    }
}
