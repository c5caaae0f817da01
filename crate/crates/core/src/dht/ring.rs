//! Chord-style ring. A peer owns the arc `(predecessor, self]`.

use std::collections::BTreeMap;
use std::ops::Bound;

use super::{DhtError, DhtValue, KeyMode, Routing, StoreMap};
use crate::net::PeerId;

pub(crate) struct HashRing {
    pub(crate) mode: KeyMode,
    pub(crate) routing: Routing,
    seed: u64,
    ring: BTreeMap<u64, PeerId>,
    position: BTreeMap<PeerId, u64>,
    pub(crate) store: BTreeMap<PeerId, StoreMap>,
}

/// `x` in the wrapping half-open arc `(lo, hi]`.
fn in_arc(x: u64, lo: u64, hi: u64) -> bool {
    if lo < hi {
        lo < x && x <= hi
    } else {
        x > lo || x <= hi
    }
}

impl HashRing {
    pub(crate) fn new(mode: KeyMode, routing: Routing, seed: u64) -> Self {
        Self {
            mode,
            routing,
            seed,
            ring: BTreeMap::new(),
            position: BTreeMap::new(),
            store: BTreeMap::new(),
        }
    }

    pub(crate) fn peer_position(&self, peer: PeerId) -> u64 {
        match self.mode {
            KeyMode::Numeric => peer.0,
            KeyMode::Hashed => {
                let mut bytes = self.seed.to_be_bytes().to_vec();
                bytes.extend_from_slice(b"peer:");
                bytes.extend_from_slice(&peer.0.to_be_bytes());
                super::fnv1a64(&bytes)
            }
        }
    }

    pub(crate) fn key_position(&self, key: &str) -> u64 {
        match self.mode {
            KeyMode::Numeric => key.parse().unwrap_or_else(|_| super::fnv1a64(key.as_bytes())),
            KeyMode::Hashed => super::fnv1a64(key.as_bytes()),
        }
    }

    pub(crate) fn is_member(&self, peer: PeerId) -> bool {
        self.position.contains_key(&peer)
    }

    pub(crate) fn members(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.ring.values().copied()
    }

    pub(crate) fn len(&self) -> usize {
        self.ring.len()
    }

    pub(crate) fn position_of(&self, peer: PeerId) -> Option<u64> {
        self.position.get(&peer).copied()
    }

    pub(crate) fn owner(&self, pos: u64) -> Option<PeerId> {
        self.ring
            .range(pos..)
            .next()
            .or_else(|| self.ring.iter().next())
            .map(|(_, p)| *p)
    }

    pub(crate) fn successor(&self, peer: PeerId) -> PeerId {
        let pos = self.position[&peer];
        self.ring
            .range((Bound::Excluded(pos), Bound::Unbounded))
            .next()
            .or_else(|| self.ring.iter().next())
            .map(|(_, p)| *p)
            .expect("peer is a member")
    }

    pub(crate) fn predecessor(&self, peer: PeerId) -> PeerId {
        let pos = self.position[&peer];
        self.ring
            .range(..pos)
            .next_back()
            .or_else(|| self.ring.iter().next_back())
            .map(|(_, p)| *p)
            .expect("peer is a member")
    }

    /// Peers visited from `from` to the owner of `pos`, both ends included.
    pub(crate) fn route(&self, from: PeerId, pos: u64) -> Vec<PeerId> {
        let owner = self.owner(pos).expect("nonempty ring");
        match self.routing {
            Routing::Shortcut => {
                if from == owner {
                    vec![from]
                } else {
                    vec![from, owner]
                }
            }
            Routing::Successor => {
                let mut path = vec![from];
                let mut cur = from;
                while cur != owner {
                    cur = self.successor(cur);
                    path.push(cur);
                }
                path
            }
        }
    }

    /// Inserts `peer`; returns the successor it took keys from and those keys.
    pub(crate) fn join(&mut self, peer: PeerId) -> Result<Option<(PeerId, StoreMap)>, DhtError> {
        if self.is_member(peer) {
            return Err(DhtError::AlreadyMember(peer));
        }
        let pos = self.peer_position(peer);
        if self.ring.contains_key(&pos) {
            return Err(DhtError::PositionTaken(peer));
        }
        self.ring.insert(pos, peer);
        self.position.insert(peer, pos);
        self.store.insert(peer, StoreMap::new());
        if self.ring.len() == 1 {
            return Ok(None);
        }
        let succ = self.successor(peer);
        let pred_pos = self.position[&self.predecessor(peer)];
        let moving: Vec<String> = self.store[&succ]
            .keys()
            .filter(|k| in_arc(self.key_position(k), pred_pos, pos))
            .cloned()
            .collect();
        let mut moved = StoreMap::new();
        let succ_store = self.store.get_mut(&succ).expect("member store");
        for key in moving {
            let values = succ_store.remove(&key).expect("listed key");
            moved.insert(key, values);
        }
        let mine = self.store.get_mut(&peer).expect("just inserted");
        for (k, v) in &moved {
            mine.insert(k.clone(), v.clone());
        }
        Ok(Some((succ, moved)))
    }

    /// Removes `peer`; returns the successor that absorbed its keys.
    pub(crate) fn leave(&mut self, peer: PeerId) -> Result<Option<(PeerId, StoreMap)>, DhtError> {
        if !self.is_member(peer) {
            return Err(DhtError::NotMember(peer));
        }
        let succ = self.successor(peer);
        let pos = self.position.remove(&peer).expect("member");
        self.ring.remove(&pos);
        let keys = self.store.remove(&peer).unwrap_or_default();
        if succ == peer {
            return Ok(None);
        }
        let target = self.store.get_mut(&succ).expect("member store");
        for (k, vs) in &keys {
            target.entry(k.clone()).or_default().extend(vs.iter().cloned());
        }
        Ok(Some((succ, keys)))
    }

    pub(crate) fn append(&mut self, owner: PeerId, key: &str, value: DhtValue) {
        self.store
            .get_mut(&owner)
            .expect("owner is a member")
            .entry(key.to_string())
            .or_default()
            .push(value);
    }

    pub(crate) fn values(&self, owner: PeerId, key: &str) -> &[DhtValue] {
        self.store
            .get(&owner)
            .and_then(|s| s.get(key))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        let Some(&start) = self.ring.values().next() else {
            return Ok(());
        };
        let mut seen = Vec::new();
        let mut cur = start;
        loop {
            seen.push(cur);
            cur = self.successor(cur);
            if cur == start || seen.len() > self.ring.len() {
                break;
            }
        }
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != seen.len() || seen.len() != self.ring.len() {
            return Err(format!("successor walk {seen:?} is not a permutation of the ring"));
        }
        for peer in self.members() {
            let pred = self.position[&self.predecessor(peer)];
            let me = self.position[&peer];
            for key in self.store[&peer].keys() {
                let kp = self.key_position(key);
                if self.ring.len() > 1 && !in_arc(kp, pred, me) {
                    return Err(format!("peer {peer} holds key {key:?} outside its arc"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arcs() {
        assert!(in_arc(30, 10, 30));
        assert!(!in_arc(10, 10, 30));
        assert!(in_arc(95, 90, 10));
        assert!(in_arc(5, 90, 10));
        assert!(!in_arc(50, 90, 10));
    }

    #[test]
    fn join_between() {
        let mut ring = HashRing::new(KeyMode::Numeric, Routing::Successor, 0);
        for p in [10, 50, 90] {
            ring.join(PeerId(p)).unwrap();
        }
        ring.append(PeerId(50), "20", DhtValue(vec![1]));
        ring.append(PeerId(50), "40", DhtValue(vec![2]));
        let (from, moved) = ring.join(PeerId(30)).unwrap().unwrap();
        assert_eq!(from, PeerId(50));
        assert_eq!(moved.keys().collect::<Vec<_>>(), ["20"]);
        assert_eq!(ring.predecessor(PeerId(30)), PeerId(10));
        assert_eq!(ring.owner(11), Some(PeerId(30)));
        assert_eq!(ring.owner(30), Some(PeerId(30)));
        assert_eq!(ring.owner(31), Some(PeerId(50)));
        assert_eq!(ring.owner(95), Some(PeerId(10)));
        ring.check().unwrap();
    }

    #[test]
    fn successor_route_is_bounded() {
        let mut ring = HashRing::new(KeyMode::Numeric, Routing::Successor, 0);
        for p in [10, 30, 50, 90] {
            ring.join(PeerId(p)).unwrap();
        }
        assert_eq!(
            ring.route(PeerId(50), 20),
            vec![PeerId(50), PeerId(90), PeerId(10), PeerId(30)]
        );
        assert_eq!(ring.route(PeerId(30), 20), vec![PeerId(30)]);
    }
}
