//! Order-preserving partition of the key domain into contiguous ranges.
//!
//! Keys are mapped to `u128` positions by an order-preserving embedding
//! (decimal value in numeric mode, 15-byte big-endian prefix otherwise).
//! Each member owns one half-open position range `[lo, hi)`.

use std::collections::BTreeMap;

use super::{DhtError, DhtValue, KeyMode};
use crate::net::PeerId;

pub(crate) const PREFIX_BYTES: usize = 15;
pub(crate) const BYTE_DOMAIN: u128 = 1 << (8 * PREFIX_BYTES);

/// Keys ordered by position, ties by text.
pub(crate) type OrderedStore = BTreeMap<StoreKey, Vec<DhtValue>>;
/// Position then key text, so keys sharing a position stay distinct.
pub(crate) type StoreKey = (u128, String);

pub(crate) struct RangePartition {
    pub(crate) mode: KeyMode,
    pub(crate) domain: (u128, u128),
    /// lo -> (hi, owner)
    parts: BTreeMap<u128, (u128, PeerId)>,
    member: BTreeMap<PeerId, u128>,
    pub(crate) store: BTreeMap<PeerId, OrderedStore>,
}

impl RangePartition {
    pub(crate) fn new(mode: KeyMode, domain: Option<(u128, u128)>) -> Self {
        let domain = domain.unwrap_or(match mode {
            KeyMode::Numeric => (0, u64::MAX as u128 + 1),
            KeyMode::Hashed => (0, BYTE_DOMAIN),
        });
        Self {
            mode,
            domain,
            parts: BTreeMap::new(),
            member: BTreeMap::new(),
            store: BTreeMap::new(),
        }
    }

    pub(crate) fn position(&self, key: &str) -> Result<u128, DhtError> {
        match self.mode {
            KeyMode::Numeric => {
                let value: u128 = key
                    .parse()
                    .map_err(|_| DhtError::InvalidKey(key.to_string()))?;
                if value.to_string() != key || value < self.domain.0 || value >= self.domain.1 {
                    return Err(DhtError::InvalidKey(key.to_string()));
                }
                Ok(value)
            }
            KeyMode::Hashed => {
                let mut buf = [0u8; 16];
                for (slot, b) in buf[1..].iter_mut().zip(key.bytes()) {
                    *slot = b;
                }
                Ok(u128::from_be_bytes(buf))
            }
        }
    }

    /// Whether every key ordered below `key` also has a strictly smaller position.
    fn exact(&self, key: &str) -> bool {
        match self.mode {
            KeyMode::Numeric => true,
            KeyMode::Hashed => key.len() <= PREFIX_BYTES && !key.ends_with('\0'),
        }
    }

    pub(crate) fn is_member(&self, peer: PeerId) -> bool {
        self.member.contains_key(&peer)
    }

    pub(crate) fn len(&self) -> usize {
        self.member.len()
    }

    /// Members in key order.
    pub(crate) fn members(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.parts.values().map(|(_, p)| *p)
    }

    pub(crate) fn range_of(&self, peer: PeerId) -> Option<(u128, u128)> {
        let lo = *self.member.get(&peer)?;
        Some((lo, self.parts[&lo].0))
    }

    pub(crate) fn owner(&self, pos: u128) -> Option<PeerId> {
        self.parts
            .range(..=pos)
            .next_back()
            .filter(|(_, (hi, _))| pos < *hi)
            .map(|(_, (_, p))| *p)
    }

    /// Joins `peer`; returns the member that split its range and the keys handed over.
    pub(crate) fn join(&mut self, peer: PeerId) -> Result<Option<(PeerId, OrderedStore)>, DhtError> {
        if self.is_member(peer) {
            return Err(DhtError::AlreadyMember(peer));
        }
        if self.parts.is_empty() {
            self.parts.insert(self.domain.0, (self.domain.1, peer));
            self.member.insert(peer, self.domain.0);
            self.store.insert(peer, OrderedStore::new());
            return Ok(None);
        }
        // Widest range; the lowest one on ties.
        let (lo, hi, donor) = self
            .parts
            .iter()
            .map(|(lo, (hi, p))| (*lo, *hi, *p))
            .max_by(|a, b| (a.1 - a.0).cmp(&(b.1 - b.0)).then(b.0.cmp(&a.0)))
            .expect("nonempty");
        if hi - lo < 2 {
            return Err(DhtError::CannotSplit);
        }
        let mid = lo + (hi - lo) / 2;
        self.parts.insert(lo, (mid, donor));
        self.parts.insert(mid, (hi, peer));
        self.member.insert(peer, mid);
        let donor_store = self.store.get_mut(&donor).expect("member store");
        let moved = donor_store.split_off(&(mid, String::new()));
        self.store.insert(peer, moved.clone());
        Ok(Some((donor, moved)))
    }

    /// Removes `peer`; the adjacent range with the smaller width absorbs its
    /// interval and keys (the lower neighbour on ties).
    pub(crate) fn leave(&mut self, peer: PeerId) -> Result<Option<(PeerId, OrderedStore)>, DhtError> {
        let lo = self.member.remove(&peer).ok_or(DhtError::NotMember(peer))?;
        let (hi, _) = self.parts.remove(&lo).expect("member range");
        let keys = self.store.remove(&peer).unwrap_or_default();
        let left = self.parts.range(..lo).next_back().map(|(l, (h, p))| (*l, *h, *p));
        let right = self.parts.get(&hi).map(|(h, p)| (hi, *h, *p));
        let heir = match (left, right) {
            (None, None) => return Ok(None),
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (Some(l), Some(r)) => {
                if r.1 - r.0 < l.1 - l.0 {
                    r
                } else {
                    l
                }
            }
        };
        let (hlo, hhi, heir_peer) = heir;
        if hlo < lo {
            self.parts.insert(hlo, (hi, heir_peer));
        } else {
            self.parts.remove(&hlo);
            self.parts.insert(lo, (hhi, heir_peer));
            self.member.insert(heir_peer, lo);
        }
        let target = self.store.get_mut(&heir_peer).expect("member store");
        for (k, vs) in &keys {
            target.entry(k.clone()).or_default().extend(vs.iter().cloned());
        }
        Ok(Some((heir_peer, keys)))
    }

    /// Members whose ranges intersect the key interval `[lo, hi)`, in key order,
    /// together with the ordered-store bounds to scan.
    pub(crate) fn intersecting(
        &self,
        lo: &str,
        hi: &str,
    ) -> Result<(Vec<PeerId>, StoreKey, StoreKey), DhtError> {
        let lo_key = (self.position(lo)?, lo.to_string());
        let hi_key = (self.position(hi)?, hi.to_string());
        if lo_key >= hi_key {
            return Ok((Vec::new(), lo_key, hi_key));
        }
        let from = lo_key.0;
        let to = if self.exact(hi) { hi_key.0 } else { hi_key.0 + 1 };
        let peers = self
            .parts
            .iter()
            .filter(|(plo, (phi, _))| **plo < to && *phi > from)
            .map(|(_, (_, p))| *p)
            .collect();
        Ok((peers, lo_key, hi_key))
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.parts.is_empty() {
            return Ok(());
        }
        let mut expect = self.domain.0;
        for (lo, (hi, peer)) in &self.parts {
            if *lo != expect || hi <= lo {
                return Err(format!("partition gap or overlap at {lo} (peer {peer})"));
            }
            if self.member.get(peer) != Some(lo) {
                return Err(format!("membership table disagrees for peer {peer}"));
            }
            for (pos, key) in self.store[peer].keys() {
                if pos < lo || pos >= hi {
                    return Err(format!("peer {peer} holds key {key:?} outside [{lo},{hi})"));
                }
            }
            expect = *hi;
        }
        if expect != self.domain.1 {
            return Err(format!("partition ends at {expect}, domain ends at {}", self.domain.1));
        }
        Ok(())
    }
}
