//! Tree-pattern queries: syntax, a reference evaluator, and a distributed
//! evaluator joining posting lists fetched from the overlays.

mod naive;
mod pattern;
mod twig;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub use naive::eval_naive;
pub use pattern::{parse_pattern, Axis, PNode, PNodeId, Predicate, SyntaxError, TreePattern};
pub use twig::{structural_pairs, DepthGap, Twig, TwigEdge};

use crate::dht::{DhtId, DhtService};
use crate::index::{self, IndexError, Posting};
use crate::net::PeerId;
use crate::xml::StructuralId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TpqError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("pattern has no indexable node to seed the join")]
    UnsupportedWildcardRoot,
    #[error("wildcard {0} cannot be evaluated from the index (returned, filtered, or not on a single path)")]
    UnsupportedWildcard(PNodeId),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// One match: pattern node to the structural id it is bound to.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Binding(BTreeMap<PNodeId, StructuralId>);

impl Binding {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (PNodeId, StructuralId)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn get(&self, node: PNodeId) -> Option<StructuralId> {
        self.0.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PNodeId, StructuralId)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    /// Whether every pattern edge between two bound nodes holds.
    pub fn respects_axes(&self, pattern: &TreePattern) -> bool {
        pattern.edges().all(|(p, c, axis)| match (self.get(p), self.get(c)) {
            (Some(a), Some(d)) => match axis {
                Axis::Child => a.is_parent_of(&d),
                Axis::Descendant => a.is_ancestor_of(&d),
            },
            _ => true,
        })
    }
}

/// Canonical order: by the ids bound to returned nodes, then by the whole binding.
pub fn sort_bindings(pattern: &TreePattern, bindings: &mut [Binding]) {
    sort_bindings_by(&pattern.returned(), bindings);
}

/// Same order as [`sort_bindings`] given the returned nodes directly.
pub fn sort_bindings_by(returned: &[PNodeId], bindings: &mut [Binding]) {
    bindings.sort_by_cached_key(|b| {
        let key: Vec<Option<StructuralId>> = returned.iter().map(|r| b.get(*r)).collect();
        (key, b.clone())
    });
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryCacheEntry {
    pub fingerprint: String,
    pub result: Vec<Binding>,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Posting list for one pattern node.
pub fn fetch_node_postings(
    dht: &mut DhtService,
    hash_dht: DhtId,
    range_dht: Option<DhtId>,
    pattern: &TreePattern,
    node: PNodeId,
    via: PeerId,
) -> Result<Vec<StructuralId>, TpqError> {
    let n = pattern.node(node);
    let postings: Vec<Posting> = match (&n.tag, &n.predicate) {
        (Some(tag), None) => index::lookup_tag(dht, hash_dht, tag, via)?,
        (Some(tag), Some(Predicate::WordEquals(w))) => {
            let tags = index::lookup_tag(dht, hash_dht, tag, via)?;
            let words = index::lookup_word(dht, hash_dht, w, via)?;
            intersect(&tags, &words)
        }
        (None, Some(Predicate::WordEquals(w))) => index::lookup_word(dht, hash_dht, w, via)?,
        (Some(tag), Some(Predicate::IntRange(lo, hi))) => {
            index::lookup_value_range(dht, range_dht.unwrap_or(hash_dht), tag, *lo, *hi, via)?
        }
        (None, _) => return Err(TpqError::UnsupportedWildcard(node)),
    };
    Ok(postings.into_iter().map(|p| p.0).collect())
}

/// Intersection of two sorted posting lists.
pub fn intersect(a: &[Posting], b: &[Posting]) -> Vec<Posting> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Index-backed evaluator with one result cache per querying peer.
///
/// Cache entries are stamped with the overlay write version and are only
/// served while no index write has happened since.
pub struct TreePatternProcessor {
    hash_dht: DhtId,
    range_dht: Option<DhtId>,
    caches: BTreeMap<PeerId, HashMap<String, QueryCacheEntry>>,
    stats: CacheStats,
}

impl TreePatternProcessor {
    pub fn new(hash_dht: DhtId, range_dht: Option<DhtId>) -> Self {
        Self {
            hash_dht,
            range_dht,
            caches: BTreeMap::new(),
            stats: CacheStats::default(),
        }
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.stats
    }

    pub fn cache_entry(&self, peer: PeerId, pattern: &TreePattern) -> Option<&QueryCacheEntry> {
        self.caches.get(&peer)?.get(&pattern.canonical())
    }

    pub fn clear_cache(&mut self) {
        self.caches.clear();
    }

    pub fn evaluate(&mut self, dht: &mut DhtService, pattern: &TreePattern, via: PeerId) -> Result<Vec<Binding>, TpqError> {
        let fingerprint = pattern.canonical();
        let epoch = dht.write_version();
        if let Some(entry) = self.caches.get(&via).and_then(|c| c.get(&fingerprint)) {
            if entry.epoch == epoch {
                self.stats.hits += 1;
                return Ok(entry.result.clone());
            }
        }
        self.stats.misses += 1;
        let result = self.evaluate_uncached(dht, pattern, via)?;
        self.caches.entry(via).or_default().insert(
            fingerprint.clone(),
            QueryCacheEntry {
                fingerprint,
                result: result.clone(),
                epoch,
            },
        );
        Ok(result)
    }

    pub fn evaluate_uncached(
        &self,
        dht: &mut DhtService,
        pattern: &TreePattern,
        via: PeerId,
    ) -> Result<Vec<Binding>, TpqError> {
        let twig = Twig::from_pattern(pattern)?;
        let mut lists = BTreeMap::new();
        for &n in &twig.nodes {
            lists.insert(n, fetch_node_postings(dht, self.hash_dht, self.range_dht, pattern, n, via)?);
        }
        let mut out = twig.evaluate(&lists);
        sort_bindings(pattern, &mut out);
        Ok(out)
    }
}
