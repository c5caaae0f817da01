//! Cost-based planning of tree-pattern queries over several overlays.
//!
//! A query is split by overlay capability (integer ranges need the
//! order-preserving overlay, everything else is answered by the hash
//! overlay), turned into an operator tree, rewritten by rules, placed on
//! peers so that little data moves, and interpreted over the simulation.

mod exec;
mod place;
mod plan;
mod rules;

use std::collections::BTreeSet;

use thiserror::Error;

pub use exec::{execute, DocumentSource, Execution};
pub use place::{naive_placement, place};
pub use plan::{Op, Plan, PostingStats};
pub use rules::{default_rules, rewrite, Rule};

use crate::dht::{DhtError, DhtId, DhtService};
use crate::index::{IndexError, IndexKey};
use crate::net::{NetError, PeerId};
use crate::tpq::{PNodeId, Predicate, TpqError, TreePattern, Twig, TwigEdge};
use crate::xml::XmlError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptimizerError {
    #[error(transparent)]
    Tpq(#[from] TpqError),
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error("integer range predicate but no range overlay is configured")]
    NoRangeOverlay,
    #[error("plan site {0} is not a live peer")]
    PlanSiteUnreachable(PeerId),
    #[error("document {0} has no home peer")]
    UnknownDocument(u64),
}

/// Part of the pattern answered by one overlay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subquery {
    pub dht: DhtId,
    /// Indexable pattern nodes, in preorder.
    pub nodes: Vec<PNodeId>,
    /// The same nodes as a standalone pattern (wildcards between them kept).
    pub fragment: TreePattern,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub pattern: TreePattern,
    pub twig: Twig,
    pub subqueries: Vec<Subquery>,
    /// Edges joining different subqueries, in preorder of their child node.
    pub recomposition: Vec<TwigEdge>,
    pub returned: Vec<PNodeId>,
}

impl Decomposition {
    pub fn subquery_of(&self, node: PNodeId) -> usize {
        self.subqueries
            .iter()
            .position(|s| s.nodes.contains(&node))
            .expect("every twig node is in a subquery")
    }
}

fn is_range_node(pattern: &TreePattern, n: PNodeId) -> bool {
    matches!(pattern.node(n).predicate, Some(Predicate::IntRange(..)))
}

/// Splits `pattern` into one single-node subquery per integer-range node
/// and one hash subquery per maximal connected group of the other indexable
/// nodes.
pub fn decompose(pattern: &TreePattern, hash_dht: DhtId, range_dht: Option<DhtId>) -> Result<Decomposition, OptimizerError> {
    let twig = Twig::from_pattern(pattern)?;
    let parent_of = |n: PNodeId| twig.edges.iter().find(|e| e.child == n).map(|e| e.parent);
    let mut group: Vec<(PNodeId, usize)> = Vec::new();
    let mut subqueries: Vec<Subquery> = Vec::new();
    for &n in &twig.nodes {
        let range = is_range_node(pattern, n);
        let joined = parent_of(n)
            .filter(|p| !range && !is_range_node(pattern, *p))
            .map(|p| group.iter().find(|(m, _)| *m == p).expect("parents come first").1);
        let idx = match joined {
            Some(i) => i,
            None => {
                let dht = if range {
                    range_dht.ok_or(OptimizerError::NoRangeOverlay)?
                } else {
                    hash_dht
                };
                subqueries.push(Subquery {
                    dht,
                    nodes: Vec::new(),
                    fragment: TreePattern::new(),
                });
                subqueries.len() - 1
            }
        };
        subqueries[idx].nodes.push(n);
        group.push((n, idx));
    }
    for s in &mut subqueries {
        s.fragment = fragment(pattern, &s.nodes);
    }
    let group_of = |n: PNodeId| group.iter().find(|(m, _)| *m == n).expect("twig node").1;
    let recomposition = twig
        .edges
        .iter()
        .copied()
        .filter(|e| group_of(e.parent) != group_of(e.child))
        .collect();
    Ok(Decomposition {
        pattern: pattern.clone(),
        twig,
        subqueries,
        recomposition,
        returned: pattern.returned(),
    })
}

/// Sub-pattern on `nodes` plus the wildcard steps linking them.
fn fragment(pattern: &TreePattern, nodes: &[PNodeId]) -> TreePattern {
    let mut keep: BTreeSet<PNodeId> = nodes.iter().copied().collect();
    for &n in nodes.iter().skip(1) {
        let mut up = pattern.node(n).parent;
        let mut path = Vec::new();
        while let Some(a) = up {
            if keep.contains(&a) {
                keep.extend(path.iter().copied());
                break;
            }
            path.push(a);
            up = pattern.node(a).parent;
        }
    }
    let root = nodes[0];
    let mut out = TreePattern::new();
    let mut map = std::collections::BTreeMap::new();
    for id in pattern.ids().filter(|id| keep.contains(id)) {
        let n = pattern.node(id);
        let parent = if id == root { None } else { n.parent.map(|p| map[&p]) };
        let axis = if id == root && n.parent.is_some() {
            crate::tpq::Axis::Descendant
        } else {
            n.axis
        };
        let new = out.push(parent, axis, n.tag.as_deref());
        if let Some(pred) = &n.predicate {
            out.set_predicate(new, pred.clone());
        }
        out.set_returned(new, n.returned);
        map.insert(id, new);
    }
    out.normalized()
}

/// Operators producing the candidate list of one indexable node.
fn node_leaf(
    dht: &DhtService,
    pattern: &TreePattern,
    sub: &Subquery,
    node: PNodeId,
    stats: &PostingStats,
    query_peer: PeerId,
) -> Result<Plan, OptimizerError> {
    let to_query = |p: Plan| if p.site == query_peer { p } else { Plan::ship(p, query_peer) };
    let n = pattern.node(node);
    let lookup = |key: IndexKey| -> Result<Plan, OptimizerError> {
        let site = dht.owner(sub.dht, &key.dht_key())?;
        Ok(to_query(Plan::leaf(
            Op::IndexLookup {
                dht: sub.dht,
                key: key.as_str().to_string(),
                node,
            },
            site,
            stats,
        )))
    };
    match (&n.tag, &n.predicate) {
        (Some(tag), None) => lookup(IndexKey::tag(tag)),
        (None, Some(Predicate::WordEquals(w))) => lookup(IndexKey::word(w)),
        (Some(tag), Some(Predicate::WordEquals(w))) => {
            let a = lookup(IndexKey::tag(tag))?;
            let b = lookup(IndexKey::word(w))?;
            Ok(Plan::intersect(node, query_peer, a, b))
        }
        (Some(tag), Some(Predicate::IntRange(lo, hi))) => {
            let (from, _) = plan::range_keys(tag, *lo, *hi);
            let site = dht.owner(sub.dht, &from.dht_key())?;
            Ok(to_query(Plan::leaf(
                Op::RangeLookup {
                    dht: sub.dht,
                    tag: tag.clone(),
                    lo: *lo,
                    hi: *hi,
                    node,
                },
                site,
                stats,
            )))
        }
        (None, _) => Err(TpqError::UnsupportedWildcard(node).into()),
    }
}

/// Plan that reads every list at its owner, then ships everything to the
/// query peer where all joins and the recomposition run.
pub fn build_plan(
    dht: &DhtService,
    decomp: &Decomposition,
    stats: &PostingStats,
    query_peer: PeerId,
) -> Result<Plan, OptimizerError> {
    let mut results: Vec<Option<Plan>> = Vec::new();
    for sub in &decomp.subqueries {
        let mut acc: Option<Plan> = None;
        for &n in &sub.nodes {
            let leaf = node_leaf(dht, &decomp.pattern, sub, n, stats, query_peer)?;
            acc = Some(match acc {
                None => leaf,
                Some(left) => {
                    let edge = *decomp.twig.edges.iter().find(|e| e.child == n).expect("connected subquery");
                    Plan::join(edge, query_peer, left, leaf, stats)
                }
            });
        }
        results.push(acc);
    }
    let root_group = decomp.subquery_of(decomp.twig.root());
    let mut acc = results[root_group].take().expect("root subquery");
    for edge in &decomp.recomposition {
        let right = results[decomp.subquery_of(edge.child)].take().expect("each subquery joins once");
        acc = Plan::join(*edge, query_peer, acc, right, stats);
    }
    Ok(Plan::recompose(decomp.returned.clone(), decomp.twig.root_gap, query_peer, acc))
}

/// Passes the rule engine may take per query.
pub const MAX_PASSES: usize = 16;

/// Decomposes, builds the all-to-query-peer plan, rewrites it with the
/// default rules and places it.
pub fn optimize(
    dht: &DhtService,
    pattern: &TreePattern,
    hash_dht: DhtId,
    range_dht: Option<DhtId>,
    stats: &PostingStats,
    query_peer: PeerId,
) -> Result<Plan, OptimizerError> {
    let decomp = decompose(pattern, hash_dht, range_dht)?;
    let naive = build_plan(dht, &decomp, stats, query_peer)?;
    let rewritten = rewrite(&naive, &default_rules(), MAX_PASSES);
    Ok(place(&rewritten, stats, query_peer))
}
