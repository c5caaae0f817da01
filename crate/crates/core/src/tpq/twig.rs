//! Holistic structural join over posting lists.
//!
//! Each edge is evaluated by one stack-based merge of the ancestor and
//! descendant lists (both sorted by `(doc, start)`). A bottom-up pass keeps
//! the postings that can root a full match of their subtree, a top-down pass
//! keeps those that also extend upward, and matches are enumerated from the
//! surviving root postings.
//!
//! Wildcard steps without an index key are collapsed into depth gaps on the
//! edge that spans them.

use std::collections::{BTreeMap, BTreeSet};

use super::pattern::{Axis, PNodeId, TreePattern};
use super::{Binding, TpqError};
use crate::xml::StructuralId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepthGap {
    Exactly(u64),
    AtLeast(u64),
}

impl DepthGap {
    pub fn admits(self, diff: u64) -> bool {
        match self {
            DepthGap::Exactly(k) => diff == k,
            DepthGap::AtLeast(k) => diff >= k,
        }
    }

    fn extend(self, axis: Axis) -> DepthGap {
        match (self, axis) {
            (DepthGap::Exactly(k), Axis::Child) => DepthGap::Exactly(k + 1),
            (DepthGap::Exactly(k), Axis::Descendant) | (DepthGap::AtLeast(k), _) => DepthGap::AtLeast(k + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TwigEdge {
    pub parent: PNodeId,
    pub child: PNodeId,
    pub gap: DepthGap,
}

/// Join graph over the indexable nodes of a pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Twig {
    /// Preorder; the first node is the root.
    pub nodes: Vec<PNodeId>,
    pub edges: Vec<TwigEdge>,
    /// Depth constraint of the root relative to the document (depth 0).
    pub root_gap: Option<DepthGap>,
}

impl Twig {
    pub fn from_pattern(pattern: &TreePattern) -> Result<Twig, TpqError> {
        if !pattern.nodes().iter().any(|n| n.is_indexable()) {
            return Err(TpqError::UnsupportedWildcardRoot);
        }
        for id in pattern.ids() {
            let n = pattern.node(id);
            if !n.is_indexable() && (n.returned || n.predicate.is_some() || n.children.len() != 1) {
                return Err(TpqError::UnsupportedWildcard(id));
            }
        }
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut root_gap = None;
        for id in pattern.ids() {
            if !pattern.node(id).is_indexable() {
                continue;
            }
            let mut gap = DepthGap::Exactly(0).extend(pattern.node(id).axis);
            let mut up = pattern.node(id).parent;
            while let Some(a) = up {
                if pattern.node(a).is_indexable() {
                    break;
                }
                gap = gap.extend(pattern.node(a).axis);
                up = pattern.node(a).parent;
            }
            match up {
                Some(parent) => edges.push(TwigEdge { parent, child: id, gap }),
                None => root_gap = Some(gap),
            }
            nodes.push(id);
        }
        Ok(Twig { nodes, edges, root_gap })
    }

    pub fn root(&self) -> PNodeId {
        self.nodes[0]
    }

    /// The connected sub-twig on `keep`, rooted at its topmost node. The
    /// root keeps its document constraint only if it is this twig's root.
    pub fn restrict(&self, keep: &BTreeSet<PNodeId>) -> Twig {
        let nodes: Vec<PNodeId> = self.nodes.iter().copied().filter(|n| keep.contains(n)).collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| keep.contains(&e.parent) && keep.contains(&e.child))
            .collect();
        let root_gap = if nodes.first() == Some(&self.root()) { self.root_gap } else { None };
        Twig { nodes, edges, root_gap }
    }

    fn children(&self, n: PNodeId) -> impl Iterator<Item = (usize, &TwigEdge)> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.parent == n)
    }

    fn parent_edge(&self, n: PNodeId) -> Option<(usize, &TwigEdge)> {
        self.edges.iter().enumerate().find(|(_, e)| e.child == n)
    }

    /// Postings of every node that take part in at least one full match.
    /// Missing lists count as empty.
    pub fn reduce(&self, lists: &BTreeMap<PNodeId, Vec<StructuralId>>) -> BTreeMap<PNodeId, Vec<StructuralId>> {
        let state = Matcher::new(self, lists);
        self.nodes
            .iter()
            .map(|n| {
                let list = &state.lists[n];
                let alive = &state.down[n];
                (*n, list.iter().zip(alive).filter(|(_, a)| **a).map(|(s, _)| *s).collect())
            })
            .collect()
    }

    /// All matches, one binding per combination of postings.
    pub fn evaluate(&self, lists: &BTreeMap<PNodeId, Vec<StructuralId>>) -> Vec<Binding> {
        let state = Matcher::new(self, lists);
        let root = self.root();
        let mut out = Vec::new();
        for (i, alive) in state.down[&root].iter().enumerate() {
            if *alive {
                for row in state.expand(root, i) {
                    out.push(Binding::from_pairs(row));
                }
            }
        }
        out
    }
}

/// Pairs `(ancestor index, descendant index)` where the ancestor interval
/// strictly contains the descendant and the depth difference fits `gap`.
/// Both inputs must be sorted by `(doc, start)`.
pub fn structural_pairs(anc: &[StructuralId], desc: &[StructuralId], gap: DepthGap) -> Vec<(usize, usize)> {
    let contains = |a: &StructuralId, d: &StructuralId| a.doc == d.doc && a.start < d.start && d.end < a.end;
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while j < desc.len() {
        let d = &desc[j];
        if i < anc.len() && (anc[i].doc, anc[i].start) < (d.doc, d.start) {
            while stack.last().is_some_and(|t| !contains(&anc[*t], &anc[i])) {
                stack.pop();
            }
            stack.push(i);
            i += 1;
        } else {
            while stack.last().is_some_and(|t| !contains(&anc[*t], d)) {
                stack.pop();
            }
            for &a in &stack {
                if gap.admits(d.depth - anc[a].depth) {
                    out.push((a, j));
                }
            }
            j += 1;
        }
    }
    out
}

struct Matcher<'a> {
    twig: &'a Twig,
    lists: BTreeMap<PNodeId, Vec<StructuralId>>,
    /// Per edge: for each parent posting, the matching child postings.
    adj: Vec<Vec<Vec<usize>>>,
    down: BTreeMap<PNodeId, Vec<bool>>,
}

impl<'a> Matcher<'a> {
    fn new(twig: &'a Twig, input: &BTreeMap<PNodeId, Vec<StructuralId>>) -> Self {
        let lists: BTreeMap<PNodeId, Vec<StructuralId>> = twig
            .nodes
            .iter()
            .map(|n| {
                let mut l = input.get(n).cloned().unwrap_or_default();
                l.sort_by_key(|s| (s.doc, s.start));
                l.dedup();
                (*n, l)
            })
            .collect();
        let adj: Vec<Vec<Vec<usize>>> = twig
            .edges
            .iter()
            .map(|e| {
                let mut per = vec![Vec::new(); lists[&e.parent].len()];
                for (a, d) in structural_pairs(&lists[&e.parent], &lists[&e.child], e.gap) {
                    per[a].push(d);
                }
                per
            })
            .collect();

        let mut up: BTreeMap<PNodeId, Vec<bool>> = BTreeMap::new();
        for &n in twig.nodes.iter().rev() {
            let mut alive = vec![true; lists[&n].len()];
            if n == twig.root() {
                if let Some(g) = twig.root_gap {
                    for (k, s) in lists[&n].iter().enumerate() {
                        alive[k] &= g.admits(s.depth);
                    }
                }
            }
            for (ei, e) in twig.children(n) {
                let child_up = &up[&e.child];
                for (k, a) in alive.iter_mut().enumerate() {
                    *a = *a && adj[ei][k].iter().any(|d| child_up[*d]);
                }
            }
            up.insert(n, alive);
        }

        let mut down: BTreeMap<PNodeId, Vec<bool>> = BTreeMap::new();
        for &n in &twig.nodes {
            let mut alive = up[&n].clone();
            if let Some((ei, e)) = twig.parent_edge(n) {
                let mut reached = vec![false; alive.len()];
                for (k, p_alive) in down[&e.parent].iter().enumerate() {
                    if *p_alive {
                        for d in &adj[ei][k] {
                            reached[*d] = true;
                        }
                    }
                }
                for (a, r) in alive.iter_mut().zip(reached) {
                    *a = *a && r;
                }
            }
            down.insert(n, alive);
        }
        Self { twig, lists, adj, down }
    }

    fn expand(&self, n: PNodeId, i: usize) -> Vec<Vec<(PNodeId, StructuralId)>> {
        let mut partial = vec![vec![(n, self.lists[&n][i])]];
        for (ei, e) in self.twig.children(n) {
            let mut sub = Vec::new();
            for &d in &self.adj[ei][i] {
                if self.down[&e.child][d] {
                    sub.extend(self.expand(e.child, d));
                }
            }
            let mut next = Vec::with_capacity(partial.len() * sub.len());
            for left in &partial {
                for right in &sub {
                    let mut row = left.clone();
                    row.extend_from_slice(right);
                    next.push(row);
                }
            }
            partial = next;
        }
        partial
    }
}
