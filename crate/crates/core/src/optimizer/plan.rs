//! Physical plans: operator trees with a site per operator and an upper
//! bound on the size of every posting list an operator produces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::dht::DhtId;
use crate::index::{document_postings, IndexKey, POSTING_BYTES};
use crate::net::PeerId;
use crate::tpq::{DepthGap, PNodeId, Twig, TwigEdge};
use crate::xml::{Document, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    /// Posting list of a tag or word key, read at the key's owner.
    IndexLookup { dht: DhtId, key: String, node: PNodeId },
    /// Value postings of `tag` in `[lo, hi]`, gathered from the range overlay.
    RangeLookup { dht: DhtId, tag: String, lo: i64, hi: i64, node: PNodeId },
    /// Postings present in both inputs, which describe the same pattern node.
    Intersect { node: PNodeId },
    /// Merges two partial results along one pattern edge and drops the
    /// postings that no longer take part in a match.
    StructJoin(TwigEdge),
    /// Moves the input's lists to this operator's site.
    Ship,
    /// Final join at the query peer; fetches the returned subtrees.
    Recompose { returned: Vec<PNodeId>, root_gap: Option<DepthGap> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::IndexLookup { .. } => "IndexLookup",
            Op::RangeLookup { .. } => "RangeLookup",
            Op::Intersect { .. } => "Intersect",
            Op::StructJoin(_) => "StructJoin",
            Op::Ship => "Ship",
            Op::Recompose { .. } => "Recompose",
        }
    }
}

/// How many distinct ancestors and distinct descendants take part in
/// some (ancestor tag, descendant tag) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairCount {
    pub ancestors: u64,
    pub descendants: u64,
}

/// Estimate inputs: posting counts per index key, the deepest node depth,
/// and structural pair counts per (ancestor tag, descendant tag, depth
/// difference).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PostingStats {
    pub counts: BTreeMap<String, u64>,
    pub max_depth: u64,
    pub pairs: BTreeMap<(String, String, u64), PairCount>,
}

impl PostingStats {
    pub fn count(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Sum of counts over keys in `[lo, hi)`.
    pub fn count_range(&self, lo: &str, hi: &str) -> u64 {
        if lo >= hi {
            return 0;
        }
        self.counts
            .range::<str, _>((std::ops::Bound::Included(lo), std::ops::Bound::Excluded(hi)))
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn add(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.to_string()).or_default() += n;
    }

    /// Counts every posting the documents publish, and every named
    /// ancestor/descendant pair.
    pub fn record(&mut self, doc: &Document) {
        let (hash, range) = document_postings(doc);
        for (key, _) in hash.iter().chain(&range) {
            self.add(key.as_str(), 1);
        }
        let deepest = doc.nodes().iter().map(|n| n.label.depth).max().unwrap_or(0);
        self.max_depth = self.max_depth.max(deepest);

        type Members = (BTreeSet<NodeId>, BTreeSet<NodeId>);
        let mut seen: BTreeMap<(&str, &str, u64), Members> = BTreeMap::new();
        for n in doc.nodes() {
            let Some(name) = n.name() else { continue };
            let mut up = n.parent;
            while let Some(a) = up {
                let anc = doc.node(a);
                let diff = n.label.depth - anc.label.depth;
                let entry = seen.entry((anc.name_or_value(), name, diff)).or_default();
                entry.0.insert(a);
                entry.1.insert(n.id);
                up = anc.parent;
            }
        }
        for ((a, d, diff), (ancs, descs)) in seen {
            let c = self.pairs.entry((a.to_string(), d.to_string(), diff)).or_default();
            c.ancestors += ancs.len() as u64;
            c.descendants += descs.len() as u64;
        }
    }

    /// Upper bounds on the ancestors and descendants joined along a gap.
    /// Sums over depth differences, so an element counted at two
    /// differences is counted twice; still a bound. `None` when no
    /// document structure was recorded.
    pub fn pair_bound(&self, ancestor: &str, descendant: &str, gap: DepthGap) -> Option<PairCount> {
        if self.pairs.is_empty() {
            return None;
        }
        let from = (ancestor.to_string(), descendant.to_string(), 0);
        let to = (ancestor.to_string(), descendant.to_string(), u64::MAX);
        let mut out = PairCount::default();
        for (_, c) in self.pairs.range(from..=to).filter(|((_, _, diff), _)| gap.admits(*diff)) {
            out.ancestors += c.ancestors;
            out.descendants += c.descendants;
        }
        Some(out)
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut stats = Self::default();
        for d in docs {
            stats.record(d);
        }
        stats
    }
}

pub(crate) fn range_keys(tag: &str, lo: i64, hi: i64) -> (IndexKey, IndexKey) {
    (IndexKey::value(tag, lo.into()), IndexKey::value(tag, i128::from(hi) + 1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub op: Op,
    pub site: PeerId,
    /// Upper bound on each output list's length.
    pub bounds: BTreeMap<PNodeId, u64>,
    pub inputs: Vec<Plan>,
}

impl Plan {
    pub fn leaf(op: Op, site: PeerId, stats: &PostingStats) -> Plan {
        let (node, count) = match &op {
            Op::IndexLookup { key, node, .. } => (*node, stats.count(key)),
            Op::RangeLookup { tag, lo, hi, node, .. } => {
                let (from, to) = range_keys(tag, *lo, *hi);
                (*node, stats.count_range(from.as_str(), to.as_str()))
            }
            _ => panic!("{} is not a leaf operator", op.name()),
        };
        Plan {
            op,
            site,
            bounds: BTreeMap::from([(node, count)]),
            inputs: Vec::new(),
        }
    }

    pub fn intersect(node: PNodeId, site: PeerId, a: Plan, b: Plan) -> Plan {
        let bound = a.bounds[&node].min(b.bounds[&node]);
        Plan {
            op: Op::Intersect { node },
            site,
            bounds: BTreeMap::from([(node, bound)]),
            inputs: vec![a, b],
        }
    }

    pub fn join(edge: TwigEdge, site: PeerId, left: Plan, right: Plan, stats: &PostingStats) -> Plan {
        let mut plan = Plan {
            op: Op::StructJoin(edge),
            site,
            bounds: BTreeMap::new(),
            inputs: vec![left, right],
        };
        plan.bounds = join_bounds(&plan, stats);
        plan
    }

    pub fn ship(input: Plan, to: PeerId) -> Plan {
        Plan {
            op: Op::Ship,
            site: to,
            bounds: input.bounds.clone(),
            inputs: vec![input],
        }
    }

    pub fn recompose(returned: Vec<PNodeId>, root_gap: Option<DepthGap>, site: PeerId, input: Plan) -> Plan {
        Plan {
            op: Op::Recompose { returned, root_gap },
            site,
            bounds: input.bounds.clone(),
            inputs: vec![input],
        }
    }

    /// Estimated bytes this operator's output occupies.
    pub fn est_bytes(&self) -> u64 {
        self.bounds.values().sum::<u64>() * POSTING_BYTES as u64
    }

    /// Estimated transfer: the sum of the estimates of all shipped outputs.
    pub fn cost(&self) -> u64 {
        let own = if self.op == Op::Ship { self.est_bytes() } else { 0 };
        own + self.inputs.iter().map(Plan::cost).sum::<u64>()
    }

    pub fn ship_count(&self) -> usize {
        usize::from(self.op == Op::Ship) + self.inputs.iter().map(Plan::ship_count).sum::<usize>()
    }

    /// Tag of every node read through a tag or value lookup in this subtree.
    pub fn node_tags(&self) -> BTreeMap<PNodeId, String> {
        let mut out = BTreeMap::new();
        self.walk(&mut |p| match &p.op {
            Op::IndexLookup { key, node, .. } => {
                if let Some(tag) = key.strip_prefix("t:") {
                    out.insert(*node, tag.to_string());
                }
            }
            Op::RangeLookup { tag, node, .. } => {
                out.insert(*node, tag.clone());
            }
            _ => {}
        });
        out
    }

    /// Every join edge in this subtree.
    pub fn edges(&self) -> Vec<TwigEdge> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let Op::StructJoin(e) = &p.op {
                out.push(*e);
            }
        });
        out
    }

    /// Preorder traversal.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Plan)) {
        f(self);
        for i in &self.inputs {
            i.walk(f);
        }
    }

    /// The join graph over the nodes this subtree produces.
    pub fn twig(&self, root_gap: Option<DepthGap>) -> Twig {
        let mut edges = self.edges();
        edges.sort_by_key(|e| e.child);
        Twig {
            nodes: self.bounds.keys().copied().collect(),
            edges,
            root_gap,
        }
    }

    /// Site of the data feeding this input, looking through one Ship.
    pub fn source_site(&self) -> PeerId {
        match self.op {
            Op::Ship => self.inputs[0].site,
            _ => self.site,
        }
    }

    /// Structural checks: operator arity, and every input is local to its
    /// consumer except through a Ship.
    pub fn check(&self) -> Result<(), String> {
        let arity = match self.op {
            Op::IndexLookup { .. } | Op::RangeLookup { .. } => 0,
            Op::Intersect { .. } | Op::StructJoin(_) => 2,
            Op::Ship | Op::Recompose { .. } => 1,
        };
        if self.inputs.len() != arity {
            return Err(format!("{} has {} inputs", self.op.name(), self.inputs.len()));
        }
        for input in &self.inputs {
            if self.op != Op::Ship && input.site != self.site {
                return Err(format!(
                    "{} at {} reads input located at {}",
                    self.op.name(),
                    self.site,
                    input.site
                ));
            }
            input.check()?;
        }
        Ok(())
    }

    /// Canonical document form: one element per operator, inputs as
    /// children in order, no whitespace.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        self.write_document(&mut out);
        out
    }

    fn write_document(&self, out: &mut String) {
        let mut attrs: Vec<(&str, String)> = vec![("site", self.site.0.to_string())];
        match &self.op {
            Op::IndexLookup { dht, key, node } => {
                attrs.push(("dht", dht.0.to_string()));
                attrs.push(("key", key.clone()));
                attrs.push(("node", node.0.to_string()));
            }
            Op::RangeLookup { dht, tag, lo, hi, node } => {
                attrs.push(("dht", dht.0.to_string()));
                attrs.push(("key", tag.clone()));
                attrs.push(("lo", lo.to_string()));
                attrs.push(("hi", hi.to_string()));
                attrs.push(("node", node.0.to_string()));
            }
            Op::Intersect { node } => attrs.push(("node", node.0.to_string())),
            Op::StructJoin(e) => {
                attrs.push(("parent", e.parent.0.to_string()));
                attrs.push(("child", e.child.0.to_string()));
                attrs.push(("gap", gap_text(e.gap)));
            }
            Op::Ship => {}
            Op::Recompose { returned, root_gap } => {
                let r: Vec<String> = returned.iter().map(|n| n.0.to_string()).collect();
                attrs.push(("returned", r.join(" ")));
                if let Some(g) = root_gap {
                    attrs.push(("depth", gap_text(*g)));
                }
            }
        }
        attrs.push(("est", self.est_bytes().to_string()));
        out.push('<');
        out.push_str(self.op.name());
        for (k, v) in attrs {
            let _ = write!(out, " {k}=\"{}\"", escape_attr(&v));
        }
        if self.inputs.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        for i in &self.inputs {
            i.write_document(out);
        }
        let _ = write!(out, "</{}>", self.op.name());
    }
}

fn gap_text(g: DepthGap) -> String {
    match g {
        DepthGap::Exactly(k) => format!("={k}"),
        DepthGap::AtLeast(k) => format!(">={k}"),
    }
}

fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Bounds for a join output: union of the input bounds, tightened along
/// every joined edge (a parent-side posting needs a child-side partner, and
/// a child-side posting has at most one ancestor at an exact depth gap or at
/// most `max_depth` in general). An empty list empties the whole result.
fn join_bounds(plan: &Plan, stats: &PostingStats) -> BTreeMap<PNodeId, u64> {
    let mut bounds: BTreeMap<PNodeId, u64> = BTreeMap::new();
    for i in &plan.inputs {
        for (n, b) in &i.bounds {
            bounds.insert(*n, *b);
        }
    }
    let edges = plan.edges();
    let tags = plan.node_tags();
    for e in &edges {
        if let (Some(a), Some(d)) = (tags.get(&e.parent), tags.get(&e.child)) {
            let Some(pc) = stats.pair_bound(a, d, e.gap) else { continue };
            bounds.entry(e.parent).and_modify(|b| *b = (*b).min(pc.ancestors));
            bounds.entry(e.child).and_modify(|b| *b = (*b).min(pc.descendants));
        }
    }
    let max_depth = stats.max_depth;
    loop {
        let mut changed = false;
        for e in &edges {
            let factor = match e.gap {
                DepthGap::Exactly(_) => 1,
                DepthGap::AtLeast(_) => max_depth.max(1),
            };
            let cap = bounds[&e.child].saturating_mul(factor);
            if cap < bounds[&e.parent] {
                bounds.insert(e.parent, cap);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if bounds.values().any(|b| *b == 0) {
        bounds.values_mut().for_each(|b| *b = 0);
    }
    bounds
}
