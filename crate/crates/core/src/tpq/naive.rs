//! Exhaustive evaluation by walking document trees. Independent of labels
//! and postings: it navigates parent/child links only, so it can serve as
//! the reference for the index-based evaluators.

use std::collections::BTreeSet;

use super::pattern::{Axis, PNodeId, Predicate, TreePattern};
use super::{sort_bindings, Binding};
use crate::xml::{parse_integer, tokenize, Document, NodeData, NodeId};

pub(crate) fn node_matches(pattern: &TreePattern, p: PNodeId, doc: &Document, n: NodeId) -> bool {
    let pn = pattern.node(p);
    let node = doc.node(n);
    let label_ok = match (&pn.tag, &node.data) {
        (None, NodeData::Element { .. }) => true,
        (Some(t), NodeData::Element { name }) | (Some(t), NodeData::Attribute { name, .. }) => t == name,
        _ => false,
    };
    if !label_ok {
        return false;
    }
    match &pn.predicate {
        None => true,
        Some(Predicate::WordEquals(w)) => doc.own_text(n).any(|t| tokenize(t).iter().any(|x| x == w)),
        Some(Predicate::IntRange(lo, hi)) => doc
            .own_text(n)
            .any(|t| parse_integer(t).is_some_and(|v| *lo <= v && v <= *hi)),
    }
}

/// Nodes strictly below `n`, found by walking child links.
fn descendants(doc: &Document, n: NodeId, out: &mut Vec<NodeId>) {
    for c in &doc.node(n).children {
        out.push(*c);
        descendants(doc, *c, out);
    }
}

fn candidates(doc: &Document, from: Option<NodeId>, axis: Axis) -> Vec<NodeId> {
    match (from, axis) {
        (None, Axis::Child) => vec![doc.root().id],
        (None, Axis::Descendant) => {
            let mut out = vec![doc.root().id];
            descendants(doc, doc.root().id, &mut out);
            out
        }
        (Some(n), Axis::Child) => doc.node(n).children.clone(),
        (Some(n), Axis::Descendant) => {
            let mut out = Vec::new();
            descendants(doc, n, &mut out);
            out
        }
    }
}

/// All embeddings of the subpattern rooted at `p` with `p` mapped to `n`.
fn embed(pattern: &TreePattern, p: PNodeId, doc: &Document, n: NodeId) -> Vec<Vec<(PNodeId, NodeId)>> {
    let mut partial = vec![vec![(p, n)]];
    for &c in &pattern.node(p).children {
        let mut sub = Vec::new();
        for m in candidates(doc, Some(n), pattern.node(c).axis) {
            if node_matches(pattern, c, doc, m) {
                sub.extend(embed(pattern, c, doc, m));
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
        if partial.is_empty() {
            break;
        }
    }
    partial
}

/// Every assignment satisfying labels, predicates and axes, projected onto
/// [`TreePattern::binding_nodes`] and sorted canonically.
pub fn eval_naive(pattern: &TreePattern, docs: &[Document]) -> Vec<Binding> {
    if pattern.is_empty() {
        return Vec::new();
    }
    let keep: BTreeSet<PNodeId> = pattern.binding_nodes().into_iter().collect();
    let root = pattern.root();
    let mut out = BTreeSet::new();
    for doc in docs {
        for n in candidates(doc, None, pattern.node(root).axis) {
            if !node_matches(pattern, root, doc, n) {
                continue;
            }
            for row in embed(pattern, root, doc, n) {
                out.insert(Binding::from_pairs(
                    row.into_iter()
                        .filter(|(p, _)| keep.contains(p))
                        .map(|(p, m)| (p, doc.node(m).label)),
                ));
            }
        }
    }
    let mut out: Vec<Binding> = out.into_iter().collect();
    sort_bindings(pattern, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpq::parse_pattern;
    use crate::xml::{parse_document, StructuralId};

    const D1: &str = "<doc><sec><title>dht</title><par>xml</par></sec></doc>";

    fn run(p: &str, docs: &[Document]) -> Vec<Binding> {
        eval_naive(&parse_pattern(p).unwrap(), docs)
    }

    #[test]
    fn d1_examples() {
        let docs = [parse_document(D1, 1).unwrap()];
        let sec = run("//sec!", &docs);
        assert_eq!(sec.len(), 1);
        assert_eq!(sec[0].get(PNodeId(0)), Some(StructuralId::new(1, 2, 9, 2)));
        assert!(run("//par[/title]!", &docs).is_empty());
        let hit = run("//sec[/title=\"dht\"]!", &docs);
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].get(PNodeId(1)), Some(StructuralId::new(1, 3, 5, 3)));
        assert!(run("//sec[/title=\"xml\"]!", &docs).is_empty());
    }

    #[test]
    fn root_axis_is_relative_to_document() {
        let docs = [parse_document("<a><a><b/></a></a>", 1).unwrap()];
        assert_eq!(run("/a!", &docs).len(), 1);
        assert_eq!(run("//a!", &docs).len(), 2);
        assert_eq!(run("/a/b", &docs).len(), 0);
        assert_eq!(run("//a/b", &docs).len(), 1);
        assert_eq!(run("//a//b", &docs).len(), 2);
    }

    #[test]
    fn wildcards_are_existential() {
        let docs = [parse_document("<r><x><b/></x><y><b/></y><b/></r>", 1).unwrap()];
        let res = run("/r/*/b!", &docs);
        assert_eq!(res.len(), 2);
        assert!(res.iter().all(|b| b.len() == 2));
        assert_eq!(run("//*!", &docs).len(), 6);
    }

    #[test]
    fn attributes_and_ranges() {
        let docs = [parse_document("<r><p id=\"7\"><year>2003</year></p><p><year>1990</year></p></r>", 1).unwrap()];
        assert_eq!(run("//p[/@id]!", &docs).len(), 1);
        assert_eq!(run("//p[/year in 2000..2005]!", &docs).len(), 1);
        assert_eq!(run("//p[/year in 1000..3000]!", &docs).len(), 2);
        assert_eq!(run("//@id in 0..10!", &docs).len(), 1);
        assert_eq!(run("//p[/@id=\"7\"]!", &docs).len(), 1);
        assert!(run("//p[/@id in 8..10]!", &docs).is_empty());
    }

    #[test]
    fn results_sort_by_returned_node() {
        let docs = [
            parse_document("<a><b/><b/></a>", 2).unwrap(),
            parse_document("<a><b/></a>", 1).unwrap(),
        ];
        let res = run("//a/b!", &docs);
        let keys: Vec<(u64, u64)> = res
            .iter()
            .map(|b| b.get(PNodeId(1)).map(|s| (s.doc, s.start)).unwrap())
            .collect();
        assert_eq!(keys, [(1, 2), (2, 2), (2, 4)]);
    }
}
