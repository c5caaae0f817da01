//! Seeded generators for documents, tree patterns and triples.
//!
//! Small alphabets keep match rates high so random queries are not all empty.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rdf::{ConjunctiveQuery, Term, Triple, TriplePattern};
use crate::tpq::{Axis, PNodeId, Predicate, TreePattern};

pub const TAGS: &[&str] = &["a", "b", "c", "d"];
pub const WORDS: &[&str] = &["x", "y", "z", "dht", "xml"];
pub const MAX_INT: i64 = 30;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// XML text of a random document with at most `max_nodes` labeled nodes.
pub fn random_document(rng: &mut impl Rng, max_nodes: usize) -> String {
    let mut budget = max_nodes.max(1);
    let mut out = String::new();
    element(rng, 1, &mut budget, &mut out);
    out
}

fn element(rng: &mut impl Rng, depth: usize, budget: &mut usize, out: &mut String) {
    *budget -= 1;
    let tag = TAGS.choose(rng).expect("nonempty");
    out.push('<');
    out.push_str(tag);
    if *budget > 0 && rng.random_bool(0.15) {
        *budget -= 1;
        out.push_str(&format!(" id=\"{}\"", rng.random_range(0..MAX_INT)));
    }
    out.push('>');
    let wanted = rng.random_range(0..=4);
    let mut last_text = false;
    for _ in 0..wanted {
        if *budget == 0 {
            break;
        }
        if depth < 7 && (last_text || rng.random_bool(0.65)) {
            element(rng, depth + 1, budget, out);
            last_text = false;
        } else {
            *budget -= 1;
            if rng.random_bool(0.4) {
                out.push_str(&rng.random_range(0..MAX_INT).to_string());
            } else {
                let n = rng.random_range(1..=2);
                let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("nonempty")).collect();
                out.push_str(&words.join(" "));
            }
            last_text = true;
        }
    }
    out.push_str("</");
    out.push_str(tag);
    out.push('>');
}

/// `count` documents of at most `max_nodes` nodes each.
pub fn random_corpus(seed: u64, count: usize, max_nodes: usize) -> Vec<String> {
    let mut rng = rng(seed);
    (0..count)
        .map(|_| {
            let size = rng.random_range(1..=max_nodes);
            random_document(&mut rng, size)
        })
        .collect()
}

/// Random pattern of `1..=max_nodes` nodes that the index-backed evaluators
/// accept: plain wildcards only on single paths and never returned.
pub fn random_pattern(rng: &mut impl Rng, max_nodes: usize) -> TreePattern {
    let size = rng.random_range(1..=max_nodes.max(1));
    let mut p = TreePattern::new();
    let axis = |rng: &mut dyn rand::RngCore| if rng.random_bool(0.5) { Axis::Child } else { Axis::Descendant };
    let root_axis = if rng.random_bool(0.8) { Axis::Descendant } else { Axis::Child };
    p.push(None, root_axis, Some(TAGS.choose(rng).expect("nonempty")));
    for _ in 1..size {
        let parent = PNodeId(rng.random_range(0..p.len()));
        let ax = axis(rng);
        let tag = if rng.random_bool(0.08) { "@id" } else { TAGS.choose(rng).expect("nonempty") };
        if p.node(parent).tag.as_deref() == Some("@id") {
            // attributes have no children; hang it off the root instead
            p.push(Some(PNodeId(0)), ax, Some(tag));
        } else {
            p.push(Some(parent), ax, Some(tag));
        }
    }
    for id in p.ids().collect::<Vec<_>>() {
        if p.node(id).tag.as_deref() == Some("@id") {
            if rng.random_bool(0.5) {
                let lo = rng.random_range(0..MAX_INT);
                let hi = rng.random_range(lo..=MAX_INT);
                p.set_predicate(id, Predicate::IntRange(lo, hi));
            }
            continue;
        }
        let roll: f64 = rng.random();
        if roll < 0.2 {
            let w = WORDS.choose(rng).expect("nonempty");
            p.set_predicate(id, Predicate::WordEquals((*w).to_string()));
        } else if roll < 0.32 {
            let lo = rng.random_range(0..MAX_INT);
            let hi = rng.random_range(lo..=MAX_INT);
            p.set_predicate(id, Predicate::IntRange(lo, hi));
        }
    }
    let mut p = p.normalized();
    p.set_returned(PNodeId(0), false);
    let candidates: Vec<PNodeId> = p.ids().collect();
    let ret = *candidates.choose(rng).expect("nonempty");
    p.set_returned(ret, true);
    if candidates.len() > 2 && rng.random_bool(0.2) {
        p.set_returned(*candidates.choose(rng).expect("nonempty"), true);
    }
    // Turn some unreturned single-child steps into wildcards.
    let mut out = p.clone();
    for id in p.ids() {
        let n = p.node(id);
        let single_step = !n.returned && n.children.len() == 1 && rng.random_bool(0.2);
        if single_step || (rng.random_bool(0.04) && matches!(n.predicate, Some(Predicate::WordEquals(_)))) {
            out = with_tag(&out, id, None);
        }
    }
    out
}

fn with_tag(p: &TreePattern, id: PNodeId, tag: Option<&str>) -> TreePattern {
    let mut q = TreePattern::new();
    for n in p.ids() {
        let node = p.node(n);
        let t = if n == id { tag } else { node.tag.as_deref() };
        let new = q.push(node.parent, node.axis, t);
        if n == id && tag.is_none() && !matches!(node.predicate, Some(Predicate::WordEquals(_))) {
            q.set_returned(new, node.returned);
            continue;
        }
        if let Some(pred) = &node.predicate {
            q.set_predicate(new, pred.clone());
        }
        q.set_returned(new, node.returned);
    }
    q
}

pub const SUBJECTS: &[&str] = &["a", "b", "c", "d", "e", "f"];
pub const PREDICATES: &[&str] = &["type", "author", "cites", "topic"];
pub const OBJECTS: &[&str] = &["Doc", "Person", "a", "b", "c", "x", "y"];

/// Random triples over small vocabularies, so joins find partners.
pub fn random_triples(rng: &mut impl Rng, count: usize) -> Vec<Triple> {
    (0..count)
        .map(|_| {
            Triple::new(
                SUBJECTS.choose(rng).expect("nonempty"),
                PREDICATES.choose(rng).expect("nonempty"),
                OBJECTS.choose(rng).expect("nonempty"),
            )
            .expect("vocabulary words are valid")
        })
        .collect()
}

const VARS: &[&str] = &["x", "y", "z", "w"];

/// Conjunctive query of `1..=max_patterns` patterns, each with at least one
/// constant, projecting a nonempty subset of its variables (or none, when
/// every position is constant).
pub fn random_query(rng: &mut impl Rng, max_patterns: usize) -> ConjunctiveQuery {
    let n = rng.random_range(1..=max_patterns.max(1));
    let mut patterns = Vec::with_capacity(n);
    for _ in 0..n {
        let fixed = rng.random_range(0..3);
        let mut terms = Vec::with_capacity(3);
        for (pos, vocab) in [SUBJECTS, PREDICATES, OBJECTS].into_iter().enumerate() {
            if pos == fixed || rng.random_bool(0.3) {
                terms.push(Term::Const(vocab.choose(rng).expect("nonempty").to_string()));
            } else {
                terms.push(Term::Var(VARS.choose(rng).expect("nonempty").to_string()));
            }
        }
        let [s, p, o]: [Term; 3] = terms.try_into().expect("three terms");
        patterns.push(TriplePattern::new(s, p, o));
    }
    let mut vars: Vec<String> = Vec::new();
    for p in &patterns {
        for v in p.vars() {
            if !vars.iter().any(|x| x == v) {
                vars.push(v.to_string());
            }
        }
    }
    let projection: Vec<String> = vars.iter().filter(|_| rng.random_bool(0.7)).cloned().collect();
    let projection = if projection.is_empty() { vars.into_iter().take(1).collect() } else { projection };
    ConjunctiveQuery::new(patterns, projection).expect("projection drawn from pattern variables")
}
