//! Conjunctive triple-pattern queries over triples stored in a hash overlay.
//!
//! Each triple is stored three times, under `s:<subject>`, `p:<predicate>`
//! and `o:<object>`, so any pattern with a constant can be seeded by one
//! lookup. Answers are bags: a triple stored twice matches twice.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::dht::{DhtError, DhtId, DhtKey, DhtService, DhtValue};
use crate::net::PeerId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RdfError {
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("query line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("projected variable ?{0} does not occur in any pattern")]
    UnboundProjection(String),
    #[error("pattern {0} has no constant to look up")]
    UnseedablePattern(usize),
    #[error(transparent)]
    Dht(#[from] DhtError),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

fn valid_part(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\t', '\n', '\r'])
}

impl Triple {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Result<Self, RdfError> {
        if ![subject, predicate, object].iter().all(|s| valid_part(s)) {
            return Err(RdfError::InvalidTriple(format!("{subject:?} {predicate:?} {object:?}")));
        }
        Ok(Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        })
    }

    /// Tab-separated form, as stored in the overlay and in triple files.
    pub fn canonical(&self) -> String {
        format!("{}\t{}\t{}", self.subject, self.predicate, self.object)
    }

    pub fn parse_line(line: &str) -> Result<Self, RdfError> {
        let parts: Vec<&str> = line.split('\t').collect();
        match parts[..] {
            [s, p, o] => Triple::new(s, p, o),
            _ => Err(RdfError::InvalidTriple(line.to_string())),
        }
    }

    fn part(&self, pos: Position) -> &str {
        match pos {
            Position::Subject => &self.subject,
            Position::Predicate => &self.predicate,
            Position::Object => &self.object,
        }
    }
}

/// Triples of a tab-separated file; blank lines are skipped.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>, RdfError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Triple::parse_line)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    Subject,
    Predicate,
    Object,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Subject, Position::Predicate, Position::Object];

    pub fn key_prefix(self) -> &'static str {
        match self {
            Position::Subject => "s:",
            Position::Predicate => "p:",
            Position::Object => "o:",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Const(String),
    Var(String),
}

impl Term {
    pub fn parse(token: &str) -> Term {
        match token.strip_prefix('?') {
            Some(v) => Term::Var(v.to_string()),
            None => Term::Const(token.to_string()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(c) => f.write_str(c),
            Term::Var(v) => write!(f, "?{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TriplePattern {
    pub terms: [Term; 3],
}

impl TriplePattern {
    pub fn new(s: Term, p: Term, o: Term) -> Self {
        Self { terms: [s, p, o] }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Variable assignment if `t` matches this pattern (repeated variables
    /// must see equal values).
    pub fn match_triple(&self, t: &Triple) -> Option<Row> {
        let mut row = Row::new();
        for (term, pos) in self.terms.iter().zip(Position::ALL) {
            let value = t.part(pos);
            match term {
                Term::Const(c) if c != value => return None,
                Term::Const(_) => {}
                Term::Var(v) => match row.get(v) {
                    Some(bound) if bound != value => return None,
                    Some(_) => {}
                    None => {
                        row.insert(v.clone(), value.to_string());
                    }
                },
            }
        }
        Some(row)
    }
}

pub type Row = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConjunctiveQuery {
    pub patterns: Vec<TriplePattern>,
    pub projection: Vec<String>,
}

impl ConjunctiveQuery {
    pub fn new(patterns: Vec<TriplePattern>, projection: Vec<String>) -> Result<Self, RdfError> {
        for v in &projection {
            if !patterns.iter().any(|p| p.vars().any(|x| x == v)) {
                return Err(RdfError::UnboundProjection(v.clone()));
            }
        }
        Ok(Self { patterns, projection })
    }

    /// `SELECT ?x ?y` (or `SELECT *`) followed by one whitespace-separated
    /// pattern per line.
    pub fn parse(text: &str) -> Result<Self, RdfError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(RdfError::Syntax {
            line: 1,
            message: "empty query".into(),
        })?;
        let mut words = header.split_whitespace();
        if !words.next().is_some_and(|w| w.eq_ignore_ascii_case("select")) {
            return Err(RdfError::Syntax {
                line,
                message: "expected SELECT".into(),
            });
        }
        let mut projection = Vec::new();
        let mut star = false;
        for w in words {
            match w.strip_prefix('?') {
                Some(v) if !v.is_empty() => projection.push(v.to_string()),
                _ if w == "*" => star = true,
                _ => {
                    return Err(RdfError::Syntax {
                        line,
                        message: format!("expected a variable, got {w:?}"),
                    })
                }
            }
        }
        let mut patterns = Vec::new();
        for (line, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            let [s, p, o] = toks[..] else {
                return Err(RdfError::Syntax {
                    line,
                    message: "a pattern has exactly three terms".into(),
                });
            };
            if [s, p, o].contains(&"?") {
                return Err(RdfError::Syntax {
                    line,
                    message: "empty variable name".into(),
                });
            }
            patterns.push(TriplePattern::new(Term::parse(s), Term::parse(p), Term::parse(o)));
        }
        if patterns.is_empty() {
            return Err(RdfError::Syntax {
                line,
                message: "no patterns".into(),
            });
        }
        if star {
            for p in &patterns {
                for v in p.vars() {
                    if !projection.iter().any(|x| x == v) {
                        projection.push(v.to_string());
                    }
                }
            }
        }
        Self::new(patterns, projection)
    }

    /// Projects a full assignment onto the selected variables, in order.
    pub fn project(&self, row: &Row) -> Vec<String> {
        self.projection.iter().map(|v| row[v].clone()).collect()
    }
}

/// Stores each triple under its three keys. Returns the number of puts.
pub fn index_triples(dht: &mut DhtService, triples: &[Triple], via: PeerId, dht_id: DhtId) -> Result<usize, RdfError> {
    let mut puts = 0;
    for t in triples {
        let value = DhtValue(t.canonical().into_bytes());
        for pos in Position::ALL {
            let key = DhtKey::new(format!("{}{}", pos.key_prefix(), t.part(pos)))?;
            dht.put(dht_id, via, &key, value.clone())?;
            puts += 1;
        }
    }
    Ok(puts)
}

fn decode(values: &[DhtValue]) -> Result<Vec<Triple>, RdfError> {
    values
        .iter()
        .map(|v| {
            let text = std::str::from_utf8(&v.0).map_err(|_| RdfError::InvalidTriple("non-UTF-8 value".into()))?;
            Triple::parse_line(text)
        })
        .collect()
}

/// Joins `rows` with `right` on their shared variables.
fn hash_join(left: Vec<Row>, right: Vec<Row>) -> Vec<Row> {
    let (Some(l0), Some(r0)) = (left.first(), right.first()) else {
        return Vec::new();
    };
    let shared: Vec<String> = l0.keys().filter(|k| r0.contains_key(*k)).cloned().collect();
    let key = |r: &Row| -> Vec<String> { shared.iter().map(|k| r[k].clone()).collect() };
    let mut table: HashMap<Vec<String>, Vec<&Row>> = HashMap::new();
    for r in &right {
        table.entry(key(r)).or_default().push(r);
    }
    let mut out = Vec::new();
    for l in &left {
        if let Some(matches) = table.get(&key(l)) {
            for r in matches {
                let mut row = l.clone();
                row.extend(r.iter().map(|(k, v)| (k.clone(), v.clone())));
                out.push(row);
            }
        }
    }
    out
}

/// Answers `q`: each pattern is seeded by its constant with the fewest
/// stored triples (ties: subject, predicate, object), its candidates are
/// filtered locally, and the candidate sets are hash-joined in query order.
/// Rows are projected and sorted; duplicates are kept.
pub fn eval_conjunctive(
    dht: &mut DhtService,
    q: &ConjunctiveQuery,
    via: PeerId,
    dht_id: DhtId,
) -> Result<Vec<Vec<String>>, RdfError> {
    let mut candidates = Vec::with_capacity(q.patterns.len());
    for (i, pattern) in q.patterns.iter().enumerate() {
        let mut best: Option<(usize, DhtKey)> = None;
        for (term, pos) in pattern.terms.iter().zip(Position::ALL) {
            if let Term::Const(c) = term {
                let key = DhtKey::new(format!("{}{c}", pos.key_prefix()))?;
                let n = dht.count(dht_id, via, &key)?;
                if best.as_ref().is_none_or(|(m, _)| n < *m) {
                    best = Some((n, key));
                }
            }
        }
        let (_, key) = best.ok_or(RdfError::UnseedablePattern(i))?;
        let triples = decode(&dht.get(dht_id, via, &key)?)?;
        candidates.push(triples.iter().filter_map(|t| pattern.match_triple(t)).collect::<Vec<Row>>());
    }
    let mut rows = vec![Row::new()];
    for c in candidates {
        rows = hash_join(rows, c);
        if rows.is_empty() {
            break;
        }
    }
    let mut out: Vec<Vec<String>> = rows.iter().map(|r| q.project(r)).collect();
    out.sort();
    Ok(out)
}
