//! Tree-pattern syntax.
//!
//! ```text
//! pattern := step+
//! step    := ("/" | "//") name pred* "!"?
//! name    := tag | "*"
//! pred    := "[" pattern "]" | "=" quoted-word | "in" int ".." int
//! ```
//!
//! Consecutive steps form a chain; bracketed patterns hang off the step they
//! follow. The first step is relative to the document, so `/a` only matches
//! root elements. Steps marked `!` are returned; the root is returned when
//! nothing is marked.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at {position}: {message}")]
pub struct SyntaxError {
    pub position: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PNodeId(pub usize);

impl fmt::Display for PNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Child,
    Descendant,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Child => "/",
            Axis::Descendant => "//",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Predicate {
    /// Some direct text child contains the (lowercased) word.
    WordEquals(String),
    /// Some direct text child is an integer in `[lo, hi]`.
    IntRange(i64, i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PNode {
    /// `None` is the wildcard `*`.
    pub tag: Option<String>,
    pub predicate: Option<Predicate>,
    pub returned: bool,
    /// Axis of the edge from the parent (or from the document for the root).
    pub axis: Axis,
    pub parent: Option<PNodeId>,
    pub children: Vec<PNodeId>,
}

impl PNode {
    pub fn is_wildcard(&self) -> bool {
        self.tag.is_none()
    }

    /// Whether an index key can produce this node's candidates directly.
    pub fn is_indexable(&self) -> bool {
        self.tag.is_some() || matches!(self.predicate, Some(Predicate::WordEquals(_)))
    }
}

/// Rooted pattern; nodes are numbered in preorder, the root is `PNodeId(0)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreePattern {
    nodes: Vec<PNode>,
}

impl TreePattern {
    pub fn root(&self) -> PNodeId {
        PNodeId(0)
    }

    pub fn nodes(&self) -> &[PNode] {
        &self.nodes
    }

    pub fn node(&self, id: PNodeId) -> &PNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PNodeId> {
        (0..self.nodes.len()).map(PNodeId)
    }

    /// (parent, child, axis) for every edge.
    pub fn edges(&self) -> impl Iterator<Item = (PNodeId, PNodeId, Axis)> + '_ {
        self.ids()
            .filter_map(|id| self.node(id).parent.map(|p| (p, id, self.node(id).axis)))
    }

    pub fn returned(&self) -> Vec<PNodeId> {
        self.ids().filter(|id| self.node(*id).returned).collect()
    }

    /// Nodes that appear in result bindings: every indexable node and every
    /// returned node. Other wildcards are existential.
    pub fn binding_nodes(&self) -> Vec<PNodeId> {
        self.ids()
            .filter(|id| {
                let n = self.node(*id);
                n.is_indexable() || n.returned
            })
            .collect()
    }

    /// Canonical text; parses back to an equal pattern.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    fn write_step(&self, id: PNodeId, out: &mut String) {
        let n = self.node(id);
        out.push_str(n.axis.as_str());
        out.push_str(n.tag.as_deref().unwrap_or("*"));
        match &n.predicate {
            Some(Predicate::WordEquals(w)) => {
                out.push_str("=\"");
                out.push_str(w);
                out.push('"');
            }
            Some(Predicate::IntRange(lo, hi)) => {
                out.push_str(&format!(" in {lo}..{hi}"));
            }
            None => {}
        }
        // A returned step closes with "!", so its children all go in brackets.
        let (last, rest) = match n.children.split_last() {
            Some((last, rest)) if !n.returned => (Some(*last), rest),
            _ => (None, &n.children[..]),
        };
        for child in rest {
            out.push('[');
            self.write_step(*child, out);
            out.push(']');
        }
        if n.returned {
            out.push('!');
        }
        if let Some(last) = last {
            self.write_step(last, out);
        }
    }

    /// Builder used by tests and generators: `parent == None` adds the root.
    pub fn push(&mut self, parent: Option<PNodeId>, axis: Axis, tag: Option<&str>) -> PNodeId {
        let id = PNodeId(self.nodes.len());
        self.nodes.push(PNode {
            tag: tag.map(str::to_string),
            predicate: None,
            returned: false,
            axis,
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        id
    }

    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn set_predicate(&mut self, id: PNodeId, predicate: Predicate) {
        self.nodes[id.0].predicate = Some(predicate);
    }

    pub fn set_returned(&mut self, id: PNodeId, returned: bool) {
        self.nodes[id.0].returned = returned;
    }

    /// Renumbers nodes in preorder and marks the root returned if nothing is.
    /// Patterns assembled with [`push`](Self::push) out of preorder must be
    /// normalized before use.
    pub fn normalized(&self) -> TreePattern {
        let mut out = TreePattern::new();
        fn copy(src: &TreePattern, id: PNodeId, parent: Option<PNodeId>, out: &mut TreePattern) {
            let n = src.node(id);
            let new = out.push(parent, n.axis, n.tag.as_deref());
            out.nodes[new.0].predicate = n.predicate.clone();
            out.nodes[new.0].returned = n.returned;
            for c in &n.children {
                copy(src, *c, Some(new), out);
            }
        }
        if !self.nodes.is_empty() {
            copy(self, PNodeId(0), None, &mut out);
            if !out.nodes.iter().any(|n| n.returned) {
                out.nodes[0].returned = true;
            }
        }
        out
    }
}

impl Default for TreePattern {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for TreePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        if !self.nodes.is_empty() {
            self.write_step(PNodeId(0), &mut out);
        }
        f.write_str(&out)
    }
}

impl std::str::FromStr for TreePattern {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pattern(s)
    }
}

pub fn parse_pattern(text: &str) -> Result<TreePattern, SyntaxError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        pattern: TreePattern::new(),
    };
    p.pattern_at(None)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    if !p.pattern.nodes.iter().any(|n| n.returned) {
        p.pattern.nodes[0].returned = true;
    }
    Ok(p.pattern)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    pattern: TreePattern,
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b':' | b'@') || b >= 0x80
}

impl Parser<'_> {
    fn error(&self, message: &str) -> SyntaxError {
        SyntaxError {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    /// One or more chained steps below `parent`.
    fn pattern_at(&mut self, parent: Option<PNodeId>) -> Result<(), SyntaxError> {
        let mut parent = parent;
        self.skip_ws();
        if self.peek() != Some(b'/') {
            return Err(self.error("expected '/' or '//'"));
        }
        while {
            self.skip_ws();
            self.peek() == Some(b'/')
        } {
            parent = Some(self.step(parent)?);
        }
        Ok(())
    }

    fn step(&mut self, parent: Option<PNodeId>) -> Result<PNodeId, SyntaxError> {
        let axis = if self.eat("//") {
            Axis::Descendant
        } else if self.eat("/") {
            Axis::Child
        } else {
            return Err(self.error("expected '/' or '//'"));
        };
        self.skip_ws();
        let tag = if self.eat("*") {
            None
        } else {
            let start = self.pos;
            while self.peek().is_some_and(is_name_byte) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a name or '*'"));
            }
            Some(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
        };
        let id = self.pattern.push(parent, axis, tag.as_deref());
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'[') => {
                    self.pos += 1;
                    self.pattern_at(Some(id))?;
                    self.skip_ws();
                    if !self.eat("]") {
                        return Err(self.error("expected ']'"));
                    }
                }
                Some(b'=') => {
                    self.pos += 1;
                    self.skip_ws();
                    let word = self.quoted()?;
                    self.set_predicate(id, Predicate::WordEquals(word.to_lowercase()))?;
                }
                Some(b'i') if self.src[self.pos..].starts_with(b"in") => {
                    self.pos += 2;
                    self.skip_ws();
                    let lo = self.int()?;
                    self.skip_ws();
                    if !self.eat("..") {
                        return Err(self.error("expected '..'"));
                    }
                    self.skip_ws();
                    let hi = self.int()?;
                    if lo > hi {
                        return Err(self.error("empty integer range"));
                    }
                    self.set_predicate(id, Predicate::IntRange(lo, hi))?;
                }
                _ => break,
            }
        }
        self.skip_ws();
        if self.eat("!") {
            self.pattern.set_returned(id, true);
        }
        Ok(id)
    }

    fn set_predicate(&mut self, id: PNodeId, pred: Predicate) -> Result<(), SyntaxError> {
        if self.pattern.node(id).predicate.is_some() {
            return Err(self.error("at most one value predicate per step"));
        }
        self.pattern.set_predicate(id, pred);
        Ok(())
    }

    fn quoted(&mut self) -> Result<String, SyntaxError> {
        if !self.eat("\"") {
            return Err(self.error("expected '\"'"));
        }
        let start = self.pos;
        while self.peek().is_some_and(|b| b != b'"') {
            self.pos += 1;
        }
        if self.peek().is_none() {
            return Err(self.error("unterminated string"));
        }
        let word = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(word)
    }

    fn int(&mut self) -> Result<i64, SyntaxError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SyntaxError {
                position: start,
                message: "expected an integer".into(),
            })
    }
}
