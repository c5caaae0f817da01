//! XML documents with interval-labelled nodes.
//!
//! Every node of a parsed document carries a [`StructuralId`]: the document
//! id, a `start`/`end` pair drawn from one counter per document, and the
//! nesting depth. An element takes a counter value when it opens and another
//! when it closes; text and attribute nodes take a single value. Ancestry is
//! then plain interval containment, which is what the index and the
//! structural joins work on.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum XmlError {
    #[error("empty input")]
    EmptyInput,
    #[error("malformed xml: {0}")]
    MalformedXml(String),
    #[error("document ids must be positive")]
    InvalidDocId,
    #[error("no node labelled {0} in document")]
    UnknownNode(StructuralId),
}

/// Interval label of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructuralId {
    pub doc: u64,
    pub start: u64,
    pub end: u64,
    pub depth: u64,
}

impl StructuralId {
    pub const fn new(doc: u64, start: u64, end: u64, depth: u64) -> Self {
        Self {
            doc,
            start,
            end,
            depth,
        }
    }

    /// Strict containment within the same document.
    pub fn is_ancestor_of(&self, other: &StructuralId) -> bool {
        self.doc == other.doc && self.start < other.start && other.end < self.end
    }

    pub fn is_parent_of(&self, other: &StructuralId) -> bool {
        self.is_ancestor_of(other) && other.depth == self.depth + 1
    }
}

impl fmt::Display for StructuralId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.doc, self.start, self.end, self.depth)
    }
}

pub fn is_ancestor(a: StructuralId, d: StructuralId) -> bool {
    a.is_ancestor_of(&d)
}

pub fn is_parent(a: StructuralId, d: StructuralId) -> bool {
    a.is_parent_of(&d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Element,
    Text,
    Attribute,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeData {
    Element { name: String },
    Text { value: String },
    /// `name` carries the `@` prefix so patterns can address attributes by name.
    Attribute { name: String, value: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub data: NodeData,
    pub label: StructuralId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        match self.data {
            NodeData::Element { .. } => NodeKind::Element,
            NodeData::Text { .. } => NodeKind::Text,
            NodeData::Attribute { .. } => NodeKind::Attribute,
        }
    }

    /// Element or attribute name, or the text content of a text node.
    pub fn name_or_value(&self) -> &str {
        match &self.data {
            NodeData::Element { name } | NodeData::Attribute { name, .. } => name,
            NodeData::Text { value } => value,
        }
    }

    /// Tag name for elements and attributes, `None` for text.
    pub fn name(&self) -> Option<&str> {
        match &self.data {
            NodeData::Element { name } | NodeData::Attribute { name, .. } => Some(name),
            NodeData::Text { .. } => None,
        }
    }

    pub fn is_element(&self) -> bool {
        matches!(self.data, NodeData::Element { .. })
    }
}

/// A parsed, labelled document. Nodes are stored in document order, so the
/// node list is sorted by `label.start`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    doc_id: u64,
    nodes: Vec<Node>,
}

impl Document {
    pub fn doc_id(&self) -> u64 {
        self.doc_id
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = &Node> + '_ {
        self.nodes[id.0].children.iter().map(move |c| &self.nodes[c.0])
    }

    pub fn elements(&self) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(|n| n.is_element())
    }

    /// Finds the node carrying exactly `label`.
    pub fn node_by_label(&self, label: StructuralId) -> Option<&Node> {
        if label.doc != self.doc_id {
            return None;
        }
        let idx = self
            .nodes
            .binary_search_by_key(&label.start, |n| n.label.start)
            .ok()?;
        let node = &self.nodes[idx];
        (node.label == label).then_some(node)
    }

    /// Text that word and value predicates look at: the text children of an
    /// element in order, or an attribute's value.
    pub fn own_text(&self, id: NodeId) -> impl Iterator<Item = &str> + '_ {
        let value = match &self.node(id).data {
            NodeData::Attribute { value, .. } => Some(value.as_str()),
            _ => None,
        };
        value.into_iter().chain(self.children(id).filter_map(|c| match &c.data {
            NodeData::Text { value } => Some(value.as_str()),
            _ => None,
        }))
    }
}

/// Parses `xml_text` and labels every node with one left-to-right counter.
pub fn parse_document(xml_text: &str, doc_id: u64) -> Result<Document, XmlError> {
    if doc_id == 0 {
        return Err(XmlError::InvalidDocId);
    }
    if xml_text.trim().is_empty() {
        return Err(XmlError::EmptyInput);
    }
    let parsed =
        roxmltree::Document::parse(xml_text).map_err(|e| XmlError::MalformedXml(e.to_string()))?;
    let mut builder = Builder {
        doc_id,
        counter: 0,
        nodes: Vec::new(),
    };
    builder.element(parsed.root_element(), None, 1);
    Ok(Document {
        doc_id,
        nodes: builder.nodes,
    })
}

struct Builder {
    doc_id: u64,
    counter: u64,
    nodes: Vec<Node>,
}

impl Builder {
    fn tick(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    fn push(&mut self, data: NodeData, parent: Option<NodeId>, start: u64, depth: u64) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            data,
            label: StructuralId::new(self.doc_id, start, start, depth),
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        id
    }

    fn element(&mut self, el: roxmltree::Node<'_, '_>, parent: Option<NodeId>, depth: u64) {
        let start = self.tick();
        let name = el.tag_name().name().to_string();
        let id = self.push(NodeData::Element { name }, parent, start, depth);
        for attr in el.attributes() {
            let pos = self.tick();
            self.push(
                NodeData::Attribute {
                    name: format!("@{}", attr.name()),
                    value: attr.value().to_string(),
                },
                Some(id),
                pos,
                depth + 1,
            );
        }
        for child in el.children() {
            if child.is_element() {
                self.element(child, Some(id), depth + 1);
            } else if child.is_text() {
                let text = child.text().unwrap_or_default();
                if text.trim().is_empty() {
                    continue;
                }
                let pos = self.tick();
                self.push(
                    NodeData::Text {
                        value: text.to_string(),
                    },
                    Some(id),
                    pos,
                    depth + 1,
                );
            }
        }
        let end = self.tick();
        self.nodes[id.0].label.end = end;
    }
}

/// Canonical XML text of the subtree rooted at `root_label`.
pub fn serialize_subtree(doc: &Document, root_label: StructuralId) -> Result<String, XmlError> {
    let node = doc
        .node_by_label(root_label)
        .ok_or(XmlError::UnknownNode(root_label))?;
    let mut out = String::new();
    write_node(doc, node, &mut out);
    Ok(out)
}

fn write_node(doc: &Document, node: &Node, out: &mut String) {
    match &node.data {
        NodeData::Text { value } => escape_into(value, false, out),
        NodeData::Attribute { name, value } => {
            out.push_str(&name[1..]);
            out.push_str("=\"");
            escape_into(value, true, out);
            out.push('"');
        }
        NodeData::Element { name } => {
            out.push('<');
            out.push_str(name);
            let mut content = Vec::new();
            for child in doc.children(node.id) {
                if let NodeData::Attribute { .. } = child.data {
                    out.push(' ');
                    write_node(doc, child, out);
                } else {
                    content.push(child);
                }
            }
            if content.is_empty() {
                out.push_str("/>");
                return;
            }
            out.push('>');
            for child in content {
                write_node(doc, child, out);
            }
            out.push_str("</");
            out.push_str(name);
            out.push('>');
        }
    }
}

fn escape_into(text: &str, attr: bool, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
}

/// Store-wide resource identifier, `<doc_id>#<start>` for extracted resources.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceId(String);

impl ResourceId {
    pub fn new(value: impl Into<String>) -> Option<Self> {
        let value = value.into();
        (!value.is_empty()).then_some(Self(value))
    }

    pub fn for_label(label: StructuralId) -> Self {
        Self(format!("{}#{}", label.doc, label.start))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Resource {
    pub id: ResourceId,
    pub doc_id: u64,
    pub root_label: StructuralId,
    pub payload: String,
}

impl Resource {
    pub fn from_node(doc: &Document, label: StructuralId) -> Result<Self, XmlError> {
        Ok(Self {
            id: ResourceId::for_label(label),
            doc_id: doc.doc_id(),
            root_label: label,
            payload: serialize_subtree(doc, label)?,
        })
    }
}

/// The document root plus every element whose name is in `granularity`.
pub fn extract_resources(doc: &Document, granularity: &BTreeSet<String>) -> Vec<Resource> {
    doc.elements()
        .filter(|n| n.id == doc.root().id || granularity.contains(n.name_or_value()))
        .map(|n| Resource::from_node(doc, n.label).expect("label taken from the document"))
        .collect()
}

/// Lowercased alphanumeric runs of `text`; the word index and word
/// predicates both tokenize through here.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Integer value of a text node whose whole (trimmed) content is a decimal integer.
pub fn parse_integer(text: &str) -> Option<i64> {
    let t = text.trim();
    let digits = t.strip_prefix(['-', '+']).unwrap_or(t);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse().ok()
}
