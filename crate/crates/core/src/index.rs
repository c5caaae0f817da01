//! Publishing documents into the overlays and reading posting lists back.
//!
//! Key layout:
//!
//! | key                      | overlay | posting                         |
//! |--------------------------|---------|---------------------------------|
//! | `t:<name>`               | hash    | every element / attribute       |
//! | `w:<word>`               | hash    | element enclosing the text      |
//! | `v:<tag>=<encoded int>`  | range   | element whose text is the int   |
//!
//! Integers are encoded as fixed-width 20-digit decimals of `value + 2^63`,
//! so byte order equals numeric order.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::dht::{DhtError, DhtId, DhtKey, DhtService, DhtValue};
use crate::net::PeerId;
use crate::xml::{parse_integer, tokenize, Document, StructuralId};

pub const POSTING_BYTES: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error("posting of {0} bytes, expected 32")]
    CorruptPosting(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Posting(pub StructuralId);

impl Posting {
    pub fn to_bytes(self) -> [u8; POSTING_BYTES] {
        let s = self.0;
        let mut out = [0u8; POSTING_BYTES];
        for (chunk, v) in out.chunks_exact_mut(8).zip([s.doc, s.start, s.end, s.depth]) {
            chunk.copy_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() != POSTING_BYTES {
            return Err(IndexError::CorruptPosting(bytes.len()));
        }
        let word = |i: usize| u64::from_be_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        Ok(Posting(StructuralId::new(word(0), word(1), word(2), word(3))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKeyKind {
    Tag,
    Keyword,
    Value,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndexKey(String);

impl IndexKey {
    pub fn tag(name: &str) -> Self {
        Self(format!("t:{name}"))
    }

    pub fn word(word: &str) -> Self {
        Self(format!("w:{word}"))
    }

    pub fn value(tag: &str, value: i128) -> Self {
        Self(format!("v:{tag}={}", encode_int(value)))
    }

    pub fn kind(&self) -> IndexKeyKind {
        match &self.0[..2] {
            "t:" => IndexKeyKind::Tag,
            "w:" => IndexKeyKind::Keyword,
            _ => IndexKeyKind::Value,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn dht_key(&self) -> DhtKey {
        DhtKey::new(self.0.clone()).expect("index keys are nonempty")
    }
}

/// Order-preserving fixed-width rendering; accepts one past `i64::MAX` so
/// closed upper bounds can be turned into half-open ones.
pub fn encode_int(value: i128) -> String {
    let shifted = value + (1i128 << 63);
    debug_assert!((0..=(1i128 << 64)).contains(&shifted));
    format!("{shifted:020}")
}

pub type Postings = Vec<(IndexKey, Posting)>;

/// Every distinct (key, posting) pair a document publishes, in key order:
/// hash-overlay postings, then value postings for the range overlay.
pub fn document_postings(doc: &Document) -> (Postings, Postings) {
    let mut hash = BTreeSet::new();
    let mut range = BTreeSet::new();
    for node in doc.nodes() {
        let Some(name) = node.name() else { continue };
        let posting = Posting(node.label);
        hash.insert((IndexKey::tag(name), posting));
        for text in doc.own_text(node.id) {
            for word in tokenize(text) {
                hash.insert((IndexKey::word(&word), posting));
            }
            if let Some(v) = parse_integer(text) {
                range.insert((IndexKey::value(name, v.into()), posting));
            }
        }
    }
    (hash.into_iter().collect(), range.into_iter().collect())
}

/// Publishes tag and word postings into `hash_dht` and integer value
/// postings into `range_dht` (skipped when there is none). Returns the
/// number of postings published.
pub fn index_document(
    dht: &mut DhtService,
    doc: &Document,
    via: PeerId,
    hash_dht: DhtId,
    range_dht: Option<DhtId>,
) -> Result<usize, IndexError> {
    let (hash, range) = document_postings(doc);
    let mut published = 0;
    for (key, posting) in &hash {
        dht.put(hash_dht, via, &key.dht_key(), DhtValue(posting.to_bytes().to_vec()))?;
        published += 1;
    }
    if let Some(range_dht) = range_dht {
        for (key, posting) in &range {
            dht.put(range_dht, via, &key.dht_key(), DhtValue(posting.to_bytes().to_vec()))?;
            published += 1;
        }
    }
    Ok(published)
}

/// Decodes, sorts by (doc, start) and removes duplicates.
pub fn decode_postings<'a>(values: impl IntoIterator<Item = &'a DhtValue>) -> Result<Vec<Posting>, IndexError> {
    let mut out = values
        .into_iter()
        .map(|v| Posting::from_bytes(&v.0))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn lookup_key(dht: &mut DhtService, hash_dht: DhtId, key: &IndexKey, via: PeerId) -> Result<Vec<Posting>, IndexError> {
    let values = dht.get(hash_dht, via, &key.dht_key())?;
    decode_postings(&values)
}

pub fn lookup_tag(dht: &mut DhtService, hash_dht: DhtId, tag: &str, via: PeerId) -> Result<Vec<Posting>, IndexError> {
    lookup_key(dht, hash_dht, &IndexKey::tag(tag), via)
}

pub fn lookup_word(dht: &mut DhtService, hash_dht: DhtId, word: &str, via: PeerId) -> Result<Vec<Posting>, IndexError> {
    lookup_key(dht, hash_dht, &IndexKey::word(word), via)
}

/// Elements named `tag` whose integer content lies in the closed range `[lo, hi]`.
pub fn lookup_value_range(
    dht: &mut DhtService,
    range_dht: DhtId,
    tag: &str,
    lo: i64,
    hi: i64,
    via: PeerId,
) -> Result<Vec<Posting>, IndexError> {
    if lo > hi {
        return Ok(Vec::new());
    }
    let from = IndexKey::value(tag, lo.into());
    let to = IndexKey::value(tag, i128::from(hi) + 1);
    let answer = dht.get_range(range_dht, via, from.as_str(), to.as_str())?;
    decode_postings(answer.items.iter().map(|(_, v)| v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dht::OverlayConfig;
    use crate::xml::parse_document;

    const H: DhtId = DhtId(1);
    const R: DhtId = DhtId(2);
    const D1: &str = "<doc><sec><title>dht</title><par>xml</par></sec></doc>";

    fn service(peers: u64) -> DhtService {
        let mut dht = DhtService::new(7);
        dht.create_overlay(H, OverlayConfig::hash()).unwrap();
        dht.create_overlay(R, OverlayConfig::range()).unwrap();
        for p in 1..=peers {
            dht.add_peer(PeerId(p)).unwrap();
            dht.join(H, PeerId(p)).unwrap();
            dht.join(R, PeerId(p)).unwrap();
        }
        dht
    }

    #[test]
    fn posting_wire_format() {
        let p = Posting(StructuralId::new(1, 6, 8, 3));
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..8], &1u64.to_be_bytes());
        assert_eq!(&bytes[24..], &3u64.to_be_bytes());
        assert_eq!(Posting::from_bytes(&bytes).unwrap(), p);
        assert_eq!(Posting::from_bytes(&bytes[1..]), Err(IndexError::CorruptPosting(31)));
    }

    #[test]
    fn int_encoding_orders() {
        let vals = [i64::MIN as i128, -5, 0, 7, 2003, i64::MAX as i128, i64::MAX as i128 + 1];
        for w in vals.windows(2) {
            let (a, b) = (encode_int(w[0]), encode_int(w[1]));
            assert_eq!(a.len(), 20);
            assert!(a < b, "{a} {b}");
        }
    }

    #[test]
    fn d1_publishes_six_postings() {
        let doc = parse_document(D1, 1).unwrap();
        let mut dht = service(4);
        assert_eq!(index_document(&mut dht, &doc, PeerId(1), H, Some(R)).unwrap(), 6);
        assert_eq!(
            lookup_tag(&mut dht, H, "par", PeerId(2)).unwrap(),
            vec![Posting(StructuralId::new(1, 6, 8, 3))]
        );
        assert!(lookup_tag(&mut dht, H, "absent", PeerId(2)).unwrap().is_empty());
        assert_eq!(
            lookup_word(&mut dht, H, "dht", PeerId(3)).unwrap(),
            vec![Posting(StructuralId::new(1, 3, 5, 3))]
        );
    }

    #[test]
    fn value_key_rule() {
        let doc = parse_document("<y><year>2003</year></y>", 1).unwrap();
        let (_, range) = document_postings(&doc);
        assert_eq!(range.len(), 1);
        assert_eq!(range[0].0.as_str(), format!("v:year={}", encode_int(2003)));
        assert_eq!(range[0].0.kind(), IndexKeyKind::Value);
    }

    #[test]
    fn attribute_values_are_indexed_on_the_attribute() {
        let doc = parse_document("<a year=\"2003\" kind=\"Draft\"/>", 1).unwrap();
        let (hash, range) = document_postings(&doc);
        let kind = doc.nodes().iter().find(|n| n.name() == Some("@kind")).unwrap();
        assert!(hash.contains(&(IndexKey::word("draft"), Posting(kind.label))));
        assert_eq!(range.len(), 1);
        assert_eq!(range[0].0.as_str(), format!("v:@year={}", encode_int(2003)));
    }

    #[test]
    fn empty_elements_have_no_words() {
        let doc = parse_document("<a><b/><c/></a>", 1).unwrap();
        let (hash, range) = document_postings(&doc);
        assert!(hash.iter().all(|(k, _)| k.kind() == IndexKeyKind::Tag));
        assert!(range.is_empty());
    }

    #[test]
    fn value_ranges_are_closed() {
        let mut dht = service(3);
        let src = "<r><p><year>1999</year></p><p><year>2003</year></p><p><year>2007</year></p><p><year>5</year></p></r>";
        let doc = parse_document(src, 1).unwrap();
        index_document(&mut dht, &doc, PeerId(1), H, Some(R)).unwrap();
        let starts = |v: Vec<Posting>| v.iter().map(|p| p.0.start).collect::<Vec<_>>();
        let mid = lookup_value_range(&mut dht, R, "year", 2000, 2005, PeerId(2)).unwrap();
        assert_eq!(mid.len(), 1);
        assert_eq!(doc.node_by_label(mid[0].0).unwrap().name_or_value(), "year");
        assert_eq!(lookup_value_range(&mut dht, R, "year", 5, 5, PeerId(2)).unwrap().len(), 1);
        assert!(lookup_value_range(&mut dht, R, "year", 3000, 4000, PeerId(2)).unwrap().is_empty());
        assert_eq!(
            starts(lookup_value_range(&mut dht, R, "year", i64::MIN, i64::MAX, PeerId(3)).unwrap()).len(),
            4
        );
    }

    #[test]
    fn two_docs_sorted_by_doc() {
        let mut dht = service(4);
        for id in [2, 1] {
            let doc = parse_document(D1, id).unwrap();
            index_document(&mut dht, &doc, PeerId(id), H, Some(R)).unwrap();
        }
        let docs: Vec<u64> = lookup_tag(&mut dht, H, "par", PeerId(4))
            .unwrap()
            .iter()
            .map(|p| p.0.doc)
            .collect();
        assert_eq!(docs, [1, 2]);
    }
}
