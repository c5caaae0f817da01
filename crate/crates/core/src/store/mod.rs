//! Storage and query facade over two interchangeable backends.
//!
//! The centralized backend keeps every document in one place and answers
//! tree patterns by walking them. The p2p backend spreads the index over
//! simulated peers, homes each document on one peer and answers through the
//! optimizer. Both return the same resources for the same corpus.

mod config;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use config::{Backend, StoreConfig};

use crate::dht::{DhtError, DhtId, DhtKey, DhtService, DhtValue, OverlayConfig, OverlayKind};
use crate::index::{self, IndexError};
use crate::net::{NetError, NetworkStats, PeerId};
use crate::optimizer::{self, DocumentSource, OptimizerError, PostingStats};
use crate::rdf::{self, ConjunctiveQuery, RdfError, Triple};
use crate::tpq::{eval_naive, parse_pattern, SyntaxError, TpqError, Twig};
use crate::xml::{extract_resources, parse_document, Document, Resource, ResourceId, StructuralId, XmlError};
use snapshot::Section;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Tpq(TpqError),
    #[error(transparent)]
    Optimizer(OptimizerError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rdf(#[from] RdfError),
    #[error("no resource {0}")]
    NotFound(String),
    #[error("i/o: {0}")]
    IoFailure(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

impl From<TpqError> for StoreError {
    fn from(e: TpqError) -> Self {
        match e {
            TpqError::Syntax(s) => StoreError::Syntax(s),
            TpqError::Index(i) => StoreError::Index(i),
            e => StoreError::Tpq(e),
        }
    }
}

impl From<OptimizerError> for StoreError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Tpq(t) => t.into(),
            OptimizerError::Dht(d) => StoreError::Dht(d),
            OptimizerError::Index(i) => StoreError::Index(i),
            e => StoreError::Optimizer(e),
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::IoFailure(e.to_string())
    }
}

impl StoreError {
    /// Caused by the caller's input rather than by the store itself.
    pub fn is_user_error(&self) -> bool {
        match self {
            StoreError::Config(_)
            | StoreError::Xml(_)
            | StoreError::Syntax(_)
            | StoreError::Tpq(_)
            | StoreError::NotFound(_)
            | StoreError::IoFailure(_)
            | StoreError::CorruptSnapshot(_) => true,
            StoreError::Optimizer(e) => matches!(e, OptimizerError::NoRangeOverlay),
            StoreError::Rdf(e) => !matches!(e, RdfError::Dht(_)),
            StoreError::Index(_) | StoreError::Dht(_) | StoreError::Net(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    /// Distinct subtrees of the returned nodes, in document order.
    pub resources: Vec<Resource>,
    /// Traffic caused by the query; always zero for the centralized backend.
    pub stats: NetworkStats,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreStats {
    pub backend: Backend,
    pub peers: u64,
    pub documents: usize,
    pub resources: usize,
    pub triples: usize,
    pub probes: u64,
    pub network: NetworkStats,
}

impl fmt::Display for StoreStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backend: {}", self.backend)?;
        writeln!(f, "peers: {}", self.peers)?;
        writeln!(f, "documents: {}", self.documents)?;
        writeln!(f, "resources: {}", self.resources)?;
        writeln!(f, "triples: {}", self.triples)?;
        writeln!(f, "resource probes: {}", self.probes)?;
        writeln!(f, "messages: {}", self.network.messages_sent)?;
        write!(f, "bytes: {}", self.network.bytes_sent)
    }
}

/// Documents by id (ids are 1, 2, ... in ingest order) with their home peers.
#[derive(Default)]
struct Corpus {
    docs: Vec<Document>,
    texts: Vec<String>,
    homes: Vec<PeerId>,
}

impl DocumentSource for Corpus {
    fn home(&self, doc_id: u64) -> Option<PeerId> {
        self.homes.get(doc_id.checked_sub(1)? as usize).copied()
    }

    fn document(&self, doc_id: u64) -> Option<&Document> {
        self.docs.get(doc_id.checked_sub(1)? as usize)
    }
}

pub struct Store {
    config: StoreConfig,
    corpus: Corpus,
    /// Resource index of each peer; the centralized backend uses one entry.
    resources: BTreeMap<PeerId, HashMap<ResourceId, Resource>>,
    resource_ids: Vec<ResourceId>,
    triples: Vec<Triple>,
    /// The p2p backend's overlays, or a single local peer holding triples
    /// for the centralized backend.
    dht: DhtService,
    posting_stats: PostingStats,
    probes: u64,
}

/// Peer queries enter through, and the centralized backend's only peer.
const QUERY_PEER: PeerId = PeerId(1);
const LOCAL_TRIPLES: DhtId = DhtId(1);

impl Store {
    pub fn new(config: StoreConfig) -> Result<Self, StoreError> {
        config.validate()?;
        let mut dht = DhtService::new(config.seed);
        match config.backend {
            Backend::Centralized => {
                let id = config.hash_overlay().unwrap_or(LOCAL_TRIPLES);
                dht.create_overlay(id, OverlayConfig::hash())?;
                dht.add_peer(QUERY_PEER)?;
                dht.join(id, QUERY_PEER)?;
            }
            Backend::P2p => {
                for (id, kind) in &config.overlays {
                    let oc = match kind {
                        OverlayKind::Hash => OverlayConfig::hash(),
                        OverlayKind::Range => OverlayConfig::range(),
                    };
                    dht.create_overlay(*id, oc)?;
                }
                for p in 1..=config.peer_count {
                    dht.add_peer(PeerId(p))?;
                    for (id, _) in &config.overlays {
                        dht.join(*id, PeerId(p))?;
                    }
                }
            }
        }
        Ok(Self {
            config,
            corpus: Corpus::default(),
            resources: BTreeMap::new(),
            resource_ids: Vec::new(),
            triples: Vec::new(),
            dht,
            posting_stats: PostingStats::default(),
            probes: 0,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn hash_dht(&self) -> DhtId {
        self.config.hash_overlay().unwrap_or(LOCAL_TRIPLES)
    }

    fn home_of(&self, doc_id: u64) -> PeerId {
        match self.config.backend {
            Backend::Centralized => QUERY_PEER,
            Backend::P2p => PeerId((doc_id - 1) % self.config.peer_count + 1),
        }
    }

    /// Stores one document and returns the ids of its resources.
    pub fn ingest(&mut self, xml_text: &str) -> Result<Vec<ResourceId>, StoreError> {
        let doc_id = self.corpus.docs.len() as u64 + 1;
        let doc = parse_document(xml_text, doc_id)?;
        let home = self.home_of(doc_id);
        let extracted = extract_resources(&doc, &self.config.resource_granularity);
        if self.config.backend == Backend::P2p {
            let hash = self.hash_dht();
            index::index_document(&mut self.dht, &doc, home, hash, self.config.range_overlay())?;
            for r in &extracted {
                let key = DhtKey::new(format!("r:{}", r.id.as_str()))?;
                self.dht.put(hash, home, &key, DhtValue(home.0.to_be_bytes().to_vec()))?;
            }
        }
        self.posting_stats.record(&doc);
        let index = self.resources.entry(home).or_default();
        let ids: Vec<ResourceId> = extracted.iter().map(|r| r.id.clone()).collect();
        for r in extracted {
            index.insert(r.id.clone(), r);
        }
        self.resource_ids.extend(ids.iter().cloned());
        self.corpus.docs.push(doc);
        self.corpus.texts.push(xml_text.to_string());
        self.corpus.homes.push(home);
        Ok(ids)
    }

    /// One direct lookup in the resource index of the peer holding `id`.
    fn probe(&mut self, site: PeerId, id: &ResourceId) -> Result<Resource, StoreError> {
        self.probes += 1;
        self.resources
            .get(&site)
            .and_then(|m| m.get(id))
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.as_str().to_string()))
    }

    /// The p2p backend first finds the home peer through the overlay, then
    /// asks that peer; either way exactly one index probe is made.
    pub fn get_resource(&mut self, id: &ResourceId) -> Result<Resource, StoreError> {
        match self.config.backend {
            Backend::Centralized => self.probe(QUERY_PEER, id),
            Backend::P2p => {
                let key = DhtKey::new(format!("r:{}", id.as_str()))?;
                let values = self.dht.get(self.hash_dht(), QUERY_PEER, &key)?;
                let home = values
                    .first()
                    .and_then(|v| <[u8; 8]>::try_from(v.0.as_slice()).ok())
                    .map(|b| PeerId(u64::from_be_bytes(b)))
                    .ok_or_else(|| StoreError::NotFound(id.as_str().to_string()))?;
                let net = self.dht.network_mut();
                net.transmit(QUERY_PEER, home, id.as_str().as_bytes().to_vec())?;
                let r = self.probe(home, id)?;
                self.dht
                    .network_mut()
                    .transmit(home, QUERY_PEER, r.payload.as_bytes().to_vec())?;
                Ok(r)
            }
        }
    }

    pub fn query(&mut self, text: &str) -> Result<QueryResult, StoreError> {
        let pattern = parse_pattern(text)?;
        match self.config.backend {
            Backend::Centralized => {
                // Same acceptance rules as the index-based backend.
                Twig::from_pattern(&pattern)?;
                let returned = pattern.returned();
                let labels: BTreeSet<StructuralId> = eval_naive(&pattern, &self.corpus.docs)
                    .iter()
                    .flat_map(|b| returned.iter().filter_map(|r| b.get(*r)).collect::<Vec<_>>())
                    .collect();
                let resources = labels
                    .into_iter()
                    .map(|l| {
                        let doc = self.corpus.document(l.doc).expect("bound labels come from stored documents");
                        Resource::from_node(doc, l)
                    })
                    .collect::<Result<_, _>>()?;
                Ok(QueryResult {
                    resources,
                    stats: NetworkStats::default(),
                })
            }
            Backend::P2p => {
                let plan = optimizer::optimize(
                    &self.dht,
                    &pattern,
                    self.hash_dht(),
                    self.config.range_overlay(),
                    &self.posting_stats,
                    QUERY_PEER,
                )?;
                let out = optimizer::execute(&mut self.dht, &self.corpus, &plan)?;
                Ok(QueryResult {
                    resources: out.resources,
                    stats: out.stats,
                })
            }
        }
    }

    /// Loads tab-separated triples; returns how many were added.
    pub fn rdf_load(&mut self, text: &str) -> Result<usize, StoreError> {
        let triples = rdf::parse_triples(text)?;
        self.add_triples(triples)
    }

    fn add_triples(&mut self, triples: Vec<Triple>) -> Result<usize, StoreError> {
        let hash = self.hash_dht();
        rdf::index_triples(&mut self.dht, &triples, QUERY_PEER, hash)?;
        let n = triples.len();
        self.triples.extend(triples);
        Ok(n)
    }

    /// Projected rows of a conjunctive query, with the parsed query for its
    /// column names.
    pub fn rdf_query(&mut self, text: &str) -> Result<(ConjunctiveQuery, Vec<Vec<String>>), StoreError> {
        let q = ConjunctiveQuery::parse(text)?;
        let hash = self.hash_dht();
        let rows = rdf::eval_conjunctive(&mut self.dht, &q, QUERY_PEER, hash)?;
        Ok((q, rows))
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            backend: self.config.backend,
            peers: match self.config.backend {
                Backend::Centralized => 1,
                Backend::P2p => self.config.peer_count,
            },
            documents: self.corpus.docs.len(),
            resources: self.resource_ids.len(),
            triples: self.triples.len(),
            probes: self.probes,
            network: self.dht.stats().clone(),
        }
    }

    pub fn probe_count(&self) -> u64 {
        self.probes
    }

    pub fn resource_ids(&self) -> &[ResourceId] {
        &self.resource_ids
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut w = snapshot::Writer::new();
        w.record(Section::Config, self.config.to_text().as_bytes());
        for (i, text) in self.corpus.texts.iter().enumerate() {
            let mut payload = (i as u64 + 1).to_be_bytes().to_vec();
            payload.extend_from_slice(text.as_bytes());
            w.record(Section::Doc, &payload);
        }
        for id in &self.resource_ids {
            w.record(Section::Resource, id.as_str().as_bytes());
        }
        for t in &self.triples {
            w.record(Section::Triple, t.canonical().as_bytes());
        }
        w.finish()
    }

    /// Rebuilds a store by replaying the saved documents and triples under
    /// the saved configuration, then checks the resource ids match.
    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::CorruptSnapshot(m.to_string());
        let records = snapshot::read(bytes)?;
        let mut iter = records.into_iter();
        let config = match iter.next() {
            Some((Section::Config, p)) => {
                StoreConfig::parse(std::str::from_utf8(p).map_err(|_| corrupt("config is not UTF-8"))?)?
            }
            _ => return Err(corrupt("missing config section")),
        };
        let mut store = Store::new(config)?;
        let mut saved_ids = Vec::new();
        let mut triples = Vec::new();
        for (section, payload) in iter {
            let text = |p: &[u8]| std::str::from_utf8(p).map(str::to_string).map_err(|_| corrupt("record is not UTF-8"));
            match section {
                Section::Config => return Err(corrupt("second config section")),
                Section::Doc => {
                    if payload.len() < 8 {
                        return Err(corrupt("document record too short"));
                    }
                    let (id, body) = payload.split_at(8);
                    let id = u64::from_be_bytes(id.try_into().expect("8 bytes"));
                    if id != store.corpus.docs.len() as u64 + 1 {
                        return Err(corrupt("document ids out of order"));
                    }
                    store.ingest(&text(body)?)?;
                }
                Section::Resource => saved_ids.push(text(payload)?),
                Section::Triple => triples.push(Triple::parse_line(&text(payload)?)?),
            }
        }
        let rebuilt: Vec<&str> = store.resource_ids.iter().map(ResourceId::as_str).collect();
        if rebuilt != saved_ids {
            return Err(corrupt("resource ids do not match the documents"));
        }
        store.add_triples(triples)?;
        Ok(store)
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        Ok(std::fs::write(path, self.to_snapshot_bytes())?)
    }

    pub fn restore(path: &Path) -> Result<Self, StoreError> {
        Self::from_snapshot_bytes(&std::fs::read(path)?)
    }
}
