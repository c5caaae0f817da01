//! XML resource store over coexisting DHT overlays.

pub mod dht;
pub mod index;
pub mod net;
pub mod optimizer;
pub mod rdf;
pub mod store;
pub mod synth;
pub mod tpq;
pub mod xml;

pub use dht::{DhtId, DhtKey, DhtService, DhtValue, OverlayConfig, OverlayKind};
pub use net::{NetworkStats, PeerId};
pub use rdf::{ConjunctiveQuery, Triple};
pub use store::{Backend, QueryResult, Store, StoreConfig, StoreError};
pub use tpq::{parse_pattern, Binding, TreePattern};
pub use xml::{parse_document, Document, Resource, ResourceId, StructuralId};
