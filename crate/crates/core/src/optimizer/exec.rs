//! Plan interpreter over the simulated network.
//!
//! Intermediate results are posting lists per pattern node. A Ship sends
//! one message per list carrying its 32-byte postings; the receiving site
//! knows the plan, so no framing is needed. Recompose fetches the returned
//! subtrees from the peers holding their documents.

use std::collections::{BTreeMap, BTreeSet};

use super::plan::{Op, Plan};
use super::OptimizerError;
use crate::dht::{DhtKey, DhtService};
use crate::index::{self, Posting, POSTING_BYTES};
use crate::net::{NetworkStats, PeerId};
use crate::tpq::{sort_bindings_by, Binding, PNodeId};
use crate::xml::{Document, Resource, StructuralId};

type Lists = BTreeMap<PNodeId, Vec<StructuralId>>;

/// Where documents live and their parsed content.
pub trait DocumentSource {
    fn home(&self, doc_id: u64) -> Option<PeerId>;
    fn document(&self, doc_id: u64) -> Option<&Document>;
}

impl DocumentSource for BTreeMap<u64, (PeerId, Document)> {
    fn home(&self, doc_id: u64) -> Option<PeerId> {
        self.get(&doc_id).map(|(p, _)| *p)
    }

    fn document(&self, doc_id: u64) -> Option<&Document> {
        self.get(&doc_id).map(|(_, d)| d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    /// Sorted by the returned nodes' ids.
    pub bindings: Vec<Binding>,
    /// Distinct subtrees of returned nodes, by label. Empty unless the plan
    /// ends in Recompose.
    pub resources: Vec<Resource>,
    pub stats: NetworkStats,
}

pub fn execute(dht: &mut DhtService, docs: &dyn DocumentSource, plan: &Plan) -> Result<Execution, OptimizerError> {
    let before = dht.stats().clone();
    let (bindings, resources) = match &plan.op {
        Op::Recompose { returned, root_gap } => {
            let input = &plan.inputs[0];
            let lists = run(dht, input)?;
            let mut bindings = input.twig(*root_gap).evaluate(&lists);
            sort_bindings_by(returned, &mut bindings);
            let resources = fetch_resources(dht, docs, plan.site, returned, &bindings)?;
            (bindings, resources)
        }
        _ => {
            let lists = run(dht, plan)?;
            let mut bindings = plan.twig(None).evaluate(&lists);
            bindings.sort();
            (bindings, Vec::new())
        }
    };
    Ok(Execution {
        bindings,
        resources,
        stats: dht.stats().since(&before),
    })
}

fn run(dht: &mut DhtService, plan: &Plan) -> Result<Lists, OptimizerError> {
    if !dht.network().contains(plan.site) {
        return Err(OptimizerError::PlanSiteUnreachable(plan.site));
    }
    Ok(match &plan.op {
        Op::IndexLookup { dht: id, key, node } => {
            let key = DhtKey::new(key.clone())?;
            let values = dht.get(*id, plan.site, &key)?;
            let list = index::decode_postings(&values)?.into_iter().map(|p| p.0).collect();
            BTreeMap::from([(*node, list)])
        }
        Op::RangeLookup { dht: id, tag, lo, hi, node } => {
            let list = index::lookup_value_range(dht, *id, tag, *lo, *hi, plan.site)?
                .into_iter()
                .map(|p| p.0)
                .collect();
            BTreeMap::from([(*node, list)])
        }
        Op::Intersect { node } => {
            let a = run(dht, &plan.inputs[0])?;
            let b = run(dht, &plan.inputs[1])?;
            let right: BTreeSet<&StructuralId> = b[node].iter().collect();
            let list = a[node].iter().filter(|s| right.contains(s)).copied().collect();
            BTreeMap::from([(*node, list)])
        }
        Op::StructJoin(_) => {
            let mut lists = run(dht, &plan.inputs[0])?;
            lists.extend(run(dht, &plan.inputs[1])?);
            plan.twig(None).reduce(&lists)
        }
        Op::Ship => {
            let from = plan.inputs[0].site;
            let lists = run(dht, &plan.inputs[0])?;
            let mut received = Lists::new();
            for (node, list) in lists {
                let payload: Vec<u8> = list.iter().flat_map(|s| Posting(*s).to_bytes()).collect();
                dht.network_mut().transmit(from, plan.site, payload.clone())?;
                let decoded = payload
                    .chunks(POSTING_BYTES)
                    .map(|c| Posting::from_bytes(c).map(|p| p.0))
                    .collect::<Result<Vec<_>, _>>()?;
                received.insert(node, decoded);
            }
            received
        }
        Op::Recompose { .. } => run(dht, &plan.inputs[0])?,
    })
}

/// Asks each home peer for its returned subtrees: the request carries the
/// labels, the reply the serialized subtrees, each prefixed by its length.
fn fetch_resources(
    dht: &mut DhtService,
    docs: &dyn DocumentSource,
    site: PeerId,
    returned: &[PNodeId],
    bindings: &[Binding],
) -> Result<Vec<Resource>, OptimizerError> {
    let labels: BTreeSet<StructuralId> = bindings
        .iter()
        .flat_map(|b| returned.iter().filter_map(|r| b.get(*r)))
        .collect();
    let mut by_home: BTreeMap<PeerId, Vec<StructuralId>> = BTreeMap::new();
    for l in labels {
        let home = docs.home(l.doc).ok_or(OptimizerError::UnknownDocument(l.doc))?;
        by_home.entry(home).or_default().push(l);
    }
    let mut out = Vec::new();
    for (home, labels) in by_home {
        if !dht.network().contains(home) {
            return Err(OptimizerError::PlanSiteUnreachable(home));
        }
        let request: Vec<u8> = labels.iter().flat_map(|s| Posting(*s).to_bytes()).collect();
        dht.network_mut().transmit(site, home, request)?;
        let mut reply = Vec::new();
        for l in labels {
            let doc = docs.document(l.doc).ok_or(OptimizerError::UnknownDocument(l.doc))?;
            let resource = Resource::from_node(doc, l)?;
            reply.extend_from_slice(&(resource.payload.len() as u32).to_be_bytes());
            reply.extend_from_slice(resource.payload.as_bytes());
            out.push(resource);
        }
        dht.network_mut().transmit(home, site, reply)?;
    }
    out.sort_by_key(|r| r.root_label);
    Ok(out)
}
