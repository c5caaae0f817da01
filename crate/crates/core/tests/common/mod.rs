#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use xmlstore::dht::{DhtId, DhtKey, DhtService, DhtValue, OverlayConfig};
use xmlstore::index::index_document;
use xmlstore::net::{NetworkStats, PeerId};
use xmlstore::optimizer::{build_plan, decompose, execute, optimize, PostingStats};
use xmlstore::rdf::{self, ConjunctiveQuery, Term, Triple};
use xmlstore::store::{Backend, Store, StoreConfig};
use xmlstore::synth;
use xmlstore::tpq::{eval_naive, parse_pattern, TreePattern, TreePatternProcessor};
use xmlstore::xml::{parse_document, Document, Resource, StructuralId};

pub const H: DhtId = DhtId(1);
pub const R: DhtId = DhtId(2);

/// Peers 1..=n in a hash and a range overlay, documents indexed and homed
/// round-robin.
pub struct World {
    pub dht: DhtService,
    pub docs: BTreeMap<u64, (PeerId, Document)>,
    pub stats: PostingStats,
    pub peers: u64,
}

impl World {
    pub fn new(seed: u64, peers: u64) -> Self {
        let mut dht = DhtService::new(seed);
        dht.create_overlay(H, OverlayConfig::hash()).unwrap();
        dht.create_overlay(R, OverlayConfig::range()).unwrap();
        for p in 1..=peers {
            dht.add_peer(PeerId(p)).unwrap();
            dht.join(H, PeerId(p)).unwrap();
            dht.join(R, PeerId(p)).unwrap();
        }
        Self {
            dht,
            docs: BTreeMap::new(),
            stats: PostingStats::default(),
            peers,
        }
    }

    pub fn with_docs(seed: u64, peers: u64, texts: &[String]) -> Self {
        let mut w = Self::new(seed, peers);
        for t in texts {
            w.add(t);
        }
        w
    }

    pub fn add(&mut self, text: &str) -> u64 {
        let id = self.docs.len() as u64 + 1;
        let doc = parse_document(text, id).unwrap();
        let home = PeerId((id - 1) % self.peers + 1);
        index_document(&mut self.dht, &doc, home, H, Some(R)).unwrap();
        self.stats.record(&doc);
        self.docs.insert(id, (home, doc));
        id
    }

    pub fn documents(&self) -> Vec<Document> {
        self.docs.values().map(|(_, d)| d.clone()).collect()
    }
}

/// A randomized trial either passes, reporting how many comparisons it made
/// and the traffic it caused, or describes the first mismatch.
pub struct Outcome {
    pub checks: usize,
    /// Comparisons where the answer was not empty.
    pub hits: usize,
    pub report: String,
}

pub type Trial = Result<Outcome, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Distributed tree-pattern evaluation against the tree-walking evaluator
/// on one random corpus.
pub fn tpq_trial(seed: u64, patterns: usize) -> Trial {
    let mut rng = synth::rng(seed);
    let docs = rng.random_range(1..=50);
    let peers = rng.random_range(1..=16);
    let texts = synth::random_corpus(seed, docs, 60);
    let mut w = World::with_docs(seed, peers, &texts);
    let parsed = w.documents();
    let mut proc = TreePatternProcessor::new(H, Some(R));
    let before = w.dht.stats().clone();
    let mut hits = 0;
    for _ in 0..patterns {
        let p = synth::random_pattern(&mut rng, 5);
        let via = PeerId(rng.random_range(1..=peers));
        let got = proc.evaluate(&mut w.dht, &p, via).map_err(|e| format!("{p}: {e}"))?;
        let want = eval_naive(&p, &parsed);
        ensure(got == want, || format!("seed {seed}, {p}: {} bindings, expected {}", got.len(), want.len()))?;
        hits += usize::from(!got.is_empty());
    }
    Ok(Outcome {
        checks: patterns,
        hits,
        report: w.dht.stats().since(&before).report(),
    })
}

pub fn naive_resources(w: &World, p: &TreePattern) -> Vec<Resource> {
    let labels: BTreeSet<StructuralId> = eval_naive(p, &w.documents())
        .iter()
        .flat_map(|b| p.returned().into_iter().filter_map(|r| b.get(r)).collect::<Vec<_>>())
        .collect();
    labels
        .into_iter()
        .map(|l| Resource::from_node(&w.docs[&l.doc].1, l).unwrap())
        .collect()
}

/// Optimized plans against the tree-walking evaluator, and their traffic
/// against the all-to-query-peer plan. `checks` counts patterns.
pub fn plan_trial(seed: u64, patterns: usize) -> Trial {
    let mut rng = synth::rng(seed);
    let docs = rng.random_range(1..=30);
    let peers = rng.random_range(1..=12);
    let texts = synth::random_corpus(seed, docs, 50);
    let mut w = World::with_docs(seed, peers, &texts);
    let mut report = String::new();
    let mut hits = 0;
    for _ in 0..patterns {
        let p = synth::random_pattern(&mut rng, 5);
        let q = PeerId(rng.random_range(1..=peers));
        let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, q).map_err(|e| format!("{p}: {e}"))?;
        plan.check().map_err(|e| format!("{p}: malformed plan: {e}"))?;
        let placed = execute(&mut w.dht, &w.docs, &plan).map_err(|e| format!("{p}: {e}"))?;
        ensure(placed.bindings == eval_naive(&p, &w.documents()), || format!("seed {seed}, {p}: bindings differ"))?;
        ensure(placed.resources == naive_resources(&w, &p), || format!("seed {seed}, {p}: resources differ"))?;
        let decomp = decompose(&p, H, Some(R)).map_err(|e| e.to_string())?;
        let naive = build_plan(&w.dht, &decomp, &w.stats, q).map_err(|e| e.to_string())?;
        let base = execute(&mut w.dht, &w.docs, &naive).map_err(|e| e.to_string())?;
        ensure(base.bindings == placed.bindings, || format!("seed {seed}, {p}: naive plan differs"))?;
        ensure(placed.stats.bytes_sent <= base.stats.bytes_sent, || {
            format!(
                "seed {seed}, {p}: placed plan moved {} bytes, naive {}",
                placed.stats.bytes_sent, base.stats.bytes_sent
            )
        })?;
        hits += usize::from(!placed.bindings.is_empty());
        report.push_str(&placed.stats.report());
    }
    Ok(Outcome { checks: patterns, hits, report })
}

/// Tag names whose tag keys are owned by two distinct peers other than `q`.
pub fn skew_tags(w: &World, q: PeerId) -> (String, String, PeerId, PeerId) {
    let owner = |t: &str| w.dht.owner(H, &DhtKey::new(format!("t:{t}")).unwrap()).unwrap();
    let big = (0..).map(|i| format!("big{i}")).find(|t| owner(t) != q).unwrap();
    let small = (0..)
        .map(|i| format!("small{i}"))
        .find(|t| owner(t) != q && owner(t) != owner(&big))
        .unwrap();
    let (a, b) = (owner(&big), owner(&small));
    (big, small, a, b)
}

/// One document with 1000 `big` elements, 10 of which hold a `small` child.
pub fn skew_world(seed: u64, peers: u64, q: PeerId) -> (World, String, String) {
    let mut w = World::new(seed, peers);
    let (big, small, _, _) = skew_tags(&w, q);
    let mut doc = String::from("<r>");
    for i in 0..1000 {
        if i % 100 == 0 {
            doc.push_str(&format!("<{big}><{small}/></{big}>"));
        } else {
            doc.push_str(&format!("<{big}/>"));
        }
    }
    doc.push_str("</r>");
    w.add(&doc);
    (w, big, small)
}

/// Measured bytes of the optimized and of the all-to-query-peer plan for
/// `//big/small!` on the skewed corpus.
pub fn skew_bytes(seed: u64) -> Result<(u64, u64, String), String> {
    let q = PeerId(1);
    let (mut w, big, small) = skew_world(seed, 8, q);
    let p = parse_pattern(&format!("//{big}/{small}!")).map_err(|e| e.to_string())?;
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, q).map_err(|e| e.to_string())?;
    let decomp = decompose(&p, H, Some(R)).map_err(|e| e.to_string())?;
    let naive = build_plan(&w.dht, &decomp, &w.stats, q).map_err(|e| e.to_string())?;
    let placed = execute(&mut w.dht, &w.docs, &plan).map_err(|e| e.to_string())?;
    let base = execute(&mut w.dht, &w.docs, &naive).map_err(|e| e.to_string())?;
    ensure(placed.resources == base.resources && placed.resources.len() == 10, || {
        "skewed plans disagree".to_string()
    })?;
    let report = placed.stats.report() + &base.stats.report();
    Ok((placed.stats.bytes_sent, base.stats.bytes_sent, report))
}

/// Successor walk from any member visits every member exactly once.
pub fn ring_walk_ok(dht: &DhtService, id: DhtId) -> Result<(), String> {
    let members = dht.members(id).map_err(|e| e.to_string())?;
    let Some(&start) = members.first() else {
        return Ok(());
    };
    let mut seen = BTreeSet::new();
    let mut at = start;
    for _ in 0..members.len() {
        if !seen.insert(at) {
            return Err(format!("successor walk revisits {at}"));
        }
        at = dht.successor(id, at).map_err(|e| e.to_string())?;
    }
    ensure(at == start && seen.len() == members.len(), || "successor walk is not a cycle over the members".into())
}

const NUMERIC: DhtId = DhtId(3);

fn churn_world(seed: u64, pool: u64, initial: u64) -> DhtService {
    let mut dht = DhtService::new(seed);
    dht.create_overlay(H, OverlayConfig::hash()).unwrap();
    dht.create_overlay(NUMERIC, OverlayConfig::range().numeric().domain(0, 1000)).unwrap();
    for p in 1..=pool {
        dht.add_peer(PeerId(p)).unwrap();
    }
    for p in 1..=initial {
        dht.join(H, PeerId(p)).unwrap();
        dht.join(NUMERIC, PeerId(p)).unwrap();
    }
    dht
}

fn value(i: usize) -> DhtValue {
    DhtValue(i.to_be_bytes().to_vec())
}

/// Random puts, gets, joins and leaves on a hash and a numeric range
/// overlay sharing 3 to 16 members, checked against a shadow map and the
/// overlay invariants after every operation.
pub fn churn_trial(seed: u64, ops: usize) -> Trial {
    let mut rng = synth::rng(seed);
    let initial = rng.random_range(3..=16);
    let mut dht = churn_world(seed, 16, initial);
    let mut shadow: BTreeMap<(DhtId, String), Vec<DhtValue>> = BTreeMap::new();
    let (mut checks, mut hits) = (0, 0);
    for i in 0..ops {
        let members = dht.members(H).unwrap();
        let via = *members.choose(&mut rng).unwrap();
        let (overlay, key) = if rng.random_bool(0.5) {
            (H, format!("k{}", rng.random_range(0..60)))
        } else {
            (NUMERIC, rng.random_range(0..1000).to_string())
        };
        let roll: f64 = rng.random();
        if roll < 0.4 {
            dht.put(overlay, via, &DhtKey::new(key.clone()).unwrap(), value(i)).map_err(|e| e.to_string())?;
            shadow.entry((overlay, key)).or_default().push(value(i));
        } else if roll < 0.8 {
            let got = dht.get(overlay, via, &DhtKey::new(key.clone()).unwrap()).map_err(|e| e.to_string())?;
            let want = shadow.get(&(overlay, key.clone())).cloned().unwrap_or_default();
            ensure(got == want, || format!("seed {seed}, op {i}: get {key} from {via} disagrees with the shadow map"))?;
            checks += 1;
            hits += usize::from(!want.is_empty());
        } else if roll < 0.9 && members.len() < 16 {
            let outside: Vec<u64> = (1..=16).filter(|p| !members.contains(&PeerId(*p))).collect();
            let p = PeerId(*outside.choose(&mut rng).unwrap());
            dht.join(H, p).map_err(|e| e.to_string())?;
            dht.join(NUMERIC, p).map_err(|e| e.to_string())?;
        } else if members.len() > 3 {
            let p = *members.choose(&mut rng).unwrap();
            dht.leave(H, p).map_err(|e| e.to_string())?;
            dht.leave(NUMERIC, p).map_err(|e| e.to_string())?;
        }
        for id in [H, NUMERIC] {
            dht.check_invariants(id).map_err(|e| format!("seed {seed}, op {i}: {e}"))?;
        }
        ring_walk_ok(&dht, H).map_err(|e| format!("seed {seed}, op {i}: {e}"))?;
        let n = dht.members(H).unwrap().len();
        ensure((3..=16).contains(&n), || format!("member count {n} out of bounds"))?;
    }
    // Everything ever written is still reachable from every member.
    for ((overlay, key), want) in &shadow {
        let via = *dht.members(*overlay).unwrap().choose(&mut rng).unwrap();
        let got = dht.get(*overlay, via, &DhtKey::new(key.clone()).unwrap()).map_err(|e| e.to_string())?;
        ensure(&got == want, || format!("seed {seed}: final get {key} lost values"))?;
        checks += 1;
        hits += 1;
    }
    Ok(Outcome {
        checks,
        hits,
        report: dht.stats().report(),
    })
}

/// Interval scans on a numeric range overlay under churn, checked against
/// a brute-force filter of the shadow map; the peers contacted must be
/// exactly those whose ranges meet the interval.
pub fn interval_trial(seed: u64, ops: usize) -> Trial {
    let mut rng = synth::rng(seed);
    let initial = rng.random_range(1..=16);
    let mut dht = churn_world(seed, 16, initial);
    let mut shadow: BTreeMap<u64, Vec<DhtValue>> = BTreeMap::new();
    let (mut checks, mut hits) = (0, 0);
    for i in 0..ops {
        let members = dht.members(NUMERIC).unwrap();
        let via = *members.choose(&mut rng).unwrap();
        let roll: f64 = rng.random();
        if roll < 0.45 {
            let k = rng.random_range(0..1000u64);
            dht.put(NUMERIC, via, &DhtKey::new(k.to_string()).unwrap(), value(i)).map_err(|e| e.to_string())?;
            shadow.entry(k).or_default().push(value(i));
        } else if roll < 0.9 {
            let lo = rng.random_range(0..1000u64);
            let hi = if rng.random_bool(0.1) { rng.random_range(0..=lo) } else { rng.random_range(lo..1000) };
            let ans = dht.get_range(NUMERIC, via, &lo.to_string(), &hi.to_string()).map_err(|e| e.to_string())?;
            let want: Vec<(String, DhtValue)> = shadow
                .iter()
                .filter(|(k, _)| lo <= **k && **k < hi)
                .flat_map(|(k, vs)| vs.iter().map(move |v| (k.to_string(), v.clone())))
                .collect();
            ensure(ans.items == want, || format!("seed {seed}, op {i}: get_range [{lo},{hi}) disagrees"))?;
            hits += usize::from(!want.is_empty());
            let meeting: Vec<PeerId> = if lo < hi {
                let mut m: Vec<(u128, PeerId)> = members
                    .iter()
                    .map(|p| (dht.range_of(NUMERIC, *p).unwrap(), *p))
                    .filter(|((a, b), _)| *a < hi as u128 && (lo as u128) < *b)
                    .map(|((a, _), p)| (a, p))
                    .collect();
                m.sort();
                m.into_iter().map(|(_, p)| p).collect()
            } else {
                Vec::new()
            };
            ensure(ans.contacted == meeting, || {
                format!("seed {seed}, op {i}: [{lo},{hi}) contacted {:?}, ranges meeting it {:?}", ans.contacted, meeting)
            })?;
            checks += 1;
        } else if roll < 0.95 && members.len() < 16 {
            let outside: Vec<u64> = (1..=16).filter(|p| !members.contains(&PeerId(*p))).collect();
            dht.join(NUMERIC, PeerId(*outside.choose(&mut rng).unwrap())).map_err(|e| e.to_string())?;
        } else if members.len() > 1 {
            dht.leave(NUMERIC, *members.choose(&mut rng).unwrap()).map_err(|e| e.to_string())?;
        }
        dht.check_invariants(NUMERIC).map_err(|e| format!("seed {seed}, op {i}: {e}"))?;
    }
    Ok(Outcome {
        checks,
        hits,
        report: dht.stats().report(),
    })
}

/// Conjunctive-query answers by trying every combination of triples.
pub fn nested_loop(q: &ConjunctiveQuery, triples: &[Triple]) -> Vec<Vec<String>> {
    fn go(q: &ConjunctiveQuery, triples: &[Triple], i: usize, env: &mut Vec<(String, String)>, out: &mut Vec<Vec<String>>) {
        let Some(pattern) = q.patterns.get(i) else {
            out.push(
                q.projection
                    .iter()
                    .map(|v| env.iter().find(|(n, _)| n == v).unwrap().1.clone())
                    .collect(),
            );
            return;
        };
        for t in triples {
            let mark = env.len();
            let mut ok = true;
            for (term, val) in pattern.terms.iter().zip([&t.subject, &t.predicate, &t.object]) {
                match term {
                    Term::Const(c) => ok &= c == val,
                    Term::Var(v) => match env.iter().find(|(n, _)| n == v) {
                        Some((_, bound)) => ok &= bound == val,
                        None => env.push((v.clone(), val.clone())),
                    },
                }
            }
            if ok {
                go(q, triples, i + 1, env, out);
            }
            env.truncate(mark);
        }
    }
    let mut out = Vec::new();
    go(q, triples, 0, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Triple-store answers against the nested-loop evaluator, and against
/// themselves with the patterns shuffled.
pub fn rdf_trial(seed: u64) -> Trial {
    let mut rng = synth::rng(seed);
    let peers = rng.random_range(1..=8);
    let count = rng.random_range(0..=200);
    let triples = synth::random_triples(&mut rng, count);
    let mut dht = DhtService::new(seed);
    dht.create_overlay(H, OverlayConfig::hash()).unwrap();
    for p in 1..=peers {
        dht.add_peer(PeerId(p)).unwrap();
        dht.join(H, PeerId(p)).unwrap();
    }
    rdf::index_triples(&mut dht, &triples, PeerId(1), H).map_err(|e| e.to_string())?;
    let q = synth::random_query(&mut rng, 4);
    let via = PeerId(rng.random_range(1..=peers));
    let got = rdf::eval_conjunctive(&mut dht, &q, via, H).map_err(|e| e.to_string())?;
    let want = nested_loop(&q, &triples);
    ensure(got == want, || format!("seed {seed}: {} rows, oracle {}", got.len(), want.len()))?;
    let mut shuffled = q.clone();
    shuffled.patterns.shuffle(&mut rng);
    let again = rdf::eval_conjunctive(&mut dht, &shuffled, via, H).map_err(|e| e.to_string())?;
    ensure(again == got, || format!("seed {seed}: pattern order changed the answer"))?;
    Ok(Outcome {
        checks: 2,
        hits: usize::from(!got.is_empty()),
        report: dht.stats().report(),
    })
}

/// `docs` documents of `per_doc - 1` `item` elements each, so with `item`
/// as a resource element every document yields `per_doc` resources.
pub fn item_corpus(docs: usize, per_doc: usize) -> Vec<String> {
    (0..docs)
        .map(|d| {
            let mut s = String::from("<list>");
            for i in 1..per_doc {
                s.push_str(&format!("<item>{} {}</item>", d, i));
            }
            s.push_str("</list>");
            s
        })
        .collect()
}

/// Probes per `get_resource` on a store of `docs * per_doc` resources.
pub fn probes_per_get(backend: Backend, docs: usize, per_doc: usize, samples: usize, seed: u64) -> Result<(usize, Vec<u64>), String> {
    let mut store = Store::new(StoreConfig {
        backend,
        peer_count: 8,
        resource_granularity: ["item".to_string()].into(),
        seed,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    for t in item_corpus(docs, per_doc) {
        store.ingest(&t).map_err(|e| e.to_string())?;
    }
    let ids = store.resource_ids().to_vec();
    let mut rng = synth::rng(seed);
    let mut probes = Vec::with_capacity(samples);
    for _ in 0..samples {
        let id = ids.choose(&mut rng).unwrap();
        let before = store.probe_count();
        let r = store.get_resource(id).map_err(|e| e.to_string())?;
        ensure(&r.id == id, || format!("asked for {}, got {}", id.as_str(), r.id.as_str()))?;
        probes.push(store.probe_count() - before);
    }
    Ok((ids.len(), probes))
}

/// Both backends on one random corpus and `patterns` random patterns.
pub fn transparency_trial(seed: u64, patterns: usize) -> Trial {
    let mut rng = synth::rng(seed);
    let docs = rng.random_range(0..=20);
    let granularity: BTreeSet<String> = synth::TAGS.iter().filter(|_| rng.random_bool(0.3)).map(|t| t.to_string()).collect();
    let config = StoreConfig {
        peer_count: rng.random_range(1..=10),
        resource_granularity: granularity,
        seed,
        ..Default::default()
    };
    let mut central = Store::new(StoreConfig {
        backend: Backend::Centralized,
        ..config.clone()
    })
    .map_err(|e| e.to_string())?;
    let mut p2p = Store::new(StoreConfig {
        backend: Backend::P2p,
        ..config
    })
    .map_err(|e| e.to_string())?;
    for t in synth::random_corpus(seed, docs, 40) {
        let a = central.ingest(&t).map_err(|e| e.to_string())?;
        let b = p2p.ingest(&t).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed}: resource ids differ between backends"))?;
    }
    let mut report = String::new();
    let mut hits = 0;
    for _ in 0..patterns {
        let p = synth::random_pattern(&mut rng, 5).canonical();
        let a = central.query(&p).map_err(|e| format!("{p}: {e}"))?;
        let b = p2p.query(&p).map_err(|e| format!("{p}: {e}"))?;
        ensure(a.resources == b.resources, || {
            format!("seed {seed}, {p}: centralized {} resources, p2p {}", a.resources.len(), b.resources.len())
        })?;
        ensure(a.stats == NetworkStats::default(), || "centralized query caused traffic".into())?;
        hits += usize::from(!a.resources.is_empty());
        report.push_str(&b.stats.report());
    }
    Ok(Outcome { checks: patterns, hits, report })
}
