mod common;

use common::{nested_loop, rdf_trial};
use proptest::prelude::*;
use xmlstore::dht::{DhtId, DhtKey, DhtService, OverlayConfig};
use xmlstore::net::PeerId;
use xmlstore::rdf::{eval_conjunctive, index_triples, ConjunctiveQuery, Triple};
use xmlstore::synth;

const H: DhtId = DhtId(1);

fn service(peers: u64) -> DhtService {
    let mut dht = DhtService::new(peers);
    dht.create_overlay(H, OverlayConfig::hash()).unwrap();
    for p in 1..=peers {
        dht.add_peer(PeerId(p)).unwrap();
        dht.join(H, PeerId(p)).unwrap();
    }
    dht
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_nested_loops(seed in any::<u64>()) {
        let out = rdf_trial(seed);
        prop_assert!(out.is_ok(), "{}", out.err().unwrap_or_default());
    }

    #[test]
    fn predicate_key_holds_exactly_its_triples(seed in any::<u64>(), n in 0usize..80) {
        let mut rng = synth::rng(seed);
        let triples = synth::random_triples(&mut rng, n);
        let mut dht = service(5);
        index_triples(&mut dht, &triples, PeerId(2), H).unwrap();
        for p in synth::PREDICATES {
            let got: Vec<Triple> = dht
                .get(H, PeerId(4), &DhtKey::new(format!("p:{p}")).unwrap())
                .unwrap()
                .iter()
                .map(|v| Triple::parse_line(std::str::from_utf8(&v.0).unwrap()).unwrap())
                .collect();
            let want: Vec<Triple> = triples.iter().filter(|t| t.predicate == *p).cloned().collect();
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn worked_example() {
    let triples = vec![Triple::new("a", "type", "Doc").unwrap(), Triple::new("a", "author", "b").unwrap()];
    let mut dht = service(3);
    assert_eq!(index_triples(&mut dht, &triples, PeerId(1), H).unwrap(), 6);
    let q = ConjunctiveQuery::parse("SELECT ?x ?y\n?x type Doc\n?x author ?y").unwrap();
    let got = eval_conjunctive(&mut dht, &q, PeerId(3), H).unwrap();
    assert_eq!(got, nested_loop(&q, &triples));
    assert_eq!(got, [vec!["a".to_string(), "b".to_string()]]);
}

#[test]
fn empty_overlay_refuses_triples() {
    let mut dht = DhtService::new(0);
    dht.create_overlay(H, OverlayConfig::hash()).unwrap();
    dht.add_peer(PeerId(1)).unwrap();
    let t = [Triple::new("a", "b", "c").unwrap()];
    assert_eq!(
        index_triples(&mut dht, &t, PeerId(1), H),
        Err(xmlstore::rdf::RdfError::Dht(xmlstore::dht::DhtError::NoMembers))
    );
}
