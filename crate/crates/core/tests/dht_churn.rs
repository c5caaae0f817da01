mod common;

use common::{churn_trial, interval_trial, ring_walk_ok};
use proptest::prelude::*;
use xmlstore::dht::{DhtError, DhtId, DhtKey, DhtService, DhtValue, OverlayConfig, Routing};
use xmlstore::net::PeerId;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn churn_keeps_every_value_reachable(seed in any::<u64>()) {
        let out = churn_trial(seed, 300);
        prop_assert!(out.is_ok(), "{}", out.err().unwrap_or_default());
    }

    #[test]
    fn interval_scans_match_brute_force(seed in any::<u64>()) {
        let out = interval_trial(seed, 300);
        prop_assert!(out.is_ok(), "{}", out.err().unwrap_or_default());
    }
}

#[test]
fn hops_never_exceed_members() {
    let h = DhtId(1);
    let mut dht = DhtService::new(3);
    dht.create_overlay(h, OverlayConfig::hash().routing(Routing::Successor)).unwrap();
    for p in 1..=12 {
        dht.add_peer(PeerId(p)).unwrap();
        dht.join(h, PeerId(p)).unwrap();
    }
    ring_walk_ok(&dht, h).unwrap();
    for i in 0..200 {
        let key = DhtKey::new(format!("key{i}")).unwrap();
        let before = dht.stats().messages_sent;
        dht.put(h, PeerId(i % 12 + 1), &key, DhtValue(vec![1])).unwrap();
        assert!(dht.stats().messages_sent - before <= 12);
    }
}

#[test]
fn same_seed_same_traffic() {
    let a = churn_trial(42, 400).map_err(|e| e.to_string()).unwrap();
    let b = churn_trial(42, 400).map_err(|e| e.to_string()).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn last_member_leaving_empties_overlay() {
    let h = DhtId(1);
    let mut dht = DhtService::new(0);
    dht.create_overlay(h, OverlayConfig::hash()).unwrap();
    dht.add_peer(PeerId(1)).unwrap();
    dht.join(h, PeerId(1)).unwrap();
    dht.leave(h, PeerId(1)).unwrap();
    assert_eq!(dht.get(h, PeerId(1), &DhtKey::new("k").unwrap()), Err(DhtError::NoMembers));
}
