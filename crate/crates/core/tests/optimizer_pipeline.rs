mod common;

use common::{naive_resources, plan_trial, skew_bytes, skew_tags, skew_world, World, H, R};
use proptest::prelude::*;
use xmlstore::net::PeerId;
use xmlstore::optimizer::{
    build_plan, decompose, default_rules, execute, naive_placement, optimize, place, rewrite, Op, MAX_PASSES,
};
use xmlstore::synth;
use xmlstore::tpq::{eval_naive, parse_pattern};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn placed_plans_match_naive_and_never_cost_more(seed in any::<u64>(), docs in 1usize..15, peers in 1u64..9) {
        let texts = synth::random_corpus(seed, docs, 40);
        let mut w = World::with_docs(seed, peers, &texts);
        let mut rng = synth::rng(seed ^ 0xabc);
        let q = PeerId(peers);
        for _ in 0..4 {
            let p = synth::random_pattern(&mut rng, 5);
            let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, q).unwrap();
            prop_assert!(plan.check().is_ok(), "{}", plan.to_document());
            let placed = execute(&mut w.dht, &w.docs, &plan).unwrap();
            prop_assert_eq!(&placed.bindings, &eval_naive(&p, &w.documents()), "{}", p);
            prop_assert_eq!(&placed.resources, &naive_resources(&w, &p));

            let decomp = decompose(&p, H, Some(R)).unwrap();
            let naive = naive_placement(&build_plan(&w.dht, &decomp, &w.stats, q).unwrap(), &w.stats, q);
            prop_assert!(plan.cost() <= naive.cost());
            let base = execute(&mut w.dht, &w.docs, &naive).unwrap();
            prop_assert_eq!(&base.bindings, &placed.bindings);
            prop_assert!(placed.stats.bytes_sent <= base.stats.bytes_sent,
                "placed {} naive {}\n{}", placed.stats.bytes_sent, base.stats.bytes_sent, plan.to_document());
        }
    }

    #[test]
    fn estimates_bound_measured_posting_traffic(seed in any::<u64>()) {
        let texts = synth::random_corpus(seed, 12, 40);
        let mut w = World::with_docs(seed, 6, &texts);
        let mut rng = synth::rng(seed);
        let p = synth::random_pattern(&mut rng, 5);
        let q = PeerId(2);
        let decomp = decompose(&p, H, Some(R)).unwrap();
        let naive = naive_placement(&build_plan(&w.dht, &decomp, &w.stats, q).unwrap(), &w.stats, q);
        let placed = optimize(&w.dht, &p, H, Some(R), &w.stats, q).unwrap();
        for plan in [&naive, &placed] {
            // Without the payload fetch only posting lists move.
            let body = &plan.inputs[0];
            let measured = execute(&mut w.dht, &w.docs, body).unwrap().stats.bytes_sent;
            prop_assert!(measured <= body.cost());
            if plan == &naive {
                prop_assert_eq!(measured, body.cost());
            }
        }
    }

    #[test]
    fn parent_child_tag_joins_are_estimated_exactly(seed in any::<u64>(), x in 0..synth::TAGS.len(), y in 0..synth::TAGS.len()) {
        let tags = synth::TAGS;
        let texts = synth::random_corpus(seed, 10, 40);
        let mut w = World::with_docs(seed, 5, &texts);
        let p = parse_pattern(&format!("//{}/{}!", tags[x], tags[y])).unwrap();
        let placed = optimize(&w.dht, &p, H, Some(R), &w.stats, PeerId(3)).unwrap();
        let body = &placed.inputs[0];
        let measured = execute(&mut w.dht, &w.docs, body).unwrap().stats.bytes_sent;
        prop_assert_eq!(measured, body.cost());
    }
}

#[test]
fn rewriting_preserves_results() {
    let texts = synth::random_corpus(11, 20, 50);
    let mut w = World::with_docs(11, 5, &texts);
    let mut rng = synth::rng(12);
    for _ in 0..60 {
        let p = synth::random_pattern(&mut rng, 5);
        let decomp = decompose(&p, H, Some(R)).unwrap();
        let plan = build_plan(&w.dht, &decomp, &w.stats, PeerId(3)).unwrap();
        let before = execute(&mut w.dht, &w.docs, &plan).unwrap();
        let rewritten = rewrite(&plan, &default_rules(), MAX_PASSES);
        assert!(rewritten.cost() <= plan.cost());
        rewritten.check().unwrap();
        let after = execute(&mut w.dht, &w.docs, &rewritten).unwrap();
        assert_eq!(before.bindings, after.bindings, "{p}");
        assert_eq!(before.resources, after.resources);
        assert_eq!(rewrite(&rewritten, &default_rules(), MAX_PASSES), rewritten);
    }
}

#[test]
fn d1_sec_resource() {
    let mut w = World::new(1, 4);
    w.add("<doc><sec><title>dht</title><par>xml</par></sec></doc>");
    let p = parse_pattern("//sec!").unwrap();
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, PeerId(2)).unwrap();
    let out = execute(&mut w.dht, &w.docs, &plan).unwrap();
    assert_eq!(out.resources.len(), 1);
    assert_eq!(out.resources[0].payload, "<sec><title>dht</title><par>xml</par></sec>");
    assert_eq!(out.resources[0].id.as_str(), "1#2");
    let again = execute(&mut w.dht, &w.docs, &plan).unwrap();
    assert_eq!(again, out);
}

#[test]
fn range_and_word_predicates_through_plans() {
    let mut w = World::new(2, 5);
    w.add("<lib><paper><title>xml stores</title><year>2003</year></paper><paper><title>xml</title><year>1990</year></paper></lib>");
    w.add("<lib><paper><title>dht</title><year>2001</year></paper></lib>");
    let p = parse_pattern("//paper[/year in 2000..2005][/title=\"xml\"]!").unwrap();
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, PeerId(1)).unwrap();
    let mut ops = Vec::new();
    plan.walk(&mut |n| ops.push(n.op.name()));
    assert!(ops.contains(&"RangeLookup") && ops.contains(&"Intersect"));
    let out = execute(&mut w.dht, &w.docs, &plan).unwrap();
    assert_eq!(out.resources.len(), 1);
    assert!(out.resources[0].payload.contains("2003"));
}

#[test]
fn dead_site_is_reported() {
    let mut w = World::new(3, 4);
    w.add("<a><b/></a>");
    let p = parse_pattern("//a/b!").unwrap();
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, PeerId(4)).unwrap();
    w.dht.remove_peer(PeerId(4)).unwrap();
    assert_eq!(
        execute(&mut w.dht, &w.docs, &plan).map(|_| ()),
        Err(xmlstore::optimizer::OptimizerError::PlanSiteUnreachable(PeerId(4)))
    );
}

#[test]
fn skewed_join_moves_the_small_list() {
    let q = PeerId(1);
    let (mut w, big, small) = skew_world(4, 8, q);
    let (_, _, a, b) = skew_tags(&w, q);
    assert_eq!(w.stats.count(&format!("t:{big}")), 1000);
    let p = parse_pattern(&format!("//{big}/{small}!")).unwrap();
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, q).unwrap();
    let join = &plan.inputs[0].inputs[0];
    assert!(matches!(join.op, Op::StructJoin(_)));
    assert_eq!(join.site, a);
    assert_eq!(join.inputs[1].op, Op::Ship);
    assert_eq!(join.inputs[1].inputs[0].site, b);
    assert_eq!(plan.cost(), 320 + 640);

    let decomp = decompose(&p, H, Some(R)).unwrap();
    let naive = build_plan(&w.dht, &decomp, &w.stats, q).unwrap();
    assert_eq!(naive.cost(), 32000 + 320);
    let placed = execute(&mut w.dht, &w.docs, &plan).unwrap();
    let base = execute(&mut w.dht, &w.docs, &naive).unwrap();
    assert_eq!(placed.resources, base.resources);
    assert_eq!(placed.resources.len(), 10);
    assert!(placed.stats.bytes_sent * 5 <= base.stats.bytes_sent);
    assert!(place(&naive, &w.stats, q) == plan);
}

#[test]
fn leaves_at_query_peer_need_no_ships() {
    let mut w = World::new(5, 1);
    w.add("<a><b/><c>x</c></a>");
    let p = parse_pattern("//a[/b]/c=\"x\"!").unwrap();
    let plan = optimize(&w.dht, &p, H, Some(R), &w.stats, PeerId(1)).unwrap();
    assert_eq!(plan.ship_count(), 0);
    let out = execute(&mut w.dht, &w.docs, &plan).unwrap();
    assert_eq!(out.stats.bytes_sent, 0);
    assert_eq!(out.resources.len(), 1);
}

#[test]
fn randomized_plans_hold_up() {
    for seed in 0..12 {
        if let Err(e) = plan_trial(seed, 4) {
            panic!("{e}");
        }
    }
}

#[test]
fn skew_ratio_is_small() {
    let (placed, naive, _) = skew_bytes(9).unwrap();
    assert!(placed * 5 <= naive, "{placed} vs {naive}");
}
