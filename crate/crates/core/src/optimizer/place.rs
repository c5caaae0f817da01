//! Operator placement.

use super::plan::{Op, Plan, PostingStats};
use crate::net::PeerId;

/// Rebuilds `plan` with fresh estimates from `stats`, putting every join
/// where its largest input already is (ties go to the query peer when it
/// holds one of the tied inputs, else to the first of them) and pinning the
/// recomposition at `query_peer`. Lookups stay at their owners. If the
/// estimate comes out above the all-to-query-peer plan, that plan is
/// returned instead, so the estimate never regresses.
pub fn place(plan: &Plan, stats: &PostingStats, query_peer: PeerId) -> Plan {
    let greedy = rebuild(plan, stats, query_peer, &mut |inputs: &[Plan]| {
        let best = inputs.iter().map(Plan::est_bytes).max().unwrap_or(0);
        let tied: Vec<&Plan> = inputs.iter().filter(|p| p.est_bytes() == best).collect();
        tied.iter()
            .find(|p| p.site == query_peer)
            .unwrap_or(&tied[0])
            .site
    });
    let naive = naive_placement(plan, stats, query_peer);
    if greedy.cost() <= naive.cost() {
        greedy
    } else {
        naive
    }
}

/// Every lookup shipped to `query_peer`, every other operator run there.
pub fn naive_placement(plan: &Plan, stats: &PostingStats, query_peer: PeerId) -> Plan {
    rebuild(plan, stats, query_peer, &mut |_| query_peer)
}

fn rebuild(plan: &Plan, stats: &PostingStats, query_peer: PeerId, choose: &mut dyn FnMut(&[Plan]) -> PeerId) -> Plan {
    let located = |p: Plan, site: PeerId| if p.site == site { p } else { Plan::ship(p, site) };
    match &plan.op {
        Op::IndexLookup { .. } | Op::RangeLookup { .. } => Plan::leaf(plan.op.clone(), plan.site, stats),
        Op::Ship => rebuild(&plan.inputs[0], stats, query_peer, choose),
        Op::Intersect { node } => {
            let inputs: Vec<Plan> = plan.inputs.iter().map(|i| rebuild(i, stats, query_peer, choose)).collect();
            let site = choose(&inputs);
            let mut it = inputs.into_iter().map(|p| located(p, site));
            let (a, b) = (it.next().expect("two inputs"), it.next().expect("two inputs"));
            Plan::intersect(*node, site, a, b)
        }
        Op::StructJoin(edge) => {
            let inputs: Vec<Plan> = plan.inputs.iter().map(|i| rebuild(i, stats, query_peer, choose)).collect();
            let site = choose(&inputs);
            let mut it = inputs.into_iter().map(|p| located(p, site));
            let (a, b) = (it.next().expect("two inputs"), it.next().expect("two inputs"));
            Plan::join(*edge, site, a, b, stats)
        }
        Op::Recompose { returned, root_gap } => {
            let input = rebuild(&plan.inputs[0], stats, query_peer, choose);
            Plan::recompose(returned.clone(), *root_gap, query_peer, located(input, query_peer))
        }
    }
}
