//! Rule-based plan rewriting.
//!
//! Each pass tries every rule at every operator (rules in list order,
//! operators in preorder) and applies the single rewrite that lowers the
//! estimated cost most. Rewrites that do not lower the cost are never
//! applied, so the engine stops at a fixpoint or after `max_passes`.

use super::plan::{Op, Plan};

#[derive(Clone, Copy, Debug, Default)]
pub struct RuleContext {
    /// The operator is the plan root, so its output location is free.
    pub at_root: bool,
}

#[derive(Clone, Copy)]
pub struct Rule {
    pub name: &'static str,
    pub matches: fn(&Plan) -> bool,
    pub transform: fn(&Plan, RuleContext) -> Option<Plan>,
}

impl std::fmt::Debug for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name)
    }
}

pub fn default_rules() -> Vec<Rule> {
    vec![JOIN_SITE_PUSH, LOOKUP_FUSION, SHIP_COLLAPSE, DEAD_SHIP]
}

fn strip_ship(p: &Plan) -> &Plan {
    if p.op == Op::Ship {
        &p.inputs[0]
    } else {
        p
    }
}

/// Runs a join (or intersection) where its largest input lives and ships
/// the other inputs there; the output is shipped back unless at the root.
pub const JOIN_SITE_PUSH: Rule = Rule {
    name: "join-site-push",
    matches: |p| matches!(p.op, Op::StructJoin(_) | Op::Intersect { .. }),
    transform: |p, ctx| {
        let largest = p
            .inputs
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.est_bytes().cmp(&b.est_bytes()).then(j.cmp(i)))
            .map(|(_, x)| x)?;
        let target = largest.source_site();
        if target == p.site {
            return None;
        }
        let inputs = p
            .inputs
            .iter()
            .map(|i| {
                let base = strip_ship(i).clone();
                if base.site == target {
                    base
                } else {
                    Plan::ship(base, target)
                }
            })
            .collect();
        let moved = Plan {
            op: p.op.clone(),
            site: target,
            bounds: p.bounds.clone(),
            inputs,
        };
        Some(if ctx.at_root { moved } else { Plan::ship(moved, p.site) })
    },
};

/// An intersection of a lookup with itself is the lookup.
pub const LOOKUP_FUSION: Rule = Rule {
    name: "lookup-fusion",
    matches: |p| {
        matches!(p.op, Op::Intersect { .. })
            && strip_ship(&p.inputs[0]) == strip_ship(&p.inputs[1])
            && matches!(strip_ship(&p.inputs[0]).op, Op::IndexLookup { .. } | Op::RangeLookup { .. })
    },
    transform: |p, _| Some(p.inputs[0].clone()),
};

/// Two consecutive ships become one direct ship.
pub const SHIP_COLLAPSE: Rule = Rule {
    name: "ship-collapse",
    matches: |p| p.op == Op::Ship && p.inputs[0].op == Op::Ship,
    transform: |p, _| {
        let source = p.inputs[0].inputs[0].clone();
        Some(if source.site == p.site { source } else { Plan::ship(source, p.site) })
    },
};

/// A ship to the site the data is already on does nothing.
pub const DEAD_SHIP: Rule = Rule {
    name: "dead-operator-elimination",
    matches: |p| p.op == Op::Ship && p.inputs[0].site == p.site,
    transform: |p, _| Some(p.inputs[0].clone()),
};

fn paths(plan: &Plan, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(prefix.clone());
    for (i, input) in plan.inputs.iter().enumerate() {
        prefix.push(i);
        paths(input, prefix, out);
        prefix.pop();
    }
}

fn at<'a>(plan: &'a Plan, path: &[usize]) -> &'a Plan {
    path.iter().fold(plan, |p, i| &p.inputs[*i])
}

fn replaced(plan: &Plan, path: &[usize], sub: Plan) -> Plan {
    match path.split_first() {
        None => sub,
        Some((i, rest)) => {
            let mut out = plan.clone();
            out.inputs[*i] = replaced(&plan.inputs[*i], rest, sub);
            out
        }
    }
}

pub fn rewrite(plan: &Plan, rules: &[Rule], max_passes: usize) -> Plan {
    let mut current = plan.clone();
    for _ in 0..max_passes {
        let mut locations = Vec::new();
        paths(&current, &mut Vec::new(), &mut locations);
        let mut best: Option<Plan> = None;
        let mut best_cost = current.cost();
        for rule in rules {
            for path in &locations {
                let node = at(&current, path);
                if !(rule.matches)(node) {
                    continue;
                }
                let ctx = RuleContext { at_root: path.is_empty() };
                if let Some(sub) = (rule.transform)(node, ctx) {
                    let candidate = replaced(&current, path, sub);
                    let cost = candidate.cost();
                    if cost < best_cost {
                        best_cost = cost;
                        best = Some(candidate);
                    }
                }
            }
        }
        match best {
            Some(next) => current = next,
            None => break,
        }
    }
    current
}
