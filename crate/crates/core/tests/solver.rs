use std::sync::Arc;

use proptest::prelude::*;

use epas_core::coreset::{identity_coreset, ring_sampling_coreset};
use epas_core::metric::MetricSpace;
use epas_core::model::{solution_cost, validate_assignment, Instance, Variant};
use epas_core::oracle::{brute_force_opt, OracleLimits};
use epas_core::solver::{
    epas_solve, epas_solve_observed, NodeEval, SearchContext, SearchNode, SearchObserver, SolveStatus, SolverConfig,
};

fn plane(points: &[(f64, f64)], facilities: &[(f64, f64)]) -> Arc<MetricSpace> {
    let v = |s: &[(f64, f64)]| s.iter().map(|&(x, y)| vec![x, y]).collect();
    Arc::new(MetricSpace::euclidean(v(points), v(facilities), true).unwrap())
}

fn coords(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0u32..60, 0u32..60), n).prop_map(|v| {
        let mut v: Vec<(f64, f64)> = v.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    })
}

#[derive(Debug, Clone)]
struct Case {
    points: Vec<(f64, f64)>,
    facilities: Vec<(f64, f64)>,
    k: usize,
    z: f64,
    epsilon: f64,
    capacitated: bool,
}

fn cases() -> impl Strategy<Value = Case> {
    (coords(2..=7), coords(2..=5), 1usize..=2, prop::bool::ANY, prop::bool::ANY, prop::bool::ANY).prop_map(
        |(points, facilities, k, z2, small, capacitated)| Case {
            k: k.min(facilities.len()),
            points,
            facilities,
            z: if z2 { 2.0 } else { 1.0 },
            epsilon: if small { 0.2 } else { 0.5 },
            capacitated,
        },
    )
}

fn instance(c: &Case) -> Instance {
    let m = plane(&c.points, &c.facilities);
    let variant = if c.capacitated {
        let cap = c.points.len().div_ceil(c.k) as u64;
        Variant::Capacitated { caps: vec![cap; c.facilities.len()] }
    } else {
        Variant::Vanilla
    };
    Instance::new(m, None, c.k, c.z, c.epsilon, variant).unwrap()
}

#[derive(Default)]
struct RequestAudit {
    outside_ball: usize,
    above_window: usize,
    below_lower: usize,
    requests: usize,
}

impl SearchObserver for RequestAudit {
    fn on_node(&mut self, ctx: &SearchContext, node: &SearchNode, _eval: &NodeEval) {
        let Some(last) = node.history.last() else { return };
        let i = last.slot;
        let r0 = node.root_radii[i];
        let alpha = last.request.radius;
        self.requests += 1;
        let row = ctx.y.points.binary_search(&last.request.point).unwrap();
        if !node.balls[i].contains(row) {
            self.outside_ball += 1;
        }
        if alpha > 7.0 * r0 / ctx.epsilon * (1.0 + 1e-9) {
            self.above_window += 1;
        }
        if alpha * (1.0 + ctx.epsilon) <= r0 {
            self.below_lower += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn solution_is_valid_and_within_guarantee(c in cases()) {
        let inst = instance(&c);
        let rep = epas_solve(&inst, &SolverConfig::new(c.epsilon)).unwrap();
        let opt = brute_force_opt(&inst, &OracleLimits::default()).unwrap().unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Solved);
        prop_assert!(!rep.budgets_hit.any());
        let s = rep.solution.unwrap();
        let y = identity_coreset(&inst);
        prop_assert!(validate_assignment(&inst, &y, &s.centers, &s.assignment).is_ok());
        let recomputed = solution_cost(&inst, &y, &s.centers, &s.assignment).unwrap();
        prop_assert!((recomputed - s.cost).abs() <= 1e-9 * recomputed.max(1.0));
        prop_assert!(s.cost <= (1.0 + 30.0 * c.epsilon) * opt.cost * (1.0 + 1e-9));
        prop_assert!(opt.cost <= s.cost * (1.0 + 1e-9));
    }

    #[test]
    fn added_requests_stay_in_their_ball(c in cases()) {
        let inst = instance(&c);
        let mut audit = RequestAudit::default();
        epas_solve_observed(&inst, &SolverConfig::new(c.epsilon), &mut audit).unwrap();
        prop_assert_eq!(audit.outside_ball, 0);
        prop_assert_eq!(audit.above_window, 0);
        prop_assert_eq!(audit.below_lower, 0);
    }

    #[test]
    fn ring_sampling_preserves_weight(c in cases(), seed in 0u64..1000) {
        let inst = instance(&c);
        let y = ring_sampling_coreset(&inst, c.epsilon, seed).unwrap();
        prop_assert!((y.total_weight() - inst.total_weight()).abs() <= 1e-6 * inst.total_weight());
        prop_assert!(y.weights.iter().all(|&w| w > 0.0));
    }
}

#[test]
fn repeated_solves_agree() {
    let m = plane(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0), (11.0, 1.0), (5.0, 5.0)], &[(0.0, 1.0), (10.0, 1.0), (5.0, 4.0)]);
    let inst = Instance::new(m, None, 2, 1.0, 0.2, Variant::Vanilla).unwrap();
    let cfg = SolverConfig::new(0.2);
    let a = epas_solve(&inst, &cfg).unwrap();
    let b = epas_solve(&inst, &cfg).unwrap();
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn over_capacity_is_infeasible() {
    let m = plane(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], &[(0.0, 1.0), (2.0, 1.0)]);
    let inst = Instance::new(m, None, 2, 1.0, 0.5, Variant::Capacitated { caps: vec![1, 1] }).unwrap();
    let rep = epas_solve(&inst, &SolverConfig::new(0.5)).unwrap();
    assert_eq!(rep.status, SolveStatus::Infeasible);
    assert!(rep.solution.is_none());
    assert!(rep.certificate.unwrap().starts_with("capacity:"));
}

#[test]
fn node_budget_is_reported() {
    let m = plane(
        &[(0.0, 0.0), (3.0, 0.0), (10.0, 0.0), (13.0, 1.0), (5.0, 9.0), (7.0, 2.0)],
        &[(0.0, 1.0), (10.0, 1.0), (5.0, 4.0), (6.0, 8.0)],
    );
    let inst = Instance::new(m, None, 3, 2.0, 0.2, Variant::Vanilla).unwrap();
    let mut cfg = SolverConfig::new(0.2);
    cfg.node_budget = Some(1);
    let rep = epas_solve(&inst, &cfg).unwrap();
    assert!(rep.budgets_hit.nodes);
    assert_eq!(rep.status, SolveStatus::BudgetExhausted);
}
