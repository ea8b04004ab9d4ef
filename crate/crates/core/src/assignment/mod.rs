//! Exact assignment engines for each clustering variant.

pub mod fair;
pub mod flow;

use crate::coreset::WeightedPointSet;
use crate::error::{EpasError, Result};
use crate::model::{power_distance, Assignment, Center, Instance, Variant};

pub use fair::{fair_assign, FairLimits};
pub use flow::{min_cost_flow, FlowArc, FlowNetwork, FlowResult};

/// Denominator used to turn real weights into integral flow supplies.
pub const FLOW_SCALE: f64 = 1e6;

/// Weighted points against a fixed center tuple, with the distance table
/// precomputed.
#[derive(Debug, Clone)]
pub struct AssignProblem<'a> {
    pub points: &'a [usize],
    pub weights: &'a [f64],
    /// Row-major `points.len() x k` distances.
    pub dist: Vec<f64>,
    pub k: usize,
    pub z: f64,
}

impl<'a> AssignProblem<'a> {
    pub fn new(instance: &Instance, y: &'a WeightedPointSet, centers: &[Center]) -> Self {
        AssignProblem {
            points: &y.points,
            weights: &y.weights,
            dist: instance.center_distances(&y.points, centers),
            k: centers.len(),
            z: instance.z,
        }
    }

    pub fn from_table(points: &'a [usize], weights: &'a [f64], dist: Vec<f64>, k: usize, z: f64) -> Self {
        assert_eq!(dist.len(), points.len() * k, "distance table shape");
        AssignProblem { points, weights, dist, k, z }
    }

    #[inline]
    pub fn d(&self, row: usize, slot: usize) -> f64 {
        self.dist[row * self.k + slot]
    }

    #[inline]
    pub fn unit_cost(&self, row: usize, slot: usize) -> f64 {
        power_distance(self.d(row, slot), self.z)
    }

    /// Nearest slot of a row, lowest index on ties.
    pub fn nearest(&self, row: usize) -> usize {
        let mut best = 0;
        for j in 1..self.k {
            if self.d(row, j) < self.d(row, best) {
                best = j;
            }
        }
        best
    }

    /// Slots of a row ordered by distance, ties by slot index.
    pub fn slots_by_distance(&self, row: usize) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..self.k).collect();
        slots.sort_by(|&a, &b| self.d(row, a).total_cmp(&self.d(row, b)).then(a.cmp(&b)));
        slots
    }

    /// Raw weighted cost of `f`, summed in entry order.
    pub fn cost_of(&self, f: &Assignment) -> f64 {
        let row_of = |p: usize| {
            self.points
                .binary_search(&p)
                .ok()
                .or_else(|| self.points.iter().position(|&q| q == p))
                .expect("point in problem")
        };
        f.entries()
            .iter()
            .map(|e| e.weight * self.unit_cost(row_of(e.point), e.slot))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignOutcome {
    Feasible { assignment: Assignment, cost: f64 },
    Infeasible(String),
}

impl AssignOutcome {
    pub fn cost(&self) -> Option<f64> {
        match self {
            AssignOutcome::Feasible { cost, .. } => Some(*cost),
            AssignOutcome::Infeasible(_) => None,
        }
    }

    pub fn assignment(&self) -> Option<&Assignment> {
        match self {
            AssignOutcome::Feasible { assignment, .. } => Some(assignment),
            AssignOutcome::Infeasible(_) => None,
        }
    }
}

/// Every point goes wholly to its nearest slot.
pub fn voronoi_assign(p: &AssignProblem) -> Assignment {
    let mut f = Assignment::new();
    let mut rows: Vec<usize> = (0..p.points.len()).collect();
    rows.sort_by_key(|&r| p.points[r]);
    for r in rows {
        f.push(p.points[r], p.nearest(r), p.weights[r]);
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultTolerantAssignment {
    pub assignment: Assignment,
    /// Weighted cost of the `w/ell` shares.
    pub normalized_cost: f64,
    /// `ell` times the normalized cost.
    pub cost: f64,
}

/// Each point sends `w/ell` to each of its `ell` nearest slots.
pub fn fault_tolerant_assign(p: &AssignProblem, ell: usize) -> Result<FaultTolerantAssignment> {
    if ell == 0 || ell > p.k {
        return Err(EpasError::Contract(format!("ell = {ell} must lie in [1, {}]", p.k)));
    }
    let mut entries = Vec::with_capacity(p.points.len() * ell);
    for r in 0..p.points.len() {
        let share = p.weights[r] / ell as f64;
        for &j in p.slots_by_distance(r).iter().take(ell) {
            entries.push(crate::model::AssignmentEntry { point: p.points[r], slot: j, weight: share });
        }
    }
    let assignment = Assignment::from_entries(entries);
    let normalized_cost = p.cost_of(&assignment);
    Ok(FaultTolerantAssignment { assignment, normalized_cost, cost: ell as f64 * normalized_cost })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitatedAssignment {
    pub assignment: Assignment,
    pub cost: f64,
    /// Upper bound on the cost error introduced by weight scaling.
    pub rounding_bound: f64,
}

pub(crate) fn scaled_supply(w: f64) -> i64 {
    if w <= 0.0 {
        0
    } else {
        ((w * FLOW_SCALE).round() as i64).max(1)
    }
}

/// Minimum-cost assignment respecting per-slot capacities, via min-cost
/// flow on weights scaled by `FLOW_SCALE`. Returns `Ok(None)` when the
/// scaled weight exceeds the total capacity.
pub fn capacitated_assign(p: &AssignProblem, caps: &[u64]) -> Result<Option<CapacitatedAssignment>> {
    if caps.len() != p.k {
        return Err(EpasError::Contract(format!("{} capacities for {} slots", caps.len(), p.k)));
    }
    if caps.contains(&0) {
        return Err(EpasError::Contract("capacities must be positive".into()));
    }
    let n = p.points.len();
    let supplies: Vec<i64> = p.weights.iter().map(|&w| scaled_supply(w)).collect();
    let total: i64 = supplies.iter().sum();
    let slot_caps: Vec<i64> = caps
        .iter()
        .map(|&c| (c as f64 * FLOW_SCALE).min(total as f64) as i64)
        .collect();
    if total > slot_caps.iter().sum::<i64>() {
        return Ok(None);
    }
    let source = n + p.k;
    let sink = source + 1;
    let mut net = FlowNetwork::new(n + p.k + 2);
    for (r, &s) in supplies.iter().enumerate() {
        net.add_arc(source, r, s, 0.0);
    }
    let mut pair_arcs = Vec::with_capacity(n * p.k);
    for r in 0..n {
        if supplies[r] == 0 {
            continue;
        }
        for j in 0..p.k {
            pair_arcs.push((r, j, net.add_arc(r, n + j, supplies[r], p.unit_cost(r, j))));
        }
    }
    for (j, &c) in slot_caps.iter().enumerate() {
        net.add_arc(n + j, sink, c, 0.0);
    }
    let res = min_cost_flow(&net, source, sink, Some(total));
    if res.value < total {
        return Ok(None);
    }
    let mut entries = Vec::new();
    for &(r, j, a) in &pair_arcs {
        let flow = res.arc_flows[a];
        if flow > 0 {
            entries.push(crate::model::AssignmentEntry {
                point: p.points[r],
                slot: j,
                weight: p.weights[r] * flow as f64 / supplies[r] as f64,
            });
        }
    }
    let assignment = Assignment::from_entries(entries);
    let cost = p.cost_of(&assignment);
    let max_unit = (0..n)
        .flat_map(|r| (0..p.k).map(move |j| (r, j)))
        .map(|(r, j)| p.unit_cost(r, j))
        .fold(0.0, f64::max);
    let rounding_bound = supplies
        .iter()
        .zip(p.weights)
        .map(|(&s, &w)| (w - s as f64 / FLOW_SCALE).abs())
        .sum::<f64>()
        * max_unit;
    Ok(Some(CapacitatedAssignment { assignment, cost, rounding_bound }))
}

/// Optimal feasible assignment of `y` to `centers` under the instance's
/// variant. Costs are on the instance objective scale.
pub fn exact_assign(instance: &Instance, y: &WeightedPointSet, centers: &[Center]) -> Result<AssignOutcome> {
    let p = AssignProblem::new(instance, y, centers);
    exact_assign_table(instance, &p, centers)
}

/// Cost of [`exact_assign`] without materializing the assignment where the
/// variant allows. `None` means infeasible.
pub(crate) fn exact_cost(instance: &Instance, y: &WeightedPointSet, centers: &[Center]) -> Result<Option<f64>> {
    let p = AssignProblem::new(instance, y, centers);
    exact_cost_table(instance, &p, centers)
}

pub(crate) fn exact_assign_table(instance: &Instance, p: &AssignProblem, centers: &[Center]) -> Result<AssignOutcome> {
    Ok(match &instance.variant {
        Variant::Vanilla | Variant::Matroid { .. } => {
            let assignment = voronoi_assign(p);
            let cost = p.cost_of(&assignment);
            AssignOutcome::Feasible { assignment, cost }
        }
        Variant::FaultTolerant { ell } => {
            let r = fault_tolerant_assign(p, *ell)?;
            AssignOutcome::Feasible { assignment: r.assignment, cost: r.cost }
        }
        Variant::Capacitated { .. } => {
            let caps: Vec<u64> = centers
                .iter()
                .map(|c| instance.capacity_of(c).unwrap_or(0))
                .collect();
            if caps.contains(&0) {
                return Err(EpasError::Contract("center without a capacity".into()));
            }
            match capacitated_assign(p, &caps)? {
                Some(r) => AssignOutcome::Feasible { assignment: r.assignment, cost: r.cost },
                None => AssignOutcome::Infeasible("total weight exceeds the capacity of the chosen centers".into()),
            }
        }
        Variant::Fair(fair) => match fair_assign(p, fair, &FairLimits::default())? {
            Some(r) => AssignOutcome::Feasible { assignment: r.assignment, cost: r.cost },
            None => AssignOutcome::Infeasible("no assignment meets the fairness bounds".into()),
        },
    })
}

pub(crate) fn exact_cost_table(instance: &Instance, p: &AssignProblem, centers: &[Center]) -> Result<Option<f64>> {
    match &instance.variant {
        Variant::Vanilla | Variant::Matroid { .. } => {
            let mut total = 0.0;
            for r in 0..p.points.len() {
                total += p.weights[r] * p.unit_cost(r, p.nearest(r));
            }
            Ok(Some(total))
        }
        _ => Ok(exact_assign_table(instance, p, centers)?.cost()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreset::identity_coreset;
    use crate::metric::MetricSpace;
    use crate::model::{validate_assignment, Instance};
    use std::sync::Arc;

    fn line(xs: &[f64], fs: &[f64], variant: Variant, k: usize) -> Instance {
        let m = MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            false,
        )
        .unwrap();
        Instance::new(Arc::new(m), None, k, 1.0, 0.5, variant).unwrap()
    }

    fn centers(fs: &[usize]) -> Vec<Center> {
        fs.iter().map(|&f| Center::Facility(f)).collect()
    }

    #[test]
    fn voronoi_examples() {
        let inst = line(&[0.0, 10.0], &[1.0, 9.0], Variant::Vanilla, 2);
        let y = identity_coreset(&inst);
        let x = centers(&[0, 1]);
        let p = AssignProblem::new(&inst, &y, &x);
        let f = voronoi_assign(&p);
        assert_eq!(p.cost_of(&f), 2.0);

        let one = centers(&[1]);
        let p1 = AssignProblem::new(&inst, &y, &one);
        assert!(voronoi_assign(&p1).entries().iter().all(|e| e.slot == 0));

        // Point 0 at distance 1 from slots 1 and 3.
        let tie = AssignProblem::from_table(&[0], &[1.0], vec![5.0, 1.0, 2.0, 1.0], 4, 1.0);
        assert_eq!(voronoi_assign(&tie).entries()[0].slot, 1);
    }

    #[test]
    fn fault_tolerant_examples() {
        let p = AssignProblem::from_table(&[0], &[1.0], vec![1.0, 3.0, 5.0], 3, 1.0);
        let r = fault_tolerant_assign(&p, 2).unwrap();
        assert_eq!(r.normalized_cost, 2.0);
        assert_eq!(r.cost, 4.0);
        let one = fault_tolerant_assign(&p, 1).unwrap();
        assert_eq!(one.assignment, voronoi_assign(&p));
        let all = fault_tolerant_assign(&p, 3).unwrap();
        assert!(all.assignment.entries().iter().all(|e| (e.weight - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(all.assignment.len(), 3);
    }

    #[test]
    fn capacitated_examples() {
        let pts = [0usize, 1];
        let w = [1.0, 1.0];
        let p = AssignProblem::from_table(&pts, &w, vec![0.0, 1.0, 1.0, 0.0], 2, 1.0);
        let r = capacitated_assign(&p, &[1, 1]).unwrap().unwrap();
        assert_eq!(r.cost, 0.0);

        let single = AssignProblem::from_table(&pts, &w, vec![3.0, 4.0], 1, 1.0);
        let r = capacitated_assign(&single, &[5]).unwrap().unwrap();
        assert_eq!(r.cost, 7.0);
        assert_eq!(r.rounding_bound, 0.0);

        let pts3 = [0usize, 1, 2];
        let w3 = [1.0, 1.0, 1.0];
        let p3 = AssignProblem::from_table(&pts3, &w3, vec![1.0; 6], 2, 1.0);
        assert!(capacitated_assign(&p3, &[1, 1]).unwrap().is_none());
    }

    #[test]
    fn capacitated_splits_real_weights() {
        let pts = [0usize, 1];
        let w = [1.5, 0.5];
        let p = AssignProblem::from_table(&pts, &w, vec![0.0, 2.0, 0.0, 2.0], 2, 1.0);
        let r = capacitated_assign(&p, &[1, 1]).unwrap().unwrap();
        assert!((r.cost - 2.0).abs() < 1e-9);
        assert!((r.assignment.point_total(0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exact_assign_dispatch_validates() {
        let inst = line(&[0.0, 1.0, 5.0, 6.0], &[0.0, 6.0], Variant::Capacitated { caps: vec![3, 3] }, 2);
        let y = identity_coreset(&inst);
        let x = centers(&[0, 1]);
        let out = exact_assign(&inst, &y, &x).unwrap();
        let f = out.assignment().unwrap();
        assert!(validate_assignment(&inst, &y, &x, f).is_ok());
        assert_eq!(out.cost(), Some(2.0));
    }
}
