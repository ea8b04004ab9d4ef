use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use fixedbitset::FixedBitSet;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::assignment::exact_cost;
use crate::ballint::{euclidean_ball_int, satisfying_set, select_centers, EuclideanBallInt, Request, RequestSet};
use crate::coreset::WeightedPointSet;
use crate::error::Result;
use crate::metric::{aspect_ratio, distance_grid};
use crate::model::{power_distance, Center, Instance, Variant};

/// One refinement step on a root-to-node path: the request added to `slot`
/// and the center that slot had when the request was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub slot: usize,
    pub center: Center,
    pub request: Request,
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub requests: Vec<RequestSet>,
    pub leaders: Vec<usize>,
    pub root_radii: Vec<f64>,
    /// Members of each `B_i`, as rows of the weighted point set.
    pub balls: Vec<FixedBitSet>,
    /// Facilities of each slot's class meeting every request of the slot.
    /// Empty in continuous mode.
    pub sat: Vec<FixedBitSet>,
    pub depth: usize,
    pub history: Vec<Modification>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEval {
    Bottom { unproven: bool },
    /// Centers exist but admit no feasible assignment.
    Unassignable { centers: Vec<Center> },
    Evaluated { centers: Vec<Center>, cost: f64 },
}

impl NodeEval {
    pub fn cost(&self) -> Option<f64> {
        match self {
            NodeEval::Evaluated { cost, .. } => Some(*cost),
            _ => None,
        }
    }

    pub fn centers(&self) -> Option<&[Center]> {
        match self {
            NodeEval::Evaluated { centers, .. } | NodeEval::Unassignable { centers } => Some(centers),
            NodeEval::Bottom { .. } => None,
        }
    }
}

/// A candidate child: slot, row of the point, and the request to add.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub slot: usize,
    pub row: usize,
    pub request: Request,
}

type MemoKey = (Vec<FixedBitSet>, Vec<FixedBitSet>, Vec<u64>);

/// Everything a node expansion needs that does not change along the search.
pub struct SearchContext<'a> {
    pub instance: &'a Instance,
    pub y: &'a WeightedPointSet,
    pub epsilon: f64,
    pub eta: f64,
    pub ball_constant: f64,
    /// Candidate facilities per slot.
    pub colors: Vec<Vec<usize>>,
    grid: Vec<f64>,
    /// Per row, `(facility, unit cost)` ascending by unit cost.
    lb_rows: Vec<Vec<(usize, f64)>>,
    lb_take: usize,
    cost_cache: HashMap<Vec<usize>, Option<f64>>,
    pub cost_evaluations: u64,
}

impl<'a> SearchContext<'a> {
    pub fn new(instance: &'a Instance, y: &'a WeightedPointSet, epsilon: f64, eta: f64, ball_constant: f64) -> Result<Self> {
        let m = &instance.metric;
        let (d_min, _) = m.distance_range().unwrap_or((1.0, 1.0));
        let delta = aspect_ratio(m).unwrap_or(1.0);
        let unit = if delta > 1.0 { distance_grid(delta, epsilon)?.values } else { vec![1.0] };
        let mut grid = vec![d_min / (1.0 + epsilon)];
        grid.extend(unit.iter().map(|g| g * d_min));
        let nf = m.n_facilities();
        let lb_rows = y
            .points
            .iter()
            .map(|&p| {
                let mut row: Vec<(usize, f64)> =
                    (0..nf).map(|f| (f, power_distance(m.client_facility_dist(p, f), instance.z))).collect();
                row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                row
            })
            .collect();
        let lb_take = match instance.variant {
            Variant::FaultTolerant { ell } => ell,
            _ => 1,
        };
        let colors = vec![(0..nf).collect(); instance.k];
        Ok(SearchContext {
            instance,
            y,
            epsilon,
            eta,
            ball_constant,
            colors,
            grid,
            lb_rows,
            lb_take,
            cost_cache: HashMap::new(),
            cost_evaluations: 0,
        })
    }

    pub fn is_continuous(&self) -> bool {
        self.instance.metric.is_continuous()
    }

    /// Radius used for a leader at distance `d` from its center: the
    /// smallest grid value not below `d`, and one step below the smallest
    /// positive distance when `d = 0`.
    pub fn root_radius(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return self.grid[0];
        }
        let i = self.grid.partition_point(|&g| g < d);
        self.grid.get(i).copied().unwrap_or(d).max(d)
    }

    /// Grid radii up to one step past the diameter, used in continuous mode.
    pub fn grid_radii(&self) -> Vec<f64> {
        let (_, d_max) = self.instance.metric.distance_range().unwrap_or((1.0, 1.0));
        let end = self.grid.partition_point(|&g| g < d_max);
        self.grid[..(end + 1).min(self.grid.len())].to_vec()
    }

    /// Per-slot `(row, radius)` options, ascending by radius then row.
    pub fn slot_options(&self, slot: usize) -> Vec<(usize, f64)> {
        let m = &self.instance.metric;
        let mut out = Vec::new();
        for (row, &p) in self.y.points.iter().enumerate() {
            let mut radii: Vec<f64> = if self.is_continuous() {
                self.grid_radii()
            } else {
                self.colors[slot].iter().map(|&f| self.root_radius(m.client_facility_dist(p, f))).collect()
            };
            radii.sort_by(f64::total_cmp);
            radii.dedup();
            out.extend(radii.into_iter().map(|r| (row, r)));
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn ball(&self, center_row: usize, radius: f64) -> FixedBitSet {
        let m = &self.instance.metric;
        let c = self.y.points[center_row];
        let mut b = FixedBitSet::with_capacity(self.y.len());
        for (row, &q) in self.y.points.iter().enumerate() {
            if m.client_dist(c, q) <= radius {
                b.insert(row);
            }
        }
        b
    }

    pub fn root(&self, leaders: &[usize], radii: &[f64]) -> SearchNode {
        let k = self.instance.k;
        let mut requests = Vec::with_capacity(k);
        let mut balls = Vec::with_capacity(k);
        let mut sat = Vec::with_capacity(k);
        for i in 0..k {
            let p = self.y.points[leaders[i]];
            let r = Request { point: p, radius: radii[i] };
            balls.push(self.ball(leaders[i], self.ball_constant * radii[i] / self.epsilon));
            if !self.is_continuous() {
                sat.push(satisfying_set(&self.instance.metric, &self.colors[i], &[r], self.eta));
            }
            requests.push([r].into_iter().collect());
        }
        SearchNode {
            requests,
            leaders: leaders.iter().map(|&row| self.y.points[row]).collect(),
            root_radii: radii.to_vec(),
            balls,
            sat,
            depth: 0,
            history: Vec::new(),
        }
    }

    pub(crate) fn memo_key(&self, node: &SearchNode) -> Option<MemoKey> {
        (!self.is_continuous()).then(|| {
            (node.sat.clone(), node.balls.clone(), node.root_radii.iter().map(|r| r.to_bits()).collect())
        })
    }

    /// Cost every descendant must pay: each row served by its cheapest
    /// facilities (its `ell` cheapest when fault-tolerant) among the union of
    /// the slots' satisfying sets.
    pub fn lower_bound(&self, node: &SearchNode) -> f64 {
        if self.is_continuous() {
            return 0.0;
        }
        let mut union = FixedBitSet::with_capacity(self.instance.metric.n_facilities());
        for s in &node.sat {
            union.union_with(s);
        }
        let mut total = 0.0;
        for (row, w) in self.y.weights.iter().enumerate() {
            let mut taken = 0;
            let mut sum = 0.0;
            for &(f, u) in &self.lb_rows[row] {
                if taken == self.lb_take {
                    break;
                }
                if union.contains(f) {
                    sum += u;
                    taken += 1;
                }
            }
            if taken < self.lb_take {
                return f64::INFINITY;
            }
            total += w * sum;
        }
        total
    }

    pub fn evaluate(&mut self, node: &SearchNode) -> Result<NodeEval> {
        let centers: Vec<Center> = if self.is_continuous() {
            let dim = self.instance.metric.dim().unwrap_or(0);
            let mut out = Vec::with_capacity(node.requests.len());
            for q in &node.requests {
                match euclidean_ball_int(&self.instance.metric, q, self.eta, dim) {
                    EuclideanBallInt::Found(x) => out.push(Center::Point(x)),
                    EuclideanBallInt::Empty { proven } => return Ok(NodeEval::Bottom { unproven: !proven }),
                }
            }
            out
        } else {
            match select_centers(self.instance, &node.sat) {
                Some(x) => x.into_iter().map(Center::Facility).collect(),
                None => return Ok(NodeEval::Bottom { unproven: false }),
            }
        };
        let cost = self.cost_of(&centers)?;
        Ok(match cost {
            Some(cost) => NodeEval::Evaluated { centers, cost },
            None => NodeEval::Unassignable { centers },
        })
    }

    /// Exact assignment cost of `centers` on the weighted point set.
    pub fn cost_of(&mut self, centers: &[Center]) -> Result<Option<f64>> {
        let key: Option<Vec<usize>> = centers.iter().map(Center::facility).collect::<Option<Vec<_>>>().map(|mut v| {
            v.sort_unstable();
            v
        });
        if let Some(c) = key.as_ref().and_then(|k| self.cost_cache.get(k)) {
            return Ok(*c);
        }
        self.cost_evaluations += 1;
        let cost = exact_cost(self.instance, self.y, centers)?;
        if let Some(k) = key {
            self.cost_cache.insert(k, cost);
        }
        Ok(cost)
    }

    /// Children of a node: every `p ∈ B_i` outside
    /// `ball(x_i, r'_i)`, ordered by descending `w(p)·d(p,X)^z`, then slot,
    /// then row.
    pub fn branches(&self, node: &SearchNode, centers: &[Center]) -> Vec<Branch> {
        let m = &self.instance.metric;
        let mut out: Vec<(f64, Branch)> = Vec::new();
        for (slot, ball) in node.balls.iter().enumerate() {
            for row in ball.ones() {
                let p = self.y.points[row];
                let d = m.client_center_dist(p, &centers[slot]);
                if d > node.root_radii[slot] {
                    let dx = centers.iter().map(|c| m.client_center_dist(p, c)).fold(f64::INFINITY, f64::min);
                    let key = self.y.weights[row] * power_distance(dx, self.instance.z);
                    let request = Request { point: p, radius: d / (1.0 + self.epsilon) };
                    out.push((key, Branch { slot, row, request }));
                }
            }
        }
        out.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.slot.cmp(&b.1.slot))
                .then(a.1.row.cmp(&b.1.row))
        });
        out.into_iter().map(|(_, b)| b).collect()
    }

    pub fn child(&self, node: &SearchNode, centers: &[Center], branch: Branch) -> SearchNode {
        let mut next = node.clone();
        next.requests[branch.slot].push(branch.request);
        if !self.is_continuous() {
            let m = &self.instance.metric;
            let s = &mut next.sat[branch.slot];
            let keep: Vec<usize> = s
                .ones()
                .filter(|&f| branch.request.admits(m.client_facility_dist(branch.request.point, f), self.eta))
                .collect();
            s.clear();
            for f in keep {
                s.insert(f);
            }
        }
        next.depth += 1;
        next.history.push(Modification {
            slot: branch.slot,
            center: centers[branch.slot].clone(),
            request: branch.request,
        });
        next
    }
}

/// Index tuples over per-slot option lists in ascending order of the summed
/// key, ties broken lexicographically. With `symmetric` only non-decreasing
/// tuples over the first list are produced.
pub struct AscendingTuples {
    keys: Vec<Vec<f64>>,
    symmetric: bool,
    heap: BinaryHeap<Reverse<(OrderedFloat<f64>, Vec<usize>)>>,
    seen: HashSet<Vec<usize>>,
}

impl AscendingTuples {
    pub fn new(keys: Vec<Vec<f64>>, symmetric: bool) -> Self {
        let mut heap = BinaryHeap::new();
        let mut seen = HashSet::new();
        if keys.iter().all(|k| !k.is_empty()) && !keys.is_empty() {
            let start = vec![0; keys.len()];
            let sum = Self::sum(&keys, &start);
            seen.insert(start.clone());
            heap.push(Reverse((OrderedFloat(sum), start)));
        }
        AscendingTuples { keys, symmetric, heap, seen }
    }

    fn sum(keys: &[Vec<f64>], idx: &[usize]) -> f64 {
        idx.iter().enumerate().map(|(i, &j)| keys[i][j]).sum()
    }
}

impl Iterator for AscendingTuples {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let Reverse((_, idx)) = self.heap.pop()?;
        for i in 0..idx.len() {
            let mut n = idx.clone();
            n[i] += 1;
            if n[i] >= self.keys[i].len() {
                continue;
            }
            if self.symmetric && i + 1 < n.len() && n[i] > n[i + 1] {
                continue;
            }
            if self.seen.insert(n.clone()) {
                let s = Self::sum(&self.keys, &n);
                self.heap.push(Reverse((OrderedFloat(s), n)));
            }
        }
        Some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascending_tuples_cover_everything_in_order() {
        let keys = vec![vec![1.0, 2.0, 5.0], vec![0.0, 3.0]];
        let all: Vec<Vec<usize>> = AscendingTuples::new(keys.clone(), false).collect();
        assert_eq!(all.len(), 6);
        let sums: Vec<f64> = all.iter().map(|t| AscendingTuples::sum(&keys, t)).collect();
        assert!(sums.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn symmetric_tuples_are_multisets() {
        let list = vec![1.0, 2.0, 3.0, 4.0];
        let all: Vec<Vec<usize>> = AscendingTuples::new(vec![list.clone(); 3], true).collect();
        // C(4 + 3 - 1, 3) multisets.
        assert_eq!(all.len(), 20);
        assert!(all.iter().all(|t| t.windows(2).all(|w| w[0] <= w[1])));
        let sums: Vec<f64> = all.iter().map(|t| t.iter().map(|&j| list[j]).sum()).collect();
        assert!(sums.windows(2).all(|w| w[0] <= w[1]));
    }
}
