use num_rational::Ratio;

use super::flow::{min_cost_flow, FlowNetwork};
use super::AssignProblem;
use crate::error::{EpasError, Result};
use crate::model::{Assignment, AssignmentEntry, FairSpec};

/// Bounds of the exhaustive fair engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FairLimits {
    /// Upper bound on `k` times the number of groups.
    pub max_slot_groups: usize,
    /// Upper bound on the total integral weight.
    pub max_units: u64,
    /// Upper bound on the number of per-class slot splits enumerated.
    pub max_combinations: u64,
}

impl Default for FairLimits {
    fn default() -> Self {
        FairLimits { max_slot_groups: 12, max_units: 60, max_combinations: 5_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairAssignment {
    pub assignment: Assignment,
    pub cost: f64,
    /// Per-slot, per-group integral weight of the returned assignment.
    pub group_counts: Vec<Vec<u64>>,
}

pub(crate) fn integral_units(weights: &[f64]) -> Result<Vec<u64>> {
    weights
        .iter()
        .enumerate()
        .map(|(r, &w)| {
            let u = w.round();
            if (w - u).abs() > 1e-9 * w.max(1.0) || u < 0.0 {
                Err(EpasError::Contract(format!("weight {w} of row {r} is not integral")))
            } else {
                Ok(u as u64)
            }
        })
        .collect()
}

/// All ways to split `total` units over `k` slots, in lexicographic order.
pub(crate) fn compositions(total: u64, k: usize) -> Vec<Vec<u64>> {
    fn rec(left: u64, slot: usize, k: usize, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if slot + 1 == k {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for take in 0..=left {
            cur.push(take);
            rec(left - take, slot + 1, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(total, 0, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn binomial(n: u64, r: u64) -> u64 {
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Min-cost transport of the given rows onto slot demands `split`.
fn transport(p: &AssignProblem, rows: &[usize], units: &[u64], split: &[u64], want_flows: bool) -> (f64, Vec<(usize, usize, u64)>) {
    let n = rows.len();
    let source = n + p.k;
    let sink = source + 1;
    let mut net = FlowNetwork::new(n + p.k + 2);
    let mut pairs = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        net.add_arc(source, i, units[r] as i64, 0.0);
        for j in 0..p.k {
            if split[j] > 0 {
                pairs.push((r, j, net.add_arc(i, n + j, units[r] as i64, p.unit_cost(r, j))));
            }
        }
    }
    for (j, &s) in split.iter().enumerate() {
        if s > 0 {
            net.add_arc(n + j, sink, s as i64, 0.0);
        }
    }
    let res = min_cost_flow(&net, source, sink, None);
    let flows = if want_flows {
        pairs
            .iter()
            .filter(|&&(_, _, a)| res.arc_flows[a] > 0)
            .map(|&(r, j, a)| (r, j, res.arc_flows[a] as u64))
            .collect()
    } else {
        Vec::new()
    };
    (res.cost, flows)
}

struct ClassTable {
    rows: Vec<usize>,
    groups: Vec<usize>,
    splits: Vec<Vec<u64>>,
    costs: Vec<f64>,
}

struct Search<'a> {
    classes: &'a [ClassTable],
    suffix_min: Vec<f64>,
    alpha: Vec<Ratio<i64>>,
    beta: Vec<Ratio<i64>>,
    k: usize,
    n_groups: usize,
    choice: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn fair(&self, counts: &[i64], loads: &[i64]) -> bool {
        for j in 0..self.k {
            let load = loads[j];
            if load == 0 {
                continue;
            }
            let load_r = Ratio::from_integer(load);
            for g in 0..self.n_groups {
                let c = Ratio::from_integer(counts[j * self.n_groups + g]);
                if c < self.alpha[g] * load_r || c > self.beta[g] * load_r {
                    return false;
                }
            }
        }
        true
    }

    fn run(&mut self, c: usize, partial: f64, counts: &mut Vec<i64>, loads: &mut Vec<i64>) {
        if let Some((best, _)) = &self.best {
            if partial + self.suffix_min[c] >= *best {
                return;
            }
        }
        if c == self.classes.len() {
            if self.fair(counts, loads) {
                self.best = Some((partial, self.choice.clone()));
            }
            return;
        }
        let class = &self.classes[c];
        for (s, split) in class.splits.iter().enumerate() {
            for j in 0..self.k {
                let v = split[j] as i64;
                loads[j] += v;
                for &g in &class.groups {
                    counts[j * self.n_groups + g] += v;
                }
            }
            self.choice.push(s);
            self.run(c + 1, partial + class.costs[s], counts, loads);
            self.choice.pop();
            for j in 0..self.k {
                let v = split[j] as i64;
                loads[j] -= v;
                for &g in &class.groups {
                    counts[j * self.n_groups + g] -= v;
                }
            }
        }
    }
}

/// Minimum-cost integral assignment whose every nonempty cluster keeps each
/// group's share within `[alpha, beta]`. Enumerates how each membership
/// class splits over the slots; each split is priced by min-cost transport.
/// Returns `Ok(None)` when no fair assignment exists.
pub fn fair_assign(p: &AssignProblem, fair: &FairSpec, limits: &FairLimits) -> Result<Option<FairAssignment>> {
    let units = integral_units(p.weights)?;
    let k = p.k;
    let n_groups = fair.n_groups();
    if k * n_groups > limits.max_slot_groups {
        return Err(EpasError::ResourceLimit(format!(
            "k * groups = {} exceeds {}",
            k * n_groups,
            limits.max_slot_groups
        )));
    }
    let total: u64 = units.iter().sum();
    if total > limits.max_units {
        return Err(EpasError::ResourceLimit(format!(
            "total weight {total} exceeds {}",
            limits.max_units
        )));
    }
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (r, &pt) in p.points.iter().enumerate() {
        if units[r] == 0 {
            continue;
        }
        let c = fair.class_of(pt);
        match by_class.iter_mut().find(|(cc, _)| *cc == c) {
            Some((_, rows)) => rows.push(r),
            None => by_class.push((c, vec![r])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let mut combos: u64 = 1;
    for (_, rows) in &by_class {
        let w: u64 = rows.iter().map(|&r| units[r]).sum();
        combos = combos.saturating_mul(binomial(w + k as u64 - 1, k as u64 - 1));
    }
    if combos > limits.max_combinations {
        return Err(EpasError::ResourceLimit(format!(
            "{combos} class splits exceed {}",
            limits.max_combinations
        )));
    }
    let classes: Vec<ClassTable> = by_class
        .into_iter()
        .map(|(c, rows)| {
            let w: u64 = rows.iter().map(|&r| units[r]).sum();
            let splits = compositions(w, k);
            let costs = splits.iter().map(|s| transport(p, &rows, &units, s, false).0).collect();
            ClassTable { rows, groups: fair.class_groups(c).to_vec(), splits, costs }
        })
        .collect();
    let mut suffix_min = vec![0.0; classes.len() + 1];
    for c in (0..classes.len()).rev() {
        let m = classes[c].costs.iter().cloned().fold(f64::INFINITY, f64::min);
        suffix_min[c] = suffix_min[c + 1] + m;
    }
    let to_ratio = |x: f64| Ratio::<i64>::approximate_float(x).unwrap_or_else(|| Ratio::from_integer(0));
    let mut search = Search {
        classes: &classes,
        suffix_min,
        alpha: fair.alpha.iter().map(|&a| to_ratio(a)).collect(),
        beta: fair.beta.iter().map(|&b| to_ratio(b)).collect(),
        k,
        n_groups,
        choice: Vec::new(),
        best: None,
    };
    search.run(0, 0.0, &mut vec![0; k * n_groups], &mut vec![0; k]);
    let Some((_, choice)) = search.best else {
        return Ok(None);
    };
    let mut entries = Vec::new();
    let mut group_counts = vec![vec![0u64; n_groups]; k];
    for (class, &s) in classes.iter().zip(&choice) {
        let split = &class.splits[s];
        for j in 0..k {
            for &g in &class.groups {
                group_counts[j][g] += split[j];
            }
        }
        for (r, j, u) in transport(p, &class.rows, &units, split, true).1 {
            entries.push(AssignmentEntry { point: p.points[r], slot: j, weight: u as f64 });
        }
    }
    let assignment = Assignment::from_entries(entries);
    let cost = p.cost_of(&assignment);
    Ok(Some(FairAssignment { assignment, cost, group_counts }))
}

/// Split of one membership class over the slots.
pub type ClassSplit = (usize, Vec<u64>);

/// Transport cost of every coloring constraint: one split per membership
/// class, keyed by the list of (class, split) pairs in class order.
pub fn constrained_costs(p: &AssignProblem, fair: &FairSpec) -> Result<Vec<(Vec<ClassSplit>, f64)>> {
    let units = integral_units(p.weights)?;
    let k = p.k;
    let limits = FairLimits::default();
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (r, &pt) in p.points.iter().enumerate() {
        if units[r] > 0 {
            by_class.entry(fair.class_of(pt)).or_default().push(r);
        }
    }
    let mut combos: u64 = 1;
    let mut tables = Vec::new();
    for (&c, rows) in &by_class {
        let w: u64 = rows.iter().map(|&r| units[r]).sum();
        combos = combos.saturating_mul(binomial(w + k as u64 - 1, k as u64 - 1));
        if combos > limits.max_combinations {
            return Err(EpasError::ResourceLimit(format!(
                "coloring constraints exceed {}",
                limits.max_combinations
            )));
        }
        let splits = compositions(w, k);
        let costs: Vec<f64> = splits.iter().map(|s| transport(p, rows, &units, s, false).0).collect();
        tables.push((c, splits, costs));
    }
    let mut out = Vec::with_capacity(combos as usize);
    let mut idx = vec![0usize; tables.len()];
    loop {
        let key = tables
            .iter()
            .zip(&idx)
            .map(|((c, splits, _), &i)| (*c, splits[i].clone()))
            .collect();
        let cost = tables.iter().zip(&idx).map(|((_, _, costs), &i)| costs[i]).sum();
        out.push((key, cost));
        let mut t = 0;
        loop {
            if t == tables.len() {
                return Ok(out);
            }
            idx[t] += 1;
            if idx[t] < tables[t].1.len() {
                break;
            }
            idx[t] = 0;
            t += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::voronoi_assign;

    #[test]
    fn compositions_enumerate_all() {
        assert_eq!(compositions(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(compositions(3, 3).len(), 10);
        assert_eq!(binomial(5, 2), 10);
    }

    #[test]
    fn unconstrained_group_matches_voronoi() {
        let pts = [0usize, 1, 2];
        let w = [1.0, 2.0, 1.0];
        let p = AssignProblem::from_table(&pts, &w, vec![1.0, 4.0, 3.0, 2.0, 5.0, 0.5], 2, 1.0);
        let fair = FairSpec::new(vec![vec![0, 1, 2]], vec![0.0], vec![1.0], 3).unwrap();
        let r = fair_assign(&p, &fair, &FairLimits::default()).unwrap().unwrap();
        let v = voronoi_assign(&p);
        assert_eq!(r.cost, p.cost_of(&v));
    }

    #[test]
    fn single_cluster_balance_forced() {
        let fair = FairSpec::new(vec![vec![0], vec![1]], vec![0.5, 0.5], vec![0.5, 0.5], 2).unwrap();
        let pts = [0usize, 1];
        let equal = [1.0, 1.0];
        let p = AssignProblem::from_table(&pts, &equal, vec![1.0, 1.0], 1, 1.0);
        assert!(fair_assign(&p, &fair, &FairLimits::default()).unwrap().is_some());
        let unequal = [1.0, 2.0];
        let p = AssignProblem::from_table(&pts, &unequal, vec![1.0, 1.0], 1, 1.0);
        assert!(fair_assign(&p, &fair, &FairLimits::default()).unwrap().is_none());
    }

    #[test]
    fn two_red_two_blue() {
        // Reds 0,1 and blues 2,3 on a line at 0, 10, 1, 11; slots at 0 and 10.
        let fair = FairSpec::new(vec![vec![0, 1], vec![2, 3]], vec![0.5, 0.5], vec![0.5, 0.5], 4).unwrap();
        let pts = [0usize, 1, 2, 3];
        let w = [1.0; 4];
        let dist = vec![0.0, 10.0, 10.0, 0.0, 1.0, 9.0, 11.0, 1.0];
        let p = AssignProblem::from_table(&pts, &w, dist, 2, 1.0);
        let r = fair_assign(&p, &fair, &FairLimits::default()).unwrap().unwrap();
        // Pairings: {0,2}|{1,3} costs 0+1+0+1 = 2; {0,3}|{1,2} costs 0+11+0+9 = 20.
        assert_eq!(r.cost, 2.0);
        assert_eq!(r.group_counts, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn limits_enforced() {
        let fair = FairSpec::new(vec![vec![0]], vec![0.0], vec![1.0], 1).unwrap();
        let pts = [0usize];
        let heavy = [61.0];
        let p = AssignProblem::from_table(&pts, &heavy, vec![1.0], 1, 1.0);
        assert!(matches!(fair_assign(&p, &fair, &FairLimits::default()), Err(EpasError::ResourceLimit(_))));
        let frac = [0.5];
        let p = AssignProblem::from_table(&pts, &frac, vec![1.0], 1, 1.0);
        assert!(matches!(fair_assign(&p, &fair, &FairLimits::default()), Err(EpasError::Contract(_))));
    }
}
