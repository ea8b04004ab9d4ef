//! Exhaustive ground-truth solvers for desk-scale instances.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{exact_assign, AssignProblem};
use crate::coreset::{choose, identity_coreset, k_subsets, WeightedPointSet};
use crate::error::{EpasError, Result};
use crate::matroid::IndependenceOracle;
use crate::model::{Assignment, AssignmentEntry, Center, Instance, Solution, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_center_sets: u64,
    pub max_total_units: u64,
    pub max_k: usize,
    pub max_assignments: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_center_sets: 100_000, max_total_units: 10, max_k: 4, max_assignments: 20_000_000 }
    }
}

fn better(a: &Solution, b: &Solution) -> bool {
    let key = |s: &Solution| s.centers.iter().map(|c| c.facility().unwrap_or(usize::MAX)).collect::<Vec<_>>();
    a.cost < b.cost || (a.cost == b.cost && key(a) < key(b))
}

/// Global optimum over every k-subset of facilities (independent ones for
/// matroid instances), each priced by the exact assignment engine.
/// `Ok(None)` means no candidate admits a feasible assignment.
pub fn brute_force_opt(instance: &Instance, limits: &OracleLimits) -> Result<Option<Solution>> {
    let m = &instance.metric;
    if m.is_continuous() {
        return Err(EpasError::Unsupported("the exhaustive oracle needs a finite facility set".into()));
    }
    let nf = m.n_facilities();
    let sets = choose(nf as u64, instance.k as u64);
    if sets > limits.max_center_sets {
        return Err(EpasError::ResourceLimit(format!(
            "C({nf}, {}) = {sets} center sets exceed the limit {}",
            instance.k, limits.max_center_sets
        )));
    }
    let mut candidates = k_subsets(nf, instance.k);
    if let Variant::Matroid { matroid } = &instance.variant {
        candidates.retain(|c| matroid.independent(c));
    }
    let y = identity_coreset(instance);
    let results: Vec<Result<Option<Solution>>> = candidates
        .par_iter()
        .map(|set| {
            let centers: Vec<Center> = set.iter().map(|&f| Center::Facility(f)).collect();
            let outcome = exact_assign(instance, &y, &centers)?;
            Ok(outcome.assignment().cloned().zip(outcome.cost()).map(|(assignment, cost)| Solution {
                centers,
                assignment,
                cost,
            }))
        })
        .collect();
    let mut best: Option<Solution> = None;
    for r in results {
        if let Some(s) = r? {
            if best.as_ref().is_none_or(|b| better(&s, b)) {
                best = Some(s);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteAssignment {
    pub assignment: Assignment,
    /// On the instance objective scale.
    pub cost: f64,
}

fn units_of(weights: &[f64]) -> Result<Vec<u64>> {
    weights
        .iter()
        .map(|&w| {
            if w >= 0.0 && w.fract() == 0.0 {
                Ok(w as u64)
            } else {
                Err(EpasError::Contract(format!("brute-force assignment needs integral weights, got {w}")))
            }
        })
        .collect()
}

/// Every way to write `total` as an ordered sum of `k` nonnegative parts.
fn splits(total: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in splits(total - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn fair_ok(instance: &Instance, points: &[usize], choice: &[&Vec<u64>], k: usize) -> bool {
    let Variant::Fair(fair) = &instance.variant else { return true };
    let to_ratio = |x: f64| Ratio::<i64>::approximate_float(x).unwrap_or_else(|| Ratio::from_integer(0));
    for j in 0..k {
        let load: u64 = choice.iter().map(|s| s[j]).sum();
        if load == 0 {
            continue;
        }
        for g in 0..fair.n_groups() {
            let c: u64 = points
                .iter()
                .zip(choice)
                .filter(|(&p, _)| fair.groups_of(p).contains(&g))
                .map(|(_, s)| s[j])
                .sum();
            let share = Ratio::new(c as i64, load as i64);
            if share < to_ratio(fair.alpha[g]) || share > to_ratio(fair.beta[g]) {
                return false;
            }
        }
    }
    true
}

/// Minimum-cost integral assignment of `y` to `centers` found by trying
/// every split of every point's integer weight over the slots (for
/// fault-tolerant instances, every ℓ-subset of slots per point).
/// `Ok(None)` means infeasible.
pub fn brute_force_assignment(
    instance: &Instance,
    y: &WeightedPointSet,
    centers: &[Center],
    limits: &OracleLimits,
) -> Result<Option<BruteAssignment>> {
    let k = centers.len();
    if k > limits.max_k {
        return Err(EpasError::ResourceLimit(format!("k = {k} exceeds {}", limits.max_k)));
    }
    let units = units_of(&y.weights)?;
    let total: u64 = units.iter().sum();
    if total > limits.max_total_units {
        return Err(EpasError::ResourceLimit(format!(
            "total weight {total} exceeds {}",
            limits.max_total_units
        )));
    }
    let p = AssignProblem::new(instance, y, centers);
    let options: Vec<Vec<Vec<u64>>> = match &instance.variant {
        Variant::FaultTolerant { ell } => {
            let subsets = k_subsets(k, *ell);
            units
                .iter()
                .map(|_| {
                    subsets
                        .iter()
                        .map(|s| (0..k).map(|j| s.contains(&j) as u64).collect())
                        .collect()
                })
                .collect()
        }
        _ => units.iter().map(|&u| splits(u, k)).collect(),
    };
    let combos = options.iter().try_fold(1u64, |acc, o| acc.checked_mul(o.len() as u64));
    if combos.is_none_or(|c| c > limits.max_assignments) {
        return Err(EpasError::ResourceLimit("too many integral assignments to enumerate".into()));
    }
    let caps: Option<Vec<u64>> = match &instance.variant {
        Variant::Capacitated { .. } => Some(centers.iter().map(|c| instance.capacity_of(c).unwrap_or(0)).collect()),
        _ => None,
    };
    let ell = match instance.variant {
        Variant::FaultTolerant { ell } => Some(ell),
        _ => None,
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; options.len()];
    loop {
        let choice: Vec<&Vec<u64>> = idx.iter().zip(&options).map(|(&i, o)| &o[i]).collect();
        let feasible = match &caps {
            Some(caps) => (0..k).all(|j| choice.iter().map(|s| s[j]).sum::<u64>() <= caps[j]),
            None => fair_ok(instance, &y.points, &choice, k),
        };
        if feasible {
            let mut cost = 0.0;
            for (r, s) in choice.iter().enumerate() {
                for (j, &u) in s.iter().enumerate() {
                    if u > 0 {
                        let share = match ell {
                            Some(_) => y.weights[r],
                            None => u as f64,
                        };
                        cost += share * p.unit_cost(r, j);
                    }
                }
            }
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, idx.clone()));
            }
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return Ok(best.map(|(cost, idx)| {
                    let mut entries = Vec::new();
                    for (r, (&i, o)) in idx.iter().zip(&options).enumerate() {
                        for (slot, &u) in o[i].iter().enumerate() {
                            if u > 0 {
                                let weight = match ell {
                                    Some(ell) => y.weights[r] / ell as f64,
                                    None => u as f64,
                                };
                                entries.push(AssignmentEntry { point: y.points[r], slot, weight });
                            }
                        }
                    }
                    BruteAssignment { assignment: Assignment::from_entries(entries), cost }
                }));
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricSpace;
    use crate::model::{validate_assignment, FairSpec};
    use std::sync::Arc;

    fn line(xs: &[f64], fs: &[f64], weights: Option<Vec<f64>>, k: usize, variant: Variant) -> Instance {
        let m = MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            false,
        )
        .unwrap();
        Instance::new(Arc::new(m), weights, k, 1.0, 0.5, variant).unwrap()
    }

    #[test]
    fn one_median_on_a_line() {
        let inst = line(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], None, 1, Variant::Vanilla);
        let s = brute_force_opt(&inst, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(s.centers, vec![Center::Facility(1)]);
        assert_eq!(s.cost, 2.0);
    }

    #[test]
    fn all_facilities_is_the_only_candidate() {
        let inst = line(&[0.0, 5.0], &[1.0, 4.0], None, 2, Variant::Vanilla);
        let s = brute_force_opt(&inst, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(s.centers, vec![Center::Facility(0), Center::Facility(1)]);
        assert_eq!(s.cost, 2.0);
    }

    #[test]
    fn over_capacity_is_infeasible() {
        let inst = line(&[0.0, 1.0, 2.0], &[0.0, 2.0], None, 2, Variant::Capacitated { caps: vec![1, 1] });
        assert_eq!(brute_force_opt(&inst, &OracleLimits::default()).unwrap(), None);
    }

    #[test]
    fn limits_are_errors() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let inst = line(&xs, &xs, None, 8, Variant::Vanilla);
        assert!(matches!(brute_force_opt(&inst, &OracleLimits::default()), Err(EpasError::ResourceLimit(_))));
        let heavy = line(&[0.0], &[0.0], Some(vec![11.0]), 1, Variant::Vanilla);
        let y = identity_coreset(&heavy);
        assert!(matches!(
            brute_force_assignment(&heavy, &y, &[Center::Facility(0)], &OracleLimits::default()),
            Err(EpasError::ResourceLimit(_))
        ));
    }

    #[test]
    fn single_point_single_slot() {
        let inst = line(&[0.0], &[3.0], Some(vec![2.0]), 1, Variant::Vanilla);
        let y = identity_coreset(&inst);
        let b = brute_force_assignment(&inst, &y, &[Center::Facility(0)], &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(b.cost, 6.0);
        assert_eq!(b.assignment.get(0, 0), 2.0);
    }

    #[test]
    fn capacity_forces_split() {
        let inst = line(&[0.0], &[0.0, 4.0], Some(vec![3.0]), 2, Variant::Capacitated { caps: vec![2, 2] });
        let y = identity_coreset(&inst);
        let x = [Center::Facility(0), Center::Facility(1)];
        let b = brute_force_assignment(&inst, &y, &x, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(b.cost, 4.0);
        assert_eq!(validate_assignment(&inst, &y, &x, &b.assignment), Ok(()));
    }

    #[test]
    fn fault_tolerant_uses_ell_nearest() {
        let inst = line(&[0.0], &[1.0, 2.0, 7.0], Some(vec![2.0]), 3, Variant::FaultTolerant { ell: 2 });
        let y = identity_coreset(&inst);
        let x = [Center::Facility(0), Center::Facility(1), Center::Facility(2)];
        let b = brute_force_assignment(&inst, &y, &x, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(b.cost, 6.0);
        assert_eq!(validate_assignment(&inst, &y, &x, &b.assignment), Ok(()));
    }

    #[test]
    fn fairness_is_enforced() {
        // Two red points at 0, two blue at 10; each cluster must be half red.
        let fair = FairSpec::new(vec![vec![0, 1], vec![2, 3]], vec![0.5, 0.5], vec![0.5, 0.5], 4).unwrap();
        let m = MetricSpace::euclidean(
            vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]],
            vec![vec![0.0], vec![10.0]],
            true,
        )
        .unwrap();
        let inst = Instance::new(Arc::new(m), None, 2, 1.0, 0.5, Variant::Fair(fair)).unwrap();
        let y = identity_coreset(&inst);
        let x = [Center::Facility(0), Center::Facility(1)];
        let b = brute_force_assignment(&inst, &y, &x, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(b.cost, 20.0);
        assert_eq!(validate_assignment(&inst, &y, &x, &b.assignment), Ok(()));
    }
}
