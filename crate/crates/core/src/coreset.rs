use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{exact_assign, fair, AssignProblem};
use crate::error::{EpasError, Result};
use crate::matroid::IndependenceOracle;
use crate::model::{power_distance, Center, Instance, Variant};

/// Weighted subset of the clients, sorted by point index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointSet {
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightedPointSet {
    /// Sorts by point and merges repeated points.
    pub fn new(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut v: Vec<(usize, f64)> = pairs.into_iter().filter(|(_, w)| *w > 0.0).collect();
        v.sort_by_key(|(p, _)| *p);
        let mut points = Vec::with_capacity(v.len());
        let mut weights: Vec<f64> = Vec::with_capacity(v.len());
        for (p, w) in v {
            if points.last() == Some(&p) {
                *weights.last_mut().unwrap() += w;
            } else {
                points.push(p);
                weights.push(w);
            }
        }
        WeightedPointSet { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: usize) -> bool {
        self.points.binary_search(&p).is_ok()
    }

    pub fn weight_of(&self, p: usize) -> f64 {
        self.points.binary_search(&p).map_or(0.0, |i| self.weights[i])
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The clients with their own weights. Zero-weight clients are dropped.
pub fn identity_coreset(instance: &Instance) -> WeightedPointSet {
    WeightedPointSet::new(instance.weights.iter().copied().enumerate())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSamplingConfig {
    /// Sample-size multiplier.
    pub a: f64,
}

impl Default for RingSamplingConfig {
    fn default() -> Self {
        RingSamplingConfig { a: 4.0 }
    }
}

pub fn ring_sampling_coreset(instance: &Instance, epsilon: f64, seed: u64) -> Result<WeightedPointSet> {
    ring_sampling_coreset_with(instance, epsilon, seed, RingSamplingConfig::default())
}

fn signature(instance: &Instance, p: usize) -> usize {
    match &instance.variant {
        Variant::Fair(f) => f.class_of(p),
        _ => 0,
    }
}

/// Co-located clients with the same group signature, merged onto the
/// lowest index.
fn merge_colocated(instance: &Instance, base: &WeightedPointSet) -> WeightedPointSet {
    let m = &instance.metric;
    let mut reps: Vec<(usize, f64)> = Vec::new();
    for (&p, &w) in base.points.iter().zip(&base.weights) {
        let sig = signature(instance, p);
        match reps
            .iter_mut()
            .find(|(q, _)| m.client_dist(*q, p) == 0.0 && signature(instance, *q) == sig)
        {
            Some((_, acc)) => *acc += w,
            None => reps.push((p, w)),
        }
    }
    WeightedPointSet::new(reps)
}

/// Sampling coreset over distance rings around D^z-seeded centers. Each
/// (seed, ring, signature) group with more points than the per-ring budget
/// is replaced by a weight-proportional sample carrying the group's weight.
pub fn ring_sampling_coreset_with(
    instance: &Instance,
    epsilon: f64,
    seed: u64,
    cfg: RingSamplingConfig,
) -> Result<WeightedPointSet> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(EpasError::Contract(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    let merged = merge_colocated(instance, &identity_coreset(instance));
    let n = merged.len();
    if n == 0 {
        return Ok(merged);
    }
    let ln_n = (instance.n().max(2) as f64).ln();
    let budget = (cfg.a * instance.k as f64 * ln_n / (epsilon * epsilon)).ceil() as usize;
    if n <= budget {
        return Ok(merged);
    }
    let m = &instance.metric;
    let z = instance.z;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_seeds = (instance.k as f64 * ln_n).ceil() as usize + instance.k;
    let first = WeightedIndex::new(&merged.weights).map_err(|e| EpasError::DegenerateSampling(e.to_string()))?;
    let mut seeds = vec![merged.points[first.sample(&mut rng)]];
    let mut nearest: Vec<f64> = merged.points.iter().map(|&p| m.client_dist(p, seeds[0])).collect();
    while seeds.len() < n_seeds {
        let mass: Vec<f64> = merged
            .weights
            .iter()
            .zip(&nearest)
            .map(|(w, d)| w * power_distance(*d, z))
            .collect();
        let Ok(dist) = WeightedIndex::new(&mass) else { break };
        let s = merged.points[dist.sample(&mut rng)];
        seeds.push(s);
        for (i, &p) in merged.points.iter().enumerate() {
            nearest[i] = nearest[i].min(m.client_dist(p, s));
        }
    }

    let unit = m.distance_range().map_or(1.0, |(lo, _)| lo);
    let mut groups: std::collections::BTreeMap<(usize, i64, usize), Vec<usize>> = Default::default();
    for (i, &p) in merged.points.iter().enumerate() {
        let (s, d) = seeds
            .iter()
            .enumerate()
            .map(|(s, &q)| (s, m.client_dist(p, q)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("at least one seed");
        let ring = if d <= unit { 0 } else { (d / unit).log2().ceil() as i64 };
        groups.entry((s, ring, signature(instance, p))).or_default().push(i);
    }

    let mut out: Vec<(usize, f64)> = Vec::new();
    for members in groups.values() {
        if members.len() <= budget {
            out.extend(members.iter().map(|&i| (merged.points[i], merged.weights[i])));
            continue;
        }
        let ws: Vec<f64> = members.iter().map(|&i| merged.weights[i]).collect();
        let population: f64 = ws.iter().sum();
        let pick = WeightedIndex::new(&ws).map_err(|e| EpasError::DegenerateSampling(e.to_string()))?;
        let share = population / budget as f64;
        for _ in 0..budget {
            out.push((merged.points[members[pick.sample(&mut rng)]], share));
        }
    }
    Ok(WeightedPointSet::new(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub max_error: f64,
    pub candidates: usize,
    pub exhaustive: bool,
    /// Candidates feasible on exactly one side; each counts as error 1.
    pub one_sided_infeasible: usize,
    pub worst: Option<Vec<usize>>,
}

/// Exhaustive audits run when the number of center sets is at most this.
pub const AUDIT_EXHAUSTIVE_LIMIT: u64 = 100_000;
const AUDIT_SAMPLES: usize = 2_000;

pub(crate) fn k_subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for f in start..=(m - (k - cur.len())) {
            cur.push(f);
            rec(f + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= m {
        rec(0, m, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

pub(crate) fn choose(m: u64, k: u64) -> u64 {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn relative_error(full: Option<f64>, core: Option<f64>) -> (f64, bool) {
    match (full, core) {
        (None, None) => (0.0, false),
        (Some(_), None) | (None, Some(_)) => (1.0, true),
        (Some(a), Some(b)) => {
            if a == 0.0 {
                (if b == 0.0 { 0.0 } else { f64::INFINITY }, false)
            } else {
                ((b - a).abs() / a, false)
            }
        }
    }
}

/// Largest relative cost error of `coreset` over candidate center sets. Fair
/// instances are audited over every (center set, class split) pair.
pub fn audit_coreset(instance: &Instance, coreset: &WeightedPointSet, epsilon: f64, seed: u64) -> Result<AuditReport> {
    let _ = epsilon;
    if instance.metric.is_continuous() {
        return Err(EpasError::Unsupported("coreset audits need a finite facility set".into()));
    }
    let f = instance.metric.n_facilities();
    let k = instance.k;
    let exhaustive = choose(f as u64, k as u64) <= AUDIT_EXHAUSTIVE_LIMIT;
    let mut candidates = if exhaustive {
        k_subsets(f, k)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..AUDIT_SAMPLES)
            .map(|_| {
                let mut s = rand::seq::index::sample(&mut rng, f, k).into_vec();
                s.sort_unstable();
                s
            })
            .collect()
    };
    if let Variant::Matroid { matroid } = &instance.variant {
        candidates.retain(|c| matroid.independent(c));
    }
    let full = identity_coreset(instance);
    let results: Vec<Result<(f64, bool)>> = candidates
        .par_iter()
        .map(|c| {
            let centers: Vec<Center> = c.iter().map(|&x| Center::Facility(x)).collect();
            match &instance.variant {
                Variant::Fair(fs) => {
                    let pf = AssignProblem::new(instance, &full, &centers);
                    let py = AssignProblem::new(instance, coreset, &centers);
                    let a = fair::constrained_costs(&pf, fs)?;
                    let b = fair::constrained_costs(&py, fs)?;
                    let mut worst = (0.0f64, false);
                    for (split, ca) in &a {
                        let cb = b.iter().find(|(s, _)| s == split).map(|(_, v)| *v);
                        let e = relative_error(Some(*ca), cb);
                        if e.0 > worst.0 || e.1 {
                            worst = (worst.0.max(e.0), worst.1 || e.1);
                        }
                    }
                    for (split, _) in &b {
                        if !a.iter().any(|(s, _)| s == split) {
                            worst = (worst.0.max(1.0), true);
                        }
                    }
                    Ok(worst)
                }
                _ => {
                    let a = exact_assign(instance, &full, &centers)?.cost();
                    let b = exact_assign(instance, coreset, &centers)?.cost();
                    Ok(relative_error(a, b))
                }
            }
        })
        .collect();
    let mut report = AuditReport {
        max_error: 0.0,
        candidates: candidates.len(),
        exhaustive,
        one_sided_infeasible: 0,
        worst: None,
    };
    for (c, r) in candidates.iter().zip(results) {
        let (e, one_sided) = r?;
        if one_sided {
            report.one_sided_infeasible += 1;
        }
        if e > report.max_error || report.worst.is_none() {
            report.max_error = report.max_error.max(e);
            report.worst = Some(c.clone());
        }
    }
    Ok(report)
}

/// A random draw of `k` distinct facilities, for callers outside audits.
pub fn random_center_set<R: Rng>(rng: &mut R, facilities: usize, k: usize) -> Vec<usize> {
    let mut s = rand::seq::index::sample(rng, facilities, k).into_vec();
    s.sort_unstable();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricSpace;
    use crate::model::FairSpec;
    use std::sync::Arc;

    fn line_instance(xs: &[f64], fs: &[f64], k: usize, variant: Variant) -> Instance {
        let m = MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            true,
        )
        .unwrap();
        Instance::new(Arc::new(m), None, k, 1.0, 0.5, variant).unwrap()
    }

    #[test]
    fn identity_examples() {
        let inst = line_instance(&[0.0, 1.0, 2.0], &[0.0, 2.0], 1, Variant::Vanilla);
        let y = identity_coreset(&inst);
        assert_eq!(y.points, vec![0, 1, 2]);
        assert_eq!(y.weights, vec![1.0; 3]);
        let weighted = Instance::new(inst.metric.clone(), Some(vec![2.0, 0.5, 3.0]), 1, 1.0, 0.5, Variant::Vanilla).unwrap();
        assert_eq!(identity_coreset(&weighted).weights, vec![2.0, 0.5, 3.0]);
        let empty = Instance::new(
            Arc::new(MetricSpace::euclidean(vec![], vec![vec![0.0]], false).unwrap()),
            None,
            1,
            1.0,
            0.5,
            Variant::Vanilla,
        )
        .unwrap();
        assert!(identity_coreset(&empty).is_empty());
    }

    #[test]
    fn ring_sampling_small_is_identity() {
        let inst = line_instance(&[0.0, 1.0, 2.0, 7.0], &[0.0, 7.0], 2, Variant::Vanilla);
        let y = ring_sampling_coreset(&inst, 0.5, 3).unwrap();
        assert_eq!(y, identity_coreset(&inst));
    }

    #[test]
    fn ring_sampling_colocated_collapse() {
        let inst = line_instance(&[3.0; 6], &[0.0], 1, Variant::Vanilla);
        let y = ring_sampling_coreset(&inst, 0.5, 1).unwrap();
        assert_eq!(y.points, vec![0]);
        assert_eq!(y.weights, vec![6.0]);
    }

    #[test]
    fn ring_sampling_reproducible_and_weight_preserving() {
        let xs: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 + (i as f64) * 0.001).collect();
        let inst = line_instance(&xs, &[0.0, 50.0, 100.0], 1, Variant::Vanilla);
        let cfg = RingSamplingConfig { a: 0.05 };
        let a = ring_sampling_coreset_with(&inst, 0.9, 11, cfg).unwrap();
        let b = ring_sampling_coreset_with(&inst, 0.9, 11, cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() < 300);
        assert!((a.total_weight() - 300.0).abs() <= 1e-6 * 300.0);
        assert!(a.weights.iter().all(|&w| w > 0.0));
        assert!(ring_sampling_coreset(&inst, 1.0, 0).is_err());
    }

    #[test]
    fn identity_audits_to_zero() {
        let inst = line_instance(&[0.0, 1.0, 4.0, 9.0], &[0.0, 3.0, 9.0], 2, Variant::Capacitated { caps: vec![2, 3, 2] });
        let r = audit_coreset(&inst, &identity_coreset(&inst), 0.5, 0).unwrap();
        assert_eq!(r.max_error, 0.0);
        assert!(r.exhaustive);
        assert_eq!(r.candidates, 3);
    }

    #[test]
    fn audit_detects_missing_cluster() {
        // Clusters near 0 and near 100; the coreset drops the far cluster.
        let inst = line_instance(&[0.0, 1.0, 100.0, 101.0], &[0.0, 50.0], 1, Variant::Vanilla);
        let bad = WeightedPointSet::new([(0, 2.0), (1, 2.0)]);
        let r = audit_coreset(&inst, &bad, 0.5, 0).unwrap();
        // Center 0: full cost 1 + 100 + 101 = 202, coreset cost 2. Center 50:
        // full 50 + 49 + 50 + 51 = 200, coreset 2*50 + 2*49 = 198.
        let expect = (202.0f64 - 2.0) / 202.0;
        assert!((r.max_error - expect).abs() < 1e-12);
        assert_eq!(r.worst, Some(vec![0]));
    }

    #[test]
    fn fair_universal_audit() {
        let fair = FairSpec::new(vec![vec![0, 2], vec![1, 3]], vec![0.0, 0.0], vec![1.0, 1.0], 4).unwrap();
        let inst = line_instance(&[0.0, 1.0, 5.0, 6.0], &[0.0, 6.0], 2, Variant::Fair(fair));
        let r = audit_coreset(&inst, &identity_coreset(&inst), 0.5, 0).unwrap();
        assert_eq!(r.max_error, 0.0);
        let shifted = WeightedPointSet::new([(0, 2.0), (1, 1.0), (3, 1.0)]);
        let r = audit_coreset(&inst, &shifted, 0.5, 0).unwrap();
        assert!(r.max_error > 0.0);
    }
}
