//! Instrumentation around the refinement step: unhappy pairs, their
//! properties, consistency of request sets with a known optimum, and the
//! sampling law of the randomized variant.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::search::{NodeEval, SearchContext, SearchNode};
use crate::coreset::WeightedPointSet;
use crate::error::{EpasError, Result};
use crate::model::{power_distance, Assignment, Center, Instance};

/// All `(p, i)` with `fstar(p, i) > 0` and `d(p, x_i) > (1+ε)·d(p, o_i)`,
/// sorted by point then slot.
pub fn witness_set(
    instance: &Instance,
    y: &WeightedPointSet,
    fstar: &Assignment,
    optimum: &[Center],
    x: &[Center],
    epsilon: f64,
) -> Vec<(usize, usize)> {
    let m = &instance.metric;
    let mut out: Vec<(usize, usize)> = fstar
        .entries()
        .iter()
        .filter(|e| e.weight > 0.0 && y.contains(e.point))
        .filter(|e| m.client_center_dist(e.point, &x[e.slot]) > (1.0 + epsilon) * m.client_center_dist(e.point, &optimum[e.slot]))
        .map(|e| (e.point, e.slot))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Leaders consistent with an optimum: per slot the point of `Y` assigned
/// to `o_i` closest to it (closest overall when the cluster is empty),
/// returned as `(rows, rounded radii, exact distances)`.
pub fn planted_leaders(ctx: &SearchContext, optimum: &[Center], fstar: &Assignment) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let m = &ctx.instance.metric;
    let y = ctx.y;
    let mut rows = Vec::new();
    let mut radii = Vec::new();
    let mut exact = Vec::new();
    for (i, o) in optimum.iter().enumerate() {
        let pick = |assigned_only: bool| {
            (0..y.len())
                .filter(|&r| !assigned_only || fstar.get(y.points[r], i) > 0.0)
                .map(|r| (m.client_center_dist(y.points[r], o), r))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        };
        let (d, r) = pick(true).or_else(|| pick(false)).expect("nonempty point set");
        rows.push(r);
        radii.push(ctx.root_radius(d));
        exact.push(d);
    }
    (rows, radii, exact)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessViolation {
    pub point: usize,
    pub slot: usize,
    pub property: char,
    pub detail: String,
}

/// Checks properties (a)–(d) for every pair of `witness_set` against the
/// planted leaders `leaders` (points) with rounded radii `radii`.
#[allow(clippy::too_many_arguments)]
pub fn check_witness_properties(
    instance: &Instance,
    y: &WeightedPointSet,
    fstar: &Assignment,
    optimum: &[Center],
    x: &[Center],
    leaders: &[usize],
    radii: &[f64],
    epsilon: f64,
    ball_constant: f64,
) -> (Vec<(usize, usize)>, Vec<WitnessViolation>) {
    let m = &instance.metric;
    let pairs = witness_set(instance, y, fstar, optimum, x, epsilon);
    let mut bad = Vec::new();
    for &(p, i) in &pairs {
        let dx = m.client_center_dist(p, &x[i]);
        let dopt = m.client_center_dist(p, &optimum[i]);
        let mut fail = |property: char, detail: String| bad.push(WitnessViolation { point: p, slot: i, property, detail });
        if fstar.get(p, i) <= 0.0 {
            fail('a', "not assigned to this slot".into());
        }
        if dx <= (1.0 + epsilon) * dopt {
            fail('b', format!("d(p,x)={dx} vs d(p,o)={dopt}"));
        }
        if dx < radii[i] {
            fail('c', format!("d(p,x)={dx} < r={}", radii[i]));
        }
        let dl = m.client_dist(p, leaders[i]);
        if dl > ball_constant / epsilon * radii[i] * (1.0 + 1e-12) {
            fail('d', format!("d(p,leader)={dl} > {}", ball_constant / epsilon * radii[i]));
        }
    }
    (pairs, bad)
}

/// Requests of a node that an optimum violates: `(slot, point, radius)`
/// with `d(point, o_slot) > radius`.
pub fn inconsistencies(ctx: &SearchContext, node: &SearchNode, optimum: &[Center]) -> Vec<(usize, usize, f64)> {
    let m = &ctx.instance.metric;
    let mut out = Vec::new();
    for (i, q) in node.requests.iter().enumerate() {
        for r in q.as_slice() {
            if m.client_center_dist(r.point, &optimum[i]) > r.radius * (1.0 + 1e-12) {
                out.push((i, r.point, r.radius));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathEnd {
    /// A node with cost within the threshold was reached.
    Success { centers: Vec<Center>, cost: f64 },
    /// No branch of the node corresponds to a witness pair.
    Stuck { depth: usize },
    Bottom { depth: usize },
    DepthCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessPath {
    pub end: PathEnd,
    /// Nodes visited, root included.
    pub nodes: usize,
    /// Every violated request met along the path.
    pub inconsistent: Vec<(usize, usize, usize, f64)>,
    /// Centers and costs of the nodes that did not meet the threshold.
    pub unsuccessful: Vec<(Vec<Center>, f64, Vec<Vec<usize>>)>,
}

/// Walks from `root` by always taking the first branch that is a witness
/// pair for the optimum, until the cost is within `threshold`.
pub fn follow_witness_path(
    ctx: &mut SearchContext,
    root: SearchNode,
    optimum: &[Center],
    fstar: &Assignment,
    threshold: f64,
    depth_cap: usize,
) -> Result<WitnessPath> {
    let mut node = root;
    let mut path = WitnessPath { end: PathEnd::DepthCap, nodes: 0, inconsistent: Vec::new(), unsuccessful: Vec::new() };
    loop {
        path.nodes += 1;
        for (i, p, r) in inconsistencies(ctx, &node, optimum) {
            path.inconsistent.push((node.depth, i, p, r));
        }
        let (centers, cost) = match ctx.evaluate(&node)? {
            NodeEval::Evaluated { centers, cost } => (centers, cost),
            _ => {
                path.end = PathEnd::Bottom { depth: node.depth };
                return Ok(path);
            }
        };
        if cost <= threshold {
            path.end = PathEnd::Success { centers, cost };
            return Ok(path);
        }
        let balls = node.balls.iter().map(|b| b.ones().map(|r| ctx.y.points[r]).collect()).collect();
        path.unsuccessful.push((centers.clone(), cost, balls));
        if node.depth >= depth_cap {
            return Ok(path);
        }
        let pairs = witness_set(ctx.instance, ctx.y, fstar, optimum, &centers, ctx.epsilon);
        let branch = ctx
            .branches(&node, &centers)
            .into_iter()
            .find(|b| pairs.binary_search(&(ctx.y.points[b.row], b.slot)).is_ok());
        match branch {
            Some(b) => node = ctx.child(&node, &centers, b),
            None => {
                path.end = PathEnd::Stuck { depth: node.depth };
                return Ok(path);
            }
        }
    }
}

/// Draws a row of `∪B_i` with probability proportional to `w·d(p,X)^z`,
/// then a slot uniformly among the balls containing it.
pub(crate) fn sample_unhappy_rows<R: Rng + ?Sized>(
    instance: &Instance,
    y: &WeightedPointSet,
    x: &[Center],
    balls: &[Vec<usize>],
    rng: &mut R,
) -> Result<(usize, usize)> {
    let m = &instance.metric;
    let mut rows: Vec<usize> = balls.iter().flatten().copied().collect();
    rows.sort_unstable();
    rows.dedup();
    let mass: Vec<f64> = rows
        .iter()
        .map(|&r| {
            let d = x.iter().map(|c| m.client_center_dist(y.points[r], c)).fold(f64::INFINITY, f64::min);
            y.weights[r] * power_distance(d, instance.z)
        })
        .collect();
    let dist = WeightedIndex::new(&mass).map_err(|_| EpasError::DegenerateSampling("no positive mass in the union of balls".into()))?;
    let row = rows[dist.sample(rng)];
    let slots: Vec<usize> = (0..balls.len()).filter(|&i| balls[i].contains(&row)).collect();
    let slot = *slots.choose(rng).expect("row lies in some ball");
    Ok((row, slot))
}

/// [`sample_unhappy_rows`] with balls given as point ids.
pub fn sample_unhappy(
    instance: &Instance,
    y: &WeightedPointSet,
    x: &[Center],
    balls: &[Vec<usize>],
    seed: u64,
) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_unhappy_with(instance, y, x, balls, &mut rng)
}

pub fn sample_unhappy_with<R: Rng + ?Sized>(
    instance: &Instance,
    y: &WeightedPointSet,
    x: &[Center],
    balls: &[Vec<usize>],
    rng: &mut R,
) -> Result<(usize, usize)> {
    let rows: Vec<Vec<usize>> = balls
        .iter()
        .map(|b| b.iter().filter_map(|p| y.points.binary_search(p).ok()).collect())
        .collect();
    let (row, slot) = sample_unhappy_rows(instance, y, x, &rows, rng)?;
    Ok((y.points[row], slot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassCheck {
    pub ratio: f64,
    /// Points of `W` outside every ball.
    pub uncovered: Vec<usize>,
    pub pass: bool,
}

/// `W = {p : d(p,X) > (1+ε)·d(p,O)}`; checks `W ⊆ ∪B_i` and
/// `Σ_W w·d(p,X)^z / Σ_Y w·d(p,X)^z ≥ ε/10`.
#[allow(clippy::too_many_arguments)]
pub fn witness_mass_check(
    instance: &Instance,
    y: &WeightedPointSet,
    x: &[Center],
    optimum: &[Center],
    balls: &[Vec<usize>],
    guess: f64,
    epsilon: f64,
    cost_x: f64,
) -> Result<MassCheck> {
    if cost_x <= (1.0 + 5.0 * epsilon) * guess {
        return Err(EpasError::Premise(format!(
            "cost {cost_x} does not exceed (1+5ε)·G = {}",
            (1.0 + 5.0 * epsilon) * guess
        )));
    }
    let m = &instance.metric;
    let nearest = |p: usize, cs: &[Center]| cs.iter().map(|c| m.client_center_dist(p, c)).fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    let mut unhappy = 0.0;
    let mut uncovered = Vec::new();
    for (&p, &w) in y.points.iter().zip(&y.weights) {
        let dx = nearest(p, x);
        let mass = w * power_distance(dx, instance.z);
        total += mass;
        if dx > (1.0 + epsilon) * nearest(p, optimum) {
            unhappy += mass;
            if !balls.iter().any(|b| b.contains(&p)) {
                uncovered.push(p);
            }
        }
    }
    let ratio = if total > 0.0 { unhappy / total } else { 0.0 };
    Ok(MassCheck { ratio, pass: uncovered.is_empty() && ratio >= epsilon / 10.0, uncovered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreset::identity_coreset;
    use crate::metric::MetricSpace;
    use crate::model::{AssignmentEntry, Variant};
    use std::sync::Arc;

    fn line(xs: &[f64], ws: &[f64], fs: &[f64], k: usize) -> Instance {
        let m = MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            true,
        )
        .unwrap();
        Instance::new(Arc::new(m), Some(ws.to_vec()), k, 1.0, 0.5, Variant::Vanilla).unwrap()
    }

    fn nearest_assignment(inst: &Instance, centers: &[Center]) -> Assignment {
        let m = &inst.metric;
        let entries = (0..inst.n())
            .map(|p| {
                let slot = (0..centers.len())
                    .min_by(|&a, &b| m.client_center_dist(p, &centers[a]).total_cmp(&m.client_center_dist(p, &centers[b])))
                    .unwrap();
                AssignmentEntry { point: p, slot, weight: inst.weights[p] }
            })
            .collect();
        Assignment::from_entries(entries)
    }

    #[test]
    fn witness_set_examples() {
        let inst = line(&[0.0, 1.0, 10.0, 11.0], &[1.0; 4], &[0.0, 10.0, 30.0], 2);
        let y = identity_coreset(&inst);
        let o = vec![Center::Facility(0), Center::Facility(1)];
        let f = nearest_assignment(&inst, &o);
        assert!(witness_set(&inst, &y, &f, &o, &o, 0.5).is_empty());
        let x = vec![Center::Facility(0), Center::Facility(2)];
        assert_eq!(witness_set(&inst, &y, &f, &o, &x, 0.5), vec![(2, 1), (3, 1)]);
    }

    #[test]
    fn sampling_examples() {
        let inst = line(&[0.0, 1.0, 3.0], &[1.0; 3], &[0.0], 1);
        let y = identity_coreset(&inst);
        let x = vec![Center::Facility(0)];
        for s in 0..20 {
            assert_eq!(sample_unhappy(&inst, &y, &x, &[vec![1]], s).unwrap(), (1, 0));
            assert_eq!(sample_unhappy(&inst, &y, &x, &[vec![0], vec![2]], s).unwrap(), (2, 1));
        }
        assert!(matches!(
            sample_unhappy(&inst, &y, &x, &[vec![0]], 1),
            Err(EpasError::DegenerateSampling(_))
        ));
    }

    #[test]
    fn sampling_frequencies_follow_mass() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let inst = line(&[0.0, 1.0, 3.0], &[1.0; 3], &[0.0], 1);
        let y = identity_coreset(&inst);
        let x = vec![Center::Facility(0)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_unhappy_with(&inst, &y, &x, &[vec![1, 2]], &mut rng).unwrap().0 == 2)
            .count() as f64;
        let (e1, e2) = (0.25 * n as f64, 0.75 * n as f64);
        let chi2 = (n as f64 - hits - e1).powi(2) / e1 + (hits - e2).powi(2) / e2;
        let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "p-value {p}");
    }

    #[test]
    fn half_mass_unhappy() {
        // Points 0 and 1 have equal mass under X; only point 1 is unhappy.
        let inst = line(&[0.0, 10.0], &[1.0, 1.0], &[-2.0, 8.0, 10.0], 2);
        let y = identity_coreset(&inst);
        let x = vec![Center::Facility(0), Center::Facility(1)];
        let o = vec![Center::Facility(0), Center::Facility(2)];
        let r = witness_mass_check(&inst, &y, &x, &o, &[vec![0, 1]], 0.5, 0.5, 4.0).unwrap();
        assert_eq!(r.ratio, 0.5);
        assert!(r.pass);
        assert!(matches!(
            witness_mass_check(&inst, &y, &x, &o, &[vec![0, 1]], 2.0, 0.5, 4.0),
            Err(EpasError::Premise(_))
        ));
    }
}
