use std::collections::{BTreeMap, HashMap};

use fixedbitset::FixedBitSet;
use ordered_float::OrderedFloat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EpasError, Result};
use crate::metric::MetricSpace;
use crate::model::Center;

/// Problem sizes up to this `|P|·|F|` are searched exhaustively.
pub const EXHAUSTIVE_PRODUCT: usize = 200;

const GREEDY_RESTARTS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterTriple {
    pub center: Center,
    pub point: usize,
    pub radius: f64,
}

pub type ScatteringSequence = Vec<ScatterTriple>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScatterViolation {
    /// `d(x_i, p_i)` is not larger than the inflated radius.
    NotSeparated { index: usize },
    /// A later center `x_j` does not cover the earlier point `p_i`.
    NotCovered { earlier: usize, later: usize },
}

fn check(seq: &[ScatterTriple], m: &MetricSpace, separation: f64, cover: f64) -> std::result::Result<(), ScatterViolation> {
    for (j, t) in seq.iter().enumerate() {
        if m.client_center_dist(t.point, &t.center) <= separation * t.radius {
            return Err(ScatterViolation::NotSeparated { index: j });
        }
        for (i, earlier) in seq[..j].iter().enumerate() {
            if m.client_center_dist(earlier.point, &t.center) > cover * earlier.radius {
                return Err(ScatterViolation::NotCovered { earlier: i, later: j });
            }
        }
    }
    Ok(())
}

/// Checks `d(x_i,p_i) > (1+ε)α_i` and `d(x_j,p_i) ≤ α_i` for `i < j`.
/// Indices in the reported violation are zero-based.
pub fn validate_scattering(seq: &[ScatterTriple], epsilon: f64, m: &MetricSpace) -> std::result::Result<(), ScatterViolation> {
    check(seq, m, 1.0 + epsilon, 1.0)
}

/// Like [`validate_scattering`] but later centers only need to cover earlier
/// points within `(1+slack)·α_i`, which is what a ball intersection run at
/// slack `slack` guarantees.
pub fn validate_algorithmic_scattering(
    seq: &[ScatterTriple],
    epsilon: f64,
    slack: f64,
    m: &MetricSpace,
) -> std::result::Result<(), ScatterViolation> {
    check(seq, m, 1.0 + epsilon, (1.0 + slack) * (1.0 + crate::ballint::SATISFY_TOL))
}

pub fn per_radius_counts(seq: &[ScatterTriple]) -> BTreeMap<OrderedFloat<f64>, usize> {
    let mut out = BTreeMap::new();
    for t in seq {
        *out.entry(OrderedFloat(t.radius)).or_insert(0) += 1;
    }
    out
}

/// Counts radii per geometric class `floor(log_ratio(radius / base))`.
pub fn per_radius_class_counts(seq: &[ScatterTriple], base: f64, ratio: f64) -> BTreeMap<i64, usize> {
    let mut out = BTreeMap::new();
    for t in seq {
        let class = ((t.radius / base).ln() / ratio.ln() + 1e-12).floor() as i64;
        *out.entry(class).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongestScattering {
    pub sequence: ScatteringSequence,
    pub exhaustive: bool,
    /// Set when the exhaustive search ran out of budget; the sequence is then
    /// only the best found.
    pub budget_exhausted: bool,
    pub states: usize,
}

struct Search<'a> {
    m: &'a MetricSpace,
    far: Vec<FixedBitSet>,
    covers: Vec<FixedBitSet>,
    memo: HashMap<FixedBitSet, (usize, Option<usize>)>,
    budget: usize,
    exhausted: bool,
}

impl Search<'_> {
    /// Longest continuation when the next center must come from `allowed`.
    fn longest(&mut self, allowed: &FixedBitSet) -> usize {
        if let Some(&(len, _)) = self.memo.get(allowed) {
            return len;
        }
        if self.memo.len() >= self.budget {
            self.exhausted = true;
            return 0;
        }
        let mut best = (0, None);
        for p in 0..self.m.n_clients() {
            if self.far[p].is_disjoint(allowed) {
                continue;
            }
            let mut next = allowed.clone();
            next.intersect_with(&self.covers[p]);
            let len = 1 + self.longest(&next);
            if len > best.0 {
                best = (len, Some(p));
            }
            if best.0 == allowed.count_ones(..) {
                break;
            }
        }
        self.memo.insert(allowed.clone(), best);
        best.0
    }
}

fn tables(m: &MetricSpace, epsilon: f64, radius: f64) -> (Vec<FixedBitSet>, Vec<FixedBitSet>) {
    let nf = m.n_facilities();
    let mut far = Vec::with_capacity(m.n_clients());
    let mut covers = Vec::with_capacity(m.n_clients());
    for p in 0..m.n_clients() {
        let mut f_far = FixedBitSet::with_capacity(nf);
        let mut f_cov = FixedBitSet::with_capacity(nf);
        for f in 0..nf {
            let d = m.client_facility_dist(p, f);
            f_far.set(f, d > (1.0 + epsilon) * radius);
            f_cov.set(f, d <= radius);
        }
        far.push(f_far);
        covers.push(f_cov);
    }
    (far, covers)
}

fn triple(far: &FixedBitSet, allowed: &FixedBitSet, p: usize, radius: f64) -> ScatterTriple {
    let x = far.intersection(allowed).next().expect("separating center");
    ScatterTriple { center: Center::Facility(x), point: p, radius }
}

/// Longest fixed-radius scattering sequence over the declared facilities.
/// Exhaustive (memoized over the set of still admissible centers) when
/// `|P|·|F| ≤ 200`, greedy with seeded restarts otherwise.
pub fn longest_scattering(m: &MetricSpace, epsilon: f64, radius: f64, budget: usize) -> Result<LongestScattering> {
    if m.is_continuous() {
        return Err(EpasError::Unsupported("scattering search needs a finite facility set".into()));
    }
    if !(radius > 0.0) {
        return Err(EpasError::Contract(format!("radius must be positive, got {radius}")));
    }
    let nf = m.n_facilities();
    let (far, covers) = tables(m, epsilon, radius);
    let mut all = FixedBitSet::with_capacity(nf);
    all.insert_range(..);
    if m.n_clients() * nf <= EXHAUSTIVE_PRODUCT {
        let mut s = Search { m, far, covers, memo: HashMap::new(), budget: budget.max(1), exhausted: false };
        s.longest(&all);
        let mut sequence = Vec::new();
        let mut allowed = all;
        while let Some(&(_, Some(p))) = s.memo.get(&allowed) {
            sequence.push(triple(&s.far[p], &allowed, p, radius));
            allowed.intersect_with(&s.covers[p]);
        }
        return Ok(LongestScattering { sequence, exhaustive: true, budget_exhausted: s.exhausted, states: s.memo.len() });
    }
    let best = (0..GREEDY_RESTARTS)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..m.n_clients()).collect();
            let mut allowed = all.clone();
            let mut seq = Vec::new();
            loop {
                order.shuffle(&mut rng);
                let pick = order
                    .iter()
                    .copied()
                    .filter(|&p| !far[p].is_disjoint(&allowed))
                    .max_by_key(|&p| covers[p].intersection(&allowed).count());
                let Some(p) = pick else { break };
                seq.push(triple(&far[p], &allowed, p, radius));
                allowed.intersect_with(&covers[p]);
            }
            seq
        })
        .reduce(Vec::new, |a, b| if b.len() > a.len() { b } else { a });
    Ok(LongestScattering { sequence: best, exhaustive: false, budget_exhausted: false, states: 0 })
}

/// Largest fixed-radius scattering length over every radius at which the
/// admissible structure can change, i.e. every positive client-facility
/// distance.
pub fn scatter_dimension(m: &MetricSpace, epsilon: f64, budget: usize) -> Result<LongestScattering> {
    let mut radii: Vec<f64> = (0..m.n_clients())
        .flat_map(|p| (0..m.n_facilities()).map(move |f| (p, f)))
        .map(|(p, f)| m.client_facility_dist(p, f))
        .filter(|&d| d > 0.0)
        .collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut best = LongestScattering { sequence: Vec::new(), exhaustive: true, budget_exhausted: false, states: 0 };
    let smallest = radii.first().copied().unwrap_or(1.0);
    for r in std::iter::once(smallest / 2.0).chain(radii) {
        let found = longest_scattering(m, epsilon, r, budget)?;
        best.exhaustive &= found.exhaustive;
        best.budget_exhausted |= found.budget_exhausted;
        best.states += found.states;
        if found.sequence.len() > best.sequence.len() {
            best.sequence = found.sequence;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCheck {
    pub count: usize,
    pub bound: f64,
    pub pass: bool,
}

/// Counts triples whose radius falls in the union of `[a_i, τ_i·a_i]` and
/// compares against `c_l · Σ λ̂·log2(τ_i)/ε`.
pub fn radius_interval_count_bound_check(
    seq: &[ScatterTriple],
    epsilon: f64,
    intervals: &[(f64, f64)],
    lambda_hat: f64,
    c_l: f64,
) -> IntervalCheck {
    let count = seq
        .iter()
        .filter(|t| intervals.iter().any(|&(a, tau)| t.radius >= a && t.radius <= tau * a))
        .count();
    let bound = c_l * intervals.iter().map(|&(_, tau)| lambda_hat * tau.log2() / epsilon).sum::<f64>();
    IntervalCheck { count, bound, pass: count as f64 <= bound }
}
