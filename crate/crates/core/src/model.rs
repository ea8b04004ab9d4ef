use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coreset::WeightedPointSet;
use crate::error::{EpasError, Result};
use crate::matroid::{IndependenceOracle, MatroidHandle};
use crate::metric::MetricSpace;

/// Relative tolerance for feasibility equalities.
pub const FEAS_TOL: f64 = 1e-9;

#[inline]
pub fn power_distance(d: f64, z: f64) -> f64 {
    if z == 1.0 {
        d
    } else if z == 2.0 {
        d * d
    } else {
        d.powf(z)
    }
}

/// An open center: a facility index, or a coordinate vector in continuous mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Center {
    Facility(usize),
    Point(Vec<f64>),
}

impl Center {
    pub fn facility(&self) -> Option<usize> {
        match self {
            Center::Facility(f) => Some(*f),
            Center::Point(_) => None,
        }
    }
}

/// Group constraints of fair clustering together with the membership
/// signature classes of the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct FairSpec {
    pub groups: Vec<Vec<usize>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    membership: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    classes: Vec<Vec<usize>>,
}

impl FairSpec {
    pub fn new(groups: Vec<Vec<usize>>, alpha: Vec<f64>, beta: Vec<f64>, n_points: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(EpasError::InvalidInstance("fair variant needs at least one group".into()));
        }
        if alpha.len() != groups.len() || beta.len() != groups.len() {
            return Err(EpasError::InvalidInstance(format!(
                "{} groups but {} alpha and {} beta values",
                groups.len(),
                alpha.len(),
                beta.len()
            )));
        }
        for (g, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(EpasError::InvalidInstance(format!("group {g}: alpha and beta must lie in [0,1]")));
            }
            if a > b {
                return Err(EpasError::InvalidInstance(format!("group {g}: alpha {a} exceeds beta {b}")));
            }
        }
        let mut membership = vec![Vec::new(); n_points];
        for (g, members) in groups.iter().enumerate() {
            for &p in members {
                if p >= n_points {
                    return Err(EpasError::InvalidInstance(format!("group {g} names missing point {p}")));
                }
                if !membership[p].contains(&g) {
                    membership[p].push(g);
                }
            }
        }
        let mut classes: Vec<Vec<usize>> = Vec::new();
        let mut class_of = Vec::with_capacity(n_points);
        for (p, sig) in membership.iter_mut().enumerate() {
            if sig.is_empty() {
                return Err(EpasError::InvalidInstance(format!("point {p} belongs to no group")));
            }
            sig.sort_unstable();
            let c = match classes.iter().position(|s| s == sig) {
                Some(c) => c,
                None => {
                    classes.push(sig.clone());
                    classes.len() - 1
                }
            };
            class_of.push(c);
        }
        Ok(FairSpec { groups, alpha, beta, membership, class_of, classes })
    }

    /// Number of distinct group-membership signatures.
    pub fn gamma(&self) -> usize {
        self.classes.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups_of(&self, p: usize) -> &[usize] {
        &self.membership[p]
    }

    pub fn class_of(&self, p: usize) -> usize {
        self.class_of[p]
    }

    pub fn class_groups(&self, c: usize) -> &[usize] {
        &self.classes[c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Vanilla,
    /// Per-facility capacities. In continuous mode a single entry gives a
    /// uniform capacity.
    Capacitated { caps: Vec<u64> },
    Matroid { matroid: MatroidHandle },
    FaultTolerant { ell: usize },
    Fair(FairSpec),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Capacitated { .. } => "capacitated",
            Variant::Matroid { .. } => "matroid",
            Variant::FaultTolerant { .. } => "fault-tolerant",
            Variant::Fair(_) => "fair",
        }
    }

    /// Whether centers must be pairwise distinct facilities.
    pub fn needs_distinct_centers(&self) -> bool {
        matches!(
            self,
            Variant::Capacitated { .. } | Variant::Matroid { .. } | Variant::FaultTolerant { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub metric: Arc<MetricSpace>,
    pub weights: Vec<f64>,
    pub k: usize,
    pub z: f64,
    pub epsilon: f64,
    pub variant: Variant,
}

impl Instance {
    pub fn new(
        metric: Arc<MetricSpace>,
        weights: Option<Vec<f64>>,
        k: usize,
        z: f64,
        epsilon: f64,
        variant: Variant,
    ) -> Result<Self> {
        let n = metric.n_clients();
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(EpasError::InvalidInstance(format!("{} weights for {n} points", weights.len())));
        }
        if let Some(p) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(EpasError::InvalidInstance(format!("weight of point {p} is not a nonnegative real")));
        }
        if k == 0 {
            return Err(EpasError::InvalidInstance("k must be positive".into()));
        }
        if !metric.is_continuous() && k > metric.n_facilities() {
            return Err(EpasError::InvalidInstance(format!(
                "k = {k} exceeds the {} available facilities",
                metric.n_facilities()
            )));
        }
        if !(z >= 1.0) || !z.is_finite() {
            return Err(EpasError::InvalidInstance(format!("z must be a real >= 1, got {z}")));
        }
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(EpasError::InvalidInstance(format!("epsilon must lie in (0, 1/2], got {epsilon}")));
        }
        match &variant {
            Variant::Vanilla => {}
            Variant::Capacitated { caps } => {
                let expected = if metric.is_continuous() { 1 } else { metric.n_facilities() };
                if caps.len() != expected {
                    return Err(EpasError::InvalidInstance(format!(
                        "{} capacities given, expected {expected}",
                        caps.len()
                    )));
                }
                if caps.contains(&0) {
                    return Err(EpasError::InvalidInstance("capacities must be positive".into()));
                }
            }
            Variant::Matroid { matroid } => {
                if metric.is_continuous() {
                    return Err(EpasError::Unsupported("matroid constraints need a finite facility set".into()));
                }
                if matroid.ground_size() != metric.n_facilities() {
                    return Err(EpasError::InvalidInstance(format!(
                        "matroid ground has {} elements but there are {} facilities",
                        matroid.ground_size(),
                        metric.n_facilities()
                    )));
                }
            }
            Variant::FaultTolerant { ell } => {
                if *ell == 0 || *ell > k {
                    return Err(EpasError::InvalidInstance(format!("ell = {ell} must lie in [1, k = {k}]")));
                }
            }
            Variant::Fair(fair) => {
                if fair.membership.len() != n {
                    return Err(EpasError::InvalidInstance("fair groups built for a different point count".into()));
                }
            }
        }
        Ok(Instance { metric, weights, k, z, epsilon, variant })
    }

    pub fn n(&self) -> usize {
        self.metric.n_clients()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        Instance::new(self.metric.clone(), Some(self.weights.clone()), self.k, self.z, self.epsilon, variant)
    }

    /// Capacity of a slot hosting `center`.
    pub fn capacity_of(&self, center: &Center) -> Option<u64> {
        match (&self.variant, center) {
            (Variant::Capacitated { caps }, Center::Facility(f)) => caps.get(*f).copied(),
            (Variant::Capacitated { caps }, Center::Point(_)) => caps.first().copied(),
            _ => None,
        }
    }

    /// Row-major `|points| x |centers|` distance table.
    pub fn center_distances(&self, points: &[usize], centers: &[Center]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() * centers.len());
        for &p in points {
            for c in centers {
                out.push(self.metric.client_center_dist(p, c));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub point: usize,
    pub slot: usize,
    pub weight: f64,
}

/// Sparse point-to-slot weight map, kept sorted by (point, slot) with no
/// zero entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    entries: Vec<AssignmentEntry>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(mut entries: Vec<AssignmentEntry>) -> Self {
        entries.sort_by_key(|e| (e.point, e.slot));
        let mut merged: Vec<AssignmentEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if last.point == e.point && last.slot == e.slot => last.weight += e.weight,
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.weight > 0.0);
        Assignment { entries: merged }
    }

    /// Appends an entry; callers must add in (point, slot) order.
    pub(crate) fn push(&mut self, point: usize, slot: usize, weight: f64) {
        if weight > 0.0 {
            debug_assert!(self.entries.last().is_none_or(|l| (l.point, l.slot) < (point, slot)));
            self.entries.push(AssignmentEntry { point, slot, weight });
        }
    }

    pub fn entries(&self) -> &[AssignmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, point: usize, slot: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(point, slot), |e| (e.point, e.slot))
            .map_or(0.0, |i| self.entries[i].weight)
    }

    pub fn point_total(&self, point: usize) -> f64 {
        self.entries.iter().filter(|e| e.point == point).map(|e| e.weight).sum()
    }

    pub fn slot_loads(&self, k: usize) -> Vec<f64> {
        let mut loads = vec![0.0; k];
        for e in &self.entries {
            if e.slot < k {
                loads[e.slot] += e.weight;
            }
        }
        loads
    }

    pub fn slots_of(&self, point: usize) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().filter(move |e| e.point == point).map(|e| e.slot)
    }

    /// Renames slots via `map[old] = new`, merging entries that collide.
    pub fn remap_slots(&self, map: &[usize]) -> Assignment {
        Assignment::from_entries(
            self.entries
                .iter()
                .map(|e| AssignmentEntry { slot: map[e.slot], ..*e })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub centers: Vec<Center>,
    pub assignment: Assignment,
    pub cost: f64,
}

/// Raw weighted cost: the sum of `f(p, j) * d(p, x_j)^z`.
pub fn weighted_cost(instance: &Instance, centers: &[Center], f: &Assignment) -> f64 {
    f.entries
        .iter()
        .map(|e| e.weight * power_distance(instance.metric.client_center_dist(e.point, &centers[e.slot]), instance.z))
        .sum()
}

/// Objective value of `(centers, f)`. For fault-tolerant instances the raw
/// weighted cost of the normalized assignment is scaled back by `ell`.
pub fn solution_cost(instance: &Instance, y: &WeightedPointSet, centers: &[Center], f: &Assignment) -> Result<f64> {
    for e in &f.entries {
        if e.slot >= centers.len() {
            return Err(EpasError::Contract(format!(
                "assignment uses slot {} but only {} centers exist",
                e.slot,
                centers.len()
            )));
        }
        if !y.contains(e.point) {
            return Err(EpasError::Contract(format!("assignment names point {} outside the point set", e.point)));
        }
    }
    let raw = weighted_cost(instance, centers, f);
    Ok(match instance.variant {
        Variant::FaultTolerant { ell } => ell as f64 * raw,
        _ => raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UnknownPoint,
    SlotOutOfRange,
    WeightMismatch,
    CapacityExceeded,
    FaultTolerantShare,
    FaultTolerantCount,
    FairnessRatio,
    CenterCount,
    UnknownFacility,
    DuplicateCenter,
    MatroidDependent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub point: Option<usize>,
    pub slot: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violation(kind: ViolationKind, point: Option<usize>, slot: Option<usize>, message: String) -> Violation {
    Violation { kind, point, slot, message }
}

/// Checks weight preservation and the variant's assignment constraints.
/// Every violation found is reported.
pub fn validate_assignment(
    instance: &Instance,
    y: &WeightedPointSet,
    centers: &[Center],
    f: &Assignment,
) -> std::result::Result<(), Vec<Violation>> {
    let k = centers.len();
    let mut out = Vec::new();
    for e in &f.entries {
        if !y.contains(e.point) {
            out.push(violation(
                ViolationKind::UnknownPoint,
                Some(e.point),
                None,
                format!("point {} is not in the point set", e.point),
            ));
        }
        if e.slot >= k {
            out.push(violation(
                ViolationKind::SlotOutOfRange,
                Some(e.point),
                Some(e.slot),
                format!("point {} assigned to missing slot {}", e.point, e.slot),
            ));
        }
    }
    let mut totals = std::collections::HashMap::new();
    for e in &f.entries {
        *totals.entry(e.point).or_insert(0.0) += e.weight;
    }
    for (&p, &w) in y.points.iter().zip(&y.weights) {
        let got = totals.get(&p).copied().unwrap_or(0.0);
        if (got - w).abs() > FEAS_TOL * w.max(f64::MIN_POSITIVE) && !(w == 0.0 && got == 0.0) {
            out.push(violation(
                ViolationKind::WeightMismatch,
                Some(p),
                None,
                format!("point {p} has weight {w} but {got} is assigned"),
            ));
        }
    }
    match &instance.variant {
        Variant::Vanilla | Variant::Matroid { .. } => {}
        Variant::Capacitated { .. } => {
            for (j, load) in f.slot_loads(k).into_iter().enumerate() {
                let cap = instance.capacity_of(&centers[j]).unwrap_or(0) as f64;
                if load > cap * (1.0 + FEAS_TOL) {
                    out.push(violation(
                        ViolationKind::CapacityExceeded,
                        None,
                        Some(j),
                        format!("capacity exceeded at slot {j}: load {load} > capacity {cap}"),
                    ));
                }
            }
        }
        Variant::FaultTolerant { ell } => {
            for (&p, &w) in y.points.iter().zip(&y.weights) {
                if w == 0.0 {
                    continue;
                }
                let share = w / *ell as f64;
                let mut count = 0;
                for e in f.entries.iter().filter(|e| e.point == p) {
                    count += 1;
                    if (e.weight - share).abs() > FEAS_TOL * w {
                        out.push(violation(
                            ViolationKind::FaultTolerantShare,
                            Some(p),
                            Some(e.slot),
                            format!("point {p} sends {} to slot {} instead of {share}", e.weight, e.slot),
                        ));
                    }
                }
                if count != *ell {
                    out.push(violation(
                        ViolationKind::FaultTolerantCount,
                        Some(p),
                        None,
                        format!("point {p} is served by {count} slots instead of {ell}"),
                    ));
                }
            }
        }
        Variant::Fair(fair) => {
            let loads = f.slot_loads(k);
            let mut counts = vec![vec![0.0; fair.n_groups()]; k];
            for e in &f.entries {
                if e.slot < k && e.point < instance.n() {
                    for &g in fair.groups_of(e.point) {
                        counts[e.slot][g] += e.weight;
                    }
                }
            }
            for j in 0..k {
                let load = loads[j];
                if load <= 0.0 {
                    continue;
                }
                for g in 0..fair.n_groups() {
                    let c = counts[j][g];
                    let tol = FEAS_TOL * load;
                    if c + tol < fair.alpha[g] * load || c > fair.beta[g] * load + tol {
                        out.push(violation(
                            ViolationKind::FairnessRatio,
                            None,
                            Some(j),
                            format!(
                                "slot {j} holds fraction {} of group {g}, outside [{}, {}]",
                                c / load,
                                fair.alpha[g],
                                fair.beta[g]
                            ),
                        ));
                    }
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Checks the center-side constraints: slot count, facility range,
/// distinctness where the variant needs it, and matroid independence.
pub fn validate_centers(instance: &Instance, centers: &[Center]) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if centers.len() != instance.k {
        out.push(violation(
            ViolationKind::CenterCount,
            None,
            None,
            format!("{} centers given, expected {}", centers.len(), instance.k),
        ));
    }
    let m = instance.metric.n_facilities();
    let mut facilities = Vec::new();
    for (j, c) in centers.iter().enumerate() {
        match c {
            Center::Facility(f) if *f >= m || instance.metric.is_continuous() => out.push(violation(
                ViolationKind::UnknownFacility,
                None,
                Some(j),
                format!("slot {j} names unavailable facility {f}"),
            )),
            Center::Facility(f) => facilities.push(*f),
            Center::Point(x) => {
                if !instance.metric.is_continuous() || Some(x.len()) != instance.metric.dim() {
                    out.push(violation(
                        ViolationKind::UnknownFacility,
                        None,
                        Some(j),
                        format!("slot {j} holds a coordinate center outside continuous mode"),
                    ));
                }
            }
        }
    }
    if instance.variant.needs_distinct_centers() && !instance.metric.is_continuous() {
        let mut sorted = facilities.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.push(violation(
                ViolationKind::DuplicateCenter,
                None,
                None,
                "centers must be distinct facilities".into(),
            ));
        }
    }
    if let Variant::Matroid { matroid } = &instance.variant {
        if facilities.len() == centers.len() && !matroid.independent(&facilities) {
            out.push(violation(
                ViolationKind::MatroidDependent,
                None,
                None,
                "center set is not independent in the matroid".into(),
            ));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
