use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{EpasError, Result};
use crate::matroid::{matroid_intersection, MatroidHandle};
use crate::metric::{euclid, MetricSpace};
use crate::model::{Center, Instance, Variant};

/// Relative slack absorbed when comparing a distance against a request
/// radius, so that a request built as `d / (1 + eta)` is met at `d`.
pub const SATISFY_TOL: f64 = 1e-12;

/// Iteration budget of the Euclidean projection is `ceil(C / eta^2)`.
pub const PROJECTION_ITER_CONSTANT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub point: usize,
    pub radius: f64,
}

impl Request {
    pub fn new(point: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(EpasError::Contract(format!("request radius must be positive, got {radius}")));
        }
        Ok(Request { point, radius })
    }

    #[inline]
    pub fn admits(&self, d: f64, eta: f64) -> bool {
        d <= (1.0 + eta) * self.radius * (1.0 + SATISFY_TOL)
    }
}

/// Requests in insertion order, without exact duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestSet {
    requests: Vec<Request>,
}

impl RequestSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends unless the same (point, radius) is already present.
    pub fn push(&mut self, r: Request) -> bool {
        if self.requests.iter().any(|q| q.point == r.point && q.radius == r.radius) {
            return false;
        }
        self.requests.push(r);
        true
    }

    pub fn as_slice(&self) -> &[Request] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

impl FromIterator<Request> for RequestSet {
    fn from_iter<I: IntoIterator<Item = Request>>(iter: I) -> Self {
        let mut s = RequestSet::new();
        for r in iter {
            s.push(r);
        }
        s
    }
}

pub fn satisfies(m: &MetricSpace, x: &Center, q: &RequestSet, eta: f64) -> bool {
    q.requests.iter().all(|r| r.admits(m.client_center_dist(r.point, x), eta))
}

/// Lowest-indexed candidate meeting every request at slack `eta`.
pub fn discrete_ball_int(m: &MetricSpace, candidates: &[usize], q: &RequestSet, eta: f64) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&f| q.requests.iter().all(|r| r.admits(m.client_facility_dist(r.point, f), eta)))
        .min()
}

/// Satisfying candidate of largest capacity, lowest index on ties.
pub fn capacitated_ball_int(
    m: &MetricSpace,
    candidates: &[usize],
    q: &RequestSet,
    eta: f64,
    caps: &[u64],
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &f in candidates {
        if q.requests.iter().all(|r| r.admits(m.client_facility_dist(r.point, f), eta))
            && best.is_none_or(|b| caps[f] > caps[b] || (caps[f] == caps[b] && f < b))
        {
            best = Some(f);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum EuclideanBallInt {
    Found(Vec<f64>),
    /// `proven` is set when two requests are disjoint even without slack.
    Empty { proven: bool },
}

/// Cyclic projection onto the requests inflated by `1 + eta/2`, from the
/// centroid of the request points.
pub fn euclidean_ball_int(m: &MetricSpace, q: &RequestSet, eta: f64, dim: usize) -> EuclideanBallInt {
    let reqs = q.as_slice();
    if reqs.is_empty() {
        return EuclideanBallInt::Found(vec![0.0; dim]);
    }
    let coords: Vec<&[f64]> = reqs
        .iter()
        .map(|r| m.client_coords(r.point).expect("euclidean coordinates"))
        .collect();
    let mut x = vec![0.0; dim];
    for c in &coords {
        for (xi, ci) in x.iter_mut().zip(c.iter()) {
            *xi += ci / reqs.len() as f64;
        }
    }
    let iters = (PROJECTION_ITER_CONSTANT / (eta * eta)).ceil() as usize;
    let inflate = 1.0 + eta / 2.0;
    for _ in 0..=iters {
        if reqs.iter().zip(&coords).all(|(r, c)| r.admits(euclid(&x, c), eta)) {
            return EuclideanBallInt::Found(x);
        }
        let (worst, d) = reqs
            .iter()
            .zip(&coords)
            .enumerate()
            .map(|(i, (r, c))| (i, euclid(&x, c) - inflate * r.radius))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("nonempty requests");
        if d <= 0.0 {
            continue;
        }
        let c = coords[worst];
        let dist = euclid(&x, c);
        let scale = inflate * reqs[worst].radius / dist;
        for (xi, ci) in x.iter_mut().zip(c.iter()) {
            *xi = ci + (*xi - ci) * scale;
        }
    }
    let proven = (0..reqs.len()).any(|a| {
        (a + 1..reqs.len()).any(|b| euclid(coords[a], coords[b]) > reqs[a].radius + reqs[b].radius)
    });
    EuclideanBallInt::Empty { proven }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BallIntOutcome {
    Found(Vec<Center>),
    /// No tuple exists. `unproven` marks continuous-mode failures without a
    /// pairwise disjointness certificate.
    Bottom { unproven: bool },
}

/// Facilities of `candidates` meeting every request in `q` at slack `eta`.
pub fn satisfying_set(m: &MetricSpace, candidates: &[usize], q: &[Request], eta: f64) -> FixedBitSet {
    let mut s = FixedBitSet::with_capacity(m.n_facilities());
    for &f in candidates {
        if q.iter().all(|r| r.admits(m.client_facility_dist(r.point, f), eta)) {
            s.insert(f);
        }
    }
    s
}

/// Picks one center per slot from per-slot satisfying sets according to the
/// variant's rule.
pub fn select_centers(instance: &Instance, sat: &[FixedBitSet]) -> Option<Vec<usize>> {
    match &instance.variant {
        Variant::Capacitated { caps } => sat
            .iter()
            .map(|s| {
                let mut best: Option<usize> = None;
                for f in s.ones() {
                    if best.is_none_or(|b| caps[f] > caps[b]) {
                        best = Some(f);
                    }
                }
                best
            })
            .collect(),
        Variant::Matroid { matroid } => {
            let ground = matroid.ground_size();
            let parts: Vec<Vec<usize>> = sat.iter().map(|s| s.ones().collect()).collect();
            if parts.iter().any(Vec::is_empty) {
                return None;
            }
            let limits = vec![1; parts.len()];
            let colors = MatroidHandle::partition(ground, parts.clone(), limits).ok()?;
            let common = matroid_intersection(&colors, matroid).ok()?;
            if common.set.len() < sat.len() {
                return None;
            }
            parts
                .iter()
                .map(|part| common.set.iter().copied().find(|e| part.contains(e)))
                .collect()
        }
        _ => sat.iter().map(|s| s.ones().next()).collect(),
    }
}

/// Generalized ball intersection: one center per slot from that slot's
/// candidate class, meeting the slot's requests at slack `eta`, subject to
/// the instance's center constraints.
pub fn gen_ball_int(instance: &Instance, colors: &[Vec<usize>], qs: &[RequestSet], eta: f64) -> Result<BallIntOutcome> {
    let m = &instance.metric;
    if qs.len() != instance.k {
        return Err(EpasError::Contract(format!("{} request sets for k = {}", qs.len(), instance.k)));
    }
    if m.is_continuous() {
        let dim = m.dim().unwrap_or(0);
        let mut out = Vec::with_capacity(qs.len());
        for q in qs {
            match euclidean_ball_int(m, q, eta, dim) {
                EuclideanBallInt::Found(x) => out.push(Center::Point(x)),
                EuclideanBallInt::Empty { proven } => return Ok(BallIntOutcome::Bottom { unproven: !proven }),
            }
        }
        return Ok(BallIntOutcome::Found(out));
    }
    if colors.len() != instance.k {
        return Err(EpasError::Contract(format!("{} color classes for k = {}", colors.len(), instance.k)));
    }
    if matches!(instance.variant, Variant::Matroid { .. }) {
        let mut seen = FixedBitSet::with_capacity(m.n_facilities());
        for f in colors.iter().flatten() {
            if seen.put(*f) {
                return Err(EpasError::Contract("matroid ball intersection needs disjoint color classes".into()));
            }
        }
    }
    let sat: Vec<FixedBitSet> = colors
        .iter()
        .zip(qs)
        .map(|(c, q)| satisfying_set(m, c, q.as_slice(), eta))
        .collect();
    Ok(match select_centers(instance, &sat) {
        Some(x) => BallIntOutcome::Found(x.into_iter().map(Center::Facility).collect()),
        None => BallIntOutcome::Bottom { unproven: false },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matroid::IndependenceOracle;
    use std::sync::Arc;

    fn line(xs: &[f64], fs: &[f64]) -> MetricSpace {
        MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            false,
        )
        .unwrap()
    }

    fn req(p: usize, r: f64) -> Request {
        Request::new(p, r).unwrap()
    }

    #[test]
    fn satisfies_examples() {
        let m = line(&[0.0], &[3.0]);
        let x = Center::Facility(0);
        assert!(satisfies(&m, &x, &RequestSet::new(), 0.0));
        for eta in [0.0, 0.25, 0.1, 1.0 / 3.0] {
            let q: RequestSet = [req(0, 3.0 / (1.0 + eta))].into_iter().collect();
            assert!(satisfies(&m, &x, &q, eta));
        }
        let q: RequestSet = [req(0, 1.5)].into_iter().collect();
        assert!(!satisfies(&m, &x, &q, 0.0));
        assert!(Request::new(0, 0.0).is_err());
    }

    #[test]
    fn request_set_rejects_duplicates() {
        let mut q = RequestSet::new();
        assert!(q.push(req(0, 1.0)));
        assert!(!q.push(req(0, 1.0)));
        assert!(q.push(req(0, 2.0)));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn discrete_examples() {
        let m = line(&[0.0], &[5.0, 1.0]);
        assert_eq!(discrete_ball_int(&m, &[0, 1], &RequestSet::new(), 0.0), Some(0));
        let q: RequestSet = [req(0, 2.0)].into_iter().collect();
        assert_eq!(discrete_ball_int(&m, &[0], &q, 0.0), None);
        assert_eq!(discrete_ball_int(&m, &[0, 1], &q, 0.0), Some(1));
    }

    #[test]
    fn capacitated_examples() {
        let m = line(&[0.0], &[1.0, 2.0, 3.0]);
        let q: RequestSet = [req(0, 10.0)].into_iter().collect();
        assert_eq!(capacitated_ball_int(&m, &[0, 1, 2], &q, 0.0, &[1, 5, 3]), Some(1));
        let tight: RequestSet = [req(0, 1.0)].into_iter().collect();
        assert_eq!(capacitated_ball_int(&m, &[0, 1, 2], &tight, 0.0, &[1, 5, 3]), Some(0));
        let none: RequestSet = [req(0, 0.5)].into_iter().collect();
        assert_eq!(capacitated_ball_int(&m, &[0, 1, 2], &none, 0.0, &[1, 5, 3]), None);
    }

    #[test]
    fn euclidean_examples() {
        let m = MetricSpace::euclidean_continuous(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]], false).unwrap();
        let one: RequestSet = [req(0, 1.0)].into_iter().collect();
        assert_eq!(euclidean_ball_int(&m, &one, 0.1, 2), EuclideanBallInt::Found(vec![0.0, 0.0]));
        let tangent: RequestSet = [req(0, 1.0), req(1, 1.0)].into_iter().collect();
        match euclidean_ball_int(&m, &tangent, 0.1, 2) {
            EuclideanBallInt::Found(x) => {
                assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
            }
            other => panic!("expected midpoint, got {other:?}"),
        }
        let apart: RequestSet = [req(0, 1.0), req(2, 1.0)].into_iter().collect();
        assert_eq!(euclidean_ball_int(&m, &apart, 0.1, 2), EuclideanBallInt::Empty { proven: true });
        assert_eq!(euclidean_ball_int(&m, &RequestSet::new(), 0.1, 2), EuclideanBallInt::Found(vec![0.0, 0.0]));
    }

    #[test]
    fn euclidean_projection_converges() {
        // Three unit-ish disks with a small common region.
        let m = MetricSpace::euclidean_continuous(vec![vec![0.0, 0.0], vec![1.9, 0.0], vec![0.95, 1.6]], false).unwrap();
        let q: RequestSet = [req(0, 1.1), req(1, 1.1), req(2, 1.1)].into_iter().collect();
        match euclidean_ball_int(&m, &q, 0.2, 2) {
            EuclideanBallInt::Found(x) => assert!(satisfies(&m, &Center::Point(x), &q, 0.2)),
            other => panic!("expected a point, got {other:?}"),
        }
    }

    fn instance(variant: Variant, k: usize) -> Instance {
        let m = line(&[0.0, 10.0], &[0.0, 1.0, 9.0, 10.0]);
        Instance::new(Arc::new(m), None, k, 1.0, 0.5, variant).unwrap()
    }

    #[test]
    fn gen_examples() {
        let inst = instance(Variant::Vanilla, 2);
        let colors = vec![vec![1, 0], vec![3, 2]];
        let empty = vec![RequestSet::new(), RequestSet::new()];
        assert_eq!(
            gen_ball_int(&inst, &colors, &empty, 0.25).unwrap(),
            BallIntOutcome::Found(vec![Center::Facility(0), Center::Facility(2)])
        );

        let cap = instance(Variant::Capacitated { caps: vec![1, 1, 1, 1] }, 2);
        let qs = vec![[req(0, 0.5)].into_iter().collect(), [req(0, 0.5)].into_iter().collect()];
        assert_eq!(gen_ball_int(&cap, &colors, &qs, 0.25).unwrap(), BallIntOutcome::Bottom { unproven: false });

        let uni = instance(Variant::Matroid { matroid: MatroidHandle::uniform(4, 2) }, 2);
        let colors = vec![vec![0, 1], vec![2, 3]];
        let qs = vec![[req(0, 1.0)].into_iter().collect(), [req(1, 1.0)].into_iter().collect()];
        let per_slot: Vec<Center> = colors
            .iter()
            .zip(&qs)
            .map(|(c, q)| Center::Facility(discrete_ball_int(&uni.metric, c, q, 0.25).unwrap()))
            .collect();
        assert_eq!(gen_ball_int(&uni, &colors, &qs, 0.25).unwrap(), BallIntOutcome::Found(per_slot));
    }

    #[test]
    fn matroid_gen_respects_independence() {
        // Facilities 0 and 2 may not be opened together.
        let mat = MatroidHandle::explicit(4, vec![vec![0, 1], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]).unwrap();
        let inst = instance(Variant::Matroid { matroid: mat.clone() }, 2);
        let colors = vec![vec![0, 1], vec![2, 3]];
        let empty = vec![RequestSet::new(), RequestSet::new()];
        match gen_ball_int(&inst, &colors, &empty, 0.25).unwrap() {
            BallIntOutcome::Found(x) => {
                let fs: Vec<usize> = x.iter().map(|c| c.facility().unwrap()).collect();
                assert!(mat.independent(&{
                    let mut s = fs.clone();
                    s.sort_unstable();
                    s
                }));
            }
            other => panic!("{other:?}"),
        }
        let forced = vec![[req(0, 0.5)].into_iter().collect(), [req(0, 7.5)].into_iter().collect()];
        assert_eq!(gen_ball_int(&inst, &colors, &forced, 0.25).unwrap(), BallIntOutcome::Bottom { unproven: false });
    }
}
