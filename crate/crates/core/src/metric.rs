use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EpasError, Result};
use crate::model::Center;

/// Tolerance used by the metric axiom checks.
pub const METRIC_TOL: f64 = 1e-9;

const EXHAUSTIVE_TRIANGLE_NODES: usize = 64;
const SAMPLED_TRIANGLES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    ExplicitMatrix,
    Euclidean,
    GraphShortestPath,
}

/// A finite clustering metric over client and facility nodes.
///
/// Clients and facilities are both lists of node indices; the same node may
/// appear in both lists. In continuous Euclidean mode the facility list is
/// empty and centers may be placed anywhere in the ambient space.
#[derive(Debug, Clone)]
pub struct MetricSpace {
    kind: MetricKind,
    nodes: usize,
    dist: Vec<f64>,
    coords: Option<Vec<Vec<f64>>>,
    clients: Vec<usize>,
    facilities: Vec<usize>,
    continuous: bool,
    duplicates: bool,
    pf: Vec<f64>,
    pp: Vec<f64>,
}

impl MetricSpace {
    pub fn from_matrix(
        matrix: Vec<Vec<f64>>,
        clients: Vec<usize>,
        facilities: Vec<usize>,
        duplicates: bool,
    ) -> Result<Self> {
        let n = matrix.len();
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(EpasError::Metric(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let mut dist = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let (x, y) = (matrix[a][b], matrix[b][a]);
                if !x.is_finite() || x < 0.0 {
                    return Err(EpasError::Metric(format!(
                        "distance ({a},{b}) = {x} is not a finite nonnegative real"
                    )));
                }
                if (x - y).abs() > METRIC_TOL * x.abs().max(y.abs()).max(1.0) {
                    return Err(EpasError::Metric(format!(
                        "symmetry violated: d({a},{b}) = {x} but d({b},{a}) = {y}"
                    )));
                }
                dist[a * n + b] = if a <= b { x } else { y };
            }
            if matrix[a][a] != 0.0 {
                return Err(EpasError::Metric(format!(
                    "d({a},{a}) = {} is not zero",
                    matrix[a][a]
                )));
            }
        }
        Self::build(
            MetricKind::ExplicitMatrix,
            n,
            dist,
            None,
            clients,
            facilities,
            false,
            duplicates,
        )
    }

    /// Shortest-path closure of an undirected weighted graph.
    pub fn from_graph(
        nodes: usize,
        edges: &[(usize, usize, f64)],
        clients: Vec<usize>,
        facilities: Vec<usize>,
        duplicates: bool,
    ) -> Result<Self> {
        let mut dist = vec![f64::INFINITY; nodes * nodes];
        for a in 0..nodes {
            dist[a * nodes + a] = 0.0;
        }
        for &(a, b, w) in edges {
            if a >= nodes || b >= nodes {
                return Err(EpasError::Metric(format!("edge ({a},{b}) references a missing node")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(EpasError::Metric(format!("edge ({a},{b}) has invalid length {w}")));
            }
            if w < dist[a * nodes + b] {
                dist[a * nodes + b] = w;
                dist[b * nodes + a] = w;
            }
        }
        for m in 0..nodes {
            for a in 0..nodes {
                let dam = dist[a * nodes + m];
                if dam.is_infinite() {
                    continue;
                }
                for b in 0..nodes {
                    let via = dam + dist[m * nodes + b];
                    if via < dist[a * nodes + b] {
                        dist[a * nodes + b] = via;
                    }
                }
            }
        }
        if let Some(pos) = dist.iter().position(|d| d.is_infinite()) {
            return Err(EpasError::Metric(format!(
                "graph is disconnected: no path between nodes {} and {}",
                pos / nodes,
                pos % nodes
            )));
        }
        Self::build(
            MetricKind::GraphShortestPath,
            nodes,
            dist,
            None,
            clients,
            facilities,
            false,
            duplicates,
        )
    }

    /// Euclidean metric with a finite facility set. Nodes are the clients
    /// followed by the facilities.
    pub fn euclidean(
        clients: Vec<Vec<f64>>,
        facilities: Vec<Vec<f64>>,
        duplicates: bool,
    ) -> Result<Self> {
        let n = clients.len();
        let coords: Vec<Vec<f64>> = clients.into_iter().chain(facilities).collect();
        let total = coords.len();
        let client_ids = (0..n).collect();
        let facility_ids = (n..total).collect();
        Self::from_coords(coords, client_ids, facility_ids, false, duplicates)
    }

    /// Euclidean metric where any point of the space may host a center.
    pub fn euclidean_continuous(clients: Vec<Vec<f64>>, duplicates: bool) -> Result<Self> {
        let n = clients.len();
        Self::from_coords(clients, (0..n).collect(), Vec::new(), true, duplicates)
    }

    fn from_coords(
        coords: Vec<Vec<f64>>,
        clients: Vec<usize>,
        facilities: Vec<usize>,
        continuous: bool,
        duplicates: bool,
    ) -> Result<Self> {
        let total = coords.len();
        let dim = coords.first().map_or(0, Vec::len);
        for (i, c) in coords.iter().enumerate() {
            if c.len() != dim {
                return Err(EpasError::Metric(format!(
                    "node {i} has dimension {}, expected {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(EpasError::Metric(format!("node {i} has a non-finite coordinate")));
            }
        }
        let mut dist = vec![0.0; total * total];
        for a in 0..total {
            for b in (a + 1)..total {
                let d = euclid(&coords[a], &coords[b]);
                dist[a * total + b] = d;
                dist[b * total + a] = d;
            }
        }
        Self::build(
            MetricKind::Euclidean,
            total,
            dist,
            Some(coords),
            clients,
            facilities,
            continuous,
            duplicates,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: MetricKind,
        nodes: usize,
        dist: Vec<f64>,
        coords: Option<Vec<Vec<f64>>>,
        clients: Vec<usize>,
        facilities: Vec<usize>,
        continuous: bool,
        duplicates: bool,
    ) -> Result<Self> {
        for &v in clients.iter().chain(facilities.iter()) {
            if v >= nodes {
                return Err(EpasError::Metric(format!("node {v} out of range (have {nodes})")));
            }
        }
        let mut m = MetricSpace {
            kind,
            nodes,
            dist,
            coords,
            clients,
            facilities,
            continuous,
            duplicates,
            pf: Vec::new(),
            pp: Vec::new(),
        };
        m.check_triangle()?;
        m.check_separation()?;
        let (n, f) = (m.clients.len(), m.facilities.len());
        m.pf = (0..n * f)
            .map(|i| m.node_dist(m.clients[i / f.max(1)], m.facilities[i % f.max(1)]))
            .collect();
        m.pp = (0..n * n)
            .map(|i| m.node_dist(m.clients[i / n], m.clients[i % n]))
            .collect();
        Ok(m)
    }

    fn check_triangle(&self) -> Result<()> {
        let n = self.nodes;
        let scale = self.dist.iter().cloned().fold(1.0, f64::max);
        let violated = |a: usize, b: usize, c: usize| {
            self.node_dist(a, c) > self.node_dist(a, b) + self.node_dist(b, c) + METRIC_TOL * scale
        };
        let report = |a: usize, b: usize, c: usize| {
            EpasError::Metric(format!(
                "triangle inequality violated on triple ({a},{b},{c}): d({a},{c}) = {} > d({a},{b}) + d({b},{c}) = {}",
                self.node_dist(a, c),
                self.node_dist(a, b) + self.node_dist(b, c)
            ))
        };
        if n <= EXHAUSTIVE_TRIANGLE_NODES {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        if violated(a, b, c) {
                            return Err(report(a, b, c));
                        }
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7269_616e);
            for _ in 0..SAMPLED_TRIANGLES {
                let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                if violated(a, b, c) {
                    return Err(report(a, b, c));
                }
            }
        }
        Ok(())
    }

    fn check_separation(&self) -> Result<()> {
        if self.duplicates {
            return Ok(());
        }
        for (label, list) in [("clients", &self.clients), ("facilities", &self.facilities)] {
            for (i, &a) in list.iter().enumerate() {
                for (j, &b) in list.iter().enumerate().skip(i + 1) {
                    if self.node_dist(a, b) == 0.0 {
                        return Err(EpasError::Metric(format!(
                            "{label} {i} and {j} are at distance 0 but duplicates are not declared"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn allows_duplicates(&self) -> bool {
        self.duplicates
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n_facilities(&self) -> usize {
        self.facilities.len()
    }

    pub fn client_node(&self, p: usize) -> usize {
        self.clients[p]
    }

    pub fn facility_node(&self, f: usize) -> usize {
        self.facilities[f]
    }

    pub fn dim(&self) -> Option<usize> {
        self.coords.as_ref().map(|c| c.first().map_or(0, Vec::len))
    }

    pub fn node_coords(&self, node: usize) -> Option<&[f64]> {
        self.coords.as_ref().map(|c| c[node].as_slice())
    }

    pub fn client_coords(&self, p: usize) -> Option<&[f64]> {
        self.node_coords(self.clients[p])
    }

    #[inline]
    pub fn node_dist(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.nodes + b]
    }

    #[inline]
    pub fn client_dist(&self, p: usize, q: usize) -> f64 {
        self.pp[p * self.clients.len() + q]
    }

    #[inline]
    pub fn client_facility_dist(&self, p: usize, f: usize) -> f64 {
        self.pf[p * self.facilities.len() + f]
    }

    pub fn facility_dist(&self, f: usize, g: usize) -> f64 {
        self.node_dist(self.facilities[f], self.facilities[g])
    }

    /// Distance from client `p` to a center, which is either a facility or
    /// (in continuous mode) a coordinate vector.
    pub fn client_center_dist(&self, p: usize, c: &Center) -> f64 {
        match c {
            Center::Facility(f) => self.client_facility_dist(p, *f),
            Center::Point(x) => match self.client_coords(p) {
                Some(cp) => euclid(cp, x),
                None => f64::INFINITY,
            },
        }
    }

    /// Nodes over which aspect ratio and grid normalization are measured.
    pub fn declared_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.clients.iter().chain(self.facilities.iter()).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Smallest and largest positive distances over the declared nodes.
    pub fn distance_range(&self) -> Option<(f64, f64)> {
        let nodes = self.declared_nodes();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                let d = self.node_dist(a, b);
                if d > 0.0 {
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
        (hi > 0.0).then_some((lo, hi))
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ratio of the largest to the smallest positive distance.
pub fn aspect_ratio(m: &MetricSpace) -> Result<f64> {
    if m.declared_nodes().len() < 2 {
        return Err(EpasError::DegenerateMetric("fewer than two points".into()));
    }
    let (lo, hi) = m
        .distance_range()
        .ok_or_else(|| EpasError::DegenerateMetric("all distances are zero".into()))?;
    Ok(hi / lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceGrid {
    pub base: f64,
    pub delta: f64,
    pub values: Vec<f64>,
}

impl DistanceGrid {
    /// Smallest grid value `g` with `v <= g`, if any.
    pub fn round_up(&self, v: f64) -> Option<f64> {
        let i = self.values.partition_point(|&g| g < v);
        self.values.get(i).copied()
    }
}

/// Geometric grid `(1+delta)^j` for `0 <= j <= 2 log B / log(1+delta)`.
pub fn distance_grid(base: f64, delta: f64) -> Result<DistanceGrid> {
    if !(base > 1.0) || !base.is_finite() {
        return Err(EpasError::Contract(format!("grid base must exceed 1, got {base}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(EpasError::Contract(format!("grid delta must be positive, got {delta}")));
    }
    let bound = 2.0 * base.ln() / delta.ln_1p();
    let top = (bound + 1e-9).floor() as usize;
    let mut values = Vec::with_capacity(top + 1);
    let mut v = 1.0;
    for _ in 0..=top {
        values.push(v);
        v *= 1.0 + delta;
    }
    Ok(DistanceGrid { base, delta, values })
}

/// Clients of `universe` within `radius` of client `center` (inclusive).
pub fn ball_members(m: &MetricSpace, center: usize, radius: f64, universe: &[usize]) -> Vec<usize> {
    universe
        .iter()
        .copied()
        .filter(|&q| m.client_dist(center, q) <= radius)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> MetricSpace {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        MetricSpace::euclidean(pts, vec![], false).unwrap()
    }

    #[test]
    fn aspect_ratio_examples() {
        assert_eq!(aspect_ratio(&line(&[0.0, 1.0, 2.0])).unwrap(), 2.0);
        assert_eq!(aspect_ratio(&line(&[0.0, 1.0, 10.0])).unwrap(), 10.0);
        assert_eq!(aspect_ratio(&line(&[0.0, 5.0])).unwrap(), 1.0);
    }

    #[test]
    fn aspect_ratio_degenerate() {
        let m = MetricSpace::euclidean(vec![vec![0.0], vec![0.0]], vec![], true).unwrap();
        assert!(matches!(aspect_ratio(&m), Err(EpasError::DegenerateMetric(_))));
        assert!(aspect_ratio(&line(&[3.0])).is_err());
    }

    #[test]
    fn grid_examples() {
        assert_eq!(distance_grid(4.0, 1.0).unwrap().values, vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert_eq!(distance_grid(2.0, 1.0).unwrap().values, vec![1.0, 2.0, 4.0]);
        // 2 log(1 + 1e-9) / log 2 is far below 1, so only j = 0 qualifies.
        assert_eq!(distance_grid(1.0 + 1e-9, 1.0).unwrap().values, vec![1.0]);
        assert!(distance_grid(1.0, 1.0).is_err());
        assert!(distance_grid(2.0, 0.0).is_err());
    }

    #[test]
    fn ball_examples() {
        let m = line(&[0.0, 1.0, 2.0, 3.0]);
        let all = [0, 1, 2, 3];
        assert_eq!(ball_members(&m, 1, 1.5, &all), vec![0, 1, 2]);
        assert_eq!(ball_members(&m, 1, 0.0, &all), vec![1]);
        assert_eq!(ball_members(&m, 1, 0.0, &[0, 2]), Vec::<usize>::new());
        assert_eq!(ball_members(&m, 0, 3.0, &all), all.to_vec());
    }

    #[test]
    fn matrix_validation() {
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        let err = MetricSpace::from_matrix(asym, vec![0, 1], vec![0], false).unwrap_err();
        assert!(err.to_string().contains("symmetry"));
        let tri = vec![
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ];
        let err = MetricSpace::from_matrix(tri, vec![0, 1, 2], vec![0], false).unwrap_err();
        assert!(err.to_string().contains("triple"));
        let dup = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(MetricSpace::from_matrix(dup.clone(), vec![0, 1], vec![0], false).is_err());
        assert!(MetricSpace::from_matrix(dup, vec![0, 1], vec![0], true).is_ok());
    }

    #[test]
    fn graph_closure() {
        let m = MetricSpace::from_graph(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 10.0)], vec![0, 1, 2], vec![0], false)
            .unwrap();
        assert_eq!(m.client_dist(0, 2), 3.0);
        assert!(MetricSpace::from_graph(3, &[(0, 1, 1.0)], vec![0, 1, 2], vec![0], false).is_err());
    }

    #[test]
    fn client_facility_zero_allowed() {
        let m = MetricSpace::euclidean(vec![vec![0.0], vec![1.0]], vec![vec![0.0]], false).unwrap();
        assert_eq!(m.client_facility_dist(0, 0), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ball_monotone(xs in proptest::collection::vec(-50.0f64..50.0, 2..10), r1 in 0.0f64..40.0, extra in 0.0f64..40.0) {
                let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
                let m = MetricSpace::euclidean(pts, vec![], true).unwrap();
                let all: Vec<usize> = (0..xs.len()).collect();
                let small = ball_members(&m, 0, r1, &all);
                let big = ball_members(&m, 0, r1 + extra, &all);
                prop_assert!(small.iter().all(|p| big.contains(p)));
            }

            #[test]
            fn grid_covers(b in 1.01f64..1e4, delta in 0.01f64..1.0, t in 0.0f64..1.0) {
                let grid = distance_grid(b, delta).unwrap();
                let v = 1.0 + t * (b - 1.0);
                let g = grid.round_up(v).unwrap();
                prop_assert!(v <= g && g < v * (1.0 + delta));
                for w in grid.values.windows(2) {
                    prop_assert_eq!(w[1], w[0] * (1.0 + delta));
                }
                let last = *grid.values.last().unwrap();
                prop_assert!(last <= b * b * (1.0 + delta) && last >= b * b / (1.0 + delta) / (1.0 + 1e-9));
            }
        }
    }
}
