//! Seeded instance families.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use epas_core::metric::MetricSpace;
use epas_core::{EpasError, Result};

use crate::document::{
    CapacitatedVariant, EuclideanMetric, FairVariant, FaultTolerantVariant, GraphMetric, InstanceDocument, MatrixMetric, MatroidDoc,
    MatroidVariant, MetricDoc, PartitionMatroid, VariantDoc, DOCUMENT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    EuclideanUniform,
    ClusteredGaussian,
    RandomMetric,
    GridGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Vanilla,
    Capacitated,
    Matroid,
    FaultTolerant,
    Fair,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] =
        [VariantKind::Vanilla, VariantKind::Capacitated, VariantKind::Matroid, VariantKind::FaultTolerant, VariantKind::Fair];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Vanilla => "vanilla",
            VariantKind::Capacitated => "capacitated",
            VariantKind::Matroid => "matroid",
            VariantKind::FaultTolerant => "fault-tolerant",
            VariantKind::Fair => "fair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub family: Family,
    pub n: usize,
    pub f: usize,
    pub k: usize,
    pub z: f64,
    pub epsilon: f64,
    pub variant: VariantKind,
    pub seed: u64,
    /// Euclidean families only: no facility list, centers anywhere.
    #[serde(default)]
    pub continuous: bool,
}

impl GenerateSpec {
    pub fn new(family: Family, n: usize, f: usize, k: usize, variant: VariantKind, seed: u64) -> Self {
        GenerateSpec { family, n, f, k, z: 1.0, epsilon: 0.5, variant, seed, continuous: false }
    }
}

const SIDE: f64 = 100.0;

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn uniform_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![round3(rng.random_range(0.0..SIDE)), round3(rng.random_range(0.0..SIDE))]).collect()
}

fn distinct(points: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for mut p in points {
        while out.iter().any(|q| q == &p) {
            p = vec![round3(p[0] + rng.random_range(0.1..1.0)), round3(p[1] + rng.random_range(0.1..1.0))];
        }
        out.push(p);
    }
    out
}

fn metric_doc(spec: &GenerateSpec, rng: &mut ChaCha8Rng) -> Result<MetricDoc> {
    let (n, f) = (spec.n, spec.f);
    Ok(match spec.family {
        Family::EuclideanUniform | Family::ClusteredGaussian => {
            let (clients, facilities) = if spec.family == Family::EuclideanUniform {
                (uniform_points(rng, n), uniform_points(rng, f))
            } else {
                let centers = uniform_points(rng, spec.k.max(1));
                let noise = Normal::new(0.0, 3.0).expect("valid deviation");
                let around = |c: &Vec<f64>, rng: &mut ChaCha8Rng| {
                    vec![round3(c[0] + noise.sample(rng)), round3(c[1] + noise.sample(rng))]
                };
                let clients: Vec<Vec<f64>> = (0..n).map(|i| around(&centers[i % centers.len()], rng)).collect();
                let near = f.div_ceil(2);
                let mut facilities: Vec<Vec<f64>> = (0..near).map(|i| around(&centers[i % centers.len()], rng)).collect();
                facilities.extend(uniform_points(rng, f - near));
                (clients, facilities)
            };
            let clients = distinct(clients, rng);
            let facilities = distinct(facilities, rng);
            MetricDoc::Euclidean(EuclideanMetric { clients, facilities: (!spec.continuous).then_some(facilities), duplicates: false })
        }
        Family::RandomMetric => {
            let nodes = n + f;
            let mut edges = Vec::new();
            for a in 0..nodes {
                for b in a + 1..nodes {
                    edges.push((a, b, round3(rng.random_range(1.0..10.0))));
                }
            }
            let closed = MetricSpace::from_graph(nodes, &edges, (0..n).collect(), (n..nodes).collect(), false)?;
            MetricDoc::ExplicitMatrix(MatrixMetric {
                matrix: (0..nodes).map(|a| (0..nodes).map(|b| closed.node_dist(a, b)).collect()).collect(),
                clients: (0..n).collect(),
                facilities: (n..nodes).collect(),
                duplicates: false,
            })
        }
        Family::GridGraph => {
            let side = ((n.max(f) as f64).sqrt().ceil() as usize).max(2) + 1;
            let nodes = side * side;
            let mut edges = Vec::new();
            for r in 0..side {
                for c in 0..side {
                    let v = r * side + c;
                    if c + 1 < side {
                        edges.push((v, v + 1, rng.random_range(1..=3) as f64));
                    }
                    if r + 1 < side {
                        edges.push((v, v + side, rng.random_range(1..=3) as f64));
                    }
                }
            }
            let mut all: Vec<usize> = (0..nodes).collect();
            all.shuffle(rng);
            let mut clients = all[..n].to_vec();
            clients.sort_unstable();
            all.shuffle(rng);
            let mut facilities = all[..f].to_vec();
            facilities.sort_unstable();
            MetricDoc::GraphShortestPath(GraphMetric { nodes, edges, clients, facilities, duplicates: false })
        }
    })
}

fn variant_doc(spec: &GenerateSpec, rng: &mut ChaCha8Rng) -> VariantDoc {
    let (n, f, k) = (spec.n, spec.f, spec.k);
    match spec.variant {
        VariantKind::Vanilla => VariantDoc::Vanilla,
        VariantKind::Capacitated => {
            let slots = if spec.continuous { 1 } else { f };
            let hi = ((3 * n).div_ceil(2 * k)).max(1) as u64;
            let mut caps: Vec<u64> = (0..slots).map(|_| rng.random_range(1..=hi)).collect();
            if spec.continuous {
                caps[0] = caps[0].max(n.div_ceil(k) as u64);
            } else {
                loop {
                    let mut order: Vec<usize> = (0..f).collect();
                    order.sort_by(|&a, &b| caps[b].cmp(&caps[a]).then(a.cmp(&b)));
                    let top: u64 = order[..k].iter().map(|&i| caps[i]).sum();
                    if top >= n as u64 {
                        break;
                    }
                    caps[order[rng.random_range(0..k)]] += 1;
                }
            }
            VariantDoc::Capacitated(CapacitatedVariant { caps })
        }
        VariantKind::Matroid => {
            let parts_n = rng.random_range(2..=3usize).min(f);
            let mut ids: Vec<usize> = (0..f).collect();
            ids.shuffle(rng);
            let mut parts = vec![Vec::new(); parts_n];
            for (i, e) in ids.into_iter().enumerate() {
                parts[i % parts_n].push(e);
            }
            for p in &mut parts {
                p.sort_unstable();
            }
            let mut limits: Vec<usize> = parts.iter().map(|p| rng.random_range(1..=p.len().min(k))).collect();
            while limits.iter().sum::<usize>() < k {
                let i = rng.random_range(0..parts_n);
                if limits[i] < parts[i].len() {
                    limits[i] += 1;
                }
            }
            VariantDoc::Matroid(MatroidVariant { matroid: MatroidDoc::Partition(PartitionMatroid { parts, limits }) })
        }
        VariantKind::FaultTolerant => VariantDoc::FaultTolerant(FaultTolerantVariant { ell: rng.random_range(1..=k) }),
        VariantKind::Fair => {
            let mut side: Vec<usize> = (0..n).map(|p| p % 2).collect();
            side.shuffle(rng);
            let groups: Vec<Vec<usize>> = (0..2).map(|g| (0..n).filter(|&p| side[p] == g).collect()).collect();
            let slack = rng.random_range(0.1..0.4);
            let share = |g: &Vec<usize>| g.len() as f64 / n as f64;
            let alpha = groups.iter().map(|g| round3((share(g) - slack).max(0.0))).collect();
            let beta = groups.iter().map(|g| round3((share(g) + slack).min(1.0))).collect();
            VariantDoc::Fair(FairVariant { groups, alpha, beta })
        }
    }
}

/// Deterministic in `spec`.
pub fn generate_instance(spec: &GenerateSpec) -> Result<InstanceDocument> {
    if spec.n == 0 || spec.k == 0 || (!spec.continuous && spec.f < spec.k) {
        return Err(EpasError::Contract(format!(
            "need n > 0 and k <= f, got n = {}, f = {}, k = {}",
            spec.n, spec.f, spec.k
        )));
    }
    if spec.continuous && !matches!(spec.family, Family::EuclideanUniform | Family::ClusteredGaussian) {
        return Err(EpasError::Contract("continuous mode needs a Euclidean family".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let metric = metric_doc(spec, &mut rng)?;
    let variant = variant_doc(spec, &mut rng);
    Ok(InstanceDocument {
        version: DOCUMENT_VERSION,
        metric,
        weights: None,
        k: spec.k,
        z: spec.z,
        epsilon: spec.epsilon,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_document() {
        for family in [Family::EuclideanUniform, Family::ClusteredGaussian, Family::RandomMetric, Family::GridGraph] {
            for variant in VariantKind::ALL {
                let spec = GenerateSpec::new(family, 9, 6, 3, variant, 17);
                let a = generate_instance(&spec).unwrap();
                assert_eq!(a, generate_instance(&spec).unwrap());
                a.to_instance().unwrap();
            }
        }
    }
}
