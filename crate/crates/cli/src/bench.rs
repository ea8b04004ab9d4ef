//! Seeded benchmark suite: solver against the exact oracle.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use epas_core::oracle::{brute_force_opt, OracleLimits};
use epas_core::solver::{epas_solve, SolveStatus, SolverConfig};
use epas_core::Result;

use crate::generate::{generate_instance, Family, GenerateSpec, VariantKind};

pub const FAMILIES: [Family; 4] = [Family::EuclideanUniform, Family::ClusteredGaussian, Family::RandomMetric, Family::GridGraph];
pub const EPSILONS: [f64; 2] = [0.2, 0.5];
pub const ZS: [f64; 2] = [1.0, 2.0];

/// `count` instances cycling through variants, families, ε and z, with
/// `n ≤ 12`, `|F| ≤ 8`, `k ≤ 3` drawn from `seed`.
pub fn bench_suite(seed: u64, count: usize) -> Vec<GenerateSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let variant = VariantKind::ALL[i % 5];
            let family = FAMILIES[(i / 5) % 4];
            let epsilon = EPSILONS[(i / 20) % 2];
            let z = ZS[(i / 40) % 2];
            let k = rng.random_range(1..=3usize);
            let n = rng.random_range(5..=12usize);
            let f = rng.random_range(k.max(3)..=8usize);
            GenerateSpec { family, n, f, k, z, epsilon, variant, seed: rng.random(), continuous: false }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub id: usize,
    pub family: Family,
    pub variant: VariantKind,
    pub n: usize,
    pub f: usize,
    pub k: usize,
    pub z: f64,
    pub epsilon: f64,
    pub status: SolveStatus,
    pub epas_cost: Option<f64>,
    pub oracle_cost: Option<f64>,
    pub ratio: Option<f64>,
    pub nodes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub with_oracle: bool,
    pub timing: bool,
}

/// Solver configuration used by the suite for an instance.
pub fn bench_config(spec: &GenerateSpec) -> SolverConfig {
    let mut cfg = SolverConfig::new(spec.epsilon);
    cfg.seed = spec.seed;
    cfg
}

pub fn run_one(id: usize, spec: &GenerateSpec, opts: BenchOptions) -> Result<BenchRow> {
    let instance = generate_instance(spec)?.to_instance()?;
    let start = Instant::now();
    let report = epas_solve(&instance, &bench_config(spec))?;
    let wall = start.elapsed().as_secs_f64() * 1000.0;
    let epas_cost = report.solution.as_ref().map(|s| s.cost);
    let oracle_cost = if opts.with_oracle {
        brute_force_opt(&instance, &OracleLimits::default())?.map(|s| s.cost)
    } else {
        None
    };
    let ratio = match (epas_cost, oracle_cost) {
        (Some(c), Some(o)) if o > 0.0 => Some(c / o),
        (Some(c), Some(_)) => Some(if c == 0.0 { 1.0 } else { f64::INFINITY }),
        _ => None,
    };
    Ok(BenchRow {
        id,
        family: spec.family,
        variant: spec.variant,
        n: spec.n,
        f: spec.f,
        k: spec.k,
        z: spec.z,
        epsilon: spec.epsilon,
        status: report.status,
        epas_cost,
        oracle_cost,
        ratio,
        nodes: report.stats.nodes,
        wall_ms: opts.timing.then_some(wall),
    })
}

/// Rows in suite order; instances run in parallel.
pub fn run_bench(specs: &[GenerateSpec], opts: BenchOptions) -> Result<Vec<BenchRow>> {
    specs.par_iter().enumerate().map(|(i, s)| run_one(i, s, opts)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let timing = rows.iter().any(|r| r.wall_ms.is_some());
    let mut out = String::from("id,family,variant,n,f,k,z,epsilon,status,epas_cost,oracle_cost,ratio,nodes");
    if timing {
        out.push_str(",wall_ms");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            tag(&r.family),
            tag(&r.variant),
            r.n,
            r.f,
            r.k,
            r.z,
            r.epsilon,
            tag(&r.status),
            opt(r.epas_cost),
            opt(r.oracle_cost),
            opt(r.ratio),
            r.nodes
        ));
        if timing {
            out.push_str(&format!(",{}", opt(r.wall_ms)));
        }
        out.push('\n');
    }
    out
}

pub fn to_json(rows: &[BenchRow]) -> String {
    crate::document::to_canonical_json(&rows)
}
