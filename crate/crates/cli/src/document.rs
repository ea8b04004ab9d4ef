//! Versioned JSON documents for instances and solutions.

use std::sync::Arc;

use epas_core::coreset::identity_coreset;
use epas_core::matroid::MatroidHandle;
use epas_core::metric::{MetricKind, MetricSpace};
use epas_core::model::{
    solution_cost, validate_assignment, validate_centers, Assignment, AssignmentEntry, Center, FairSpec, Instance, Solution,
    Variant,
};
use epas_core::solver::{BudgetFlags, SolveReport, SolveStats, SolveStatus, TraceRecord};
use epas_core::{EpasError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DOCUMENT_VERSION: u32 = 1;

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn version() -> u32 {
    DOCUMENT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    #[serde(default = "version")]
    pub version: u32,
    pub metric: MetricDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub k: usize,
    #[serde(default = "one")]
    pub z: f64,
    #[serde(default = "half")]
    pub epsilon: f64,
    #[serde(default)]
    pub variant: VariantDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricDoc {
    Euclidean(EuclideanMetric),
    ExplicitMatrix(MatrixMetric),
    GraphShortestPath(GraphMetric),
}

/// Without `facilities` centers may be placed anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EuclideanMetric {
    pub clients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facilities: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub duplicates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMetric {
    pub matrix: Vec<Vec<f64>>,
    pub clients: Vec<usize>,
    pub facilities: Vec<usize>,
    #[serde(default)]
    pub duplicates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMetric {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub clients: Vec<usize>,
    pub facilities: Vec<usize>,
    #[serde(default)]
    pub duplicates: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum VariantDoc {
    #[default]
    Vanilla,
    Capacitated(CapacitatedVariant),
    Matroid(MatroidVariant),
    FaultTolerant(FaultTolerantVariant),
    Fair(FairVariant),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitatedVariant {
    pub caps: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatroidVariant {
    pub matroid: MatroidDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultTolerantVariant {
    pub ell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairVariant {
    pub groups: Vec<Vec<usize>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MatroidDoc {
    Uniform(UniformMatroid),
    Partition(PartitionMatroid),
    Explicit(ExplicitMatroid),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformMatroid {
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionMatroid {
    pub parts: Vec<Vec<usize>>,
    pub limits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitMatroid {
    pub bases: Vec<Vec<usize>>,
}

fn join_path(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path.is_empty() || path == ".") {
        (_, true) => prefix.to_string(),
        (true, false) => path.to_string(),
        (false, false) if path.starts_with('[') => format!("{prefix}{path}"),
        (false, false) => format!("{prefix}.{path}"),
    }
}

/// Tagged blocks are buffered by serde, which hides the failing field. This
/// re-reads the block at `prefix` as its variant body to recover the path.
fn locate(root: &Value, prefix: &str) -> Option<EpasError> {
    let v = prefix.split('.').try_fold(root, |v, key| v.get(key))?;
    let obj = v.as_object()?;
    let tag = if prefix == "metric" { "kind" } else { "type" };
    let kind = obj.get(tag)?.as_str()?;
    let mut body = obj.clone();
    body.remove(tag);
    let body = Value::Object(body);
    fn inner<T: DeserializeOwned>(body: &Value, prefix: &str) -> Option<EpasError> {
        serde_path_to_error::deserialize::<_, T>(body).err().map(|e| EpasError::Schema {
            path: join_path(prefix, &e.path().to_string()),
            msg: e.into_inner().to_string(),
        })
    }
    match (prefix, kind) {
        ("metric", "euclidean") => inner::<EuclideanMetric>(&body, prefix),
        ("metric", "explicit-matrix") => inner::<MatrixMetric>(&body, prefix),
        ("metric", "graph-shortest-path") => inner::<GraphMetric>(&body, prefix),
        ("variant", "capacitated") => inner::<CapacitatedVariant>(&body, prefix),
        ("variant", "fault-tolerant") => inner::<FaultTolerantVariant>(&body, prefix),
        ("variant", "fair") => inner::<FairVariant>(&body, prefix),
        ("variant", "matroid") => locate(root, "variant.matroid").or_else(|| inner::<MatroidVariant>(&body, prefix)),
        ("variant.matroid", "uniform") => inner::<UniformMatroid>(&body, prefix),
        ("variant.matroid", "partition") => inner::<PartitionMatroid>(&body, prefix),
        ("variant.matroid", "explicit") => inner::<ExplicitMatroid>(&body, prefix),
        _ => None,
    }
}

/// Deserializes JSON text, reporting the path of the first schema error.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let root: Value = serde_json::from_str(text).map_err(|e| EpasError::Schema { path: String::new(), msg: e.to_string() })?;
    serde_path_to_error::deserialize(&root).map_err(|e| {
        let path = e.path().to_string();
        if matches!(path.as_str(), "metric" | "variant") {
            if let Some(found) = locate(&root, &path) {
                return found;
            }
        }
        EpasError::Schema { path, msg: e.into_inner().to_string() }
    })
}

/// Canonical text: sorted keys, shortest round-trip reals, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("documents serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("values serialize");
    s.push('\n');
    s
}

impl InstanceDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: InstanceDocument = from_json(text)?;
        if doc.version != DOCUMENT_VERSION {
            return Err(EpasError::Schema {
                path: "version".into(),
                msg: format!("unsupported document version {}", doc.version),
            });
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn metric(&self) -> Result<MetricSpace> {
        match &self.metric {
            MetricDoc::Euclidean(e) => match &e.facilities {
                Some(f) => MetricSpace::euclidean(e.clients.clone(), f.clone(), e.duplicates),
                None => MetricSpace::euclidean_continuous(e.clients.clone(), e.duplicates),
            },
            MetricDoc::ExplicitMatrix(m) => {
                MetricSpace::from_matrix(m.matrix.clone(), m.clients.clone(), m.facilities.clone(), m.duplicates)
            }
            MetricDoc::GraphShortestPath(g) => {
                MetricSpace::from_graph(g.nodes, &g.edges, g.clients.clone(), g.facilities.clone(), g.duplicates)
            }
        }
    }

    /// Builds and validates the instance.
    pub fn to_instance(&self) -> Result<Instance> {
        let metric = Arc::new(self.metric()?);
        let n = metric.n_clients();
        let nf = metric.n_facilities();
        let variant = match &self.variant {
            VariantDoc::Vanilla => Variant::Vanilla,
            VariantDoc::Capacitated(c) => Variant::Capacitated { caps: c.caps.clone() },
            VariantDoc::FaultTolerant(f) => Variant::FaultTolerant { ell: f.ell },
            VariantDoc::Matroid(m) => Variant::Matroid {
                matroid: match &m.matroid {
                    MatroidDoc::Uniform(u) => MatroidHandle::uniform(nf, u.rank),
                    MatroidDoc::Partition(p) => MatroidHandle::partition(nf, p.parts.clone(), p.limits.clone())?,
                    MatroidDoc::Explicit(e) => MatroidHandle::explicit(nf, e.bases.clone())?,
                },
            },
            VariantDoc::Fair(f) => Variant::Fair(FairSpec::new(f.groups.clone(), f.alpha.clone(), f.beta.clone(), n)?),
        };
        Instance::new(metric, self.weights.clone(), self.k, self.z, self.epsilon, variant)
    }
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    InstanceDocument::parse(text)?.to_instance()
}

/// Document describing an instance already in memory. Matrix and graph
/// metrics are written back as the explicit distance matrix.
pub fn instance_document(instance: &Instance) -> InstanceDocument {
    let m = &instance.metric;
    let metric = match (m.kind(), m.dim()) {
        (MetricKind::Euclidean, Some(_)) => MetricDoc::Euclidean(EuclideanMetric {
            clients: (0..m.n_clients()).map(|p| m.client_coords(p).unwrap_or(&[]).to_vec()).collect(),
            facilities: (!m.is_continuous()).then(|| {
                (0..m.n_facilities())
                    .map(|f| m.node_coords(m.facility_node(f)).unwrap_or(&[]).to_vec())
                    .collect()
            }),
            duplicates: m.allows_duplicates(),
        }),
        _ => {
            let nodes = m.node_count();
            MetricDoc::ExplicitMatrix(MatrixMetric {
                matrix: (0..nodes).map(|a| (0..nodes).map(|b| m.node_dist(a, b)).collect()).collect(),
                clients: (0..m.n_clients()).map(|p| m.client_node(p)).collect(),
                facilities: (0..m.n_facilities()).map(|f| m.facility_node(f)).collect(),
                duplicates: m.allows_duplicates(),
            })
        }
    };
    let variant = match &instance.variant {
        Variant::Vanilla => VariantDoc::Vanilla,
        Variant::Capacitated { caps } => VariantDoc::Capacitated(CapacitatedVariant { caps: caps.clone() }),
        Variant::FaultTolerant { ell } => VariantDoc::FaultTolerant(FaultTolerantVariant { ell: *ell }),
        Variant::Fair(f) => {
            VariantDoc::Fair(FairVariant { groups: f.groups.clone(), alpha: f.alpha.clone(), beta: f.beta.clone() })
        }
        Variant::Matroid { matroid } => VariantDoc::Matroid(MatroidVariant { matroid: matroid_doc(matroid) }),
    };
    InstanceDocument {
        version: DOCUMENT_VERSION,
        metric,
        weights: instance.weights.iter().any(|&w| w != 1.0).then(|| instance.weights.clone()),
        k: instance.k,
        z: instance.z,
        epsilon: instance.epsilon,
        variant,
    }
}

fn matroid_doc(m: &MatroidHandle) -> MatroidDoc {
    match m {
        MatroidHandle::Uniform { rank, .. } => MatroidDoc::Uniform(UniformMatroid { rank: *rank }),
        MatroidHandle::Partition { parts, limits, .. } => {
            MatroidDoc::Partition(PartitionMatroid { parts: parts.clone(), limits: limits.clone() })
        }
        MatroidHandle::Explicit { bases, .. } => MatroidDoc::Explicit(ExplicitMatroid { bases: bases.clone() }),
        MatroidHandle::Truncated { inner, k } => {
            let ground = inner.ground_size();
            let t = epas_core::matroid::truncate(inner, *k);
            let sets: Vec<Vec<usize>> = subsets_of_size(ground, *k).into_iter().filter(|s| t.is_independent(s).unwrap_or(false)).collect();
            MatroidDoc::Explicit(ExplicitMatroid { bases: sets })
        }
    }
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CenterDoc {
    Facility(usize),
    Point(Vec<f64>),
}

impl From<&Center> for CenterDoc {
    fn from(c: &Center) -> Self {
        match c {
            Center::Facility(f) => CenterDoc::Facility(*f),
            Center::Point(x) => CenterDoc::Point(x.clone()),
        }
    }
}

impl From<&CenterDoc> for Center {
    fn from(c: &CenterDoc) -> Self {
        match c {
            CenterDoc::Facility(f) => Center::Facility(*f),
            CenterDoc::Point(x) => Center::Point(x.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDocument {
    #[serde(default = "version")]
    pub version: u32,
    pub status: SolveStatus,
    pub centers: Vec<CenterDoc>,
    /// Sparse `(point, slot, weight)` triples.
    pub assignment: Vec<(usize, usize, f64)>,
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_cost: Option<f64>,
    /// `cost / oracle_cost`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
    pub budgets_hit: BudgetFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SolveStats>,
    #[serde(default)]
    pub unproven_bottom: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRecord>>,
}

impl SolutionDocument {
    pub fn from_solution(status: SolveStatus, solution: Option<&Solution>) -> Self {
        SolutionDocument {
            version: DOCUMENT_VERSION,
            status,
            centers: solution.map(|s| s.centers.iter().map(CenterDoc::from).collect()).unwrap_or_default(),
            assignment: solution
                .map(|s| s.assignment.entries().iter().map(|e| (e.point, e.slot, e.weight)).collect())
                .unwrap_or_default(),
            cost: solution.map(|s| s.cost),
            guess: None,
            oracle_cost: None,
            oracle_gap: None,
            budgets_hit: BudgetFlags::default(),
            stats: None,
            unproven_bottom: false,
            certificate: None,
            trace: None,
        }
    }

    pub fn from_report(report: &SolveReport, with_trace: bool) -> Self {
        let mut doc = Self::from_solution(report.status, report.solution.as_ref());
        doc.guess = report.guess;
        doc.budgets_hit = report.budgets_hit;
        doc.stats = Some(report.stats.clone());
        doc.unproven_bottom = report.unproven_bottom;
        doc.certificate = report.certificate.clone();
        doc.trace = with_trace.then(|| report.trace.clone());
        doc
    }

    pub fn with_oracle(mut self, oracle_cost: Option<f64>) -> Self {
        self.oracle_cost = oracle_cost;
        self.oracle_gap = match (self.cost, oracle_cost) {
            (Some(c), Some(o)) if o > 0.0 => Some(c / o),
            (Some(c), Some(_)) => Some(if c == 0.0 { 1.0 } else { f64::INFINITY }),
            _ => None,
        };
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        from_json(text)
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn centers(&self) -> Vec<Center> {
        self.centers.iter().map(Center::from).collect()
    }

    pub fn assignment(&self) -> Assignment {
        Assignment::from_entries(
            self.assignment.iter().map(|&(point, slot, weight)| AssignmentEntry { point, slot, weight }).collect(),
        )
    }
}

/// Independent re-check of a solution document against its instance:
/// centers, assignment feasibility and the recomputed cost. Returns the
/// list of problems found.
pub fn revalidate_solution(instance: &Instance, doc: &SolutionDocument) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let Some(cost) = doc.cost else {
        if !doc.centers.is_empty() || !doc.assignment.is_empty() {
            problems.push("centers or assignment present without a cost".into());
        }
        return Ok(problems);
    };
    let centers = doc.centers();
    if centers.len() != instance.k {
        problems.push(format!("{} centers for k = {}", centers.len(), instance.k));
        return Ok(problems);
    }
    if let Err(v) = validate_centers(instance, &centers) {
        problems.extend(v.into_iter().map(|v| v.message));
    }
    let y = identity_coreset(instance);
    let f = doc.assignment();
    if let Err(v) = validate_assignment(instance, &y, &centers, &f) {
        problems.extend(v.into_iter().map(|v| v.message));
    }
    let recomputed = solution_cost(instance, &y, &centers, &f)?;
    if (recomputed - cost).abs() > 1e-9 * recomputed.abs().max(cost.abs()) {
        problems.push(format!("stated cost {cost} differs from recomputed {recomputed}"));
    }
    Ok(problems)
}
