//! The approximation scheme: coreset, leader and radius guessing, the
//! refinement recursion, color coding and the guess loop over OPT.

mod search;
pub mod witness;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::exact_assign;
use crate::ballint::Request;
use crate::coreset::{identity_coreset, ring_sampling_coreset, WeightedPointSet};
use crate::error::{EpasError, Result};
use crate::matroid::IndependenceOracle;
use crate::model::{power_distance, Center, Instance, Solution, Variant};

pub use search::{AscendingTuples, Branch, Modification, NodeEval, SearchContext, SearchNode};

/// Default ball-radius constant `c` in `B_i = ball(p'_i, c·r'_i/ε)`.
pub const DEFAULT_BALL_CONSTANT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuessMode {
    Enumerate,
    Provided(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoresetChoice {
    Identity,
    RingSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub ball_constant: f64,
    /// Ball-intersection slack; `None` means `epsilon / 2`.
    pub eta: Option<f64>,
    /// `None` means `ceil(20·k·ln(1/ε)/ε · lambda_hat)`.
    pub depth_cap: Option<usize>,
    pub lambda_hat: f64,
    pub branch_mode: BranchMode,
    pub guess_mode: GuessMode,
    /// Maximum number of root tuples visited per coloring and phase.
    pub leader_budget: Option<u64>,
    /// Maximum number of search nodes over the whole run.
    pub node_budget: Option<u64>,
    pub seed: u64,
    /// `None` means `ceil(3·e^k)`.
    pub color_retries: Option<usize>,
    pub coreset: CoresetChoice,
    /// Random walks started from every root in randomized mode.
    pub walks_per_root: usize,
    pub trace: bool,
}

impl SolverConfig {
    pub fn new(epsilon: f64) -> Self {
        SolverConfig {
            epsilon,
            ball_constant: DEFAULT_BALL_CONSTANT,
            eta: None,
            depth_cap: None,
            lambda_hat: 2.0,
            branch_mode: BranchMode::Deterministic,
            guess_mode: GuessMode::Enumerate,
            leader_budget: None,
            node_budget: None,
            seed: 0,
            color_retries: None,
            coreset: CoresetChoice::RingSampling,
            walks_per_root: 4,
            trace: false,
        }
    }

    pub fn for_instance(instance: &Instance) -> Self {
        Self::new(instance.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(EpasError::Contract(format!("epsilon must lie in (0, 1/2], got {}", self.epsilon)));
        }
        if self.depth_cap == Some(0) {
            return Err(EpasError::Contract("depth cap must be at least 1".into()));
        }
        if !(self.ball_constant > 0.0) {
            return Err(EpasError::Contract("ball constant must be positive".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0) {
                return Err(EpasError::Contract(format!("eta must be nonnegative, got {eta}")));
            }
        }
        if let GuessMode::Provided(g) = self.guess_mode {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(EpasError::Contract(format!("provided guess must be finite and nonnegative, got {g}")));
            }
        }
        Ok(())
    }

    pub fn effective_eta(&self) -> f64 {
        self.eta.unwrap_or(self.epsilon / 2.0)
    }

    pub fn effective_depth_cap(&self, k: usize) -> usize {
        self.depth_cap.unwrap_or_else(|| default_depth_cap(k, self.epsilon, self.lambda_hat))
    }

    pub fn effective_color_retries(&self, k: usize) -> usize {
        self.color_retries.unwrap_or_else(|| (3.0 * (k as f64).exp()).ceil() as usize)
    }
}

/// Relative tolerance of cost comparisons in the search.
pub const COST_RTOL: f64 = 1e-7;

/// Largest accepted cost at guess `g`: `(1+5ε)·g` up to [`COST_RTOL`].
pub fn acceptance_threshold(g: f64, epsilon: f64) -> f64 {
    (1.0 + 5.0 * epsilon) * g * (1.0 + COST_RTOL)
}

pub fn default_depth_cap(k: usize, epsilon: f64, lambda_hat: f64) -> usize {
    ((20.0 * k as f64 * (1.0 / epsilon).ln() / epsilon * lambda_hat).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Solved,
    BudgetExhausted,
    Bottom,
    Infeasible,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub roots: u64,
    pub memo_hits: u64,
    pub pruned: u64,
    pub cost_evaluations: u64,
    pub max_depth: usize,
    pub colorings: usize,
    pub g_candidates: usize,
    pub coreset_size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetFlags {
    pub depth: bool,
    pub leader: bool,
    pub nodes: bool,
}

impl BudgetFlags {
    pub fn any(&self) -> bool {
        self.depth || self.leader || self.nodes
    }
}

/// One visited node of the run at the accepted guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub depth: usize,
    pub slot: Option<usize>,
    pub request: Option<Request>,
    pub wcost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solution: Option<Solution>,
    /// The accepted guess `G`.
    pub guess: Option<f64>,
    pub stats: SolveStats,
    pub budgets_hit: BudgetFlags,
    /// Continuous mode only: some ball intersection failed without a
    /// disjointness certificate.
    pub unproven_bottom: bool,
    pub certificate: Option<String>,
    pub trace: Vec<TraceRecord>,
}

/// Receives every evaluated search node.
pub trait SearchObserver {
    fn on_node(&mut self, _ctx: &SearchContext, _node: &SearchNode, _eval: &NodeEval) {}
}

pub struct NoObserver;

impl SearchObserver for NoObserver {}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform random coloring of `0..facilities` with `k` colors.
pub fn color_code(facilities: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = vec![Vec::new(); k];
    for f in 0..facilities {
        classes[rng.random_range(0..k)].push(f);
    }
    classes
}

fn vanilla_cost(instance: &Instance, y: &WeightedPointSet, centers: &[Center]) -> f64 {
    let m = &instance.metric;
    y.points
        .iter()
        .zip(&y.weights)
        .map(|(&p, &w)| {
            let d = centers.iter().map(|c| m.client_center_dist(p, c)).fold(f64::INFINITY, f64::min);
            w * power_distance(d, instance.z)
        })
        .sum()
}

/// A feasible center tuple built greedily, or the reason none exists.
fn greedy_centers(instance: &Instance, y: &WeightedPointSet) -> Result<Vec<Center>> {
    let m = &instance.metric;
    let k = instance.k;
    let candidates: Vec<Center> = if m.is_continuous() {
        y.points.iter().map(|&p| Center::Point(m.client_coords(p).unwrap_or(&[]).to_vec())).collect()
    } else {
        (0..m.n_facilities()).map(Center::Facility).collect()
    };
    if let Variant::Capacitated { caps } = &instance.variant {
        let total = y.total_weight();
        let chosen: Vec<Center> = if m.is_continuous() {
            let mut v: Vec<Center> = candidates.iter().take(k).cloned().collect();
            while v.len() < k {
                v.push(candidates[0].clone());
            }
            v
        } else {
            let mut order: Vec<usize> = (0..caps.len()).collect();
            order.sort_by(|&a, &b| caps[b].cmp(&caps[a]).then(a.cmp(&b)));
            order.truncate(k);
            order.sort_unstable();
            order.into_iter().map(Center::Facility).collect()
        };
        let cap: u64 = chosen.iter().map(|c| instance.capacity_of(c).unwrap_or(0)).sum();
        if (cap as f64) < total {
            return Err(EpasError::Infeasible(format!(
                "capacity: the {k} largest capacities sum to {cap} < total weight {total}"
            )));
        }
        return Ok(chosen);
    }
    let mut chosen: Vec<Center> = Vec::with_capacity(k);
    let mut used: Vec<usize> = Vec::new();
    while chosen.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if used.contains(&i) {
                continue;
            }
            if let Variant::Matroid { matroid } = &instance.variant {
                let mut s = used.clone();
                s.push(i);
                s.sort_unstable();
                if !matroid.independent(&s) {
                    continue;
                }
            }
            let mut trial = chosen.clone();
            trial.push(c.clone());
            let cost = vanilla_cost(instance, y, &trial);
            if best.is_none_or(|(b, _)| cost < b) {
                best = Some((cost, i));
            }
        }
        match best {
            Some((_, i)) => {
                used.push(i);
                chosen.push(candidates[i].clone());
            }
            None if m.is_continuous() => chosen.push(candidates[0].clone()),
            None => {
                return Err(EpasError::Infeasible(format!(
                    "matroid-rank: no independent set of {k} facilities exists"
                )))
            }
        }
    }
    if let Variant::Matroid { .. } = instance.variant {
        let mut idx: Vec<usize> = chosen.iter().filter_map(Center::facility).collect();
        idx.sort_unstable();
        chosen = idx.into_iter().map(Center::Facility).collect();
    }
    Ok(chosen)
}

/// Ascending guesses for OPT on the weighted point set. Some candidate lies
/// in `[OPT, (1+ε)·OPT]`: the list starts at a lower bound on any positive
/// cost and runs geometrically past the cost of a feasible greedy solution.
pub fn guess_opt_values(instance: &Instance, y: &WeightedPointSet, epsilon: f64) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(EpasError::Contract("empty point set".into()));
    }
    let m = &instance.metric;
    let greedy = greedy_centers(instance, y)?;
    let upper = exact_assign(instance, y, &greedy)?
        .cost()
        .ok_or_else(|| EpasError::Infeasible("fairness: no assignment meets the fairness bounds".into()))?;
    let mut lower = f64::INFINITY;
    let mut zero_possible = true;
    for (&p, &w) in y.points.iter().zip(&y.weights) {
        let dists: Vec<f64> = if m.is_continuous() {
            y.points.iter().map(|&q| m.client_dist(p, q)).collect()
        } else {
            (0..m.n_facilities()).map(|f| m.client_facility_dist(p, f)).collect()
        };
        if !m.is_continuous() && dists.iter().all(|&d| d > 0.0) {
            zero_possible = false;
        }
        for d in dists {
            if d > 0.0 {
                lower = lower.min(w * power_distance(d, instance.z));
            }
        }
    }
    let mut out = Vec::new();
    if zero_possible || upper == 0.0 {
        out.push(0.0);
    }
    if upper > 0.0 && lower.is_finite() {
        let mut g = lower;
        loop {
            out.push(g);
            if g >= upper {
                break;
            }
            g *= 1.0 + epsilon;
        }
    }
    Ok(out)
}

struct Explorer<'o> {
    thresholds: Vec<f64>,
    best_bucket: usize,
    best_seen: Option<(f64, Vec<Center>)>,
    memo: HashMap<(Vec<fixedbitset::FixedBitSet>, Vec<fixedbitset::FixedBitSet>, Vec<u64>), usize>,
    depth_cap: usize,
    node_budget: u64,
    stats: SolveStats,
    budgets: BudgetFlags,
    unproven: bool,
    stop: bool,
    observer: &'o mut dyn SearchObserver,
}

impl Explorer<'_> {
    /// Largest cost that could still improve the best bucket.
    fn limit(&self) -> f64 {
        if self.best_bucket == 0 {
            f64::NEG_INFINITY
        } else {
            self.thresholds[self.best_bucket - 1]
        }
    }

    fn count_node(&mut self, depth: usize) -> bool {
        self.stats.nodes += 1;
        self.stats.max_depth = self.stats.max_depth.max(depth);
        if self.stats.nodes > self.node_budget {
            self.budgets.nodes = true;
            self.stop = true;
        }
        !self.stop
    }

    fn record(&mut self, ctx: &SearchContext, node: &SearchNode, eval: &NodeEval) {
        self.observer.on_node(ctx, node, eval);
        match eval {
            NodeEval::Bottom { unproven } => self.unproven |= *unproven,
            NodeEval::Evaluated { centers, cost } => {
                if self.best_seen.as_ref().is_none_or(|(b, _)| cost < b) {
                    self.best_seen = Some((*cost, centers.clone()));
                }
                let bucket = self.thresholds.partition_point(|&t| t < *cost);
                if bucket < self.best_bucket {
                    self.best_bucket = bucket;
                    if bucket == 0 {
                        self.stop = true;
                    }
                }
            }
            NodeEval::Unassignable { .. } => {}
        }
    }

    /// Full-tree search for the smallest threshold bucket any node reaches.
    fn explore(&mut self, ctx: &mut SearchContext, node: &SearchNode) -> Result<()> {
        if self.stop || !self.count_node(node.depth) {
            return Ok(());
        }
        if ctx.lower_bound(node) > self.limit() {
            self.stats.pruned += 1;
            return Ok(());
        }
        let remaining = self.depth_cap - node.depth;
        let key = ctx.memo_key(node);
        if let Some(k) = &key {
            if self.memo.get(k).is_some_and(|&r| r >= remaining) {
                self.stats.memo_hits += 1;
                return Ok(());
            }
        }
        let eval = ctx.evaluate(node)?;
        self.record(ctx, node, &eval);
        if let NodeEval::Evaluated { centers, .. } = &eval {
            let branches = ctx.branches(node, centers);
            if remaining == 0 {
                if !branches.is_empty() {
                    self.budgets.depth = true;
                }
            } else {
                for b in branches {
                    if self.stop {
                        return Ok(());
                    }
                    let child = ctx.child(node, centers, b);
                    self.explore(ctx, &child)?;
                }
            }
        }
        if !self.stop {
            if let Some(k) = key {
                self.memo.insert(k, remaining);
            }
        }
        Ok(())
    }

    /// Refinement at a fixed threshold: the first node in search order
    /// whose cost is within `threshold`.
    fn first_success(
        &mut self,
        ctx: &mut SearchContext,
        node: &SearchNode,
        threshold: f64,
        trace: &mut Option<Vec<TraceRecord>>,
    ) -> Result<Option<(Vec<Center>, f64)>> {
        if self.stop || !self.count_node(node.depth) {
            return Ok(None);
        }
        if ctx.lower_bound(node) > threshold {
            self.stats.pruned += 1;
            return Ok(None);
        }
        let remaining = self.depth_cap - node.depth;
        let key = ctx.memo_key(node);
        if let Some(k) = &key {
            if self.memo.get(k).is_some_and(|&r| r >= remaining) {
                self.stats.memo_hits += 1;
                return Ok(None);
            }
        }
        let eval = ctx.evaluate(node)?;
        self.observer.on_node(ctx, node, &eval);
        if let Some(t) = trace {
            let last = node.history.last();
            t.push(TraceRecord {
                depth: node.depth,
                slot: last.map(|m| m.slot),
                request: last.map(|m| m.request),
                wcost: eval.cost(),
            });
        }
        if let NodeEval::Evaluated { centers, cost } = &eval {
            if *cost <= threshold {
                return Ok(Some((centers.clone(), *cost)));
            }
            if remaining == 0 {
                self.budgets.depth = true;
            } else {
                for b in ctx.branches(node, centers) {
                    let child = ctx.child(node, centers, b);
                    if let Some(found) = self.first_success(ctx, &child, threshold, trace)? {
                        return Ok(Some(found));
                    }
                    if self.stop {
                        return Ok(None);
                    }
                }
            }
        } else if let NodeEval::Bottom { unproven } = eval {
            self.unproven |= unproven;
        }
        if let Some(k) = key {
            self.memo.insert(k, remaining);
        }
        Ok(None)
    }
}

/// Randomized refinement from `root`: at each node a point of `∪B_i` is
/// drawn with probability proportional to `w(p)·d(p,X)^z` and a slot
/// uniformly among the balls containing it. `visit` returns `true` to stop.
fn random_walk(
    ctx: &mut SearchContext,
    root: &SearchNode,
    seed: u64,
    depth_cap: usize,
    mut visit: impl FnMut(&mut SearchContext, &SearchNode, &NodeEval) -> Result<bool>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node = root.clone();
    loop {
        let eval = ctx.evaluate(&node)?;
        if visit(ctx, &node, &eval)? {
            return Ok(());
        }
        let NodeEval::Evaluated { centers, .. } = eval else { return Ok(()) };
        if node.depth >= depth_cap {
            return Ok(());
        }
        let balls: Vec<Vec<usize>> = node.balls.iter().map(|b| b.ones().collect()).collect();
        let Ok((row, slot)) = witness::sample_unhappy_rows(ctx.instance, ctx.y, &centers, &balls, &mut rng) else {
            return Ok(());
        };
        let p = ctx.y.points[row];
        let d = ctx.instance.metric.client_center_dist(p, &centers[slot]);
        let branch = Branch { slot, row, request: Request { point: p, radius: d / (1.0 + ctx.epsilon) } };
        node = ctx.child(&node, &centers, branch);
    }
}

fn build_coreset(instance: &Instance, config: &SolverConfig) -> Result<WeightedPointSet> {
    Ok(match config.coreset {
        CoresetChoice::Identity => identity_coreset(instance),
        CoresetChoice::RingSampling => ring_sampling_coreset(instance, config.epsilon, config.seed)?,
    })
}

fn colorings(instance: &Instance, config: &SolverConfig) -> (Vec<Vec<Vec<usize>>>, bool) {
    let k = instance.k;
    let nf = instance.metric.n_facilities();
    let symmetric = instance.metric.is_continuous() || matches!(instance.variant, Variant::Vanilla | Variant::Fair(_));
    if symmetric || k == 1 {
        return (vec![vec![(0..nf).collect(); k]], symmetric);
    }
    let retries = config.effective_color_retries(k).max(1);
    let out = (0..retries)
        .map(|c| color_code(nf, k, mix(config.seed, c as u64 + 1)))
        .collect();
    (out, false)
}

/// Root tuples of one coloring in ascending order of the summed radius.
fn roots(ctx: &SearchContext, symmetric: bool) -> (Vec<Vec<(usize, f64)>>, AscendingTuples) {
    let k = ctx.instance.k;
    let options: Vec<Vec<(usize, f64)>> = if symmetric {
        vec![ctx.slot_options(0); k]
    } else {
        (0..k).map(|i| ctx.slot_options(i)).collect()
    };
    let keys = options.iter().map(|o| o.iter().map(|&(_, r)| r).collect()).collect();
    (options, AscendingTuples::new(keys, symmetric))
}

fn root_node(ctx: &SearchContext, options: &[Vec<(usize, f64)>], idx: &[usize]) -> SearchNode {
    let leaders: Vec<usize> = idx.iter().enumerate().map(|(i, &j)| options[i][j].0).collect();
    let radii: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| options[i][j].1).collect();
    ctx.root(&leaders, &radii)
}

/// Replaces repeated facilities by the lowest unused ones.
fn distinct_centers(centers: Vec<Center>, facilities: usize) -> Vec<Center> {
    let mut used = vec![false; facilities];
    let mut out = Vec::with_capacity(centers.len());
    let mut dup = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        match c.facility() {
            Some(f) if !used[f] => {
                used[f] = true;
                out.push(c.clone());
            }
            Some(_) => {
                dup.push(i);
                out.push(c.clone());
            }
            None => out.push(c.clone()),
        }
    }
    let mut free = (0..facilities).filter(|&f| !used[f]);
    for i in dup {
        if let Some(f) = free.next() {
            out[i] = Center::Facility(f);
        }
    }
    out
}

pub fn epas_solve(instance: &Instance, config: &SolverConfig) -> Result<SolveReport> {
    epas_solve_observed(instance, config, &mut NoObserver)
}

pub fn epas_solve_observed(instance: &Instance, config: &SolverConfig, observer: &mut dyn SearchObserver) -> Result<SolveReport> {
    config.validate()?;
    if config.branch_mode == BranchMode::Randomized && !matches!(instance.variant, Variant::Vanilla) {
        return Err(EpasError::Unsupported(format!(
            "randomized branching is only defined for vanilla clustering, not {}",
            instance.variant.name()
        )));
    }
    let y = build_coreset(instance, config)?;
    let mut stats = SolveStats { coreset_size: y.len(), ..SolveStats::default() };
    let guesses = match config.guess_mode {
        GuessMode::Provided(g) => vec![g],
        GuessMode::Enumerate => match guess_opt_values(instance, &y, config.epsilon) {
            Ok(g) => g,
            Err(EpasError::Infeasible(cert)) => {
                return Ok(SolveReport {
                    status: SolveStatus::Infeasible,
                    solution: None,
                    guess: None,
                    stats,
                    budgets_hit: BudgetFlags::default(),
                    unproven_bottom: false,
                    certificate: Some(cert),
                    trace: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        },
    };
    stats.g_candidates = guesses.len();
    let thresholds: Vec<f64> = guesses.iter().map(|g| acceptance_threshold(*g, config.epsilon)).collect();
    let depth_cap = config.effective_depth_cap(instance.k);
    let leader_budget = config.leader_budget.unwrap_or(u64::MAX);
    let mut ctx = SearchContext::new(instance, &y, config.epsilon, config.effective_eta(), config.ball_constant)?;
    let (colorings, symmetric) = colorings(instance, config);
    let mut ex = Explorer {
        best_bucket: thresholds.len(),
        thresholds: thresholds.clone(),
        best_seen: None,
        memo: HashMap::new(),
        depth_cap,
        node_budget: config.node_budget.unwrap_or(u64::MAX),
        stats,
        budgets: BudgetFlags::default(),
        unproven: false,
        stop: false,
        observer,
    };

    // Smallest guess at which the search succeeds.
    for (c, colors) in colorings.iter().enumerate() {
        if ex.stop {
            break;
        }
        if colors.iter().any(Vec::is_empty) {
            continue;
        }
        ex.stats.colorings += 1;
        ctx.colors = colors.clone();
        let (options, tuples) = roots(&ctx, symmetric);
        for (r, idx) in tuples.enumerate() {
            if ex.stop {
                break;
            }
            if r as u64 >= leader_budget {
                ex.budgets.leader = true;
                break;
            }
            ex.stats.roots += 1;
            let root = root_node(&ctx, &options, &idx);
            match config.branch_mode {
                BranchMode::Deterministic => ex.explore(&mut ctx, &root)?,
                BranchMode::Randomized => {
                    for w in 0..config.walks_per_root {
                        let seed = mix(mix(config.seed, c as u64), mix(r as u64, w as u64));
                        random_walk(&mut ctx, &root, seed, depth_cap, |ctx, node, eval| {
                            if !ex.count_node(node.depth) {
                                return Ok(true);
                            }
                            if ctx.lower_bound(node) > ex.limit() {
                                ex.stats.pruned += 1;
                                return Ok(true);
                            }
                            ex.record(ctx, node, eval);
                            Ok(ex.stop)
                        })?;
                        if ex.stop {
                            break;
                        }
                    }
                }
            }
        }
    }

    let mut found: Option<(Vec<Center>, f64)> = None;
    let mut guess = None;
    let mut trace = config.trace.then(Vec::new);
    if ex.best_bucket < thresholds.len() {
        let threshold = thresholds[ex.best_bucket];
        guess = Some(guesses[ex.best_bucket]);
        ex.stop = false;
        ex.memo.clear();
        'colorings: for (c, colors) in colorings.iter().enumerate() {
            if colors.iter().any(Vec::is_empty) {
                continue;
            }
            ctx.colors = colors.clone();
            let (options, tuples) = roots(&ctx, symmetric);
            for (r, idx) in tuples.enumerate() {
                if ex.stop || r as u64 >= leader_budget {
                    break;
                }
                let root = root_node(&ctx, &options, &idx);
                match config.branch_mode {
                    BranchMode::Deterministic => {
                        if let Some(s) = ex.first_success(&mut ctx, &root, threshold, &mut trace)? {
                            found = Some(s);
                            break 'colorings;
                        }
                    }
                    BranchMode::Randomized => {
                        for w in 0..config.walks_per_root {
                            let seed = mix(mix(config.seed, c as u64), mix(r as u64, w as u64));
                            random_walk(&mut ctx, &root, seed, depth_cap, |ctx, node, eval| {
                                if !ex.count_node(node.depth) {
                                    return Ok(true);
                                }
                                ex.observer.on_node(ctx, node, eval);
                                if let Some(t) = trace.as_mut() {
                                    let last = node.history.last();
                                    t.push(TraceRecord {
                                        depth: node.depth,
                                        slot: last.map(|m| m.slot),
                                        request: last.map(|m| m.request),
                                        wcost: eval.cost(),
                                    });
                                }
                                if let NodeEval::Evaluated { centers, cost } = eval {
                                    if *cost <= threshold {
                                        found = Some((centers.clone(), *cost));
                                        return Ok(true);
                                    }
                                }
                                Ok(false)
                            })?;
                            if found.is_some() {
                                break 'colorings;
                            }
                        }
                    }
                }
            }
        }
    }
    ex.stats.cost_evaluations = ctx.cost_evaluations;

    let budgets = ex.budgets;
    let (centers, status) = match (found, ex.best_seen.take()) {
        (Some((x, _)), _) => (Some(x), if budgets.any() { SolveStatus::BudgetExhausted } else { SolveStatus::Solved }),
        (None, Some((_, x))) if budgets.any() => (Some(x), SolveStatus::BudgetExhausted),
        _ => (None, if budgets.any() { SolveStatus::BudgetExhausted } else { SolveStatus::Bottom }),
    };
    let solution = match centers {
        Some(x) => {
            let x = if symmetric && !instance.metric.is_continuous() {
                distinct_centers(x, instance.metric.n_facilities())
            } else {
                x
            };
            let p = identity_coreset(instance);
            match exact_assign(instance, &p, &x)? {
                crate::assignment::AssignOutcome::Feasible { assignment, cost } => {
                    Some(Solution { centers: x, assignment, cost })
                }
                crate::assignment::AssignOutcome::Infeasible(_) => None,
            }
        }
        None => None,
    };
    let status = if solution.is_none() && status == SolveStatus::Solved { SolveStatus::Bottom } else { status };
    Ok(SolveReport {
        status,
        solution,
        guess,
        stats: ex.stats,
        budgets_hit: budgets,
        unproven_bottom: ex.unproven,
        certificate: None,
        trace: trace.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricSpace;
    use crate::oracle::{brute_force_opt, OracleLimits};
    use std::sync::Arc;

    fn line(xs: &[f64], fs: &[f64], k: usize, variant: Variant) -> Instance {
        let m = MetricSpace::euclidean(
            xs.iter().map(|&x| vec![x]).collect(),
            fs.iter().map(|&x| vec![x]).collect(),
            true,
        )
        .unwrap();
        Instance::new(Arc::new(m), None, k, 1.0, 0.5, variant).unwrap()
    }

    #[test]
    fn color_code_examples() {
        assert_eq!(color_code(5, 1, 3), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(color_code(9, 3, 42), color_code(9, 3, 42));
        let rainbow = (0..200u64).any(|s| color_code(3, 3, s).iter().all(|c| c.len() == 1));
        assert!(rainbow);
    }

    #[test]
    fn guess_examples() {
        let inst = line(&[0.0, 10.0], &[0.0, 10.0, 5.0], 2, Variant::Vanilla);
        let y = identity_coreset(&inst);
        assert_eq!(guess_opt_values(&inst, &y, 0.5).unwrap()[0], 0.0);

        let single = line(&[0.0], &[2.0], 1, Variant::Vanilla);
        let y = identity_coreset(&single);
        let g = guess_opt_values(&single, &y, 0.5).unwrap();
        assert_eq!(g[0], 2.0);
        assert!(g.iter().any(|&v| (2.0..=3.0).contains(&v)));

        let over = line(&[0.0, 1.0, 2.0], &[0.0, 2.0], 2, Variant::Capacitated { caps: vec![1, 1] });
        let y = identity_coreset(&over);
        assert!(matches!(guess_opt_values(&over, &y, 0.5), Err(EpasError::Infeasible(_))));
    }

    #[test]
    fn zero_cost_instance() {
        let inst = line(&[0.0, 0.0, 7.0], &[0.0, 7.0, 3.0], 2, Variant::Vanilla);
        let mut cfg = SolverConfig::new(0.1);
        cfg.coreset = CoresetChoice::Identity;
        let r = epas_solve(&inst, &cfg).unwrap();
        assert_eq!(r.status, SolveStatus::Solved);
        assert_eq!(r.solution.unwrap().cost, 0.0);
    }

    #[test]
    fn one_median_within_guarantee() {
        let inst = line(&[0.0, 1.0, 2.0, 6.0], &[0.0, 1.0, 2.0, 6.0], 1, Variant::Vanilla);
        let opt = brute_force_opt(&inst, &OracleLimits::default()).unwrap().unwrap();
        let r = epas_solve(&inst, &SolverConfig::new(0.2)).unwrap();
        assert!(r.solution.unwrap().cost <= (1.0 + 30.0 * 0.2) * opt.cost);
    }

    #[test]
    fn unique_feasible_capacitated_choice() {
        // Only facilities 0 and 2 have enough capacity together.
        let inst = line(&[0.0, 0.0, 0.0, 9.0, 9.0], &[1.0, 5.0, 8.0], 2, Variant::Capacitated { caps: vec![3, 1, 2] });
        let r = epas_solve(&inst, &SolverConfig::new(0.5)).unwrap();
        let s = r.solution.unwrap();
        let mut fs: Vec<usize> = s.centers.iter().filter_map(Center::facility).collect();
        fs.sort_unstable();
        assert_eq!(fs, vec![0, 2]);
    }

    #[test]
    fn infeasible_reports_certificate() {
        let inst = line(&[0.0, 1.0, 2.0], &[0.0, 2.0], 2, Variant::Capacitated { caps: vec![1, 1] });
        let r = epas_solve(&inst, &SolverConfig::new(0.5)).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.certificate.unwrap().starts_with("capacity"));
    }

    #[test]
    fn randomized_rejects_constrained_variants() {
        let inst = line(&[0.0, 1.0], &[0.0, 2.0], 1, Variant::FaultTolerant { ell: 1 });
        let mut cfg = SolverConfig::new(0.5);
        cfg.branch_mode = BranchMode::Randomized;
        assert!(matches!(epas_solve(&inst, &cfg), Err(EpasError::Unsupported(_))));
    }

    #[test]
    fn distinct_centers_pads() {
        let x = vec![Center::Facility(2), Center::Facility(2), Center::Facility(0)];
        assert_eq!(
            distinct_centers(x, 4),
            vec![Center::Facility(2), Center::Facility(1), Center::Facility(0)]
        );
    }
}
