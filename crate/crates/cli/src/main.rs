use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use epas_cli::bench::{bench_suite, run_bench, to_csv, to_json, BenchOptions};
use epas_cli::document::{to_canonical_json, InstanceDocument, SolutionDocument};
use epas_cli::generate::{generate_instance, Family, GenerateSpec, VariantKind};
use epas_core::coreset::{audit_coreset, identity_coreset, ring_sampling_coreset};
use epas_core::matroid::MatroidHandle;
use epas_core::model::{Instance, Variant};
use epas_core::oracle::{brute_force_opt, OracleLimits};
use epas_core::scatter::{longest_scattering, scatter_dimension};
use epas_core::solver::{epas_solve, BranchMode, CoresetChoice, SolveStatus, SolverConfig};
use epas_core::{EpasError, Result};

#[derive(Parser)]
#[command(name = "epas", version, about = "Constrained (k,z)-clustering by guided branching, with exact oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Det,
    Rand,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoresetArg {
    Identity,
    Ring,
}

#[derive(clap::Args)]
struct InstanceArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    /// vanilla | fault-tolerant:ELL | capacitated:CAP | matroid-uniform
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    Solve {
        #[command(flatten)]
        input: InstanceArgs,
        #[arg(long, value_enum, default_value = "det")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        depth_cap: Option<usize>,
        #[arg(long)]
        leader_budget: Option<u64>,
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long, value_enum, default_value = "ring")]
        coreset: CoresetArg,
        #[arg(long)]
        with_oracle: bool,
        /// Writes the visited-node trace here and embeds it in the output.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Oracle {
        #[command(flatten)]
        input: InstanceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    AuditCoreset {
        #[command(flatten)]
        input: InstanceArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "ring")]
        coreset: CoresetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    ScatterProbe {
        #[command(flatten)]
        input: InstanceArgs,
        /// Probes a single radius instead of every distance.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Bench {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        with_oracle: bool,
        /// Adds a wall-clock column; the table is then not reproducible.
        #[arg(long)]
        timing: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Generate {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        f: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        z: f64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "vanilla")]
        variant: VariantKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        continuous: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed run: exit code and a structured record for stderr.
struct Failure {
    code: u8,
    record: serde_json::Value,
}

impl From<EpasError> for Failure {
    fn from(e: EpasError) -> Self {
        let code = if matches!(e, EpasError::Infeasible(_)) { 2 } else { 1 };
        let mut record = json!({"error": e.kind(), "message": e.to_string()});
        if let EpasError::Schema { path, .. } = &e {
            record["path"] = json!(path);
        }
        Failure { code, record }
    }
}

fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure { code: 1, record: json!({"error": "io", "message": format!("{}: {e}", path.display())}) }
}

fn emit(out: &Option<PathBuf>, text: &str) -> std::result::Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn override_variant(instance: &Instance, spec: &str) -> Result<Instance> {
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let num = |what: &str| -> Result<u64> {
        arg.parse().map_err(|_| EpasError::Contract(format!("--variant {name} needs a numeric {what}, got '{arg}'")))
    };
    let nf = instance.metric.n_facilities();
    let variant = match name {
        "vanilla" => Variant::Vanilla,
        "fault-tolerant" => Variant::FaultTolerant { ell: num("ell")? as usize },
        "capacitated" => Variant::Capacitated { caps: vec![num("capacity")?; if instance.metric.is_continuous() { 1 } else { nf }] },
        "matroid-uniform" => Variant::Matroid { matroid: MatroidHandle::uniform(nf, instance.k) },
        other => return Err(EpasError::Contract(format!("unknown variant override '{other}'"))),
    };
    instance.with_variant(variant)
}

fn load(args: &InstanceArgs) -> std::result::Result<Instance, Failure> {
    let text = fs::read_to_string(&args.instance).map_err(|e| io_failure(&args.instance, e))?;
    let mut doc = InstanceDocument::parse(&text)?;
    if let Some(eps) = args.epsilon {
        doc.epsilon = eps;
    }
    let mut instance = doc.to_instance()?;
    if let Some(v) = &args.variant {
        instance = override_variant(&instance, v)?;
    }
    Ok(instance)
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Solved => 0,
        SolveStatus::Bottom | SolveStatus::Infeasible => 2,
        SolveStatus::BudgetExhausted => 3,
    }
}

fn run(cli: Cli) -> std::result::Result<u8, Failure> {
    match cli.command {
        Command::Solve { input, mode, seed, depth_cap, leader_budget, node_budget, coreset, with_oracle, trace, out } => {
            let instance = load(&input)?;
            let mut cfg = SolverConfig::for_instance(&instance);
            cfg.branch_mode = match mode {
                Mode::Det => BranchMode::Deterministic,
                Mode::Rand => BranchMode::Randomized,
            };
            cfg.seed = seed;
            cfg.depth_cap = depth_cap;
            cfg.leader_budget = leader_budget;
            cfg.node_budget = node_budget;
            cfg.coreset = match coreset {
                CoresetArg::Identity => CoresetChoice::Identity,
                CoresetArg::Ring => CoresetChoice::RingSampling,
            };
            cfg.trace = trace.is_some();
            let report = epas_solve(&instance, &cfg)?;
            let mut doc = SolutionDocument::from_report(&report, trace.is_some());
            if with_oracle {
                let opt = brute_force_opt(&instance, &OracleLimits::default())?;
                doc = doc.with_oracle(opt.map(|s| s.cost));
            }
            if let Some(p) = &trace {
                fs::write(p, to_canonical_json(&report.trace)).map_err(|e| io_failure(p, e))?;
            }
            emit(&out, &doc.to_json())?;
            Ok(status_code(report.status))
        }
        Command::Oracle { input, out } => {
            let instance = load(&input)?;
            let opt = brute_force_opt(&instance, &OracleLimits::default())?;
            let status = if opt.is_some() { SolveStatus::Solved } else { SolveStatus::Infeasible };
            emit(&out, &SolutionDocument::from_solution(status, opt.as_ref()).to_json())?;
            Ok(status_code(status))
        }
        Command::AuditCoreset { input, seed, coreset, out } => {
            let instance = load(&input)?;
            let y = match coreset {
                CoresetArg::Identity => identity_coreset(&instance),
                CoresetArg::Ring => ring_sampling_coreset(&instance, instance.epsilon, seed)?,
            };
            let report = audit_coreset(&instance, &y, instance.epsilon, seed)?;
            let record = json!({
                "coreset_size": y.len(),
                "candidates": report.candidates,
                "exhaustive": report.exhaustive,
                "max_error": report.max_error,
                "one_sided_infeasible": report.one_sided_infeasible,
                "worst": report.worst,
                "pass": report.max_error <= instance.epsilon,
            });
            emit(&out, &to_canonical_json(&record))?;
            Ok(0)
        }
        Command::ScatterProbe { input, radius, budget, out } => {
            let instance = load(&input)?;
            let m = &instance.metric;
            let r = match radius {
                Some(r) => longest_scattering(m, instance.epsilon, r, budget)?,
                None => scatter_dimension(m, instance.epsilon, budget)?,
            };
            let record = json!({
                "epsilon": instance.epsilon,
                "radius": radius,
                "length": r.sequence.len(),
                "exhaustive": r.exhaustive,
                "budget_exhausted": r.budget_exhausted,
                "states": r.states,
                "sequence": r.sequence,
            });
            emit(&out, &to_canonical_json(&record))?;
            Ok(if r.budget_exhausted { 3 } else { 0 })
        }
        Command::Bench { seed, count, with_oracle, timing, format, out } => {
            let rows = run_bench(&bench_suite(seed, count), BenchOptions { with_oracle, timing })?;
            let text = match format {
                Format::Csv => to_csv(&rows),
                Format::Json => to_json(&rows),
            };
            emit(&out, &text)?;
            let worst = rows.iter().map(|r| status_code(r.status)).max().unwrap_or(0);
            Ok(worst)
        }
        Command::Generate { family, n, f, k, z, epsilon, variant, seed, continuous, out } => {
            let spec = GenerateSpec { family, n, f, k, z, epsilon, variant, seed, continuous };
            emit(&out, &generate_instance(&spec)?.to_json())?;
            Ok(0)
        }
    }
}

fn configure_threads() -> std::result::Result<(), Failure> {
    if let Ok(v) = std::env::var("EPAS_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure {
            code: 1,
            record: json!({"error": "usage", "message": format!("EPAS_THREADS must be a positive integer, got '{v}'")}),
        })?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(1);
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", f.record);
            ExitCode::from(f.code)
        }
    }
}
