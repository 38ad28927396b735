//! Benchmark front end for the solver.
//!
//! Four subcommands: `solve` runs one problem and writes a per-iteration
//! report, `condition-study` replays stored normal-equations snapshots and
//! tabulates condition numbers over a rank grid, `rank-study` times repeated
//! solves per sketch rank, and `compare` runs the same problem under all
//! three preconditioner choices.  Every CSV output starts with `#`-prefixed
//! manifest lines (command, config, seed, timestamp, git describe, outputs).
//!
//! Exit codes: 0 solved to tolerance, 2 bad flags or input, 3 numerical
//! failure or iteration limit, 4 missing snapshot file.

mod csvio;
mod snapshots;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nysqp::ippmm::{
    solve, IterationRecord, PreconditionerKind, SolveReport, SolveStatus, SolverConfig,
};
use nysqp::linops::NormalEqOp;
use nysqp::nystrom::{build_nystrom_preconditioner, nystrom_approximation};
use nysqp::partial_cholesky::build_partial_cholesky;
use nysqp::problems::{
    build_portfolio_qp, build_svm_qp, read_libsvm, read_qp_csv, synthetic_portfolio, SvmSpec,
};
use nysqp::qp_model::QpProblem;
use nysqp_oracle::condition_number;

use csvio::Manifest;
use snapshots::{SnapshotFile, StoredSnapshot};

/// Tolerance stages at which `solve --snapshot-out` captures the scaling.
const STAGE_GRID: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];

/// Sketch ranks the condition study sweeps.
const RANK_GRID: [usize; 6] = [10, 20, 50, 100, 200, 300];

/// Per-component seeds derive from `--seed` by fixed offsets so one flag
/// controls all randomness.
const SEED_OFFSET_PROBLEM: u64 = 1;
const SEED_OFFSET_SKETCH: u64 = 2;

#[derive(Parser)]
#[command(
    name = "nysqp",
    version,
    about = "Matrix-free interior-point QP solver and benchmark harness",
    long_about = "Matrix-free interior-point QP solver and benchmark harness.\n\n\
        Exit codes: 0 solved to tolerance; 2 bad flags or input; 3 numerical\n\
        failure or iteration limit; 4 missing snapshot file.\n\n\
        NYSQP_THREADS caps inner parallelism.  The solver kernels are\n\
        single-threaded, so the variable is validated and acknowledged but\n\
        does not change behavior."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem; print an iteration table and write report.csv
    Solve(SolveArgs),
    /// Replay stored snapshots into a stage-by-rank condition-number table
    ConditionStudy(ConditionStudyArgs),
    /// Time repeated solves at each sketch rank
    RankStudy(RankStudyArgs),
    /// Run the same problem under none/nystrom/chol and tabulate totals
    Compare(CompareArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// LIBSVM file; builds the SVM dual QP
    #[arg(long, value_name = "FILE")]
    svm: Option<PathBuf>,
    /// Synthetic factor-model portfolio with sizes n,d,s
    #[arg(long, value_name = "N,D,S", value_parser = parse_triple)]
    portfolio_synth: Option<(usize, usize, usize)>,
    /// Problem stored in the QP CSV interchange format
    #[arg(long, value_name = "FILE")]
    qp_csv: Option<PathBuf>,
    /// SVM misclassification penalty (box bound on the dual variables)
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
}

#[derive(Args)]
struct TuningArgs {
    /// Preconditioner for the inner CG solves
    #[arg(long, value_enum, default_value_t = PrecondArg::Nystrom)]
    precond: PrecondArg,
    /// Sketch size / pivot count for the low-rank preconditioners
    #[arg(long, default_value_t = 50)]
    rank: usize,
    /// Relative termination tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Master seed; per-component seeds derive by fixed offsets
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer-iteration budget
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output CSV path
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// Also capture normal-equations snapshots at the study stages
    #[arg(long, value_name = "FILE")]
    snapshot_out: Option<PathBuf>,
}

#[derive(Args)]
struct ConditionStudyArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Snapshot file produced by `solve --snapshot-out`
    #[arg(long, value_name = "FILE")]
    snapshots: PathBuf,
    /// Output CSV path
    #[arg(long, default_value = "cond.csv")]
    out: PathBuf,
    /// Master seed for the study's sketches
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RankStudyArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Ranks to sweep
    #[arg(long, value_delimiter = ',', default_values_t = RANK_GRID)]
    ranks: Vec<usize>,
    /// Timed repeats per rank
    #[arg(long, default_value_t = 4)]
    repeats: usize,
    /// Which low-rank preconditioner to sweep
    #[arg(long, value_enum, default_value_t = LowRankArg::Nystrom)]
    precond: LowRankArg,
    /// Relative termination tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer-iteration budget
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
    /// Output CSV path
    #[arg(long, default_value = "rank_time.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Rank used by both low-rank preconditioners
    #[arg(long, default_value_t = 50)]
    rank: usize,
    /// Relative termination tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer-iteration budget
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
    /// Output CSV path
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecondArg {
    None,
    Nystrom,
    Chol,
}

impl std::fmt::Display for PrecondArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrecondArg::None => "none",
            PrecondArg::Nystrom => "nystrom",
            PrecondArg::Chol => "chol",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LowRankArg {
    Nystrom,
    Chol,
}

impl std::fmt::Display for LowRankArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LowRankArg::Nystrom => "nystrom",
            LowRankArg::Chol => "chol",
        })
    }
}

/// Command failures carrying their process exit code.
enum Fail {
    /// Bad flags, bad input files, or a structurally invalid problem.
    Usage(String),
    /// The solver could not reach the requested tolerance.
    Numerical(String),
    /// The condition study was pointed at a snapshot file that is not there.
    SnapshotMissing(String),
    /// I/O and other environmental errors.
    Other(anyhow::Error),
}

impl Fail {
    fn code(&self) -> i32 {
        match self {
            Fail::Usage(_) => 2,
            Fail::Numerical(_) => 3,
            Fail::SnapshotMissing(_) => 4,
            Fail::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Fail::Usage(m) | Fail::Numerical(m) | Fail::SnapshotMissing(m) => m.clone(),
            Fail::Other(e) => format!("{e:#}"),
        }
    }
}

/// Errors raised while a solve is running: parameter mistakes are usage
/// errors, everything else is a numerical failure.
fn solver_fail(e: nysqp::Error) -> Fail {
    match e {
        nysqp::Error::InvalidParameter(_) | nysqp::Error::InvalidProblem(_) => {
            Fail::Usage(e.to_string())
        }
        other => Fail::Numerical(other.to_string()),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(fail) = validate_thread_cap() {
        eprintln!("error: {}", fail.message());
        std::process::exit(fail.code());
    }
    let echo = command_echo();
    let result = match &cli.command {
        Command::Solve(args) => cmd_solve(args, &echo),
        Command::ConditionStudy(args) => cmd_condition_study(args, &echo),
        Command::RankStudy(args) => cmd_rank_study(args, &echo),
        Command::Compare(args) => cmd_compare(args, &echo),
    };
    match result {
        Ok(()) => {}
        Err(fail) => {
            eprintln!("error: {}", fail.message());
            std::process::exit(fail.code());
        }
    }
}

fn validate_thread_cap() -> Result<(), Fail> {
    match std::env::var("NYSQP_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(Fail::Usage(format!("NYSQP_THREADS: {e}"))),
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                log::info!("NYSQP_THREADS={n}: kernels are single-threaded, cap acknowledged");
                Ok(())
            }
            _ => Err(Fail::Usage(format!(
                "NYSQP_THREADS must be a positive integer, got {raw:?}"
            ))),
        },
    }
}

fn command_echo() -> String {
    let rest: Vec<String> = std::env::args().skip(1).collect();
    format!("nysqp {}", rest.join(" "))
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated sizes N,D,S, got {s:?}"));
    }
    let mut sizes = [0usize; 3];
    for (slot, part) in sizes.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad size {:?}: {e}", part.trim()))?;
    }
    if sizes.contains(&0) {
        return Err("all of N,D,S must be at least 1".into());
    }
    Ok((sizes[0], sizes[1], sizes[2]))
}

fn load_problem(source: &SourceArgs, master_seed: u64) -> Result<(QpProblem, String), Fail> {
    let picked = [
        source.svm.is_some(),
        source.portfolio_synth.is_some(),
        source.qp_csv.is_some(),
    ]
    .iter()
    .filter(|&&p| p)
    .count();
    if picked != 1 {
        return Err(Fail::Usage(
            "exactly one problem source is required: \
             --svm FILE | --portfolio-synth N,D,S | --qp-csv FILE"
                .into(),
        ));
    }
    if let Some(path) = &source.svm {
        if !(source.tau > 0.0) || !source.tau.is_finite() {
            return Err(Fail::Usage(format!("--tau must be finite and > 0, got {}", source.tau)));
        }
        let (features, labels) = read_libsvm(path).map_err(|e| Fail::Usage(e.to_string()))?;
        let spec = SvmSpec { features: Arc::new(features), labels, tau: source.tau };
        let problem = build_svm_qp(spec).map_err(|e| Fail::Usage(e.to_string()))?;
        return Ok((problem, format!("svm:{}:tau={}", path.display(), source.tau)));
    }
    if let Some((n, d, s)) = source.portfolio_synth {
        let problem_seed = master_seed.wrapping_add(SEED_OFFSET_PROBLEM);
        let problem = build_portfolio_qp(synthetic_portfolio(n, d, s, problem_seed))
            .map_err(|e| Fail::Usage(e.to_string()))?;
        return Ok((problem, format!("portfolio-synth:{n},{d},{s}:seed={problem_seed}")));
    }
    let path = source.qp_csv.as_ref().expect("one source picked");
    let problem = read_qp_csv(path).map_err(|e| Fail::Usage(e.to_string()))?;
    Ok((problem, format!("qp-csv:{}", path.display())))
}

fn check_rank(rank: usize) -> Result<(), Fail> {
    if rank == 0 {
        return Err(Fail::Usage("--rank must be >= 1 for low-rank preconditioners".into()));
    }
    Ok(())
}

fn make_config(
    precond: PrecondArg,
    rank: usize,
    tol: f64,
    seed: u64,
    max_outer: usize,
) -> Result<SolverConfig, Fail> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Fail::Usage(format!("--tol must be finite and > 0, got {tol:e}")));
    }
    if max_outer == 0 {
        return Err(Fail::Usage("--max-outer must be >= 1".into()));
    }
    let preconditioner = match precond {
        PrecondArg::None => PreconditionerKind::None,
        PrecondArg::Nystrom => {
            check_rank(rank)?;
            PreconditionerKind::Nystrom { rank }
        }
        PrecondArg::Chol => {
            check_rank(rank)?;
            PreconditionerKind::PartialCholesky { rank }
        }
    };
    Ok(SolverConfig { tol, max_outer, preconditioner, rng_seed: seed, ..SolverConfig::default() })
}

fn status_word(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::IterationLimit => "iteration-limit",
        SolveStatus::NumericalFailure => "numerical-failure",
    }
}

fn fmt_secs(s: f64) -> String {
    format!("{s:.6}")
}

fn new_manifest(command: &str, config: String, seed: u64, outputs: Vec<String>) -> Manifest {
    Manifest {
        command: command.to_string(),
        config,
        seed,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        git: git_describe(),
        outputs,
        extra: Vec::new(),
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn inner_iters(record: &IterationRecord) -> usize {
    record.pcg_iters_predictor + record.pcg_iters_corrector + record.pcg_iters_centering
}

fn print_iteration_table(report: &SolveReport) {
    println!(
        "{:>5}  {:>11}  {:>9}  {:>9}  {:>6}  {:>9}",
        "iter", "mu", "rel_p", "rel_d", "inner", "time_s"
    );
    for r in &report.records {
        println!(
            "{:>5}  {:>11.3e}  {:>9.1e}  {:>9.1e}  {:>6}  {:>9.4}",
            r.iter,
            r.mu,
            r.rel_p,
            r.rel_d,
            inner_iters(r),
            r.total_secs
        );
    }
}

fn record_row(r: &IterationRecord) -> Vec<String> {
    vec![
        r.iter.to_string(),
        format!("{:e}", r.mu),
        format!("{:e}", r.rel_p),
        format!("{:e}", r.rel_d),
        format!("{:e}", r.rel_u),
        format!("{:e}", r.rho),
        format!("{:e}", r.delta),
        r.rank.to_string(),
        r.pcg_iters_predictor.to_string(),
        r.pcg_iters_corrector.to_string(),
        r.pcg_iters_centering.to_string(),
        r.matvecs_total.to_string(),
        fmt_secs(r.precond_build_secs),
        fmt_secs(r.pcg_secs),
        fmt_secs(r.total_secs),
        format!("{:e}", r.alpha_p),
        format!("{:e}", r.alpha_d),
    ]
}

fn cmd_solve(args: &SolveArgs, echo: &str) -> Result<(), Fail> {
    let t = &args.tuning;
    let mut config = make_config(t.precond, t.rank, t.tol, t.seed, t.max_outer)?;
    if args.snapshot_out.is_some() {
        config.stage_snapshots = STAGE_GRID.to_vec();
    }
    let (problem, problem_id) = load_problem(&args.source, t.seed)?;
    log::info!("loaded {problem_id}: n = {}, m = {}", problem.n(), problem.m());

    let started = Instant::now();
    let report = solve(&problem, &config).map_err(solver_fail)?;
    let wall = started.elapsed().as_secs_f64();

    print_iteration_table(&report);
    println!(
        "{problem_id}: {} after {} outer iterations in {wall:.3} s \
         (objective {:.9e}, mu {:.3e})",
        status_word(report.status),
        report.outer_iters,
        report.objective,
        report.state.mu
    );

    let mut outputs = vec![args.out.display().to_string()];
    if let Some(snap) = &args.snapshot_out {
        outputs.push(snap.display().to_string());
    }
    let config_echo = format!(
        "precond={} rank={} tol={:e} max-outer={}",
        t.precond, t.rank, t.tol, t.max_outer
    );
    let mut manifest = new_manifest(echo, config_echo, t.seed, outputs);
    manifest.extra.push(("problem".into(), problem_id.clone()));
    manifest.extra.push(("status".into(), status_word(report.status).into()));
    manifest.extra.push(("outer_iters".into(), report.outer_iters.to_string()));
    manifest.extra.push(("objective".into(), format!("{:e}", report.objective)));
    manifest.extra.push(("final_mu".into(), format!("{:e}", report.state.mu)));

    let rows: Vec<Vec<String>> = report.records.iter().map(record_row).collect();
    csvio::write_csv(&args.out, &manifest, csvio::REPORT_HEADER, &rows)
        .map_err(|e| Fail::Other(e.into()))?;

    if let Some(snap_path) = &args.snapshot_out {
        let file = SnapshotFile {
            problem: problem_id.clone(),
            snapshots: report
                .snapshots
                .iter()
                .map(|s| StoredSnapshot {
                    stage: s.stage,
                    iter: s.iter,
                    rho: s.rho,
                    delta: s.delta,
                    theta_inv: s.theta_inv.clone(),
                })
                .collect(),
        };
        snapshots::save(snap_path, &file).map_err(Fail::Other)?;
        log::info!("captured {} snapshots into {}", file.snapshots.len(), snap_path.display());
    }

    match report.status {
        SolveStatus::Optimal => Ok(()),
        other => {
            Err(Fail::Numerical(format!("{}: {}", status_word(other), report.status_detail)))
        }
    }
}

fn cmd_condition_study(args: &ConditionStudyArgs, echo: &str) -> Result<(), Fail> {
    if !args.snapshots.exists() {
        return Err(Fail::SnapshotMissing(format!(
            "snapshot file {} does not exist; capture one with \
             `nysqp solve ... --snapshot-out {}`",
            args.snapshots.display(),
            args.snapshots.display()
        )));
    }
    let stored = snapshots::load(&args.snapshots).map_err(Fail::Other)?;
    let (problem, problem_id) = load_problem(&args.source, args.seed)?;
    if stored.problem != problem_id {
        return Err(Fail::Usage(format!(
            "snapshot file was captured for {:?} but the flags rebuild {:?}",
            stored.problem, problem_id
        )));
    }
    let (n, m) = (problem.n(), problem.m());
    if m > 400 {
        return Err(Fail::Usage(format!(
            "the dense condition study is capped at m <= 400, got m = {m}"
        )));
    }
    if stored.snapshots.is_empty() {
        return Err(Fail::SnapshotMissing(format!(
            "{} contains no snapshots",
            args.snapshots.display()
        )));
    }
    let ranks: Vec<usize> = RANK_GRID.iter().copied().filter(|&r| r <= m).collect();
    if ranks.is_empty() {
        return Err(Fail::Usage(format!("problem too small for the rank grid (m = {m} < 10)")));
    }

    let mut rows = Vec::new();
    for (stage_idx, snap) in stored.snapshots.iter().enumerate() {
        if snap.theta_inv.len() != n {
            return Err(Fail::Usage(format!(
                "snapshot theta_inv has length {}, problem has n = {n}",
                snap.theta_inv.len()
            )));
        }
        let mut d_reg = vec![0.0; n];
        for j in 0..n {
            d_reg[j] = problem.q_diag[j] + snap.theta_inv[j] + snap.rho;
        }
        let shifted =
            NormalEqOp::from_d_reg(problem.a.clone(), &d_reg, snap.delta).map_err(solver_fail)?;
        let unshifted =
            NormalEqOp::from_d_reg(problem.a.clone(), &d_reg, 0.0).map_err(solver_fail)?;
        let kappa_plain = condition_number(&shifted, None).map_err(solver_fail)?;
        for &rank in &ranks {
            let sketch_seed = args
                .seed
                .wrapping_add(SEED_OFFSET_SKETCH)
                .wrapping_add((stage_idx as u64) << 32)
                .wrapping_add(rank as u64);
            let factors =
                nystrom_approximation(&unshifted, rank, sketch_seed).map_err(solver_fail)?;
            let nys =
                build_nystrom_preconditioner(factors, snap.delta).map_err(solver_fail)?;
            let kappa_nys = condition_number(&shifted, Some(&nys)).map_err(solver_fail)?;
            let chol = build_partial_cholesky(problem.a.clone(), &d_reg, snap.delta, rank)
                .map_err(solver_fail)?;
            let kappa_chol = condition_number(&shifted, Some(&chol)).map_err(solver_fail)?;
            log::info!(
                "stage {:e} rank {rank}: plain {kappa_plain:.3e} nystrom {kappa_nys:.3e} chol {kappa_chol:.3e}",
                snap.stage
            );
            rows.push(vec![
                format!("{:e}", snap.stage),
                rank.to_string(),
                format!("{:e}", kappa_plain),
                format!("{:e}", kappa_nys),
                format!("{:e}", kappa_chol),
            ]);
        }
    }

    let ranks_echo =
        ranks.iter().map(ToString::to_string).collect::<Vec<_>>().join("/");
    let config_echo =
        format!("snapshots={} ranks={ranks_echo}", args.snapshots.display());
    let mut manifest =
        new_manifest(echo, config_echo, args.seed, vec![args.out.display().to_string()]);
    manifest.extra.push(("problem".into(), problem_id));
    csvio::write_csv(&args.out, &manifest, csvio::COND_HEADER, &rows)
        .map_err(|e| Fail::Other(e.into()))?;
    println!("wrote {} condition-number rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_rank_study(args: &RankStudyArgs, echo: &str) -> Result<(), Fail> {
    if args.repeats == 0 {
        return Err(Fail::Usage("--repeats must be >= 1".into()));
    }
    if args.ranks.is_empty() {
        return Err(Fail::Usage("--ranks needs at least one rank".into()));
    }
    for &rank in &args.ranks {
        check_rank(rank)?;
    }
    let (problem, problem_id) = load_problem(&args.source, args.seed)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failure: Option<Fail> = None;
    'sweep: for &rank in &args.ranks {
        let preconditioner = match args.precond {
            LowRankArg::Nystrom => PreconditionerKind::Nystrom { rank },
            LowRankArg::Chol => PreconditionerKind::PartialCholesky { rank },
        };
        let mut sums = [0.0f64; 4];
        for repeat in 0..args.repeats {
            let config = SolverConfig {
                tol: args.tol,
                max_outer: args.max_outer,
                preconditioner,
                rng_seed: args.seed,
                ..SolverConfig::default()
            };
            let started = Instant::now();
            let report = match solve(&problem, &config) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(solver_fail(e));
                    break 'sweep;
                }
            };
            let total = started.elapsed().as_secs_f64();
            if report.status != SolveStatus::Optimal {
                failure = Some(Fail::Numerical(format!(
                    "rank {rank} repeat {repeat}: {}: {}",
                    status_word(report.status),
                    report.status_detail
                )));
                break 'sweep;
            }
            let pcg: f64 = report.records.iter().map(|r| r.pcg_secs).sum();
            let build: f64 = report.records.iter().map(|r| r.precond_build_secs).sum();
            let other = (total - pcg - build).max(0.0);
            for (slot, value) in sums.iter_mut().zip([total, pcg, build, other]) {
                *slot += value;
            }
            rows.push(vec![
                rank.to_string(),
                repeat.to_string(),
                fmt_secs(total),
                fmt_secs(pcg),
                fmt_secs(build),
                fmt_secs(other),
            ]);
        }
        let k = args.repeats as f64;
        rows.push(vec![
            rank.to_string(),
            "mean".into(),
            fmt_secs(sums[0] / k),
            fmt_secs(sums[1] / k),
            fmt_secs(sums[2] / k),
            fmt_secs(sums[3] / k),
        ]);
        log::info!("rank {rank}: mean total {:.4} s over {} repeats", sums[0] / k, args.repeats);
    }

    let ranks_echo =
        args.ranks.iter().map(ToString::to_string).collect::<Vec<_>>().join("/");
    let config_echo = format!(
        "precond={} ranks={ranks_echo} repeats={} tol={:e}",
        args.precond, args.repeats, args.tol
    );
    let mut manifest =
        new_manifest(echo, config_echo, args.seed, vec![args.out.display().to_string()]);
    manifest.extra.push(("problem".into(), problem_id));
    csvio::write_csv(&args.out, &manifest, csvio::RANK_TIME_HEADER, &rows)
        .map_err(|e| Fail::Other(e.into()))?;
    println!("wrote {} timing rows to {}", rows.len(), args.out.display());
    match failure {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

fn cmd_compare(args: &CompareArgs, echo: &str) -> Result<(), Fail> {
    check_rank(args.rank)?;
    let (problem, problem_id) = load_problem(&args.source, args.seed)?;
    let methods = [
        ("none", PreconditionerKind::None, 0usize),
        ("nystrom", PreconditionerKind::Nystrom { rank: args.rank }, args.rank),
        ("chol", PreconditionerKind::PartialCholesky { rank: args.rank }, args.rank),
    ];

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failure: Option<Fail> = None;
    for (name, kind, rank) in methods {
        let config = SolverConfig {
            tol: args.tol,
            max_outer: args.max_outer,
            preconditioner: kind,
            rng_seed: args.seed,
            ..SolverConfig::default()
        };
        let started = Instant::now();
        match solve(&problem, &config) {
            Ok(report) if report.status == SolveStatus::Optimal => {
                let time = started.elapsed().as_secs_f64();
                let inner: usize = report.records.iter().map(inner_iters).sum();
                println!(
                    "{name:>8}: {} outer, {inner} inner, {time:.3} s",
                    report.outer_iters
                );
                rows.push(vec![
                    name.to_string(),
                    report.outer_iters.to_string(),
                    inner.to_string(),
                    fmt_secs(time),
                    rank.to_string(),
                ]);
            }
            Ok(report) => {
                eprintln!(
                    "{name}: {}: {}",
                    status_word(report.status),
                    report.status_detail
                );
                failure.get_or_insert(Fail::Numerical(format!(
                    "{name}: {}",
                    report.status_detail
                )));
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                failure.get_or_insert(solver_fail(e));
            }
        }
    }

    // The table is written even when a method failed, with the rows we have.
    let config_echo = format!("rank={} tol={:e} max-outer={}", args.rank, args.tol, args.max_outer);
    let mut manifest =
        new_manifest(echo, config_echo, args.seed, vec![args.out.display().to_string()]);
    manifest.extra.push(("problem".into(), problem_id));
    csvio::write_csv(&args.out, &manifest, csvio::COMPARE_HEADER, &rows)
        .map_err(|e| Fail::Other(e.into()))?;
    println!("wrote {} method rows to {}", rows.len(), args.out.display());
    match failure {
        None => Ok(()),
        Some(f) => Err(f),
    }
}
