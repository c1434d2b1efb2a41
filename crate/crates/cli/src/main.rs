//! Command-line driver for the flagopt benchmark harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flagopt::bench::{
    compare, generate_problem, run_and_trace, sweep, write_trace, Algorithm, Generator,
    ProblemDescriptor, RunConfig, RunStatus, SummaryRow, TraceFormat,
};
use flagopt::flag::{flag_run, FlagConfig, DEFAULT_DELTA};
use flagopt::oracles::{
    audit_problem, check_flag_run, check_mirror_descent_inequality, CheckReport, DEFAULT_TRIALS,
};
use flagopt::par::Execution;

#[derive(Parser)]
#[command(
    name = "flagopt",
    version,
    about = "Benchmark FLAG against proximal and adaptive baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one problem and write its trace.
    Run(RunArgs),
    /// Run every algorithm on one problem against a shared reference optimum.
    Compare(CompareArgs),
    /// Check the lemma oracles on a problem and print one row per check.
    Audit(AuditArgs),
    /// Final gap over a grid of iteration budgets, with log-log slopes.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Generator name (lasso, logistic_l1, box_qp) or a key=value descriptor file.
    #[arg(long, default_value = "lasso")]
    problem: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Box bounds as `lo,hi` (applied to every coordinate).
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    r#box: Option<(f64, f64)>,
}

impl ProblemArgs {
    fn descriptor(&self) -> Result<ProblemDescriptor> {
        let mut desc = match self.problem.parse::<Generator>() {
            Ok(g) => ProblemDescriptor::new(g, self.seed, self.n, self.d, self.lambda),
            Err(_) => {
                let path = Path::new(&self.problem);
                let text = std::fs::read_to_string(path).with_context(|| {
                    format!(
                        "'{}' is neither a generator nor a readable file",
                        self.problem
                    )
                })?;
                text.parse()?
            }
        };
        if let Some((lo, hi)) = self.r#box {
            desc = desc.with_box(lo, hi);
        }
        Ok(desc)
    }
}

fn parse_box(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "flag", value_parser = parse_algo)]
    algo: Algorithm,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Reference-optimum iterations; at least 10·iters. Defaults to max(10·iters, 50000).
    #[arg(long)]
    ref_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: TraceFormat,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    ref_iters: Option<usize>,
    /// Directory receiving one trace file per algorithm.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: TraceFormat,
    /// Run the algorithms one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Iterations of the FLAG run whose invariants are checked.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated iteration budgets.
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
    grid: Vec<usize>,
    /// Algorithms to sweep; all when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_algo)]
    algo: Vec<Algorithm>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    ref_iters: Option<usize>,
    #[arg(long)]
    sequential: bool,
}

fn parse_algo(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: flagopt::Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<TraceFormat, String> {
    s.parse().map_err(|e: flagopt::Error| e.to_string())
}

fn default_ref_iters(iters: usize, given: Option<usize>) -> usize {
    given.unwrap_or((10 * iters).max(50_000))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn print_summary(rows: &[&SummaryRow]) {
    println!("{}", SummaryRow::HEADER);
    for row in rows {
        println!("{row}");
    }
}

fn diverged(rows: &[&SummaryRow]) -> bool {
    rows.iter().any(|r| r.status == RunStatus::Diverged)
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let mut cfg = RunConfig::new(args.problem.descriptor()?, args.algo, args.iters);
    cfg.delta = args.delta;
    cfg.ref_iters = default_ref_iters(args.iters, args.ref_iters);
    cfg.out_path = args.out;
    cfg.format = args.format;
    let result = run_and_trace(&cfg)?;
    let rows = [&result.summary];
    print_summary(&rows);
    Ok(!diverged(&rows))
}

fn cmd_compare(args: CompareArgs) -> Result<bool> {
    let desc = args.problem.descriptor()?;
    let ref_iters = default_ref_iters(args.iters, args.ref_iters);
    let results = compare(
        &desc,
        &Algorithm::ALL,
        args.iters,
        args.delta,
        ref_iters,
        execution(args.sequential),
    )?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let ext = match args.format {
            TraceFormat::Csv => "csv",
            TraceFormat::JsonLines => "jsonl",
        };
        for r in &results {
            let name = r.summary.algorithm.name();
            let echo = format!(
                "{desc} algorithm={name} T={} delta={:e} ref_iters={ref_iters}",
                args.iters, args.delta
            );
            write_trace(
                &dir.join(format!("{name}.{ext}")),
                args.format,
                &echo,
                &r.trace,
            )?;
        }
    }
    let rows: Vec<&SummaryRow> = results.iter().map(|r| &r.summary).collect();
    println!("# {desc}");
    print_summary(&rows);
    Ok(!diverged(&rows))
}

fn cmd_audit(args: AuditArgs) -> Result<bool> {
    let desc = args.problem.descriptor()?;
    let problem = generate_problem(&desc)?;
    let config = FlagConfig::new(args.iters).with_history();
    let run = flag_run(&problem, &config)?;
    let mut reports = audit_problem(
        &problem,
        args.trials,
        desc.seed,
        config.epsilon(problem.dim()),
    );
    reports.extend(check_flag_run(&problem, &run));
    reports.push(check_mirror_descent_inequality(
        &problem, &run, 50, desc.seed,
    )?);
    println!("# {desc}");
    println!(
        "{:<32} {:>7} {:>10} {:>14} status",
        "name", "trials", "violations", "worst_margin"
    );
    for r in &reports {
        println!("{r}");
    }
    Ok(reports
        .iter()
        .all(|r: &CheckReport| r.skipped || r.passed()))
}

fn cmd_sweep(args: SweepArgs) -> Result<bool> {
    let desc = args.problem.descriptor()?;
    if args.grid.is_empty() {
        bail!("empty budget grid");
    }
    let max_t = *args.grid.iter().max().unwrap_or(&1);
    let algs = if args.algo.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        args.algo
    };
    let results = sweep(
        &desc,
        &algs,
        &args.grid,
        args.delta,
        default_ref_iters(max_t, args.ref_iters),
        execution(args.sequential),
    )?;
    println!("# {desc}");
    println!("{:<14} {:>6} {:>13}", "algorithm", "T", "final_gap");
    for s in &results {
        for (t, gap) in &s.points {
            println!("{:<14} {t:>6} {gap:>13.6e}", s.algorithm.name());
        }
        match s.slope {
            Some(slope) => println!("{:<14} slope {slope:.3}", s.algorithm.name()),
            None => println!("{:<14} slope -", s.algorithm.name()),
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
