use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use symread::bench::{self, load_corpus, run_bench};
use symread::bounds::{resolve_bounds, BoundsMode, BoundsPolicy, SatOracle, SolverOracle};
use symread::expr::{parse_expr, Declarations};
use symread::memmodel::{model_read, MemorySnapshot, Strategy};
use symread::microexec::{covdiff, explore, ExploreConfig, Program, RunConfig};
use symread::smtlib::{emit_definition, SolverCommand};

#[derive(Parser)]
#[command(name = "symread", version, about = "Symbolic memory read modeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SolverArgs {
    /// Solver command line (default: $SYMREAD_SOLVER, else `z3 -in`)
    #[arg(long)]
    solver: Option<String>,
    /// Per-query timeout in seconds
    #[arg(long)]
    timeout: Option<f64>,
}

impl SolverArgs {
    fn command(&self) -> Result<SolverCommand, Failure> {
        match &self.solver {
            Some(s) => SolverCommand::parse(s).ok_or_else(|| Failure::Usage("empty --solver".into())),
            None => Ok(SolverCommand::from_env()),
        }
    }

    fn timeout(&self, default: f64) -> Result<Duration, Failure> {
        let t = self.timeout.unwrap_or(default);
        Duration::try_from_secs_f64(t).map_err(|_| Failure::Usage(format!("bad --timeout {t}")))
    }
}

#[derive(clap::Args)]
struct BoundsArgs {
    /// auto, solver or const:N
    #[arg(long, default_value = "auto")]
    bounds: BoundsMode,
    #[arg(long, default_value_t = symread::bounds::DEFAULT_MAX_ELEMENTS)]
    max_elements: u64,
    /// Bytes searched around the concrete address by solver-mode bounds
    #[arg(long, default_value_t = symread::bounds::DEFAULT_SOLVER_LIMIT)]
    solver_limit: u64,
}

impl BoundsArgs {
    fn policy(&self, solver_timeout: Duration) -> BoundsPolicy {
        BoundsPolicy {
            solver_timeout,
            ..BoundsPolicy::for_mode(self.bounds, self.max_elements, self.solver_limit)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusKind {
    /// Random regions, one read each
    Synthetic,
    /// Chained reads of 256-byte translation tables
    Lookup,
}

#[derive(Subcommand)]
enum Command {
    /// Model one symbolic read of a snapshot and print the SMT-LIBv2 script
    Model {
        #[arg(long)]
        snapshot: PathBuf,
        /// Address expression (s-expression); `in_K` are 8-bit input bytes
        #[arg(long)]
        expr: String,
        /// Extra variable declaration NAME:WIDTH
        #[arg(long = "var")]
        vars: Vec<String>,
        #[arg(long, default_value = "lin")]
        strategy: Strategy,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Script destination (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time every strategy on a corpus of snapshot+query cases
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated subset of ite,bst,lin
        #[arg(long, value_delimiter = ',', default_value = "ite,bst,lin")]
        strategies: Vec<Strategy>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// CSV destination
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated bench corpus
    GenBench {
        #[arg(long, value_enum, default_value = "synthetic")]
        kind: CorpusKind,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concolic exploration of an assembly program from one seed input
    Run {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        symaddr: OnOff,
        #[arg(long, default_value = "lin")]
        strategy: Strategy,
        #[command(flatten)]
        bounds: BoundsArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Retry unsat branches with the branch condition alone
        #[arg(long)]
        optimistic: bool,
        /// Query every occurrence of a branch, not just the first
        #[arg(long)]
        no_cache: bool,
        #[arg(long)]
        max_queries: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare basic-block coverage of two `run` output directories
    Covdiff {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Input(String),
    SolverMissing(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::SolverMissing(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::SolverMissing(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(ctx: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(format!("{ctx}: {e}"))
}

fn require_solver(s: &SolverCommand) -> Result<(), Failure> {
    if s.is_available() {
        Ok(())
    } else {
        Err(Failure::SolverMissing(format!(
            "solver `{s}` not found (use --solver or ${})",
            symread::smtlib::SOLVER_ENV
        )))
    }
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, text).map_err(input(path.display()))
}

fn cmd_model(
    snapshot: &Path,
    expr: &str,
    vars: &[String],
    strategy: Strategy,
    bounds: &BoundsArgs,
    solver: &SolverArgs,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let text = fs::read_to_string(snapshot).map_err(input(snapshot.display()))?;
    let snap: MemorySnapshot = text.parse().map_err(input(snapshot.display()))?;
    let mut decls = Declarations::new();
    for k in 0..64 {
        decls.insert(format!("in_{k}"), 8);
    }
    for v in vars {
        let (n, w) = v
            .split_once(':')
            .and_then(|(n, w)| Some((n, w.parse::<u32>().ok()?)))
            .ok_or_else(|| Failure::Usage(format!("--var expects NAME:WIDTH, got `{v}`")))?;
        decls.insert(n.to_string(), w);
    }
    let addr = parse_expr(expr, &decls).map_err(input("--expr"))?;
    if addr.width() != 64 {
        return Err(Failure::Input(format!("--expr has width {}, expected 64", addr.width())));
    }

    let timeout = solver.timeout(10.0)?;
    let policy = bounds.policy(timeout);
    policy.validate(snap.access_size).map_err(input("bounds"))?;
    let concrete = snap.base + snap.current_offset;
    let mut oracle = if policy.use_solver {
        let cmd = solver.command()?;
        require_solver(&cmd)?;
        Some(SolverOracle::new(cmd, Vec::new(), timeout, true))
    } else {
        None
    };
    let b = resolve_bounds(
        &addr,
        concrete,
        snap.access_size,
        &policy,
        oracle.as_mut().map(|o| o as &mut dyn SatOracle),
    );
    let window = snap.window(b.lower, b.upper).map_err(input("bounds"))?;
    let r = model_read(&window, &addr, strategy).map_err(input("model"))?;

    let script = emit_definition("read", &r.expr);
    match out {
        Some(p) => write_file(p, &script)?,
        None => print!("{script}"),
    }
    let mut s = String::new();
    let _ = writeln!(s, "strategy={}", r.strategy);
    let _ = writeln!(s, "fell_back_to_ite={}", r.fell_back_to_ite);
    let _ = writeln!(s, "bounds=[{:#x},{:#x})", b.lower, b.upper);
    let _ = writeln!(s, "bounds_method={}/{}", b.method_lower, b.method_upper);
    let _ = writeln!(s, "window=[{:#x},{:#x})", window.base, window.upper());
    let _ = writeln!(s, "cells={}", window.cells.len());
    let _ = writeln!(s, "nodes={}", r.expr.node_count());
    if r.strategy == Strategy::Linearized && !r.fell_back_to_ite {
        let _ = writeln!(s, "equation_width={}", r.equation_width);
        for seg in &r.segments {
            let stride = (seg.last_offset - seg.first_offset) / (seg.points as u64 - 1).max(1);
            let offs: Vec<String> = (0..seg.points as u64).map(|i| (seg.first_offset + i * stride).to_string()).collect();
            let _ = writeln!(s, "segment={seg} offsets={}", offs.join(","));
        }
        for (v, offs) in &r.horizontal {
            let offs: Vec<String> = offs.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "horizontal={v} offsets={}", offs.join(","));
        }
        for (o, v) in &r.singles {
            let _ = writeln!(s, "single=({o},{v})");
        }
        let _ = writeln!(s, "symbolic_cells={}", r.symbolic_prefix_count);
    }
    if out.is_some() {
        print!("{s}");
    } else {
        eprint!("{s}");
    }
    Ok(())
}

fn cmd_bench(
    corpus: &Path,
    strategies: &[Strategy],
    solver: &SolverArgs,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let cases = load_corpus(corpus).map_err(|e| Failure::Input(e.to_string()))?;
    let cmd = solver.command()?;
    let timeout = solver.timeout(30.0)?;
    if !cases.is_empty() {
        require_solver(&cmd)?;
    }
    let report = run_bench(&cases, strategies, &cmd, timeout, jobs);
    print!("{}", report.grid());
    if let Some(p) = out {
        write_file(p, report.csv())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    program: &Path,
    input_path: &Path,
    symaddr: OnOff,
    strategy: Strategy,
    bounds: &BoundsArgs,
    solver: &SolverArgs,
    optimistic: bool,
    no_cache: bool,
    max_queries: Option<usize>,
    jobs: usize,
    out: &Path,
) -> Result<(), Failure> {
    let src = fs::read_to_string(program).map_err(input(program.display()))?;
    let prog: Program = src.parse().map_err(input(program.display()))?;
    let seed = fs::read(input_path).map_err(input(input_path.display()))?;
    let cmd = solver.command()?;
    require_solver(&cmd)?;
    let timeout = solver.timeout(90.0)?;
    let policy = bounds.policy(timeout);
    let run = RunConfig {
        symaddr: matches!(symaddr, OnOff::On),
        policy,
        strategy,
        solver: Some(cmd.clone()),
        ..Default::default()
    };
    let cfg = ExploreConfig {
        timeout,
        static_cache: !no_cache,
        optimistic,
        max_queries,
        jobs,
        ..ExploreConfig::new(run, cmd)
    };
    let report = explore(&prog, &seed, &cfg).map_err(input(program.display()))?;
    report.write(out, &prog, &seed).map_err(input(out.display()))?;
    print!("{}", report.stats.report());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Model {
            snapshot,
            expr,
            vars,
            strategy,
            bounds,
            solver,
            out,
        } => cmd_model(&snapshot, &expr, &vars, strategy, &bounds, &solver, out.as_deref()),
        Command::Bench {
            corpus,
            strategies,
            solver,
            jobs,
            out,
        } => cmd_bench(&corpus, &strategies, &solver, jobs, out.as_deref()),
        Command::GenBench { kind, count, seed, out } => {
            let cases = match kind {
                CorpusKind::Synthetic => bench::synthetic_corpus(count, seed),
                CorpusKind::Lookup => bench::lookup_corpus(count, seed),
            };
            bench::write_corpus(&out, &cases).map_err(input(out.display()))
        }
        Command::Run {
            program,
            input,
            symaddr,
            strategy,
            bounds,
            solver,
            optimistic,
            no_cache,
            max_queries,
            jobs,
            out,
        } => cmd_run(
            &program,
            &input,
            symaddr,
            strategy,
            &bounds,
            &solver,
            optimistic,
            no_cache,
            max_queries,
            jobs,
            &out,
        ),
        Command::Covdiff { run_a, run_b } => {
            let d = covdiff(&run_a, &run_b).map_err(|e| Failure::Input(e.to_string()))?;
            print!("{}", d.report());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("symread: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
