//! Solver benchmark over a corpus of symbolic-read cases: each case is
//! modeled with every strategy, its goal asserted, and the solver timed.
//!
//! A case is a pair of files `<name>.snap` (a [`MemorySnapshot`]) and
//! `<name>.query`:
//!
//! ```text
//! read0=(bvadd #x0000000000003000 ((_ zero_extend 56) in_0))
//! read1=(bvadd #x0000000000003000 ((_ zero_extend 56) ((_ extract 7 0) read0)))
//! goal=(= read1 #x41)
//! ```
//!
//! `readN` lines give the address of the N-th read of the snapshot and may
//! use earlier reads; `goal` is a 1-bit formula over the reads and the input
//! bytes `in_K` (8 bits each).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{parse_expr, BitVecExpr, Declarations};
use crate::memmodel::{model_read, MemModelError, MemorySnapshot, Strategy};
use crate::smtlib::{self, Goal, Script, SolverCommand, Status};

pub const MAX_READS: usize = 16;
pub const MAX_INPUT_BYTES: usize = 64;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{case}: {msg}")]
    Case { case: String, msg: String },
}

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub snapshot: MemorySnapshot,
    pub reads: Vec<BitVecExpr>,
    pub goal: BitVecExpr,
}

fn read_var(j: usize) -> String {
    format!("read{j}")
}

fn query_decls(value_width: u32) -> Declarations {
    let mut d = Declarations::new();
    for j in 0..MAX_READS {
        d.insert(read_var(j), value_width);
    }
    for k in 0..MAX_INPUT_BYTES {
        d.insert(format!("in_{k}"), 8);
    }
    d
}

impl BenchCase {
    pub fn parse(name: &str, snap_text: &str, query_text: &str) -> Result<Self, BenchError> {
        let fail = |msg: String| BenchError::Case {
            case: name.to_string(),
            msg,
        };
        let snapshot: MemorySnapshot = snap_text.parse().map_err(|e: MemModelError| fail(e.to_string()))?;
        let decls = query_decls(snapshot.value_width());
        let mut reads = Vec::new();
        let mut goal = None;
        for (n, line) in query_text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("line {}: expected key=value", n + 1)))?;
            let e = parse_expr(v, &decls).map_err(|e| fail(format!("line {}: {e}", n + 1)))?;
            if k == "goal" {
                if e.width() != 1 {
                    return Err(fail("goal must be a 1-bit formula".into()));
                }
                goal = Some(e);
            } else if k == read_var(reads.len()) {
                if e.width() != 64 {
                    return Err(fail(format!("{k} address must be 64 bits")));
                }
                reads.push(e);
            } else {
                return Err(fail(format!("line {}: unexpected key `{k}`", n + 1)));
            }
        }
        if reads.is_empty() {
            return Err(fail("no read0 line".into()));
        }
        Ok(BenchCase {
            name: name.to_string(),
            snapshot,
            reads,
            goal: goal.ok_or_else(|| fail("no goal line".into()))?,
        })
    }

    /// The goal with every read replaced by its model under `strategy`.
    pub fn formula(&self, strategy: Strategy) -> Result<BitVecExpr, MemModelError> {
        let mut models: Vec<(String, BitVecExpr)> = Vec::new();
        for (j, addr) in self.reads.iter().enumerate() {
            let a = models.iter().fold(addr.clone(), |e, (n, m)| e.substitute(n, m));
            models.push((read_var(j), model_read(&self.snapshot, &a, strategy)?.expr));
        }
        Ok(models.iter().fold(self.goal.clone(), |e, (n, m)| e.substitute(n, m)))
    }

    pub fn script(&self, strategy: Strategy) -> Result<Script, MemModelError> {
        Ok(Script::new(vec![self.formula(strategy)?], Goal::CheckSat))
    }

    pub fn query_text(&self) -> String {
        let mut s = String::new();
        for (j, r) in self.reads.iter().enumerate() {
            let _ = writeln!(s, "{}={}", read_var(j), r.to_bare_string());
        }
        let _ = writeln!(s, "goal={}", self.goal.to_bare_string());
        s
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::write(dir.join(format!("{}.snap", self.name)), self.snapshot.to_string())?;
        fs::write(dir.join(format!("{}.query", self.name)), self.query_text())
    }
}

/// Loads every `<name>.snap` + `<name>.query` pair of `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<BenchCase>, BenchError> {
    let io_err = |p: &Path, source| BenchError::Io {
        path: p.display().to_string(),
        source,
    };
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_string_lossy().strip_suffix(".snap").map(str::to_string))
        .collect();
    names.sort();
    names
        .iter()
        .map(|n| {
            let sp = dir.join(format!("{n}.snap"));
            let qp = dir.join(format!("{n}.query"));
            let snap = fs::read_to_string(&sp).map_err(|e| io_err(&sp, e))?;
            let query = fs::read_to_string(&qp).map_err(|e| io_err(&qp, e))?;
            BenchCase::parse(n, &snap, &query)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellStatus {
    Solved(Status),
    Skipped(String),
    Failed(String),
}

impl CellStatus {
    pub fn label(&self) -> &str {
        match self {
            CellStatus::Solved(s) => s.label(),
            CellStatus::Skipped(_) => "skip",
            CellStatus::Failed(_) => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchCell {
    pub case: String,
    pub strategy: Strategy,
    pub status: CellStatus,
    pub time: Duration,
    pub fell_back: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub strategies: Vec<Strategy>,
    pub cases: Vec<String>,
    /// Row-major: `cells[case * strategies.len() + strategy]`.
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StrategyTotal {
    pub time: Duration,
    pub timeouts: usize,
    pub sat: usize,
    pub unsat: usize,
    pub failed: usize,
}

/// Runs every case under every strategy, `jobs` solver processes at a time.
pub fn run_bench(
    cases: &[BenchCase],
    strategies: &[Strategy],
    solver: &SolverCommand,
    timeout: Duration,
    jobs: usize,
) -> BenchReport {
    let work: Vec<(usize, Strategy)> = (0..cases.len())
        .flat_map(|c| strategies.iter().map(move |&s| (c, s)))
        .collect();
    let run = |&(c, s): &(usize, Strategy)| -> BenchCell {
        let case = &cases[c];
        let cell = |status, time, fell_back| BenchCell {
            case: case.name.clone(),
            strategy: s,
            status,
            time,
            fell_back,
        };
        let fell_back = s == Strategy::Linearized
            && model_read(&case.snapshot, &case.reads[0], s).is_ok_and(|r| r.fell_back_to_ite);
        let script = match case.script(s) {
            Ok(sc) => sc,
            Err(e) => return cell(CellStatus::Skipped(e.to_string()), Duration::ZERO, false),
        };
        match smtlib::check(&script, solver, timeout) {
            Ok(v) => cell(CellStatus::Solved(v.status), v.wall_time, fell_back),
            Err(e) => cell(CellStatus::Failed(e.to_string()), Duration::ZERO, fell_back),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build();
    let cells = match pool {
        Ok(p) => p.install(|| work.par_iter().map(run).collect()),
        Err(_) => work.iter().map(run).collect(),
    };
    BenchReport {
        strategies: strategies.to_vec(),
        cases: cases.iter().map(|c| c.name.clone()).collect(),
        cells,
    }
}

impl BenchReport {
    pub fn cell(&self, case: usize, strategy: usize) -> &BenchCell {
        &self.cells[case * self.strategies.len() + strategy]
    }

    pub fn total(&self, strategy: Strategy) -> StrategyTotal {
        let mut t = StrategyTotal::default();
        for c in self.cells.iter().filter(|c| c.strategy == strategy) {
            t.time += c.time;
            match &c.status {
                CellStatus::Solved(Status::Sat) => t.sat += 1,
                CellStatus::Solved(Status::Unsat) => t.unsat += 1,
                CellStatus::Solved(Status::Timeout) => t.timeouts += 1,
                CellStatus::Solved(Status::Unknown) => {}
                CellStatus::Skipped(_) | CellStatus::Failed(_) => t.failed += 1,
            }
        }
        t
    }

    /// `case,strategy,status,time_s,fell_back` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("case,strategy,status,time_s,fell_back\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{}",
                c.case,
                c.strategy.label(),
                c.status.label(),
                c.time.as_secs_f64(),
                c.fell_back
            );
        }
        s
    }

    /// Human-readable grid: one row per case, one column per strategy, time
    /// in seconds or `T/O`, then totals.
    pub fn grid(&self) -> String {
        let name_w = self.cases.iter().map(String::len).max().unwrap_or(4).max(7);
        let mut s = format!("{:<name_w$}", "case");
        for st in &self.strategies {
            let _ = write!(s, " {:>10}", st.label());
        }
        s.push('\n');
        for (i, name) in self.cases.iter().enumerate() {
            let _ = write!(s, "{name:<name_w$}");
            for j in 0..self.strategies.len() {
                let c = self.cell(i, j);
                let text = match &c.status {
                    CellStatus::Solved(Status::Sat | Status::Unsat) => format!("{:.3}", c.time.as_secs_f64()),
                    other => other.label().to_string(),
                };
                let _ = write!(s, " {text:>10}");
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<name_w$}", "total");
        for &st in &self.strategies {
            let _ = write!(s, " {:>10.3}", self.total(st).time.as_secs_f64());
        }
        s.push('\n');
        let _ = write!(s, "{:<name_w$}", "T/O");
        for &st in &self.strategies {
            let _ = write!(s, " {:>10}", self.total(st).timeouts);
        }
        s.push('\n');
        s
    }
}

fn zext_in(k: usize) -> BitVecExpr {
    BitVecExpr::var(format!("in_{k}"), 8).unwrap().zext(56)
}

fn k64(v: u64) -> BitVecExpr {
    BitVecExpr::from_u64(v, 64)
}

/// Random regions of 8 to 64 cells, each with one read at
/// `base + in_0 * access` and a goal comparing the read with a value that is
/// present in the table (sat) or absent from it (unsat).
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<BenchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let access = [1u32, 2, 4, 8][rng.gen_range(0..4)];
            let cells = rng.gen_range(8..=64usize).min(if access == 1 { 64 } else { 256 });
            let mask = if access == 8 { u64::MAX } else { (1u64 << (8 * access)) - 1 };
            let mut vals = Vec::with_capacity(cells);
            while vals.len() < cells {
                // mix linear runs, repeated values and noise
                match rng.gen_range(0..3) {
                    0 => {
                        let (m, b, len) = (rng.gen_range(0..8u64), rng.gen_range(0..200u64), rng.gen_range(2..10));
                        for x in 0..len {
                            vals.push((b + m * x) & mask);
                        }
                    }
                    1 => vals.push(rng.gen_range(0..4)),
                    _ => vals.push(rng.gen::<u64>() & mask),
                }
            }
            vals.truncate(cells);
            let base = 0x10000 + rng.gen_range(0..0x1000u64) * 16;
            let current = rng.gen_range(0..cells) as u64 * access as u64;
            let snapshot = MemorySnapshot::from_values(base, access, &vals, current).expect("valid region");
            let addr = k64(base).add(&zext_in(0).mul(&k64(access as u64)));
            let want = if rng.gen_bool(0.5) {
                vals[rng.gen_range(0..cells)]
            } else {
                rng.gen::<u64>() & mask
            };
            let read = BitVecExpr::var("read0", 8 * access).unwrap();
            BenchCase {
                name: format!("syn{i:03}"),
                snapshot,
                reads: vec![addr],
                goal: read.eq_(&BitVecExpr::from_u64(want, 8 * access)),
            }
        })
        .collect()
}

/// Byte-substitution workloads: 256-entry piecewise-linear tables read
/// several times in a chain (each read indexes the table with the previous
/// result mixed with an input byte), the way case-mapping and hashing
/// routines use translation tables.
pub fn lookup_corpus(n: usize, seed: u64) -> Vec<BenchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let vals = piecewise_table(&mut rng);
            let base = 0x40000 + (i as u64) * 0x1000;
            let snapshot = MemorySnapshot::from_values(base, 1, &vals, 0).expect("valid table");
            let depth = rng.gen_range(2..=4usize);
            let mut reads = Vec::with_capacity(depth);
            for j in 0..depth {
                let idx = if j == 0 {
                    zext_in(0)
                } else {
                    let prev = BitVecExpr::var(read_var(j - 1), 8).unwrap();
                    prev.add(&BitVecExpr::var(format!("in_{j}"), 8).unwrap()).zext(56)
                };
                reads.push(k64(base).add(&idx));
            }
            let last = BitVecExpr::var(read_var(depth - 1), 8).unwrap();
            let want = vals[rng.gen_range(0..256)];
            BenchCase {
                name: format!("lut{i:03}"),
                snapshot,
                reads,
                goal: last.eq_(&BitVecExpr::from_u64(want, 8)),
            }
        })
        .collect()
}

/// 256 byte values made of a few linear pieces, like `tolower` or a
/// rotation cipher table.
fn piecewise_table(rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut cuts: Vec<usize> = (0..rng.gen_range(2..6)).map(|_| rng.gen_range(1..255)).collect();
    cuts.push(0);
    cuts.push(256);
    cuts.sort_unstable();
    cuts.dedup();
    let mut vals = vec![0u64; 256];
    for w in cuts.windows(2) {
        let m = [1u64, 1, 2, 3, 0][rng.gen_range(0..5)];
        let b = rng.gen_range(0..256u64);
        for (x, v) in vals.iter_mut().enumerate().take(w[1]).skip(w[0]) {
            *v = (m * x as u64 + b) & 0xFF;
        }
    }
    vals
}

/// Writes `cases` into `dir` (created if missing).
pub fn write_corpus(dir: &Path, cases: &[BenchCase]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for c in cases {
        c.write(dir)?;
    }
    Ok(())
}

/// Case name → per-strategy status, for comparing reports.
pub fn statuses(report: &BenchReport) -> HashMap<(String, Strategy), CellStatus> {
    report
        .cells
        .iter()
        .map(|c| ((c.case.clone(), c.strategy), c.status.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval, Assignment};

    #[test]
    fn query_round_trip() {
        for case in synthetic_corpus(5, 1).into_iter().chain(lookup_corpus(3, 2)) {
            let back = BenchCase::parse(&case.name, &case.snapshot.to_string(), &case.query_text()).unwrap();
            assert_eq!(back.reads, case.reads);
            assert_eq!(back.goal, case.goal);
            assert_eq!(back.snapshot, case.snapshot);
        }
    }

    #[test]
    fn strategies_give_equal_formulas_on_aligned_inputs() {
        for case in lookup_corpus(4, 7) {
            let fs: Vec<_> = Strategy::ALL.iter().map(|&s| case.formula(s).unwrap()).collect();
            for x in 0..=255u64 {
                let mut a = Assignment::new();
                for k in 0..4 {
                    a.insert_u64(format!("in_{k}"), 8, (x * (k + 1) * 37) & 0xFF);
                }
                let v: Vec<_> = fs.iter().map(|f| eval(f, &a).unwrap()).collect();
                assert!(v.iter().all(|e| *e == v[0]), "{} at {x}", case.name);
            }
        }
    }

    #[test]
    fn bad_queries() {
        let snap = "base=0x0 access=1 current=0x0\n0x0 0x01\n";
        for q in ["", "goal=(= read0 #x01)", "read0=in_0\ngoal=(= read0 #x01)", "read1=#x0000000000000000\ngoal=true"] {
            assert!(BenchCase::parse("c", snap, q).is_err(), "{q:?}");
        }
        assert!(BenchCase::parse("c", snap, "read0=#x0000000000000000\ngoal=(= read0 #x01)").is_ok());
    }

    #[test]
    fn totals_and_grid() {
        let cases = synthetic_corpus(2, 3);
        let missing = SolverCommand::parse("/nonexistent/solver").unwrap();
        let r = run_bench(&cases, &Strategy::ALL, &missing, Duration::from_secs(1), 2);
        assert_eq!(r.cells.len(), 6);
        assert_eq!(r.total(Strategy::Ite).failed, 2);
        let grid = r.grid();
        assert!(grid.lines().next().unwrap().contains("LIN"));
        assert_eq!(r.csv().lines().count(), 7);
    }
}
