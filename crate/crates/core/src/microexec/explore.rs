use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::smtlib::SolverCommand;

use super::{
    query_targets, replay_check, run_concolic, solve_target, ExecError, GeneratedInput, Inversion, Outcome, Program,
    QueryTarget, ReplayVerdict, RunConfig, RunResult,
};

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    pub run: RunConfig,
    pub solver: SolverCommand,
    pub timeout: Duration,
    pub static_cache: bool,
    /// Retry unsat queries with the goal alone.
    pub optimistic: bool,
    pub max_queries: Option<usize>,
    pub jobs: usize,
}

impl ExploreConfig {
    pub fn new(run: RunConfig, solver: SolverCommand) -> Self {
        ExploreConfig {
            run,
            solver,
            timeout: Duration::from_secs(90),
            static_cache: true,
            optimistic: false,
            max_queries: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub input: GeneratedInput,
    pub verdict: ReplayVerdict,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExploreStats {
    pub total_branches: usize,
    pub unique_branches: usize,
    pub queries: usize,
    pub sat: usize,
    pub unsat: usize,
    pub inconclusive: usize,
    pub errors: usize,
    pub correct: usize,
    pub optimistic_inputs: usize,
    pub symbolic_reads: usize,
    pub blocks: usize,
    pub program_blocks: usize,
    pub elapsed: Duration,
}

impl ExploreStats {
    pub fn accuracy_pct(&self) -> f64 {
        if self.sat == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.sat as f64
        }
    }

    pub fn queries_per_min(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.queries as f64 * 60.0 / secs
        }
    }

    /// `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "total_branches={}", self.total_branches);
        let _ = writeln!(s, "unique_branches={}", self.unique_branches);
        let _ = writeln!(s, "queries={}", self.queries);
        let _ = writeln!(s, "sat={}", self.sat);
        let _ = writeln!(s, "unsat={}", self.unsat);
        let _ = writeln!(s, "inconclusive={}", self.inconclusive);
        let _ = writeln!(s, "errors={}", self.errors);
        let _ = writeln!(s, "correct={}", self.correct);
        let _ = writeln!(s, "optimistic_inputs={}", self.optimistic_inputs);
        let _ = writeln!(s, "accuracy_pct={:.1}", self.accuracy_pct());
        let _ = writeln!(s, "queries_per_min={:.1}", self.queries_per_min());
        let _ = writeln!(s, "symbolic_reads={}", self.symbolic_reads);
        let _ = writeln!(s, "blocks={}", self.blocks);
        let _ = writeln!(s, "program_blocks={}", self.program_blocks);
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExploreReport {
    pub seed_run: RunResult,
    pub corpus: Vec<CorpusEntry>,
    pub stats: ExploreStats,
    pub blocks: BTreeSet<usize>,
}

impl ExploreReport {
    /// Writes `program.asm`, `seed.bin`, `stats.txt` and one
    /// `out-<site>-<n>.bin` per generated input into `dir`.
    pub fn write(&self, dir: &Path, prog: &Program, seed: &[u8]) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for e in fs::read_dir(dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if name.starts_with("out-") && name.ends_with(".bin") {
                fs::remove_file(dir.join(name))?;
            }
        }
        fs::write(dir.join("program.asm"), &prog.source)?;
        fs::write(dir.join("seed.bin"), seed)?;
        fs::write(dir.join("stats.txt"), self.stats.report())?;
        for (n, e) in self.corpus.iter().enumerate() {
            fs::write(dir.join(format!("out-{}-{n}.bin", e.input.site)), &e.input.bytes)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct GroupResult {
    queries: usize,
    unsat: usize,
    inconclusive: usize,
    errors: usize,
    generated: Option<GeneratedInput>,
}

type CacheKey = (usize, Option<usize>);

fn cache_key(q: &QueryTarget) -> CacheKey {
    match q.outcome {
        Outcome::Taken(_) => (q.site, None),
        Outcome::Target(t) => (q.site, Some(t)),
    }
}

/// One concolic pass over `seed`, then one query per alternative branch
/// outcome in trace order. With the static cache, a branch site (or jump
/// target) is never queried again once an input for it was generated.
/// Queries for different sites run on up to `cfg.jobs` threads.
pub fn explore(prog: &Program, seed: &[u8], cfg: &ExploreConfig) -> Result<ExploreReport, ExecError> {
    let start = Instant::now();
    let seed_run = run_concolic(prog, seed, &cfg.run)?;
    let pp = &seed_run.predicate;
    let mut stats = ExploreStats {
        total_branches: seed_run.stats.total_branches,
        unique_branches: seed_run.stats.unique_sites.len(),
        symbolic_reads: seed_run.stats.symbolic_reads,
        program_blocks: prog.block_leaders().len(),
        ..Default::default()
    };

    let mut groups: Vec<Vec<QueryTarget>> = Vec::new();
    let mut slot: HashMap<CacheKey, usize> = HashMap::new();
    for q in query_targets(pp) {
        match slot.get(&cache_key(&q)) {
            Some(&i) if cfg.static_cache => groups[i].push(q),
            _ => {
                slot.insert(cache_key(&q), groups.len());
                groups.push(vec![q]);
            }
        }
    }

    let issued = AtomicUsize::new(0);
    let solve_group = |group: &Vec<QueryTarget>| -> GroupResult {
        let mut r = GroupResult::default();
        'targets: for q in group {
            for optimistic in [false, true] {
                if optimistic && !cfg.optimistic {
                    break;
                }
                if cfg.max_queries.is_some_and(|m| issued.fetch_add(1, Ordering::SeqCst) >= m) {
                    break 'targets;
                }
                r.queries += 1;
                match solve_target(pp, seed, q, optimistic, &cfg.solver, cfg.timeout) {
                    Ok(Inversion::Generated(gi)) => {
                        r.generated = Some(gi);
                        break 'targets;
                    }
                    Ok(Inversion::Unsat) => r.unsat += 1,
                    Ok(Inversion::Inconclusive(_)) => {
                        r.inconclusive += 1;
                        break;
                    }
                    Err(_) => {
                        r.errors += 1;
                        break;
                    }
                }
            }
        }
        r
    };
    let results: Vec<GroupResult> = match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build() {
        Ok(pool) => pool.install(|| groups.par_iter().map(solve_group).collect()),
        Err(_) => groups.iter().map(solve_group).collect(),
    };

    let mut blocks = seed_run.blocks.clone();
    let mut corpus = Vec::new();
    for r in results {
        stats.queries += r.queries;
        stats.unsat += r.unsat;
        stats.inconclusive += r.inconclusive;
        stats.errors += r.errors;
        let Some(gi) = r.generated else { continue };
        stats.sat += 1;
        stats.optimistic_inputs += gi.optimistic as usize;
        let (verdict, replay) = replay_check(prog, &cfg.run, &seed_run, &gi)?;
        if verdict == ReplayVerdict::Correct {
            stats.correct += 1;
        }
        blocks.extend(replay.blocks.iter().copied());
        corpus.push(CorpusEntry { input: gi, verdict });
    }
    stats.blocks = blocks.len();
    stats.elapsed = start.elapsed();
    Ok(ExploreReport {
        seed_run,
        corpus,
        stats,
        blocks,
    })
}

/// Basic blocks reached by concrete runs of `inputs`.
pub fn replay_corpus(prog: &Program, inputs: &[Vec<u8>]) -> Result<BTreeSet<usize>, ExecError> {
    let cfg = RunConfig {
        symaddr: false,
        ..Default::default()
    };
    let mut blocks = BTreeSet::new();
    for i in inputs {
        blocks.extend(run_concolic(prog, i, &cfg)?.blocks);
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovDiff {
    pub program_blocks: usize,
    pub only_a: BTreeSet<usize>,
    pub only_b: BTreeSet<usize>,
    pub both: BTreeSet<usize>,
}

impl CovDiff {
    pub fn report(&self) -> String {
        let pct = |n: usize| {
            if self.program_blocks == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.program_blocks as f64
            }
        };
        let mut s = String::new();
        let _ = writeln!(s, "program_blocks={}", self.program_blocks);
        for (k, set) in [("a_minus_b", &self.only_a), ("b_minus_a", &self.only_b), ("a_and_b", &self.both)] {
            let _ = writeln!(s, "{k}={}", set.len());
            let _ = writeln!(s, "{k}_pct={:.1}", pct(set.len()));
        }
        s
    }
}

fn read_run_dir(dir: &Path) -> io::Result<(String, Vec<Vec<u8>>)> {
    let program = fs::read_to_string(dir.join("program.asm"))?;
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n == "seed.bin" || (n.starts_with("out-") && n.ends_with(".bin")))
        .collect();
    names.sort();
    let inputs = names.iter().map(|n| fs::read(dir.join(n))).collect::<io::Result<_>>()?;
    Ok((program, inputs))
}

#[derive(Debug, thiserror::Error)]
pub enum CovDiffError {
    #[error("{0}: {1}")]
    Io(String, io::Error),
    #[error("runs were made on different programs")]
    ProgramMismatch,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Replays the corpora (seed included) of two run directories and compares
/// the basic blocks they reach.
pub fn covdiff(run_a: &Path, run_b: &Path) -> Result<CovDiff, CovDiffError> {
    let (pa, ia) = read_run_dir(run_a).map_err(|e| CovDiffError::Io(run_a.display().to_string(), e))?;
    let (pb, ib) = read_run_dir(run_b).map_err(|e| CovDiffError::Io(run_b.display().to_string(), e))?;
    if pa != pb {
        return Err(CovDiffError::ProgramMismatch);
    }
    let prog: Program = pa.parse()?;
    let a = replay_corpus(&prog, &ia)?;
    let b = replay_corpus(&prog, &ib)?;
    Ok(CovDiff {
        program_blocks: prog.block_leaders().len(),
        only_a: a.difference(&b).copied().collect(),
        only_b: b.difference(&a).copied().collect(),
        both: a.intersection(&b).copied().collect(),
    })
}
