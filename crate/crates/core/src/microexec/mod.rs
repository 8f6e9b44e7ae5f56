//! A small concolic executor over a register VM: runs programs on concrete
//! input while tracking input-derived expressions, models loads from
//! symbolic addresses, and inverts branches through an external solver.

mod asm;
mod explore;
mod vm;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::expr::BitVecExpr;
use crate::smtlib::{self, Script, SmtError, SolverCommand, Status};

pub use asm::{ArithOp, Cond, DataBlock, Instr, MemOperand, Program, Src, MAX_MEMORY, NUM_REGS};
pub use explore::{
    covdiff, explore, replay_corpus, CorpusEntry, CovDiff, CovDiffError, ExploreConfig, ExploreReport, ExploreStats,
};
pub use vm::{
    input_assignment, input_var, predicate_holds, run_concolic, BranchConstraint, BranchEvent, Constraint,
    ExitStatus, Outcome, PathPredicate, RunConfig, RunResult, RunStats,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("constraint {0} is not a branch")]
    NotABranch(usize),
}

/// Keeps the constraints that share input variables with `target`,
/// transitively through other constraints.
pub fn slice_predicate(pp: &PathPredicate, target: &BitVecExpr) -> PathPredicate {
    let keep = slice_indices(&pp.constraints, target);
    PathPredicate {
        constraints: keep.into_iter().map(|i| pp.constraints[i].clone()).collect(),
        input_len: pp.input_len,
        status: pp.status.clone(),
    }
}

fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn slice_indices(constraints: &[Constraint], target: &BitVecExpr) -> Vec<usize> {
    let mut ids: HashMap<Arc<str>, usize> = HashMap::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut id = |name: Arc<str>, parent: &mut Vec<usize>| {
        *ids.entry(name).or_insert_with(|| {
            parent.push(parent.len());
            parent.len() - 1
        })
    };
    let vars: Vec<Vec<usize>> = constraints
        .iter()
        .map(|c| c.expr().variables().into_keys().map(|n| id(n, &mut parent)).collect())
        .collect();
    let target_vars: Vec<usize> = target.variables().into_keys().map(|n| id(n, &mut parent)).collect();
    for vs in vars.iter().chain(std::iter::once(&target_vars)) {
        for w in vs.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let roots: Vec<usize> = target_vars.iter().map(|&v| find(&mut parent, v)).collect();
    (0..constraints.len())
        .filter(|&i| vars[i].first().is_some_and(|&v| roots.contains(&find(&mut parent, v))))
        .collect()
}

/// One `(target, idx == k)` pair per table entry; a single pair for the
/// taken entry when the index is concrete.
pub fn jump_table_targets(entries: &[usize], idx_expr: Option<&BitVecExpr>, concrete_idx: u64) -> Vec<(usize, BitVecExpr)> {
    match idx_expr {
        Some(e) => entries
            .iter()
            .enumerate()
            .map(|(k, &t)| (t, e.eq_(&BitVecExpr::from_u64(k as u64, e.width()))))
            .collect(),
        None => entries
            .get(concrete_idx as usize)
            .map(|&t| vec![(t, BitVecExpr::bool_const(true))])
            .unwrap_or_default(),
    }
}

/// A new input aimed at sending the branch at constraint `pos` to `outcome`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedInput {
    pub bytes: Vec<u8>,
    pub site: usize,
    pub pos: usize,
    pub outcome: Outcome,
    pub optimistic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inversion {
    Generated(GeneratedInput),
    Unsat,
    Inconclusive(Status),
}

/// One solver query: reach `outcome` at the branch of constraint `pos`.
#[derive(Debug, Clone)]
pub struct QueryTarget {
    pub pos: usize,
    pub site: usize,
    pub goal: BitVecExpr,
    pub outcome: Outcome,
}

/// Every alternative outcome of every symbolic branch, in trace order.
pub fn query_targets(pp: &PathPredicate) -> Vec<QueryTarget> {
    let mut out = Vec::new();
    for (pos, b) in pp.branches() {
        if b.is_jump_table() {
            let mut targets: Vec<usize> = b.alternatives.iter().map(|a| a.0).filter(|&t| t != b.target).collect();
            targets.sort_unstable();
            targets.dedup();
            for t in targets {
                let mut conds = b.alternatives.iter().filter(|a| a.0 == t).map(|a| a.1.clone());
                let first = conds.next().unwrap();
                out.push(QueryTarget {
                    pos,
                    site: b.site,
                    goal: conds.fold(first, |acc, c| acc.or(&c)),
                    outcome: Outcome::Target(t),
                });
            }
        } else {
            out.push(QueryTarget {
                pos,
                site: b.site,
                goal: b.holds().not(),
                outcome: Outcome::Taken(!b.taken),
            });
        }
    }
    out
}

/// Solves for `q`. Normal mode asserts the branch constraints before `q.pos`
/// that share variables with the goal; optimistic mode asserts the goal
/// alone. Input bytes the model leaves out keep their original values.
pub fn solve_target(
    pp: &PathPredicate,
    input: &[u8],
    q: &QueryTarget,
    optimistic: bool,
    solver: &SolverCommand,
    timeout: Duration,
) -> Result<Inversion, SmtError> {
    let mut assertions = Vec::new();
    if !optimistic {
        let prefix: Vec<Constraint> = pp.constraints[..q.pos]
            .iter()
            .filter(|c| c.as_branch().is_some())
            .cloned()
            .collect();
        for i in slice_indices(&prefix, &q.goal) {
            assertions.push(prefix[i].expr());
        }
    }
    assertions.push(q.goal.clone());
    let script = Script::with_model(assertions);
    let verdict = smtlib::check(&script, solver, timeout)?;
    match verdict.status {
        Status::Sat => {
            let mut bytes = input.to_vec();
            if let Some(model) = verdict.model {
                for (name, v) in model.iter() {
                    let k = name.strip_prefix("in_").and_then(|k| k.parse::<usize>().ok());
                    if let Some(k) = k.filter(|&k| k < bytes.len()) {
                        bytes[k] = v.low_u64() as u8;
                    }
                }
            }
            Ok(Inversion::Generated(GeneratedInput {
                bytes,
                site: q.site,
                pos: q.pos,
                outcome: q.outcome,
                optimistic,
            }))
        }
        Status::Unsat => Ok(Inversion::Unsat),
        s => Ok(Inversion::Inconclusive(s)),
    }
}

/// Inverts the conditional branch at constraint index `i`.
pub fn invert_branch(
    pp: &PathPredicate,
    input: &[u8],
    i: usize,
    optimistic: bool,
    solver: &SolverCommand,
    timeout: Duration,
) -> Result<Inversion, SmtError> {
    let b = pp
        .constraints
        .get(i)
        .and_then(Constraint::as_branch)
        .ok_or_else(|| SmtError::Parse(ExecError::NotABranch(i).to_string()))?;
    let q = QueryTarget {
        pos: i,
        site: b.site,
        goal: b.holds().not(),
        outcome: Outcome::Taken(!b.taken),
    };
    solve_target(pp, input, &q, optimistic, solver, timeout)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayVerdict {
    Correct,
    Diverged { site: usize },
}

/// Reruns the program on a generated input: correct when every branch before
/// the targeted one went the same way and the targeted one reached the
/// requested outcome.
pub fn replay_check(
    prog: &Program,
    cfg: &RunConfig,
    original: &RunResult,
    gi: &GeneratedInput,
) -> Result<(ReplayVerdict, RunResult), ExecError> {
    let b = original.predicate.constraints[gi.pos]
        .as_branch()
        .ok_or(ExecError::NotABranch(gi.pos))?;
    let replay = run_concolic(prog, &gi.bytes, cfg)?;
    Ok((verdict_for(&original.branches, &replay.branches, b.trace_pos, gi.site, gi.outcome), replay))
}

fn verdict_for(orig: &[BranchEvent], replay: &[BranchEvent], pos: usize, site: usize, outcome: Outcome) -> ReplayVerdict {
    for (j, ev) in orig[..pos].iter().enumerate() {
        if replay.get(j) != Some(ev) {
            return ReplayVerdict::Diverged { site: ev.site };
        }
    }
    match replay.get(pos) {
        Some(ev) if ev.site == site && ev.outcome == outcome => ReplayVerdict::Correct,
        _ => ReplayVerdict::Diverged { site },
    }
}
