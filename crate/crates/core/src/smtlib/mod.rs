//! QF_BV SMT-LIBv2 emission and external solver processes.

mod process;

pub use process::{check, Session, SolverCommand, SOLVER_ENV};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::expr::{eval, Assignment, BinaryOp, BitVecExpr, ExprKind, UnaryOp};
use crate::expr::sexpr::literal;
use crate::expr::Node;

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("variable `{0}` is used but not declared")]
    UndeclaredVariable(String),
    #[error("assertion has width {0}, expected 1")]
    NonBooleanAssertion(u32),
    #[error("could not start solver `{cmd}`: {reason}")]
    SolverSpawn { cmd: String, reason: String },
    #[error("malformed solver output: {0}")]
    Parse(String),
    #[error("solver i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Goal {
    CheckSat,
    GetModel(Vec<Arc<str>>),
}

/// A QF_BV query: declarations, 1-bit assertions and a goal.
#[derive(Debug, Clone)]
pub struct Script {
    pub declarations: BTreeMap<Arc<str>, u32>,
    pub assertions: Vec<BitVecExpr>,
    pub goal: Goal,
}

impl Script {
    /// Declares exactly the free variables of `assertions`.
    pub fn new(assertions: Vec<BitVecExpr>, goal: Goal) -> Self {
        let mut declarations = BTreeMap::new();
        for a in &assertions {
            declarations.extend(a.variables());
        }
        Script {
            declarations,
            assertions,
            goal,
        }
    }

    /// Like [`Script::new`] with a model request for every declared variable.
    pub fn with_model(assertions: Vec<BitVecExpr>) -> Self {
        let mut s = Self::new(assertions, Goal::CheckSat);
        s.goal = Goal::GetModel(s.declarations.keys().cloned().collect());
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Sat,
    Unsat,
    Unknown,
    Timeout,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Sat => "sat",
            Status::Unsat => "unsat",
            Status::Unknown => "unknown",
            Status::Timeout => "T/O",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverVerdict {
    pub status: Status,
    pub model: Option<Assignment>,
    pub wall_time: Duration,
}

/// Renders `script` as SMT-LIBv2 text.
///
/// Sub-expressions referenced more than once are bound with `define-fun`
/// so the text stays linear in the size of the expression DAG.
pub fn emit(script: &Script) -> Result<String, SmtError> {
    let mut out = String::from("(set-logic QF_BV)\n");
    for a in &script.assertions {
        if a.width() != 1 {
            return Err(SmtError::NonBooleanAssertion(a.width()));
        }
        for name in a.variables().keys() {
            if !script.declarations.contains_key(name) {
                return Err(SmtError::UndeclaredVariable(name.to_string()));
            }
        }
    }
    if let Goal::GetModel(vars) = &script.goal {
        for v in vars {
            if !script.declarations.contains_key(v) {
                return Err(SmtError::UndeclaredVariable(v.to_string()));
            }
        }
    }
    for (name, w) in &script.declarations {
        let _ = writeln!(out, "(declare-const {name} (_ BitVec {w}))");
    }
    let mut em = Emitter::new(&script.assertions);
    for a in &script.assertions {
        let body = em.boolean(a);
        em.flush_defs(&mut out);
        let _ = writeln!(out, "(assert {body})");
    }
    out.push_str("(check-sat)\n");
    if let Goal::GetModel(vars) = &script.goal {
        if !vars.is_empty() {
            let names: Vec<&str> = vars.iter().map(|v| &**v).collect();
            let _ = writeln!(out, "(get-value ({}))", names.join(" "));
        }
    }
    out.push_str("(exit)\n");
    Ok(out)
}

/// Script binding `e` to the constant `name`: declarations of its free
/// variables and a `define-fun`, without assertions or `check-sat`.
pub fn emit_definition(name: &str, e: &BitVecExpr) -> String {
    let mut out = String::from("(set-logic QF_BV)\n");
    for (v, w) in e.variables() {
        let _ = writeln!(out, "(declare-const {v} (_ BitVec {w}))");
    }
    let mut em = Emitter::new(std::slice::from_ref(e));
    let body = em.bitvec(e);
    em.flush_defs(&mut out);
    let _ = writeln!(out, "(define-fun {name} () (_ BitVec {}) {body})", e.width());
    out
}

/// Emits a single expression as a bitvector term without sharing, for
/// human-facing summaries.
pub fn term_text(e: &BitVecExpr) -> String {
    let mut em = Emitter::new(&[]);
    em.inline_all = true;
    em.bitvec(e)
}

pub(crate) struct Emitter {
    refs: HashMap<*const Node, usize>,
    names: HashMap<*const Node, String>,
    pending: Vec<String>,
    next: usize,
    inline_all: bool,
}

impl Emitter {
    pub(crate) fn new(roots: &[BitVecExpr]) -> Self {
        let mut refs: HashMap<*const Node, usize> = HashMap::new();
        let mut stack: Vec<&BitVecExpr> = roots.iter().collect();
        while let Some(e) = stack.pop() {
            let c = refs.entry(e.ptr()).or_insert(0);
            *c += 1;
            if *c == 1 {
                stack.extend(e.children());
            }
        }
        Emitter {
            refs,
            names: HashMap::new(),
            pending: Vec::new(),
            next: 0,
            inline_all: false,
        }
    }

    pub(crate) fn flush_defs(&mut self, out: &mut String) {
        for d in self.pending.drain(..) {
            out.push_str(&d);
            out.push('\n');
        }
    }

    fn shared(&self, e: &BitVecExpr) -> bool {
        !self.inline_all
            && !e.children().is_empty()
            && self.refs.get(&e.ptr()).copied().unwrap_or(0) > 1
    }

    /// Bitvector-sorted text for `e`, binding shared nodes on first use.
    pub(crate) fn bitvec(&mut self, e: &BitVecExpr) -> String {
        if let Some(n) = self.names.get(&e.ptr()) {
            return n.clone();
        }
        let body = self.bitvec_body(e);
        if self.shared(e) {
            let name = format!("sr!{}", self.next);
            self.next += 1;
            self.pending.push(format!(
                "(define-fun {name} () (_ BitVec {}) {body})",
                e.width()
            ));
            self.names.insert(e.ptr(), name.clone());
            name
        } else {
            body
        }
    }

    fn bitvec_body(&mut self, e: &BitVecExpr) -> String {
        match e.kind() {
            ExprKind::Const(v) => literal(v),
            ExprKind::Var(name) => name.to_string(),
            ExprKind::Unary(op, a) => {
                let a = self.bitvec(a);
                match op {
                    UnaryOp::Not => format!("(bvnot {a})"),
                    UnaryOp::Neg => format!("(bvneg {a})"),
                }
            }
            ExprKind::Binary(op, _, _) if op.is_comparison() => {
                format!("(ite {} #b1 #b0)", self.compare(e))
            }
            ExprKind::Binary(op, a, b) => {
                let name = match op {
                    BinaryOp::Add => "bvadd",
                    BinaryOp::Sub => "bvsub",
                    BinaryOp::Mul => "bvmul",
                    BinaryOp::And => "bvand",
                    BinaryOp::Or => "bvor",
                    BinaryOp::Xor => "bvxor",
                    _ => unreachable!(),
                };
                let (a, b) = (self.bitvec(a), self.bitvec(b));
                format!("({name} {a} {b})")
            }
            ExprKind::Ite(c, t, f) => {
                let c = self.boolean(c);
                let (t, f) = (self.bitvec(t), self.bitvec(f));
                format!("(ite {c} {t} {f})")
            }
            ExprKind::Extract { hi, lo, arg } => {
                format!("((_ extract {hi} {lo}) {})", self.bitvec(arg))
            }
            ExprKind::Extend { signed, by, arg } => {
                let n = if *signed { "sign_extend" } else { "zero_extend" };
                format!("((_ {n} {by}) {})", self.bitvec(arg))
            }
            ExprKind::Concat(h, l) => {
                let (h, l) = (self.bitvec(h), self.bitvec(l));
                format!("(concat {h} {l})")
            }
        }
    }

    fn compare(&mut self, e: &BitVecExpr) -> String {
        let ExprKind::Binary(op, a, b) = e.kind() else {
            unreachable!()
        };
        let name = match op {
            BinaryOp::Eq => "=",
            BinaryOp::Ult => "bvult",
            BinaryOp::Slt => "bvslt",
            BinaryOp::Ule => "bvule",
            BinaryOp::Sle => "bvsle",
            _ => unreachable!(),
        };
        let (a, b) = (self.bitvec(a), self.bitvec(b));
        format!("({name} {a} {b})")
    }

    /// Bool-sorted text for a 1-bit expression.
    pub(crate) fn boolean(&mut self, e: &BitVecExpr) -> String {
        debug_assert_eq!(e.width(), 1);
        if self.names.contains_key(&e.ptr()) || self.shared(e) {
            return format!("(= {} #b1)", self.bitvec(e));
        }
        match e.kind() {
            ExprKind::Const(v) => if v.is_true() { "true" } else { "false" }.into(),
            ExprKind::Binary(op, _, _) if op.is_comparison() => self.compare(e),
            ExprKind::Binary(op @ (BinaryOp::And | BinaryOp::Or | BinaryOp::Xor), a, b) => {
                let name = match op {
                    BinaryOp::And => "and",
                    BinaryOp::Or => "or",
                    _ => "xor",
                };
                let (a, b) = (self.boolean(a), self.boolean(b));
                format!("({name} {a} {b})")
            }
            ExprKind::Unary(UnaryOp::Not, a) => format!("(not {})", self.boolean(a)),
            ExprKind::Ite(c, t, f) => {
                let (c, t, f) = (self.boolean(c), self.boolean(t), self.boolean(f));
                format!("(ite {c} {t} {f})")
            }
            _ => format!("(= {} #b1)", self.bitvec(e)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Equivalence {
    Equal,
    Differs(Assignment),
    Inconclusive(Status),
}

/// Checks `domain ∧ e1 ≠ e2`. Unsat means the two agree everywhere in
/// `domain`; a model is a distinguishing witness.
pub fn prove_equal(
    e1: &BitVecExpr,
    e2: &BitVecExpr,
    domain: &BitVecExpr,
    solver: &SolverCommand,
    timeout: Duration,
) -> Result<Equivalence, SmtError> {
    let differ = e1.eq_(e2).not();
    let script = Script::with_model(vec![domain.clone(), differ]);
    let verdict = check(&script, solver, timeout)?;
    Ok(match verdict.status {
        Status::Unsat => Equivalence::Equal,
        Status::Sat => {
            let model = verdict.model.unwrap_or_default();
            // a witness the evaluator disagrees with points at a bridging bug
            debug_assert!(
                eval(&e1.eq_(e2), &model).map(|v| !v.is_true()).unwrap_or(true),
                "solver witness does not distinguish the expressions"
            );
            Equivalence::Differs(model)
        }
        s => Equivalence::Inconclusive(s),
    })
}
