//! Immutable bitvector expressions.
//!
//! Booleans are 1-bit bitvectors. Nodes are reference counted and carry a
//! precomputed content hash, so structurally equal expressions compare equal
//! cheaply and can be shared freely between threads.

mod eval;
pub(crate) mod sexpr;

pub use eval::{eval, Assignment};
pub use sexpr::{parse_expr, Declarations};

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::bv::{BvValue, MAX_WIDTH};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error("width {0} outside 1..=512")]
    BadWidth(u32),
    #[error("expression is not concrete (mentions `{0}`)")]
    NotConcrete(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Eq,
    Ult,
    Slt,
    Ule,
    Sle,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq | BinaryOp::Ult | BinaryOp::Slt | BinaryOp::Ule | BinaryOp::Sle
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ExprKind {
    Const(BvValue),
    Var(Arc<str>),
    Unary(UnaryOp, BitVecExpr),
    Binary(BinaryOp, BitVecExpr, BitVecExpr),
    Ite(BitVecExpr, BitVecExpr, BitVecExpr),
    Extract { hi: u32, lo: u32, arg: BitVecExpr },
    Extend { signed: bool, by: u32, arg: BitVecExpr },
    Concat(BitVecExpr, BitVecExpr),
}

#[derive(Debug)]
pub struct Node {
    kind: ExprKind,
    width: u32,
    hash: u64,
}

/// A shared, immutable bitvector expression.
#[derive(Clone)]
pub struct BitVecExpr(Arc<Node>);

impl PartialEq for BitVecExpr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.width == other.0.width
                && self.0.kind == other.0.kind)
    }
}

impl Eq for BitVecExpr {}

impl Hash for BitVecExpr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for BitVecExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for BitVecExpr {
    /// Self-contained s-expression; variables are written qualified with
    /// their sort so the text parses back without declarations.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&sexpr::print(self, sexpr::VarStyle::Qualified))
    }
}

fn check_width(w: u32) -> Result<u32, ExprError> {
    if (1..=MAX_WIDTH).contains(&w) {
        Ok(w)
    } else {
        Err(ExprError::BadWidth(w))
    }
}

impl BitVecExpr {
    fn mk(kind: ExprKind, width: u32) -> Self {
        let mut h = DefaultHasher::new();
        kind.hash(&mut h);
        width.hash(&mut h);
        BitVecExpr(Arc::new(Node {
            kind,
            width,
            hash: h.finish(),
        }))
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    pub(crate) fn is_shared(&self) -> bool {
        Arc::strong_count(&self.0) > 1
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn constant(value: BvValue) -> Self {
        let w = value.width();
        Self::mk(ExprKind::Const(value), w)
    }

    pub fn from_u64(value: u64, width: u32) -> Self {
        Self::constant(BvValue::from_u64(value, width))
    }

    pub fn from_i128(value: i128, width: u32) -> Self {
        Self::constant(BvValue::from_i128(value, width))
    }

    pub fn bool_const(b: bool) -> Self {
        Self::constant(BvValue::from_bool(b))
    }

    pub fn var(name: impl Into<Arc<str>>, width: u32) -> Result<Self, ExprError> {
        check_width(width)?;
        Ok(Self::mk(ExprKind::Var(name.into()), width))
    }

    pub fn unary(op: UnaryOp, a: BitVecExpr) -> Self {
        let w = a.width();
        Self::mk(ExprKind::Unary(op, a), w)
    }

    pub fn binary(op: BinaryOp, a: BitVecExpr, b: BitVecExpr) -> Result<Self, ExprError> {
        if a.width() != b.width() {
            return Err(ExprError::WidthMismatch(format!(
                "{op:?} operands have widths {} and {}",
                a.width(),
                b.width()
            )));
        }
        let w = if op.is_comparison() { 1 } else { a.width() };
        Ok(Self::mk(ExprKind::Binary(op, a, b), w))
    }

    pub fn ite(cond: BitVecExpr, then: BitVecExpr, els: BitVecExpr) -> Result<Self, ExprError> {
        if cond.width() != 1 {
            return Err(ExprError::WidthMismatch(format!(
                "ite condition has width {}",
                cond.width()
            )));
        }
        if then.width() != els.width() {
            return Err(ExprError::WidthMismatch(format!(
                "ite branches have widths {} and {}",
                then.width(),
                els.width()
            )));
        }
        let w = then.width();
        Ok(Self::mk(ExprKind::Ite(cond, then, els), w))
    }

    pub fn extract(hi: u32, lo: u32, arg: BitVecExpr) -> Result<Self, ExprError> {
        if hi < lo || hi >= arg.width() {
            return Err(ExprError::WidthMismatch(format!(
                "extract [{hi}:{lo}] from width {}",
                arg.width()
            )));
        }
        Ok(Self::mk(ExprKind::Extract { hi, lo, arg }, hi - lo + 1))
    }

    pub fn extend(signed: bool, by: u32, arg: BitVecExpr) -> Result<Self, ExprError> {
        let w = check_width(arg.width() + by)?;
        Ok(Self::mk(ExprKind::Extend { signed, by, arg }, w))
    }

    pub fn concat(high: BitVecExpr, low: BitVecExpr) -> Result<Self, ExprError> {
        let w = check_width(high.width() + low.width())?;
        Ok(Self::mk(ExprKind::Concat(high, low), w))
    }

    // Infallible helpers for callers that already guarantee matching widths.

    pub fn add(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Add, self.clone(), rhs.clone()).expect("bvadd width")
    }

    pub fn sub(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Sub, self.clone(), rhs.clone()).expect("bvsub width")
    }

    pub fn mul(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Mul, self.clone(), rhs.clone()).expect("bvmul width")
    }

    pub fn eq_(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Eq, self.clone(), rhs.clone()).expect("= width")
    }

    pub fn ult(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Ult, self.clone(), rhs.clone()).expect("bvult width")
    }

    pub fn ule(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Ule, self.clone(), rhs.clone()).expect("bvule width")
    }

    pub fn or(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::Or, self.clone(), rhs.clone()).expect("bvor width")
    }

    pub fn and(&self, rhs: &BitVecExpr) -> Self {
        Self::binary(BinaryOp::And, self.clone(), rhs.clone()).expect("bvand width")
    }

    pub fn not(&self) -> Self {
        Self::unary(UnaryOp::Not, self.clone())
    }

    pub fn select(&self, then: &BitVecExpr, els: &BitVecExpr) -> Self {
        Self::ite(self.clone(), then.clone(), els.clone()).expect("ite widths")
    }

    pub fn zext(&self, by: u32) -> Self {
        if by == 0 {
            return self.clone();
        }
        Self::extend(false, by, self.clone()).expect("zero_extend width")
    }

    /// Resizes to `width` by zero extension or truncation of high bits.
    pub fn resize(&self, width: u32) -> Self {
        match width.cmp(&self.width()) {
            std::cmp::Ordering::Equal => self.clone(),
            std::cmp::Ordering::Greater => self.zext(width - self.width()),
            std::cmp::Ordering::Less => {
                Self::extract(width - 1, 0, self.clone()).expect("extract width")
            }
        }
    }

    /// S-expression with plain variable names, for use alongside
    /// declarations.
    pub fn to_bare_string(&self) -> String {
        sexpr::print(self, sexpr::VarStyle::Bare)
    }

    pub fn as_const(&self) -> Option<&BvValue> {
        match self.kind() {
            ExprKind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&BitVecExpr> {
        match self.kind() {
            ExprKind::Const(_) | ExprKind::Var(_) => vec![],
            ExprKind::Unary(_, a) => vec![a],
            ExprKind::Binary(_, a, b) | ExprKind::Concat(a, b) => vec![a, b],
            ExprKind::Ite(c, t, e) => vec![c, t, e],
            ExprKind::Extract { arg, .. } | ExprKind::Extend { arg, .. } => vec![arg],
        }
    }

    /// Free variables with their widths, sorted by name.
    pub fn variables(&self) -> BTreeMap<Arc<str>, u32> {
        let mut out = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr()) {
                continue;
            }
            if let ExprKind::Var(name) = e.kind() {
                out.insert(name.clone(), e.width());
            }
            stack.extend(e.children());
        }
        out
    }

    pub fn is_concrete(&self) -> bool {
        self.variables().is_empty()
    }

    /// Folds every variable-free subtree into a constant. No other rewriting.
    pub fn fold_constants(&self) -> BitVecExpr {
        if self.as_const().is_some() || matches!(self.kind(), ExprKind::Var(_)) {
            return self.clone();
        }
        if self.is_concrete() {
            let v = eval(self, &Assignment::new()).expect("concrete expression evaluates");
            return Self::constant(v);
        }
        let kids: Vec<BitVecExpr> = self.children().into_iter().map(|c| c.fold_constants()).collect();
        self.with_children(&kids)
    }

    fn with_children(&self, kids: &[BitVecExpr]) -> BitVecExpr {
        match self.kind() {
            ExprKind::Const(_) | ExprKind::Var(_) => self.clone(),
            ExprKind::Unary(op, _) => Self::unary(*op, kids[0].clone()),
            ExprKind::Binary(op, _, _) => {
                Self::binary(*op, kids[0].clone(), kids[1].clone()).expect("same widths")
            }
            ExprKind::Concat(_, _) => Self::concat(kids[0].clone(), kids[1].clone()).expect("same widths"),
            ExprKind::Ite(..) => Self::ite(kids[0].clone(), kids[1].clone(), kids[2].clone()).expect("same widths"),
            ExprKind::Extract { hi, lo, .. } => Self::extract(*hi, *lo, kids[0].clone()).expect("same widths"),
            ExprKind::Extend { signed, by, .. } => Self::extend(*signed, *by, kids[0].clone()).expect("same widths"),
        }
    }

    /// Replaces every occurrence of variable `name` with `with`.
    pub fn substitute(&self, name: &str, with: &BitVecExpr) -> BitVecExpr {
        let mut memo = std::collections::HashMap::new();
        self.substitute_memo(name, with, &mut memo)
    }

    fn substitute_memo(
        &self,
        name: &str,
        with: &BitVecExpr,
        memo: &mut std::collections::HashMap<*const Node, BitVecExpr>,
    ) -> BitVecExpr {
        if let Some(done) = memo.get(&self.ptr()) {
            return done.clone();
        }
        let out = match self.kind() {
            ExprKind::Var(n) if &**n == name => with.clone(),
            ExprKind::Const(_) | ExprKind::Var(_) => self.clone(),
            _ => {
                let kids: Vec<BitVecExpr> = self
                    .children()
                    .into_iter()
                    .map(|c| c.substitute_memo(name, with, memo))
                    .collect();
                self.with_children(&kids)
            }
        };
        memo.insert(self.ptr(), out.clone());
        out
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if seen.insert(e.ptr()) {
                stack.extend(e.children());
            }
        }
        seen.len()
    }
}

/// Splits the top-level `+`/`-` spine of `e` into the variable-free terms
/// (the concrete part) and everything else (the symbolic part).
///
/// Traversal stops at the first node that is not an addition or subtraction;
/// such nodes are atomic terms. Subtracted terms are negated. Each side is
/// re-summed left to right and is `None` when empty.
pub fn split_concrete_symbolic(e: &BitVecExpr) -> (Option<BitVecExpr>, Option<BitVecExpr>) {
    let mut terms = Vec::new();
    spine_terms(e, false, &mut terms);
    let (conc, sym): (Vec<_>, Vec<_>) = terms.into_iter().partition(|(t, _)| t.is_concrete());
    (sum_terms(conc), sum_terms(sym))
}

fn spine_terms(e: &BitVecExpr, negated: bool, out: &mut Vec<(BitVecExpr, bool)>) {
    match e.kind() {
        ExprKind::Binary(BinaryOp::Add, a, b) => {
            spine_terms(a, negated, out);
            spine_terms(b, negated, out);
        }
        ExprKind::Binary(BinaryOp::Sub, a, b) => {
            spine_terms(a, negated, out);
            spine_terms(b, !negated, out);
        }
        _ => out.push((e.clone(), negated)),
    }
}

fn sum_terms(terms: Vec<(BitVecExpr, bool)>) -> Option<BitVecExpr> {
    let mut acc: Option<BitVecExpr> = None;
    for (t, neg) in terms {
        acc = Some(match (acc, neg) {
            (None, false) => t,
            (None, true) => BitVecExpr::unary(UnaryOp::Neg, t),
            (Some(a), false) => a.add(&t),
            (Some(a), true) => a.sub(&t),
        });
    }
    acc
}

/// Decomposes a variable-free expression into its additive terms, each
/// evaluated to a constant. Subtracted terms come back negated (mod 2^width).
pub fn additive_terms(e: &BitVecExpr) -> Result<Vec<BvValue>, ExprError> {
    if let Some(name) = e.variables().keys().next() {
        return Err(ExprError::NotConcrete(name.to_string()));
    }
    let mut terms = Vec::new();
    spine_terms(e, false, &mut terms);
    let empty = Assignment::new();
    terms
        .into_iter()
        .map(|(t, neg)| {
            let v = eval(&t, &empty)?;
            Ok(if neg { v.neg() } else { v })
        })
        .collect()
}
