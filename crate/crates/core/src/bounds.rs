//! Address-range approximation for symbolic memory accesses.
//!
//! The lower bound comes from the address expression itself whenever
//! possible: the variable-free part of the additive spine is split into
//! terms and the largest is taken as the table base. The solver (binary
//! search over the sliced path predicate) and a fixed-size window centred
//! on the concrete address are the fallbacks, and also supply the upper
//! bound.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::bv::BvValue;
use crate::expr::{additive_terms, split_concrete_symbolic, BitVecExpr};
use crate::smtlib::{self, Script, Session, SolverCommand, Status};

pub const DEFAULT_MAX_ELEMENTS: u64 = 64;
pub const DEFAULT_SOLVER_LIMIT: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMethod {
    AstAnalysis,
    SolverSearch,
    ConstantWindow,
}

impl fmt::Display for BoundsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundsMethod::AstAnalysis => "ast",
            BoundsMethod::SolverSearch => "solver",
            BoundsMethod::ConstantWindow => "const",
        })
    }
}

/// `[lower, upper)` window of byte addresses sampled at `access_size` stride
/// starting at `lower`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBounds {
    pub lower: u64,
    pub upper: u64,
    pub access_size: u32,
    pub method_lower: BoundsMethod,
    pub method_upper: BoundsMethod,
}

impl MemoryBounds {
    pub fn elements(&self) -> u64 {
        (self.upper - self.lower) / self.access_size as u64
    }

    pub fn contains(&self, addr: u64) -> bool {
        (self.lower..self.upper).contains(&addr)
    }

    /// Checks the window invariants against a concrete access address.
    pub fn is_valid_for(&self, concrete: u64, max_elements: u64) -> bool {
        let size = self.access_size as u64;
        self.lower <= concrete
            && concrete < self.upper
            && (self.upper - self.lower) % size == 0
            && self.elements() >= 1
            && self.elements() <= max_elements
            && (concrete - self.lower) % size == 0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundsError {
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("invalid bounds policy: {0}")]
    InvalidPolicy(String),
}

/// How bounds are resolved, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMode {
    /// AST lower bound, constant-length upper bound.
    Auto,
    /// Constant window of N elements around the concrete address.
    Constant(u64),
    /// AST lower bound (solver when AST fails), solver upper bound.
    Solver,
}

impl FromStr for BoundsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(BoundsMode::Auto),
            "solver" => Ok(BoundsMode::Solver),
            _ => {
                let n = s
                    .strip_prefix("const:")
                    .and_then(|n| n.parse::<u64>().ok())
                    .ok_or_else(|| format!("expected auto, solver or const:N, got `{s}`"))?;
                if n < 2 {
                    return Err("const:N needs N >= 2".into());
                }
                Ok(BoundsMode::Constant(n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundsPolicy {
    pub use_ast: bool,
    pub use_solver: bool,
    pub max_elements: u64,
    pub solver_limit_bytes: u64,
    pub solver_timeout: Duration,
    /// Largest accepted distance between an AST-derived base and the
    /// concrete address; `None` means `solver_limit_bytes`.
    pub sanity_span: Option<u64>,
}

impl Default for BoundsPolicy {
    fn default() -> Self {
        BoundsPolicy {
            use_ast: true,
            use_solver: false,
            max_elements: DEFAULT_MAX_ELEMENTS,
            solver_limit_bytes: DEFAULT_SOLVER_LIMIT,
            solver_timeout: Duration::from_secs(10),
            sanity_span: None,
        }
    }
}

impl BoundsPolicy {
    pub fn for_mode(mode: BoundsMode, max_elements: u64, solver_limit_bytes: u64) -> Self {
        let base = BoundsPolicy {
            max_elements,
            solver_limit_bytes,
            ..Default::default()
        };
        match mode {
            BoundsMode::Auto => base,
            BoundsMode::Solver => BoundsPolicy {
                use_solver: true,
                ..base
            },
            BoundsMode::Constant(n) => BoundsPolicy {
                use_ast: false,
                max_elements: n,
                ..base
            },
        }
    }

    pub fn validate(&self, access_size: u32) -> Result<(), BoundsError> {
        if self.max_elements < 2 {
            return Err(BoundsError::InvalidPolicy("max_elements must be at least 2".into()));
        }
        if self.solver_limit_bytes < access_size as u64 {
            return Err(BoundsError::InvalidPolicy(
                "solver_limit_bytes smaller than the access size".into(),
            ));
        }
        Ok(())
    }

    fn sanity(&self) -> u64 {
        self.sanity_span.unwrap_or(self.solver_limit_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Satisfiability of a fixed base formula (the predicate slice) plus one
/// extra 1-bit constraint.
pub trait SatOracle {
    fn satisfiable(&mut self, extra: &BitVecExpr) -> Result<bool, BoundsError>;
}

/// [`SatOracle`] backed by an external solver. Uses one incremental session
/// for all queries when `incremental` is set, else one process per query.
pub struct SolverOracle {
    solver: SolverCommand,
    slice: Vec<BitVecExpr>,
    timeout: Duration,
    session: Option<Session>,
    incremental: bool,
    pub queries: usize,
}

impl SolverOracle {
    pub fn new(solver: SolverCommand, slice: Vec<BitVecExpr>, timeout: Duration, incremental: bool) -> Self {
        SolverOracle {
            solver,
            slice,
            timeout,
            session: None,
            incremental,
            queries: 0,
        }
    }

    fn decide(status: Status) -> Result<bool, BoundsError> {
        match status {
            Status::Sat => Ok(true),
            Status::Unsat => Ok(false),
            s => Err(BoundsError::SolverFailure(format!("solver returned {}", s.label()))),
        }
    }
}

impl SatOracle for SolverOracle {
    fn satisfiable(&mut self, extra: &BitVecExpr) -> Result<bool, BoundsError> {
        self.queries += 1;
        let fail = |e: smtlib::SmtError| BoundsError::SolverFailure(e.to_string());
        if self.incremental {
            if self.session.is_none() {
                self.session = Some(Session::start(&self.solver, &self.slice, self.timeout).map_err(fail)?);
            }
            let session = self.session.as_mut().unwrap();
            return Self::decide(session.check_with(std::slice::from_ref(extra)).map_err(fail)?);
        }
        let mut assertions = self.slice.clone();
        assertions.push(extra.clone());
        let script = Script::new(assertions, smtlib::Goal::CheckSat);
        Self::decide(smtlib::check(&script, &self.solver, self.timeout).map_err(fail)?.status)
    }
}

/// Window of `n_elements` accesses placed evenly around `concrete_addr`,
/// clamped at address zero with its length preserved.
pub fn constant_window(concrete_addr: u64, access_size: u32, n_elements: u64) -> MemoryBounds {
    let size = access_size as u64;
    let len = n_elements.saturating_mul(size);
    let lower = concrete_addr.saturating_sub((n_elements / 2).saturating_mul(size));
    MemoryBounds {
        lower,
        upper: lower.saturating_add(len),
        access_size,
        method_lower: BoundsMethod::ConstantWindow,
        method_upper: BoundsMethod::ConstantWindow,
    }
}

/// Largest additive term of the concrete part of `addr_expr`, taken as the
/// table base. `None` when there is no concrete part or the base is not
/// plausible (above the concrete address, or more than `sanity_span` bytes
/// below it).
pub fn infer_lower_bound_ast(addr_expr: &BitVecExpr, concrete_addr: u64, sanity_span: u64) -> Option<u64> {
    let (concrete, _) = split_concrete_symbolic(addr_expr);
    let terms = additive_terms(&concrete?).ok()?;
    let base = terms.iter().max_by(|a, b| a.ucmp(b))?.to_u64()?;
    if base > concrete_addr || concrete_addr - base > sanity_span {
        return None;
    }
    Some(base)
}

fn addr_const(v: u64, width: u32) -> BitVecExpr {
    BitVecExpr::constant(BvValue::from_u64(v, width))
}

fn width_max(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Binary-searches the extreme value `addr_expr` can take within
/// `limit_bytes` of `concrete_addr`. When the expression can leave that
/// window the window edge is returned.
pub fn solver_bound_search(
    oracle: &mut dyn SatOracle,
    addr_expr: &BitVecExpr,
    direction: Direction,
    concrete_addr: u64,
    limit_bytes: u64,
) -> Result<u64, BoundsError> {
    let w = addr_expr.width();
    let c = |v: u64| addr_const(v, w);
    match direction {
        Direction::Max => {
            let edge = concrete_addr.saturating_add(limit_bytes).min(width_max(w));
            if edge > concrete_addr && oracle.satisfiable(&c(edge).ult(addr_expr))? {
                return Ok(edge);
            }
            let (mut lo, mut hi) = (concrete_addr, edge);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if oracle.satisfiable(&c(mid).ult(addr_expr))? {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
        Direction::Min => {
            let edge = concrete_addr.saturating_sub(limit_bytes);
            if edge < concrete_addr && oracle.satisfiable(&addr_expr.ult(&c(edge)))? {
                return Ok(edge);
            }
            let (mut lo, mut hi) = (edge, concrete_addr);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if oracle.satisfiable(&addr_expr.ule(&c(mid)))? {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Ok(lo)
        }
    }
}

/// Resolves the window for one symbolic access. Always returns bounds that
/// contain `concrete_addr` on the access grid and hold at most
/// `policy.max_elements` elements.
pub fn resolve_bounds(
    addr_expr: &BitVecExpr,
    concrete_addr: u64,
    access_size: u32,
    policy: &BoundsPolicy,
    mut oracle: Option<&mut dyn SatOracle>,
) -> MemoryBounds {
    let size = access_size as u64;
    let max = policy.max_elements.max(1);
    let fallback = constant_window(concrete_addr, access_size, max);

    let ast = if policy.use_ast {
        infer_lower_bound_ast(addr_expr, concrete_addr, policy.sanity())
    } else {
        None
    };
    let solver_min = match (ast, policy.use_solver, oracle.as_deref_mut()) {
        (None, true, Some(o)) => {
            solver_bound_search(o, addr_expr, Direction::Min, concrete_addr, policy.solver_limit_bytes).ok()
        }
        _ => None,
    };
    let (mut lower, mut method_lower) = match (ast, solver_min) {
        (Some(b), _) => (b, BoundsMethod::AstAnalysis),
        (None, Some(b)) => (b, BoundsMethod::SolverSearch),
        (None, None) => (fallback.lower, BoundsMethod::ConstantWindow),
    };

    // keep the concrete address on the sampling grid
    let r = (size - (concrete_addr - lower) % size) % size;
    if r != 0 {
        lower = if lower >= r { lower - r } else { concrete_addr % size };
    }

    let solver_max = match (policy.use_solver, oracle) {
        (true, Some(o)) => {
            solver_bound_search(o, addr_expr, Direction::Max, concrete_addr, policy.solver_limit_bytes).ok()
        }
        _ => None,
    };
    let (mut count, method_upper) = match solver_max {
        Some(last) if last >= lower => ((last - lower) / size + 1, BoundsMethod::SolverSearch),
        Some(_) => (1, BoundsMethod::SolverSearch),
        None => (max, BoundsMethod::ConstantWindow),
    };
    count = count.clamp(1, max);

    let current_index = (concrete_addr - lower) / size;
    if current_index >= count {
        if current_index < max {
            count = current_index + 1;
        } else {
            lower = concrete_addr - (max - 1) * size;
            count = max;
            method_lower = BoundsMethod::ConstantWindow;
        }
    }
    // stay inside the address space
    let room = (u64::MAX - lower) / size;
    if count > room {
        let shift = (count - room) * size;
        lower -= shift.min(lower - lower % size);
        count = count.min((u64::MAX - lower) / size);
    }

    MemoryBounds {
        lower,
        upper: lower + count * size,
        access_size,
        method_lower,
        method_upper,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval, Assignment};
    use proptest::prelude::*;

    /// Decides satisfiability by enumerating every value of the 8-bit
    /// variables of the formula (up to two of them).
    pub(crate) struct Enumerate {
        pub base: Vec<BitVecExpr>,
        pub queries: usize,
    }

    impl SatOracle for Enumerate {
        fn satisfiable(&mut self, extra: &BitVecExpr) -> Result<bool, BoundsError> {
            self.queries += 1;
            let mut all = self.base.clone();
            all.push(extra.clone());
            let vars: Vec<_> = all.iter().flat_map(|e| e.variables()).collect::<std::collections::BTreeMap<_, _>>().into_iter().collect();
            assert!(vars.len() <= 2 && vars.iter().all(|(_, w)| *w == 8));
            let combos = 256usize.pow(vars.len() as u32);
            for k in 0..combos {
                let mut a = Assignment::new();
                for (i, (name, _)) in vars.iter().enumerate() {
                    a.insert_u64(name.clone(), 8, ((k >> (8 * i)) & 0xFF) as u64);
                }
                if all.iter().all(|e| eval(e, &a).unwrap().is_true()) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }

    fn x8() -> BitVecExpr {
        BitVecExpr::var("x", 8).unwrap()
    }

    fn table(base: u64, scale: u64) -> BitVecExpr {
        addr_const(base, 64).add(&x8().zext(56).mul(&addr_const(scale, 64)))
    }

    #[test]
    fn constant_window_examples() {
        let b = constant_window(0x5000, 4, 32);
        assert_eq!((b.lower, b.upper), (0x4FC0, 0x5040));
        let b = constant_window(0x10, 8, 2);
        assert_eq!((b.lower, b.upper), (0x8, 0x18));
        let b = constant_window(0x4, 8, 4);
        assert_eq!((b.lower, b.upper), (0x0, 0x20));
    }

    #[test]
    fn ast_lower_bound_examples() {
        assert_eq!(infer_lower_bound_ast(&table(0x201020, 4), 0x201028, 4096), Some(0x201020));
        let nested = addr_const(0x201020, 64).add(&addr_const(0x100, 64)).add(&x8().zext(56));
        assert_eq!(infer_lower_bound_ast(&nested, 0x201125, 4096), Some(0x201020));
        let y = BitVecExpr::var("y", 8).unwrap();
        assert_eq!(infer_lower_bound_ast(&x8().add(&y).zext(56), 0x10, 4096), None);
        // base above the concrete address, or implausibly far below it
        assert_eq!(infer_lower_bound_ast(&table(0x201020, 4), 0x201000, 4096), None);
        assert_eq!(infer_lower_bound_ast(&table(0x1000, 4), 0x9000, 4096), None);
    }

    #[test]
    fn solver_search_examples() {
        let addr = addr_const(0x1000, 64).add(&x8().zext(56));
        let mut o = Enumerate { base: vec![], queries: 0 };
        assert_eq!(solver_bound_search(&mut o, &addr, Direction::Max, 0x1005, 4096).unwrap(), 0x10FF);
        assert!(o.queries <= 12 + 2);
        assert_eq!(solver_bound_search(&mut o, &addr, Direction::Min, 0x1005, 4096).unwrap(), 0x1000);

        let mut o = Enumerate { base: vec![x8().eq_(&BitVecExpr::from_u64(5, 8))], queries: 0 };
        assert_eq!(solver_bound_search(&mut o, &addr, Direction::Max, 0x1005, 4096).unwrap(), 0x1005);
        assert_eq!(solver_bound_search(&mut o, &addr, Direction::Min, 0x1005, 4096).unwrap(), 0x1005);

        // values beyond the window edge: the edge is the answer
        let mut o = Enumerate { base: vec![], queries: 0 };
        assert_eq!(solver_bound_search(&mut o, &addr, Direction::Max, 0x1000, 0x80).unwrap(), 0x1080);
    }

    #[test]
    fn resolve_table_check() {
        let policy = BoundsPolicy {
            max_elements: 16,
            ..Default::default()
        };
        let b = resolve_bounds(&table(0x201020, 4), 0x201028, 4, &policy, None);
        assert_eq!((b.lower, b.upper), (0x201020, 0x201060));
        assert_eq!(b.method_lower, BoundsMethod::AstAnalysis);
    }

    #[test]
    fn resolve_fully_symbolic_falls_back() {
        let y = BitVecExpr::var("y", 8).unwrap();
        let addr = x8().mul(&y).zext(56);
        let b = resolve_bounds(&addr, 0x40, 4, &BoundsPolicy::default(), None);
        assert_eq!(b.method_lower, BoundsMethod::ConstantWindow);
        assert_eq!(b.method_upper, BoundsMethod::ConstantWindow);
        assert!(b.is_valid_for(0x40, 64));
    }

    #[test]
    fn resolve_with_solver() {
        let addr = addr_const(0x1000, 64).add(&x8().zext(56));
        let policy = BoundsPolicy {
            use_solver: true,
            max_elements: 256,
            ..Default::default()
        };
        let mut o = Enumerate { base: vec![], queries: 0 };
        let b = resolve_bounds(&addr, 0x1005, 1, &policy, Some(&mut o));
        assert_eq!((b.lower, b.upper), (0x1000, 0x1100));
        assert_eq!(b.method_upper, BoundsMethod::SolverSearch);
        // rounded up to whole 4-byte elements
        let b = resolve_bounds(&addr, 0x1004, 4, &policy, Some(&mut o));
        assert_eq!((b.lower, b.upper), (0x1000, 0x1100));
    }

    #[test]
    fn unaligned_base_snaps_to_concrete_grid() {
        let addr = addr_const(0x1001, 64).add(&x8().zext(56));
        let b = resolve_bounds(&addr, 0x1004, 4, &BoundsPolicy::default(), None);
        assert_eq!(b.lower, 0x1000);
        assert!(b.is_valid_for(0x1004, 64));
    }

    #[test]
    fn far_concrete_address_stays_inside() {
        // base plausible (within 4096) but beyond 64 elements of stride 4
        let addr = table(0x1000, 4);
        let b = resolve_bounds(&addr, 0x1000 + 4 * 200, 4, &BoundsPolicy::default(), None);
        assert!(b.is_valid_for(0x1000 + 4 * 200, 64));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("auto".parse::<BoundsMode>(), Ok(BoundsMode::Auto));
        assert_eq!("const:32".parse::<BoundsMode>(), Ok(BoundsMode::Constant(32)));
        assert_eq!("solver".parse::<BoundsMode>(), Ok(BoundsMode::Solver));
        assert!("const:1".parse::<BoundsMode>().is_err());
        assert!("fast".parse::<BoundsMode>().is_err());
        assert!(BoundsPolicy { max_elements: 1, ..Default::default() }.validate(4).is_err());
    }

    fn arb_shape() -> impl Strategy<Value = (BitVecExpr, u64)> {
        (0u64..1 << 40, 0usize..4, 0u64..0x200, any::<u8>(), any::<bool>(), any::<bool>()).prop_map(
            |(base, sc, disp, x, with_base, symbolic_base)| {
                let scale = [1u64, 2, 4, 8][sc];
                let idx = x8().zext(56).mul(&addr_const(scale, 64));
                let mut e = if with_base {
                    if symbolic_base {
                        BitVecExpr::var("y", 8).unwrap().zext(56).add(&idx)
                    } else {
                        addr_const(base, 64).add(&idx)
                    }
                } else {
                    idx
                };
                if disp > 0 {
                    e = e.add(&addr_const(disp, 64));
                }
                let mut a = Assignment::new();
                a.insert_u64("x", 8, x as u64);
                a.insert_u64("y", 8, 3);
                let conc = eval(&e, &a).unwrap().low_u64();
                (e, conc)
            },
        )
    }

    proptest! {
        #[test]
        fn resolve_always_valid((e, conc) in arb_shape(), sz in 0usize..4, max in 2u64..100) {
            let size = [1u32, 2, 4, 8][sz];
            let policy = BoundsPolicy { max_elements: max, ..Default::default() };
            let b = resolve_bounds(&e, conc, size, &policy, None);
            prop_assert!(b.is_valid_for(conc, max), "{b:?} for {conc:#x}");
        }

        #[test]
        fn shrinking_keeps_concrete((e, conc) in arb_shape(), max in 3u64..100) {
            for m in [max, max / 2 + 1, 2] {
                let policy = BoundsPolicy { max_elements: m, ..Default::default() };
                let b = resolve_bounds(&e, conc, 4, &policy, None);
                prop_assert!(b.lower <= conc && b.upper >= conc + 4);
            }
        }
    }
}
