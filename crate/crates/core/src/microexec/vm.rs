use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use crate::bounds::{resolve_bounds, BoundsPolicy, SolverOracle};
use crate::bv::BvValue;
use crate::expr::{eval, Assignment, BitVecExpr};
use crate::memmodel::{model_read, Cell, MemorySnapshot, Strategy};
use crate::smtlib::SolverCommand;

use super::asm::{ArithOp, Cond, Instr, MemOperand, Program, Src, MAX_MEMORY, NUM_REGS};
use super::{slice_predicate, ExecError};

const PAGE: u64 = 4096;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub symaddr: bool,
    pub policy: BoundsPolicy,
    pub strategy: Strategy,
    pub step_limit: usize,
    /// Used for solver-mode bounds; ignored unless `policy.use_solver`.
    pub solver: Option<SolverCommand>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            symaddr: true,
            policy: BoundsPolicy::default(),
            strategy: Strategy::Linearized,
            step_limit: 100_000,
            solver: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Halt,
    Abort,
    Fault(String),
}

/// Where control went at a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Taken(bool),
    Target(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchEvent {
    pub site: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchConstraint {
    /// Branch condition as written (true means "jump").
    pub cond: BitVecExpr,
    pub taken: bool,
    pub site: usize,
    /// Position of this branch among all branch events of the run.
    pub trace_pos: usize,
    /// Instruction control went to.
    pub target: usize,
    /// For jump tables: every reachable target with its index constraint.
    pub alternatives: Vec<(usize, BitVecExpr)>,
}

impl BranchConstraint {
    /// The constraint that held on the executed path.
    pub fn holds(&self) -> BitVecExpr {
        if self.taken {
            self.cond.clone()
        } else {
            self.cond.not()
        }
    }

    pub fn is_jump_table(&self) -> bool {
        !self.alternatives.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Branch(BranchConstraint),
    /// The modeled window of a symbolic read; recorded, never asserted.
    ReadBound { expr: BitVecExpr, site: usize },
}

impl Constraint {
    pub fn expr(&self) -> BitVecExpr {
        match self {
            Constraint::Branch(b) => b.holds(),
            Constraint::ReadBound { expr, .. } => expr.clone(),
        }
    }

    pub fn as_branch(&self) -> Option<&BranchConstraint> {
        match self {
            Constraint::Branch(b) => Some(b),
            Constraint::ReadBound { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPredicate {
    pub constraints: Vec<Constraint>,
    pub input_len: usize,
    pub status: ExitStatus,
}

impl PathPredicate {
    pub fn branches(&self) -> impl Iterator<Item = (usize, &BranchConstraint)> {
        self.constraints.iter().enumerate().filter_map(|(i, c)| c.as_branch().map(|b| (i, b)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub total_branches: usize,
    pub unique_sites: BTreeSet<usize>,
    pub symbolic_reads: usize,
    pub concretized_reads: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub predicate: PathPredicate,
    pub branches: Vec<BranchEvent>,
    pub blocks: BTreeSet<usize>,
    pub stats: RunStats,
    pub registers: [u64; NUM_REGS],
}

pub fn input_var(k: usize) -> String {
    format!("in_{k}")
}

/// Assignment binding `in_k` to each input byte.
pub fn input_assignment(input: &[u8]) -> Assignment {
    let mut a = Assignment::new();
    for (k, &b) in input.iter().enumerate() {
        a.insert_u64(input_var(k), 8, b as u64);
    }
    a
}

#[derive(Clone)]
struct Value {
    conc: u64,
    sym: Option<BitVecExpr>,
}

impl Value {
    fn concrete(v: u64) -> Self {
        Value { conc: v, sym: None }
    }

    fn expr(&self) -> BitVecExpr {
        self.sym.clone().unwrap_or_else(|| BitVecExpr::from_u64(self.conc, 64))
    }
}

struct Memory {
    pages: BTreeMap<u64, Box<[u8]>>,
    sym: HashMap<u64, BitVecExpr>,
}

impl Memory {
    fn new(p: &Program) -> Result<Self, ExecError> {
        let mut m = Memory {
            pages: BTreeMap::new(),
            sym: HashMap::new(),
        };
        for d in &p.data {
            for (i, &b) in d.bytes.iter().enumerate() {
                let a = d.addr + i as u64;
                let page = m.pages.entry(a / PAGE).or_insert_with(|| vec![0; PAGE as usize].into());
                page[(a % PAGE) as usize] = b;
            }
        }
        if m.pages.len() as u64 * PAGE > MAX_MEMORY {
            return Err(ExecError::Malformed {
                line: 0,
                msg: "data spans more than 1 MiB of pages".into(),
            });
        }
        Ok(m)
    }

    fn mapped(&self, addr: u64, len: u64) -> bool {
        match addr.checked_add(len - 1) {
            Some(last) => (addr / PAGE..=last / PAGE).all(|p| self.pages.contains_key(&p)),
            None => false,
        }
    }

    fn byte(&self, a: u64) -> u8 {
        self.pages[&(a / PAGE)][(a % PAGE) as usize]
    }

    /// Concrete little-endian value and, when any byte is symbolic, the
    /// `8 * size`-bit expression of the cell.
    fn cell(&self, addr: u64, size: u32) -> Option<(u64, Option<BitVecExpr>)> {
        if !self.mapped(addr, size as u64) {
            return None;
        }
        let mut conc = 0u64;
        for i in (0..size as u64).rev() {
            conc = conc << 8 | self.byte(addr + i) as u64;
        }
        let sym = (0..size as u64).any(|i| self.sym.contains_key(&(addr + i))).then(|| {
            (1..size as u64).fold(self.byte_expr(addr), |e, i| {
                BitVecExpr::concat(self.byte_expr(addr + i), e).expect("concat width")
            })
        });
        Some((conc, sym))
    }

    fn read(&self, addr: u64, size: u32) -> Option<Value> {
        let (conc, sym) = self.cell(addr, size)?;
        Some(Value {
            conc,
            sym: sym.map(|e| e.zext(64 - 8 * size)),
        })
    }

    fn byte_expr(&self, a: u64) -> BitVecExpr {
        self.sym
            .get(&a)
            .cloned()
            .unwrap_or_else(|| BitVecExpr::from_u64(self.byte(a) as u64, 8))
    }

    fn write(&mut self, addr: u64, size: u32, v: &Value) -> bool {
        if !self.mapped(addr, size as u64) {
            return false;
        }
        for i in 0..size as u64 {
            let a = addr + i;
            self.pages.get_mut(&(a / PAGE)).unwrap()[(a % PAGE) as usize] = (v.conc >> (8 * i)) as u8;
            match &v.sym {
                Some(e) => {
                    let b = BitVecExpr::extract(8 * i as u32 + 7, 8 * i as u32, e.clone()).expect("extract");
                    self.sym.insert(a, b);
                }
                None => {
                    self.sym.remove(&a);
                }
            }
        }
        true
    }
}

struct Flags {
    lhs: Value,
    rhs: Value,
}

struct Machine<'a> {
    prog: &'a Program,
    cfg: &'a RunConfig,
    input: &'a [u8],
    next_input: usize,
    regs: Vec<Value>,
    mem: Memory,
    flags: Option<Flags>,
    pp: PathPredicate,
    branches: Vec<BranchEvent>,
    blocks: BTreeSet<usize>,
    leaders: BTreeSet<usize>,
    stats: RunStats,
}

/// Executes `prog` on `input`, propagating input-derived expressions and
/// collecting the path predicate.
pub fn run_concolic(prog: &Program, input: &[u8], cfg: &RunConfig) -> Result<RunResult, ExecError> {
    let mut m = Machine {
        prog,
        cfg,
        input,
        next_input: 0,
        regs: vec![Value::concrete(0); NUM_REGS],
        mem: Memory::new(prog)?,
        flags: None,
        pp: PathPredicate {
            constraints: Vec::new(),
            input_len: input.len(),
            status: ExitStatus::Halt,
        },
        branches: Vec::new(),
        blocks: BTreeSet::new(),
        leaders: prog.block_leaders().into_iter().collect(),
        stats: RunStats::default(),
    };
    let status = m.run();
    m.pp.status = status;
    Ok(RunResult {
        predicate: m.pp,
        branches: m.branches,
        blocks: m.blocks,
        stats: m.stats,
        registers: std::array::from_fn(|i| m.regs[i].conc),
    })
}

impl Machine<'_> {
    fn run(&mut self) -> ExitStatus {
        let mut pc = 0usize;
        loop {
            if pc >= self.prog.instrs.len() {
                return ExitStatus::Halt;
            }
            if self.stats.steps >= self.cfg.step_limit {
                return ExitStatus::Fault(format!("step limit {} reached", self.cfg.step_limit));
            }
            self.stats.steps += 1;
            if self.leaders.contains(&pc) {
                self.blocks.insert(pc);
            }
            match self.step(pc) {
                Ok(Some(next)) => pc = next,
                Ok(None) => return ExitStatus::Halt,
                Err(status) => return status,
            }
        }
    }

    fn address(&self, m: &MemOperand) -> (u64, Option<BitVecExpr>) {
        let mut conc = m.disp as u64;
        let mut symbolic = false;
        let mut terms = Vec::new();
        if let Some(b) = m.base {
            let v = &self.regs[b as usize];
            conc = conc.wrapping_add(v.conc);
            symbolic |= v.sym.is_some();
            terms.push(v.expr());
        }
        if let Some((r, scale)) = m.index {
            let v = &self.regs[r as usize];
            conc = conc.wrapping_add(v.conc.wrapping_mul(scale as u64));
            symbolic |= v.sym.is_some();
            terms.push(if scale == 1 {
                v.expr()
            } else {
                v.expr().mul(&BitVecExpr::from_u64(scale as u64, 64))
            });
        }
        if m.disp != 0 {
            terms.push(BitVecExpr::from_u64(m.disp as u64, 64));
        }
        if !symbolic {
            return (conc, None);
        }
        let mut it = terms.into_iter();
        let first = it.next().unwrap();
        (conc, Some(it.fold(first, |acc, t| acc.add(&t))))
    }

    fn src(&self, s: Src) -> Value {
        match s {
            Src::Reg(r) => self.regs[r as usize].clone(),
            Src::Imm(v) => Value::concrete(v),
        }
    }

    fn fault<T>(&self, pc: usize, msg: impl Into<String>) -> Result<T, ExitStatus> {
        Err(ExitStatus::Fault(format!("at {pc}: {}", msg.into())))
    }

    fn step(&mut self, pc: usize) -> Result<Option<usize>, ExitStatus> {
        let ins = self.prog.instrs[pc];
        match ins {
            Instr::Const { rd, imm } => self.regs[rd as usize] = Value::concrete(imm),
            Instr::Mov { rd, rs } => self.regs[rd as usize] = self.regs[rs as usize].clone(),
            Instr::Arith { op, rd, src } => {
                let a = self.regs[rd as usize].clone();
                let b = self.src(src);
                let conc = match op {
                    ArithOp::Add => a.conc.wrapping_add(b.conc),
                    ArithOp::Sub => a.conc.wrapping_sub(b.conc),
                    ArithOp::Mul => a.conc.wrapping_mul(b.conc),
                };
                let sym = (a.sym.is_some() || b.sym.is_some()).then(|| {
                    let (x, y) = (a.expr(), b.expr());
                    match op {
                        ArithOp::Add => x.add(&y),
                        ArithOp::Sub => x.sub(&y),
                        ArithOp::Mul => x.mul(&y),
                    }
                });
                self.regs[rd as usize] = Value { conc, sym };
            }
            Instr::Input { rd } => {
                let k = self.next_input;
                self.regs[rd as usize] = match self.input.get(k) {
                    Some(&b) => {
                        self.next_input += 1;
                        Value {
                            conc: b as u64,
                            sym: Some(BitVecExpr::var(input_var(k), 8).unwrap().zext(56)),
                        }
                    }
                    None => Value::concrete(u64::MAX),
                };
            }
            Instr::Load { size, rd, mem } => {
                let (addr, sym_addr) = self.address(&mem);
                let Some(mut v) = self.mem.read(addr, size) else {
                    return self.fault(pc, format!("load of {size} bytes from unmapped {addr:#x}"));
                };
                if let Some(ae) = sym_addr {
                    if self.cfg.symaddr {
                        v.sym = Some(self.model_symbolic_read(pc, &ae, addr, size).zext(64 - 8 * size));
                        self.stats.symbolic_reads += 1;
                    } else {
                        self.stats.concretized_reads += 1;
                    }
                }
                self.regs[rd as usize] = v;
            }
            Instr::Store { size, mem, src } => {
                let (addr, sym_addr) = self.address(&mem);
                if sym_addr.is_some() && self.cfg.symaddr {
                    return self.fault(pc, "store to a symbolic address");
                }
                let v = self.src(src);
                if !self.mem.write(addr, size, &v) {
                    return self.fault(pc, format!("store of {size} bytes to unmapped {addr:#x}"));
                }
            }
            Instr::Cmp { ra, src } => {
                self.flags = Some(Flags {
                    lhs: self.regs[ra as usize].clone(),
                    rhs: self.src(src),
                });
            }
            Instr::Jcc { cond, target } => {
                let Some(f) = &self.flags else {
                    return self.fault(pc, "conditional jump without cmp");
                };
                let (a, b) = (f.lhs.conc, f.rhs.conc);
                let taken = match cond {
                    Cond::Eq => a == b,
                    Cond::Ne => a != b,
                    Cond::Ult => a < b,
                    Cond::Ule => a <= b,
                };
                if f.lhs.sym.is_some() || f.rhs.sym.is_some() {
                    let (x, y) = (f.lhs.expr(), f.rhs.expr());
                    let c = match cond {
                        Cond::Eq => x.eq_(&y),
                        Cond::Ne => x.eq_(&y).not(),
                        Cond::Ult => x.ult(&y),
                        Cond::Ule => x.ule(&y),
                    };
                    self.record_branch(pc, c, taken, if taken { target } else { pc + 1 }, Vec::new());
                }
                self.branches.push(BranchEvent {
                    site: pc,
                    outcome: Outcome::Taken(taken),
                });
                return Ok(Some(if taken { target } else { pc + 1 }));
            }
            Instr::Jmp { target } => return Ok(Some(target)),
            Instr::Jtab { mem, entries } => {
                let Some((rb, scale)) = mem.index else {
                    return self.fault(pc, "jump table needs an index register");
                };
                let (addr, _) = self.address(&mem);
                let idx = self.regs[rb as usize].clone();
                let table = addr.wrapping_sub(idx.conc.wrapping_mul(scale as u64));
                let mut targets = Vec::with_capacity(entries);
                for k in 0..entries as u64 {
                    let ea = table.wrapping_add(k.wrapping_mul(scale as u64));
                    match self.mem.read(ea, 8) {
                        Some(v) => targets.push(v.conc as usize),
                        None => return self.fault(pc, format!("jump table entry at unmapped {ea:#x}")),
                    }
                }
                if idx.conc >= entries as u64 {
                    return self.fault(pc, format!("jump table index {} out of range", idx.conc));
                }
                let target = targets[idx.conc as usize];
                let pairs = super::jump_table_targets(&targets, idx.sym.as_ref(), idx.conc);
                if let Some(e) = &idx.sym {
                    let cond = e.eq_(&BitVecExpr::from_u64(idx.conc, 64));
                    self.record_branch(pc, cond, true, target, pairs);
                }
                self.branches.push(BranchEvent {
                    site: pc,
                    outcome: Outcome::Target(target),
                });
                return Ok(Some(target));
            }
            Instr::Abort => return Err(ExitStatus::Abort),
            Instr::Halt => return Ok(None),
        }
        Ok(Some(pc + 1))
    }

    fn record_branch(
        &mut self,
        site: usize,
        cond: BitVecExpr,
        taken: bool,
        target: usize,
        alternatives: Vec<(usize, BitVecExpr)>,
    ) {
        self.stats.total_branches += 1;
        self.stats.unique_sites.insert(site);
        self.pp.constraints.push(Constraint::Branch(BranchConstraint {
            cond,
            taken,
            site,
            trace_pos: self.branches.len(),
            target,
            alternatives,
        }));
    }

    fn model_symbolic_read(&mut self, pc: usize, addr_expr: &BitVecExpr, addr: u64, size: u32) -> BitVecExpr {
        let policy = &self.cfg.policy;
        let mut oracle = match (&self.cfg.solver, policy.use_solver) {
            (Some(s), true) => {
                let slice = slice_predicate(&self.pp, addr_expr);
                let base = slice.branches().map(|(_, b)| b.holds()).collect();
                Some(SolverOracle::new(s.clone(), base, policy.solver_timeout.min(Duration::from_secs(90)), true))
            }
            _ => None,
        };
        let bounds = resolve_bounds(
            addr_expr,
            addr,
            size,
            policy,
            oracle.as_mut().map(|o| o as &mut dyn crate::bounds::SatOracle),
        );
        // keep only the fully mapped cells adjacent to the concrete address
        let step = size as u64;
        let mut lo = addr;
        while lo >= bounds.lower + step && self.mem.mapped(lo - step, step) {
            lo -= step;
        }
        let mut hi = addr + step;
        while hi + step <= bounds.upper && self.mem.mapped(hi, step) {
            hi += step;
        }
        let cells = (0..(hi - lo) / step)
            .map(|i| {
                let (v, s) = self.mem.cell(lo + i * step, size).expect("mapped cell");
                Cell {
                    offset: i * step,
                    concrete_value: BvValue::from_u64(v, 8 * size),
                    symbolic_value: s,
                }
            })
            .collect();
        let snap = MemorySnapshot {
            base: lo,
            access_size: size,
            cells,
            current_offset: addr - lo,
        };
        let read = model_read(&snap, addr_expr, self.cfg.strategy).expect("snapshot is well formed");
        let k = |v: u64| BitVecExpr::from_u64(v, 64);
        self.pp.constraints.push(Constraint::ReadBound {
            expr: k(lo).ule(addr_expr).and(&addr_expr.ult(&k(hi))),
            site: pc,
        });
        read.expr
    }
}

/// Evaluates every constraint of `pp` under the input bytes.
pub fn predicate_holds(pp: &PathPredicate, input: &[u8]) -> bool {
    let a = input_assignment(input);
    pp.constraints
        .iter()
        .all(|c| eval(&c.expr(), &a).map(|v| v.is_true()).unwrap_or(false))
}
