//! Expressions for a read at a symbolic address over a bounded window of
//! memory: nested if-then-else, binary search tree, and a linearized form
//! that replaces runs of cells with integer line equations.

mod linear;
mod snapshot;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bv::{BvValue, MAX_WIDTH};
use crate::expr::BitVecExpr;

pub use linear::{linearize, merge_horizontal, LinearSegment};
pub use snapshot::{Cell, MemorySnapshot};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemModelError {
    #[error("empty memory region")]
    EmptyRegion,
    #[error("linear equations need {0} bits, over the {MAX_WIDTH}-bit cap")]
    WidthOverflow(u64),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("snapshot line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Ite,
    Bst,
    Linearized,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ite, Strategy::Bst, Strategy::Linearized];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Ite => "ITE",
            Strategy::Bst => "BST",
            Strategy::Linearized => "LIN",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ite => "ite",
            Strategy::Bst => "bst",
            Strategy::Linearized => "lin",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ite" => Ok(Strategy::Ite),
            "bst" => Ok(Strategy::Bst),
            "lin" | "linear" | "linearized" => Ok(Strategy::Linearized),
            _ => Err(format!("unknown strategy `{s}` (expected ite, bst or lin)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeledRead {
    pub expr: BitVecExpr,
    pub strategy: Strategy,
    pub fell_back_to_ite: bool,
    pub equation_width: u32,
    pub segments: Vec<LinearSegment>,
    /// Horizontal groups: shared value and the offsets holding it.
    pub horizontal: Vec<(u128, Vec<u64>)>,
    /// Leftover `(offset, value)` points tested one by one.
    pub singles: Vec<(u64, u128)>,
    pub symbolic_prefix_count: usize,
}

impl ModeledRead {
    fn plain(expr: BitVecExpr, strategy: Strategy, width: u32) -> Self {
        ModeledRead {
            expr,
            strategy,
            fell_back_to_ite: false,
            equation_width: width,
            segments: Vec::new(),
            horizontal: Vec::new(),
            singles: Vec::new(),
            symbolic_prefix_count: 0,
        }
    }
}

fn check(snap: &MemorySnapshot, addr: &BitVecExpr) -> Result<(), MemModelError> {
    snap.validate()?;
    let w = addr.width();
    if w < 64 && snap.upper() > 1u64 << w {
        return Err(MemModelError::InvalidSnapshot(format!(
            "region does not fit a {w}-bit address"
        )));
    }
    Ok(())
}

fn cell_leaf(c: &Cell) -> BitVecExpr {
    c.symbolic_value
        .clone()
        .unwrap_or_else(|| BitVecExpr::constant(c.concrete_value.clone()))
}

fn current_leaf(snap: &MemorySnapshot) -> BitVecExpr {
    BitVecExpr::constant(snap.current_value().clone())
}

/// Nested ITE over absolute cell addresses. Concrete cells sharing a value
/// share one node; anything else reads the current value.
pub fn build_ite(snap: &MemorySnapshot, addr: &BitVecExpr) -> Result<ModeledRead, MemModelError> {
    check(snap, addr)?;
    let aw = addr.width();
    let at = |c: &Cell| addr.eq_(&BitVecExpr::from_u64(snap.base + c.offset, aw));

    let mut nodes: Vec<(BitVecExpr, BitVecExpr)> = Vec::new();
    let mut merged: Vec<(&BvValue, usize)> = Vec::new();
    for c in &snap.cells {
        if c.symbolic_value.is_some() {
            nodes.push((at(c), cell_leaf(c)));
            continue;
        }
        match merged.iter().find(|(v, _)| **v == c.concrete_value) {
            Some(&(_, k)) => nodes[k].0 = nodes[k].0.or(&at(c)),
            None => {
                merged.push((&c.concrete_value, nodes.len()));
                nodes.push((at(c), cell_leaf(c)));
            }
        }
    }
    let expr = nodes
        .into_iter()
        .rev()
        .fold(current_leaf(snap), |els, (cond, then)| cond.select(&then, &els));
    Ok(ModeledRead::plain(expr, Strategy::Ite, snap.value_width()))
}

#[derive(Clone, Copy)]
enum BstItem<'a> {
    Below,
    Cell(&'a Cell),
    Above,
}

/// Balanced tree of unsigned comparisons over the cell addresses, with extra
/// leaves for addresses below and above the window.
pub fn build_bst(snap: &MemorySnapshot, addr: &BitVecExpr) -> Result<ModeledRead, MemModelError> {
    check(snap, addr)?;
    let aw = addr.width();
    let current = current_leaf(snap);
    let abs = |c: &Cell| BitVecExpr::from_u64(snap.base + c.offset, aw);
    let mut items = vec![BstItem::Below];
    items.extend(snap.cells.iter().map(BstItem::Cell));
    items.push(BstItem::Above);

    fn leaf(it: BstItem, addr: &BitVecExpr, current: &BitVecExpr, abs: &dyn Fn(&Cell) -> BitVecExpr) -> BitVecExpr {
        match it {
            BstItem::Cell(c) => addr.eq_(&abs(c)).select(&cell_leaf(c), current),
            _ => current.clone(),
        }
    }

    fn tree(
        items: &[BstItem],
        addr: &BitVecExpr,
        current: &BitVecExpr,
        upper: &BitVecExpr,
        abs: &dyn Fn(&Cell) -> BitVecExpr,
    ) -> BitVecExpr {
        match items {
            [one] => leaf(*one, addr, current, abs),
            [BstItem::Cell(c), rest] => addr.eq_(&abs(c)).select(&cell_leaf(c), &leaf(*rest, addr, current, abs)),
            _ => {
                let mid = items.len() / 2;
                let pivot = match items[mid] {
                    BstItem::Cell(c) => abs(c),
                    BstItem::Above => upper.clone(),
                    BstItem::Below => unreachable!("below-leaf is always first"),
                };
                addr.ult(&pivot).select(
                    &tree(&items[..mid], addr, current, upper, abs),
                    &tree(&items[mid..], addr, current, upper, abs),
                )
            }
        }
    }

    let upper = BitVecExpr::from_u64(snap.upper(), aw);
    let expr = tree(&items, addr, &current, &upper, &abs);
    Ok(ModeledRead::plain(expr, Strategy::Bst, snap.value_width()))
}

fn bit_len(v: u128) -> u32 {
    128 - v.leading_zeros()
}

/// Nested ITE for symbolic cells, horizontal groups and single points, then a
/// balanced tree over the linear segments. Addresses are normalized to
/// `idx = addr - base`; addresses below the base wrap to huge indexes and hit
/// the single upper-bound check.
pub fn build_linearized(snap: &MemorySnapshot, addr: &BitVecExpr) -> Result<ModeledRead, MemModelError> {
    check(snap, addr)?;
    let aw = addr.width();
    let vw = snap.value_width();
    if vw >= 128 {
        return Err(MemModelError::WidthOverflow(vw as u64));
    }
    let idx = if snap.base == 0 {
        addr.clone()
    } else {
        addr.sub(&BitVecExpr::from_u64(snap.base, aw))
    };
    let at = |off: u64| idx.eq_(&BitVecExpr::from_u64(off, aw));
    let konst = |v: u128| BitVecExpr::constant(BvValue::from_u128(v, vw));

    let mut segments = Vec::new();
    let mut leftovers = Vec::new();
    let mut symbolic = Vec::new();
    let mut run: Vec<(u64, u128)> = Vec::new();
    let flush = |run: &mut Vec<(u64, u128)>, segments: &mut Vec<LinearSegment>, leftovers: &mut Vec<(u64, u128)>| {
        let (s, l) = linearize(run);
        segments.extend(s);
        leftovers.extend(l);
        run.clear();
    };
    for c in &snap.cells {
        if let Some(s) = &c.symbolic_value {
            flush(&mut run, &mut segments, &mut leftovers);
            symbolic.push((c.offset, s.clone()));
        } else {
            run.push((c.offset, c.concrete_value.to_u128().expect("value narrower than 128 bits")));
        }
    }
    flush(&mut run, &mut segments, &mut leftovers);
    let (groups, singles) = merge_horizontal(&leftovers);

    let span = snap.span();
    let mut need = vw.max(bit_len(span as u128 - 1).max(1));
    for s in &segments {
        let mag = s.magnitude().ok_or(MemModelError::WidthOverflow(u64::MAX))?;
        need = need.max(bit_len(mag) + 1);
    }
    let width = need.div_ceil(8) * 8;
    if width > MAX_WIDTH {
        return Err(MemModelError::WidthOverflow(width as u64));
    }

    let idx_w = idx.resize(width);
    let line = |s: &LinearSegment| -> BitVecExpr {
        if s.m == 0 {
            return konst(s.b as u128);
        }
        let mut e = if s.m == 1 {
            idx_w.clone()
        } else {
            idx_w.mul(&BitVecExpr::constant(BvValue::from_i128(s.m, width)))
        };
        if s.b != 0 {
            e = e.add(&BitVecExpr::constant(BvValue::from_i128(s.b, width)));
        }
        e.resize(vw)
    };

    // tree over [segments..., above-window]
    fn tree(
        segs: &[LinearSegment],
        lo: usize,
        hi: usize,
        idx: &BitVecExpr,
        span: &BitVecExpr,
        current: &BitVecExpr,
        line: &dyn Fn(&LinearSegment) -> BitVecExpr,
    ) -> BitVecExpr {
        if hi - lo == 1 {
            return if lo == segs.len() { current.clone() } else { line(&segs[lo]) };
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = if mid == segs.len() {
            span.clone()
        } else {
            BitVecExpr::from_u64(segs[mid].first_offset, idx.width())
        };
        idx.ult(&pivot).select(
            &tree(segs, lo, mid, idx, span, current, line),
            &tree(segs, mid, hi, idx, span, current, line),
        )
    }
    let span_e = BitVecExpr::from_u64(span, aw);
    let current = current_leaf(snap);
    let mut expr = tree(&segments, 0, segments.len() + 1, &idx, &span_e, &current, &line);

    for &(off, v) in singles.iter().rev() {
        expr = at(off).select(&konst(v), &expr);
    }
    for (v, offs) in groups.iter().rev() {
        let cond = offs[1..].iter().fold(at(offs[0]), |acc, &o| acc.or(&at(o)));
        expr = cond.select(&konst(*v), &expr);
    }
    for (off, s) in symbolic.iter().rev() {
        expr = at(*off).select(s, &expr);
    }

    Ok(ModeledRead {
        expr,
        strategy: Strategy::Linearized,
        fell_back_to_ite: false,
        equation_width: width,
        segments,
        horizontal: groups,
        singles,
        symbolic_prefix_count: symbolic.len(),
    })
}

/// Builds the read expression with the requested strategy. Linearization
/// falls back to a nested ITE for accesses of 16 bytes or more and when the
/// equations would not fit the width cap.
pub fn model_read(snap: &MemorySnapshot, addr: &BitVecExpr, strategy: Strategy) -> Result<ModeledRead, MemModelError> {
    match strategy {
        Strategy::Ite => build_ite(snap, addr),
        Strategy::Bst => build_bst(snap, addr),
        Strategy::Linearized => match build_linearized(snap, addr) {
            Err(MemModelError::WidthOverflow(_)) => {
                let mut r = build_ite(snap, addr)?;
                r.strategy = Strategy::Linearized;
                r.fell_back_to_ite = true;
                Ok(r)
            }
            other => other,
        },
    }
}

#[cfg(test)]
mod tests;
