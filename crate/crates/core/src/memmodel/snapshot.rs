use std::fmt;
use std::str::FromStr;

use crate::bv::BvValue;
use crate::expr::{parse_expr, BitVecExpr, Declarations};

use super::MemModelError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub offset: u64,
    pub concrete_value: BvValue,
    pub symbolic_value: Option<BitVecExpr>,
}

/// Contents of the memory window seen by one symbolic read. Cell values are
/// little-endian integers of `8 * access_size` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySnapshot {
    pub base: u64,
    pub access_size: u32,
    pub cells: Vec<Cell>,
    pub current_offset: u64,
}

impl MemorySnapshot {
    /// Snapshot of fully concrete cells laid out from `base`.
    pub fn from_values(
        base: u64,
        access_size: u32,
        values: &[u64],
        current_offset: u64,
    ) -> Result<Self, MemModelError> {
        let w = access_size * 8;
        let cells = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Cell {
                offset: i as u64 * access_size as u64,
                concrete_value: BvValue::from_u64(v, w),
                symbolic_value: None,
            })
            .collect();
        let snap = MemorySnapshot {
            base,
            access_size,
            cells,
            current_offset,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn value_width(&self) -> u32 {
        self.access_size * 8
    }

    /// One past the last sampled byte.
    pub fn upper(&self) -> u64 {
        self.base + self.cells.len() as u64 * self.access_size as u64
    }

    /// Offset one past the last cell.
    pub fn span(&self) -> u64 {
        self.cells.len() as u64 * self.access_size as u64
    }

    pub fn current_cell(&self) -> &Cell {
        &self.cells[(self.current_offset / self.access_size as u64) as usize]
    }

    pub fn current_value(&self) -> &BvValue {
        &self.current_cell().concrete_value
    }

    pub fn cell_at(&self, addr: u64) -> Option<&Cell> {
        let off = addr.checked_sub(self.base)?;
        if off % self.access_size as u64 != 0 {
            return None;
        }
        self.cells.get((off / self.access_size as u64) as usize)
    }

    /// The cells inside `[lower, upper)`, which must contain the current cell.
    pub fn window(&self, lower: u64, upper: u64) -> Result<MemorySnapshot, MemModelError> {
        let size = self.access_size as u64;
        let cur = self.base + self.current_offset;
        if !(lower <= cur && cur < upper) {
            return Err(MemModelError::InvalidSnapshot(format!(
                "window [{lower:#x}, {upper:#x}) misses the current cell"
            )));
        }
        let first = self.base.max(lower);
        let first = first + (size - (first - self.base) % size) % size;
        let end = self.upper().min(upper);
        let cells = self
            .cells
            .iter()
            .filter(|c| (first..end).contains(&(self.base + c.offset)))
            .map(|c| Cell {
                offset: self.base + c.offset - first,
                ..c.clone()
            })
            .collect();
        let snap = MemorySnapshot {
            base: first,
            access_size: self.access_size,
            cells,
            current_offset: cur - first,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn set_symbolic(&mut self, offset: u64, expr: BitVecExpr) -> Result<(), MemModelError> {
        if expr.width() != self.value_width() {
            return Err(MemModelError::InvalidSnapshot(format!(
                "symbolic value of width {} in {}-byte cell",
                expr.width(),
                self.access_size
            )));
        }
        let size = self.access_size as u64;
        let cell = (offset % size == 0)
            .then(|| self.cells.get_mut((offset / size) as usize))
            .flatten()
            .ok_or_else(|| MemModelError::InvalidSnapshot(format!("no cell at offset {offset:#x}")))?;
        cell.symbolic_value = Some(expr);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MemModelError> {
        let bad = |m: String| Err(MemModelError::InvalidSnapshot(m));
        if self.cells.is_empty() {
            return Err(MemModelError::EmptyRegion);
        }
        if self.access_size == 0 || self.access_size * 8 > crate::bv::MAX_WIDTH {
            return bad(format!("unsupported access size {}", self.access_size));
        }
        let size = self.access_size as u64;
        if self.cells.len() as u64 > (u64::MAX - self.base) / size {
            return bad("region wraps the address space".into());
        }
        let w = self.value_width();
        for (i, c) in self.cells.iter().enumerate() {
            if c.offset != i as u64 * size {
                return bad(format!("cell {i} at offset {:#x}, expected {:#x}", c.offset, i as u64 * size));
            }
            if c.concrete_value.width() != w {
                return bad(format!("cell {i} value has width {}", c.concrete_value.width()));
            }
            if let Some(s) = &c.symbolic_value {
                if s.width() != w {
                    return bad(format!("cell {i} symbolic value has width {}", s.width()));
                }
            }
        }
        if self.current_offset % size != 0 || self.current_offset >= self.span() {
            return bad(format!("current offset {:#x} is not a cell", self.current_offset));
        }
        Ok(())
    }
}

impl fmt::Display for MemorySnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "base={:#x} access={} current={:#x}",
            self.base, self.access_size, self.current_offset
        )?;
        for c in &self.cells {
            write!(f, "{:#x} 0x{}", c.offset, c.concrete_value.to_hex_digits())?;
            if let Some(s) = &c.symbolic_value {
                write!(f, " sym={s}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

impl FromStr for MemorySnapshot {
    type Err = MemModelError;

    fn from_str(text: &str) -> Result<Self, MemModelError> {
        let perr = |line: usize, msg: String| MemModelError::Parse { line, msg };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let (mut base, mut access, mut current) = (None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| perr(hl, format!("bad header field `{field}`")))?;
            let v = parse_u64(v).ok_or_else(|| perr(hl, format!("bad number `{v}`")))?;
            match k {
                "base" => base = Some(v),
                "access" => access = Some(v),
                "current" => current = Some(v),
                _ => return Err(perr(hl, format!("unknown header field `{k}`"))),
            }
        }
        let (Some(base), Some(access), Some(current_offset)) = (base, access, current) else {
            return Err(perr(hl, "header needs base=, access= and current=".into()));
        };
        let access_size = u32::try_from(access)
            .ok()
            .filter(|a| (1..=64).contains(a))
            .ok_or_else(|| perr(hl, format!("bad access size {access}")))?;
        let w = access_size * 8;
        let decls = Declarations::new();
        let mut cells = Vec::new();
        for (ln, line) in lines {
            let (head, sym) = match line.split_once("sym=") {
                Some((h, s)) => (h, Some(s.trim())),
                None => (line, None),
            };
            let mut parts = head.split_whitespace();
            let (Some(off), Some(val), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(perr(ln, "expected `<offset> <value> [sym=<expr>]`".into()));
            };
            let offset = parse_u64(off).ok_or_else(|| perr(ln, format!("bad offset `{off}`")))?;
            let digits = val
                .strip_prefix("0x")
                .ok_or_else(|| perr(ln, format!("value `{val}` must be hexadecimal")))?;
            let concrete_value = BvValue::parse_radix(digits, 16, w)
                .ok_or_else(|| perr(ln, format!("value `{val}` does not fit {access_size} bytes")))?;
            let symbolic_value = sym
                .map(|s| parse_expr(s, &decls))
                .transpose()
                .map_err(|e| perr(ln, e.to_string()))?;
            cells.push(Cell {
                offset,
                concrete_value,
                symbolic_value,
            });
        }
        let snap = MemorySnapshot {
            base,
            access_size,
            cells,
            current_offset,
        };
        snap.validate()?;
        Ok(snap)
    }
}
