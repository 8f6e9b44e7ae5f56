use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ExecError;

pub const NUM_REGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Reg(u8),
    Imm(u64),
}

/// `[base + index*scale + disp]`; any part may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemOperand {
    pub base: Option<u8>,
    pub index: Option<(u8, u8)>,
    pub disp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Eq,
    Ne,
    Ult,
    Ule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    Const { rd: u8, imm: u64 },
    Mov { rd: u8, rs: u8 },
    Arith { op: ArithOp, rd: u8, src: Src },
    Input { rd: u8 },
    Load { size: u32, rd: u8, mem: MemOperand },
    Store { size: u32, mem: MemOperand, src: Src },
    Cmp { ra: u8, src: Src },
    Jcc { cond: Cond, target: usize },
    Jmp { target: usize },
    Jtab { mem: MemOperand, entries: usize },
    Abort,
    Halt,
}

impl Instr {
    pub fn ends_block(&self) -> bool {
        matches!(
            self,
            Instr::Jcc { .. } | Instr::Jmp { .. } | Instr::Jtab { .. } | Instr::Abort | Instr::Halt
        )
    }
}

/// Initialized memory declared by `.data`, `.zero` or `.jtable`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub addr: u64,
    pub bytes: Vec<u8>,
}

/// Assembled program. Code addresses are instruction indexes.
#[derive(Debug, Clone)]
pub struct Program {
    pub instrs: Vec<Instr>,
    pub data: Vec<DataBlock>,
    pub labels: BTreeMap<String, usize>,
    pub source: String,
}

pub const MAX_MEMORY: u64 = 1 << 20;

impl Program {
    /// First instructions of basic blocks, ascending.
    pub fn block_leaders(&self) -> Vec<usize> {
        let mut leaders = std::collections::BTreeSet::new();
        leaders.insert(0);
        for (i, ins) in self.instrs.iter().enumerate() {
            match ins {
                Instr::Jcc { target, .. } | Instr::Jmp { target } => {
                    leaders.insert(*target);
                }
                _ => {}
            }
            if ins.ends_block() && i + 1 < self.instrs.len() {
                leaders.insert(i + 1);
            }
        }
        for &t in self.labels.values() {
            leaders.insert(t);
        }
        leaders.into_iter().filter(|&l| l < self.instrs.len()).collect()
    }
}

impl FromStr for Program {
    type Err = ExecError;

    fn from_str(text: &str) -> Result<Self, ExecError> {
        assemble(text)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn err(line: usize, msg: impl Into<String>) -> ExecError {
    ExecError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn parse_num(s: &str) -> Option<i128> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b.trim()),
        None => (false, s),
    };
    let v = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(&h.replace('_', ""), 16).ok()?,
        None => body.replace('_', "").parse::<u64>().ok()?,
    } as i128;
    Some(if neg { -v } else { v })
}

fn parse_reg(s: &str) -> Option<u8> {
    let n: u8 = s.trim().strip_prefix('r')?.parse().ok()?;
    ((n as usize) < NUM_REGS).then_some(n)
}

fn parse_src(s: &str) -> Option<Src> {
    parse_reg(s)
        .map(Src::Reg)
        .or_else(|| parse_num(s).map(|v| Src::Imm(v as u64)))
}

fn parse_mem(s: &str, line: usize) -> Result<MemOperand, ExecError> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| err(line, format!("expected memory operand, got `{s}`")))?;
    let mut m = MemOperand {
        base: None,
        index: None,
        disp: 0,
    };
    // split into signed terms
    let mut terms = Vec::new();
    let mut cur = String::new();
    let mut sign = 1i128;
    for ch in inner.chars() {
        if ch == '+' || ch == '-' {
            if !cur.trim().is_empty() {
                terms.push((sign, cur.trim().to_string()));
            }
            cur.clear();
            sign = if ch == '-' { -1 } else { 1 };
        } else {
            cur.push(ch);
        }
    }
    if !cur.trim().is_empty() {
        terms.push((sign, cur.trim().to_string()));
    }
    for (sign, t) in terms {
        if let Some((r, sc)) = t.split_once('*') {
            let r = parse_reg(r).ok_or_else(|| err(line, format!("bad index register in `{t}`")))?;
            let sc = parse_num(sc)
                .filter(|v| [1, 2, 4, 8].contains(v))
                .ok_or_else(|| err(line, format!("scale must be 1, 2, 4 or 8 in `{t}`")))?;
            if sign < 0 || m.index.is_some() {
                return Err(err(line, format!("bad index term in `{s}`")));
            }
            m.index = Some((r, sc as u8));
        } else if let Some(r) = parse_reg(&t) {
            if sign < 0 {
                return Err(err(line, "registers cannot be subtracted"));
            }
            if m.base.is_none() {
                m.base = Some(r);
            } else if m.index.is_none() {
                m.index = Some((r, 1));
            } else {
                return Err(err(line, format!("too many registers in `{s}`")));
            }
        } else {
            let v = parse_num(&t).ok_or_else(|| err(line, format!("bad term `{t}`")))?;
            m.disp = m.disp.wrapping_add((sign * v) as i64);
        }
    }
    Ok(m)
}

fn split_operands(rest: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for ch in rest.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

enum Pending {
    Ready(Instr),
    Jcc(Cond, String),
    Jmp(String),
}

enum PendingData {
    Bytes(u64, Vec<u8>),
    Labels(u64, Vec<String>),
}

fn assemble(text: &str) -> Result<Program, ExecError> {
    let mut labels = BTreeMap::new();
    let mut pending: Vec<(usize, Pending)> = Vec::new();
    let mut data: Vec<(usize, PendingData)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut s = raw.split(';').next().unwrap().trim();
        if s.is_empty() {
            continue;
        }
        if let Some(d) = s.strip_prefix('.') {
            let (head, body) = d
                .split_once(':')
                .ok_or_else(|| err(line, "directive needs `<addr>:`"))?;
            let mut hw = head.split_whitespace();
            let kind = hw.next().unwrap_or("");
            let addr = hw
                .next()
                .and_then(parse_num)
                .filter(|v| *v >= 0)
                .ok_or_else(|| err(line, "bad directive address"))? as u64;
            let item = match kind {
                "data" => {
                    let bytes = body
                        .split_whitespace()
                        .map(|b| u8::from_str_radix(b, 16).map_err(|_| err(line, format!("bad byte `{b}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    PendingData::Bytes(addr, bytes)
                }
                "zero" => {
                    let len = parse_num(body)
                        .filter(|v| *v > 0 && *v as u64 <= MAX_MEMORY)
                        .ok_or_else(|| err(line, "bad .zero length"))?;
                    PendingData::Bytes(addr, vec![0; len as usize])
                }
                "jtable" => PendingData::Labels(
                    addr,
                    body.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
                ),
                _ => return Err(err(line, format!("unknown directive `.{kind}`"))),
            };
            data.push((line, item));
            continue;
        }
        // labels, possibly followed by an instruction on the same line
        while let Some((l, rest)) = s.split_once(':') {
            let l = l.trim();
            if l.is_empty() || !l.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.') {
                return Err(err(line, format!("bad label `{l}`")));
            }
            if labels.insert(l.to_string(), pending.len()).is_some() {
                return Err(err(line, format!("duplicate label `{l}`")));
            }
            s = rest.trim();
        }
        if s.is_empty() {
            continue;
        }
        let (mnemonic, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let ops = split_operands(rest);
        let reg = |i: usize| -> Result<u8, ExecError> {
            ops.get(i)
                .and_then(|o| parse_reg(o))
                .ok_or_else(|| err(line, format!("operand {} of `{mnemonic}` must be a register", i + 1)))
        };
        let src = |i: usize| -> Result<Src, ExecError> {
            ops.get(i)
                .and_then(|o| parse_src(o))
                .ok_or_else(|| err(line, format!("operand {} of `{mnemonic}` must be a register or number", i + 1)))
        };
        let arity = |k: usize| -> Result<(), ExecError> {
            if ops.len() == k {
                Ok(())
            } else {
                Err(err(line, format!("`{mnemonic}` takes {k} operand(s), got {}", ops.len())))
            }
        };
        let mnemonic = mnemonic.to_ascii_lowercase();
        let p = match mnemonic.as_str() {
            "const" => {
                arity(2)?;
                let imm = parse_num(&ops[1]).ok_or_else(|| err(line, "bad immediate"))?;
                Pending::Ready(Instr::Const { rd: reg(0)?, imm: imm as u64 })
            }
            "mov" => {
                arity(2)?;
                Pending::Ready(Instr::Mov { rd: reg(0)?, rs: reg(1)? })
            }
            "add" | "sub" | "mul" => {
                arity(2)?;
                let op = match mnemonic.as_str() {
                    "add" => ArithOp::Add,
                    "sub" => ArithOp::Sub,
                    _ => ArithOp::Mul,
                };
                Pending::Ready(Instr::Arith { op, rd: reg(0)?, src: src(1)? })
            }
            "input" => {
                arity(1)?;
                Pending::Ready(Instr::Input { rd: reg(0)? })
            }
            "cmp" => {
                arity(2)?;
                Pending::Ready(Instr::Cmp { ra: reg(0)?, src: src(1)? })
            }
            "jeq" | "jne" | "jult" | "jule" => {
                arity(1)?;
                let cond = match mnemonic.as_str() {
                    "jeq" => Cond::Eq,
                    "jne" => Cond::Ne,
                    "jult" => Cond::Ult,
                    _ => Cond::Ule,
                };
                Pending::Jcc(cond, ops[0].clone())
            }
            "jmp" => {
                arity(1)?;
                Pending::Jmp(ops[0].clone())
            }
            "jtab" => {
                arity(2)?;
                let entries = parse_num(&ops[1])
                    .filter(|v| *v > 0 && *v <= 4096)
                    .ok_or_else(|| err(line, "bad jump table entry count"))?;
                Pending::Ready(Instr::Jtab {
                    mem: parse_mem(&ops[0], line)?,
                    entries: entries as usize,
                })
            }
            "abort" => {
                arity(0)?;
                Pending::Ready(Instr::Abort)
            }
            "halt" => {
                arity(0)?;
                Pending::Ready(Instr::Halt)
            }
            m => {
                let (is_load, size) = if let Some(sz) = m.strip_prefix("load") {
                    (true, sz)
                } else if let Some(sz) = m.strip_prefix("store") {
                    (false, sz)
                } else {
                    return Err(err(line, format!("unknown instruction `{m}`")));
                };
                let size: u32 = match size {
                    "1" | "2" | "4" | "8" => size.parse().unwrap(),
                    _ => return Err(err(line, format!("bad access size in `{m}`"))),
                };
                arity(2)?;
                if is_load {
                    Pending::Ready(Instr::Load {
                        size,
                        rd: reg(0)?,
                        mem: parse_mem(&ops[1], line)?,
                    })
                } else {
                    Pending::Ready(Instr::Store {
                        size,
                        mem: parse_mem(&ops[0], line)?,
                        src: src(1)?,
                    })
                }
            }
        };
        pending.push((line, p));
    }

    let resolve = |l: &str, line: usize| -> Result<usize, ExecError> {
        labels
            .get(l)
            .copied()
            .or_else(|| parse_num(l).filter(|v| *v >= 0).map(|v| v as usize))
            .ok_or_else(|| err(line, format!("undefined label `{l}`")))
    };
    let instrs = pending
        .iter()
        .map(|(line, p)| {
            Ok(match p {
                Pending::Ready(i) => *i,
                Pending::Jcc(c, l) => Instr::Jcc {
                    cond: *c,
                    target: resolve(l, *line)?,
                },
                Pending::Jmp(l) => Instr::Jmp {
                    target: resolve(l, *line)?,
                },
            })
        })
        .collect::<Result<Vec<_>, ExecError>>()?;

    let code_end = instrs.len() as u64;
    let mut blocks: Vec<DataBlock> = Vec::new();
    for (line, d) in data {
        let block = match d {
            PendingData::Bytes(addr, bytes) => DataBlock { addr, bytes },
            PendingData::Labels(addr, ls) => {
                let mut bytes = Vec::with_capacity(ls.len() * 8);
                for l in &ls {
                    bytes.extend_from_slice(&(resolve(l, line)? as u64).to_le_bytes());
                }
                DataBlock { addr, bytes }
            }
        };
        let end = block.addr.checked_add(block.bytes.len() as u64);
        if block.addr < code_end || end.is_none() {
            return Err(err(line, "data overlaps the code region or wraps"));
        }
        let end = end.unwrap();
        if blocks.iter().any(|b| block.addr < b.addr + b.bytes.len() as u64 && b.addr < end) {
            return Err(err(line, "overlapping data directives"));
        }
        blocks.push(block);
    }
    let total: u64 = blocks.iter().map(|b| b.bytes.len() as u64).sum();
    if total > MAX_MEMORY {
        return Err(err(0, "data exceeds 1 MiB"));
    }
    if instrs.is_empty() {
        return Err(err(0, "program has no instructions"));
    }
    Ok(Program {
        instrs,
        data: blocks,
        labels,
        source: text.to_string(),
    })
}
