//! SMT-LIBv2 QF_BV term syntax for [`BitVecExpr`].
//!
//! The printer writes 1-bit results with their bitvector operators
//! (`bvand`, `bvor`, ...), so printing then parsing returns the identical
//! expression. The parser additionally accepts the Boolean spellings
//! (`and`, `or`, `not`, `xor`, `true`, `false`, `distinct`) and maps them
//! onto 1-bit bitvectors.

use std::collections::HashMap;
use std::fmt::Write;
use std::sync::Arc;

use super::{BinaryOp, BitVecExpr, ExprError, ExprKind, UnaryOp};
use crate::bv::BvValue;

/// Variable name to width.
pub type Declarations = HashMap<String, u32>;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStyle {
    Bare,
    Qualified,
}

pub(crate) fn print(e: &BitVecExpr, style: VarStyle) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, style);
    out
}

/// Literal text for a constant: `#x` when the width is a multiple of 4,
/// `#b` otherwise, always padded to the full width.
pub(crate) fn literal(v: &BvValue) -> String {
    if v.width() % 4 == 0 {
        format!("#x{}", v.to_hex_digits())
    } else {
        format!("#b{}", v.to_bin_digits())
    }
}

fn binop_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "bvadd",
        BinaryOp::Sub => "bvsub",
        BinaryOp::Mul => "bvmul",
        BinaryOp::And => "bvand",
        BinaryOp::Or => "bvor",
        BinaryOp::Xor => "bvxor",
        BinaryOp::Eq => "=",
        BinaryOp::Ult => "bvult",
        BinaryOp::Slt => "bvslt",
        BinaryOp::Ule => "bvule",
        BinaryOp::Sle => "bvsle",
    }
}

fn write_expr(out: &mut String, e: &BitVecExpr, style: VarStyle) {
    match e.kind() {
        ExprKind::Const(v) => out.push_str(&literal(v)),
        ExprKind::Var(name) => match style {
            VarStyle::Bare => out.push_str(name),
            VarStyle::Qualified => {
                let _ = write!(out, "(as {name} (_ BitVec {}))", e.width());
            }
        },
        ExprKind::Unary(op, a) => {
            out.push_str(match op {
                UnaryOp::Not => "(bvnot ",
                UnaryOp::Neg => "(bvneg ",
            });
            write_expr(out, a, style);
            out.push(')');
        }
        ExprKind::Binary(op, a, b) => {
            out.push('(');
            out.push_str(binop_name(*op));
            out.push(' ');
            write_expr(out, a, style);
            out.push(' ');
            write_expr(out, b, style);
            out.push(')');
        }
        ExprKind::Ite(c, t, f) => {
            out.push_str("(ite ");
            write_expr(out, c, style);
            out.push(' ');
            write_expr(out, t, style);
            out.push(' ');
            write_expr(out, f, style);
            out.push(')');
        }
        ExprKind::Extract { hi, lo, arg } => {
            let _ = write!(out, "((_ extract {hi} {lo}) ");
            write_expr(out, arg, style);
            out.push(')');
        }
        ExprKind::Extend { signed, by, arg } => {
            let name = if *signed { "sign_extend" } else { "zero_extend" };
            let _ = write!(out, "((_ {name} {by}) ");
            write_expr(out, arg, style);
            out.push(')');
        }
        ExprKind::Concat(h, l) => {
            out.push_str("(concat ");
            write_expr(out, h, style);
            out.push(' ');
            write_expr(out, l, style);
            out.push(')');
        }
    }
}

/// Generic s-expression tree, also used for solver output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    pub(crate) fn pos(&self) -> usize {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }

    pub(crate) fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(s, _) => Some(s),
            _ => None,
        }
    }
}

pub(crate) fn read_sexps(text: &str) -> Result<Vec<Sexp>, ExprError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut stack: Vec<(Vec<Sexp>, usize)> = vec![(Vec::new(), 0)];
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'(' => {
                stack.push((Vec::new(), i));
                i += 1;
            }
            b')' => {
                if stack.len() == 1 {
                    return Err(perr(i, "unbalanced `)`"));
                }
                let (items, start) = stack.pop().unwrap();
                stack.last_mut().unwrap().0.push(Sexp::List(items, start));
                i += 1;
            }
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            b'|' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'|' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(perr(start, "unterminated quoted symbol"));
                }
                i += 1;
                let sym = &text[start + 1..i - 1];
                stack.last_mut().unwrap().0.push(Sexp::Atom(sym.to_string(), start));
            }
            b'"' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(perr(start, "unterminated string"));
                }
                i += 1;
                stack
                    .last_mut()
                    .unwrap()
                    .0
                    .push(Sexp::Atom(text[start..i].to_string(), start));
            }
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'(' | b')' | b';')
                {
                    i += 1;
                }
                stack
                    .last_mut()
                    .unwrap()
                    .0
                    .push(Sexp::Atom(text[start..i].to_string(), start));
            }
        }
    }
    if stack.len() != 1 {
        return Err(perr(stack.last().unwrap().1, "unclosed `(`"));
    }
    Ok(stack.pop().unwrap().0)
}

fn perr(pos: usize, msg: impl Into<String>) -> ExprError {
    ExprError::Parse {
        pos,
        msg: msg.into(),
    }
}

/// Parses one term. Bare variable names must appear in `decls`; the
/// qualified form `(as name (_ BitVec W))` is always accepted.
pub fn parse_expr(text: &str, decls: &Declarations) -> Result<BitVecExpr, ExprError> {
    let items = read_sexps(text)?;
    match items.as_slice() {
        [one] => {
            let mut p = TermParser {
                decls,
                vars: HashMap::new(),
            };
            p.term(one)
        }
        [] => Err(perr(0, "empty input")),
        [_, second, ..] => Err(perr(second.pos(), "trailing input after term")),
    }
}

pub(crate) fn parse_literal(s: &str, pos: usize) -> Result<BvValue, ExprError> {
    if let Some(h) = s.strip_prefix("#x") {
        let w = h.len() as u32 * 4;
        BvValue::parse_radix(h, 16, w).ok_or_else(|| perr(pos, format!("bad literal `{s}`")))
    } else if let Some(b) = s.strip_prefix("#b") {
        let w = b.len() as u32;
        BvValue::parse_radix(b, 2, w).ok_or_else(|| perr(pos, format!("bad literal `{s}`")))
    } else {
        Err(perr(pos, format!("not a literal `{s}`")))
    }
}

/// Parses `(_ bvN W)`.
pub(crate) fn parse_indexed_literal(items: &[Sexp], pos: usize) -> Result<Option<BvValue>, ExprError> {
    if let [Sexp::Atom(u, _), Sexp::Atom(n, _), Sexp::Atom(w, _)] = items {
        if u == "_" {
            if let Some(digits) = n.strip_prefix("bv") {
                let w: u32 = w.parse().map_err(|_| perr(pos, "bad literal width"))?;
                return BvValue::parse_radix(digits, 10, w)
                    .map(Some)
                    .ok_or_else(|| perr(pos, format!("bad literal `(_ {n} {w})`")));
            }
        }
    }
    Ok(None)
}

struct TermParser<'a> {
    decls: &'a Declarations,
    vars: HashMap<String, BitVecExpr>,
}

impl TermParser<'_> {
    fn var(&mut self, name: &str, width: u32, pos: usize) -> Result<BitVecExpr, ExprError> {
        if let Some(v) = self.vars.get(name) {
            if v.width() != width {
                return Err(perr(pos, format!("`{name}` used with widths {} and {width}", v.width())));
            }
            return Ok(v.clone());
        }
        let v = BitVecExpr::var(Arc::<str>::from(name), width)?;
        self.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    fn term(&mut self, s: &Sexp) -> Result<BitVecExpr, ExprError> {
        match s {
            Sexp::Atom(a, pos) => self.atom(a, *pos),
            Sexp::List(items, pos) => self.list(items, *pos),
        }
    }

    fn atom(&mut self, a: &str, pos: usize) -> Result<BitVecExpr, ExprError> {
        match a {
            "true" => Ok(BitVecExpr::bool_const(true)),
            "false" => Ok(BitVecExpr::bool_const(false)),
            _ if a.starts_with('#') => Ok(BitVecExpr::constant(parse_literal(a, pos)?)),
            _ => match self.decls.get(a) {
                Some(w) => self.var(a, *w, pos),
                None => Err(perr(pos, format!("undeclared variable `{a}`"))),
            },
        }
    }

    fn args(&mut self, items: &[Sexp]) -> Result<Vec<BitVecExpr>, ExprError> {
        items.iter().map(|s| self.term(s)).collect()
    }

    fn list(&mut self, items: &[Sexp], pos: usize) -> Result<BitVecExpr, ExprError> {
        if let Some(v) = parse_indexed_literal(items, pos)? {
            return Ok(BitVecExpr::constant(v));
        }
        let Some(head) = items.first() else {
            return Err(perr(pos, "empty application"));
        };
        let at = |e: ExprError| match e {
            ExprError::Parse { .. } => e,
            other => perr(pos, other.to_string()),
        };
        match head {
            Sexp::List(h, hpos) => {
                // indexed operator: ((_ extract hi lo) a) etc.
                let idx: Vec<&str> = h.iter().filter_map(Sexp::atom).collect();
                if idx.len() != h.len() || idx.first() != Some(&"_") {
                    return Err(perr(*hpos, "expected indexed operator"));
                }
                let num = |k: usize| -> Result<u32, ExprError> {
                    idx.get(k)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| perr(*hpos, "bad operator index"))
                };
                let args = self.args(&items[1..])?;
                let [arg] = <[BitVecExpr; 1]>::try_from(args)
                    .map_err(|_| perr(pos, "indexed operator takes one argument"))?;
                match idx.get(1).copied() {
                    Some("extract") if idx.len() == 4 => {
                        BitVecExpr::extract(num(2)?, num(3)?, arg).map_err(at)
                    }
                    Some("zero_extend") if idx.len() == 3 => {
                        BitVecExpr::extend(false, num(2)?, arg).map_err(at)
                    }
                    Some("sign_extend") if idx.len() == 3 => {
                        BitVecExpr::extend(true, num(2)?, arg).map_err(at)
                    }
                    _ => Err(perr(*hpos, "unknown indexed operator")),
                }
            }
            Sexp::Atom(op, _) => {
                if op == "as" {
                    return self.qualified(items, pos);
                }
                let args = self.args(&items[1..])?;
                self.apply(op, args, pos).map_err(at)
            }
        }
    }

    fn qualified(&mut self, items: &[Sexp], pos: usize) -> Result<BitVecExpr, ExprError> {
        if let [_, Sexp::Atom(name, _), Sexp::List(sort, _)] = items {
            if let [Sexp::Atom(u, _), Sexp::Atom(bv, _), Sexp::Atom(w, _)] = sort.as_slice() {
                if u == "_" && bv == "BitVec" {
                    let w: u32 = w.parse().map_err(|_| perr(pos, "bad sort width"))?;
                    return self.var(name, w, pos);
                }
            }
        }
        Err(perr(pos, "expected (as name (_ BitVec W))"))
    }

    fn apply(&mut self, op: &str, args: Vec<BitVecExpr>, pos: usize) -> Result<BitVecExpr, ExprError> {
        let binop = match op {
            "bvadd" => Some(BinaryOp::Add),
            "bvsub" => Some(BinaryOp::Sub),
            "bvmul" => Some(BinaryOp::Mul),
            "bvand" | "and" => Some(BinaryOp::And),
            "bvor" | "or" => Some(BinaryOp::Or),
            "bvxor" | "xor" => Some(BinaryOp::Xor),
            "=" => Some(BinaryOp::Eq),
            "bvult" => Some(BinaryOp::Ult),
            "bvslt" => Some(BinaryOp::Slt),
            "bvule" => Some(BinaryOp::Ule),
            "bvsle" => Some(BinaryOp::Sle),
            _ => None,
        };
        if let Some(b) = binop {
            if args.len() < 2 {
                return Err(perr(pos, format!("`{op}` needs at least two arguments")));
            }
            if b.is_comparison() {
                if args.len() != 2 {
                    return Err(perr(pos, format!("`{op}` takes two arguments")));
                }
                let mut it = args.into_iter();
                return BitVecExpr::binary(b, it.next().unwrap(), it.next().unwrap());
            }
            // left-associative chain
            let mut it = args.into_iter();
            let mut acc = it.next().unwrap();
            for a in it {
                acc = BitVecExpr::binary(b, acc, a)?;
            }
            return Ok(acc);
        }
        match (op, args.len()) {
            ("bvnot" | "not", 1) => Ok(BitVecExpr::unary(UnaryOp::Not, args[0].clone())),
            ("bvneg", 1) => Ok(BitVecExpr::unary(UnaryOp::Neg, args[0].clone())),
            ("distinct", 2) => Ok(args[0].eq_(&args[1]).not()),
            ("ite", 3) => BitVecExpr::ite(args[0].clone(), args[1].clone(), args[2].clone()),
            ("concat", n) if n >= 2 => {
                let mut it = args.into_iter();
                let mut acc = it.next().unwrap();
                for a in it {
                    acc = BitVecExpr::concat(acc, a)?;
                }
                Ok(acc)
            }
            _ => Err(perr(pos, format!("unknown operator `{op}`/{}", args.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn decls() -> Declarations {
        [("x".to_string(), 8), ("y".to_string(), 8)].into_iter().collect()
    }

    #[test]
    fn parses_table_address() {
        let text = "(bvadd #x0000000000201020 (bvmul ((_ zero_extend 56) x) (_ bv4 64)))";
        let e = parse_expr(text, &decls()).unwrap();
        assert_eq!(e.width(), 64);
        assert_eq!(
            print(&e, VarStyle::Bare),
            "(bvadd #x0000000000201020 (bvmul ((_ zero_extend 56) x) #x0000000000000004))"
        );
    }

    #[test]
    fn qualified_variables_round_trip() {
        let text = "(ite (= (as x (_ BitVec 8)) #x04) #x05 #b00001001)";
        let e = parse_expr(text, &Declarations::new()).unwrap();
        let printed = e.to_string();
        assert_eq!(printed, "(ite (= (as x (_ BitVec 8)) #x04) #x05 #x09)");
        assert_eq!(parse_expr(&printed, &Declarations::new()).unwrap(), e);
    }

    #[test]
    fn boolean_spellings() {
        let e = parse_expr("(and (bvult x y) (not (= x #x00)) true)", &decls()).unwrap();
        assert_eq!(e.width(), 1);
        let d = parse_expr("(distinct x y)", &decls()).unwrap();
        assert_eq!(d, parse_expr("(bvnot (= x y))", &decls()).unwrap());
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "(bvadd x",
            "(bvadd x y))",
            "z",
            "(bvadd x #x0001)",
            "(foo x)",
            "((_ extract 9 0) x)",
            "(ite x x y)",
            "#xZZ",
            "(as x (_ BitVec 0))",
            "x y",
        ] {
            assert!(parse_expr(bad, &decls()).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn odd_width_literals() {
        let v = BvValue::from_u64(5, 3);
        assert_eq!(literal(&v), "#b101");
        assert_eq!(literal(&BvValue::from_u64(1, 1)), "#b1");
    }

    fn arb_expr() -> impl Strategy<Value = BitVecExpr> {
        let leaf = prop_oneof![
            any::<u8>().prop_map(|v| BitVecExpr::from_u64(v as u64, 8)),
            Just(BitVecExpr::var("x", 8).unwrap()),
            Just(BitVecExpr::var("y", 8).unwrap()),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), 0usize..6).prop_map(|(a, b, k)| {
                    let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::And, BinaryOp::Or, BinaryOp::Xor][k];
                    BitVecExpr::binary(op, a, b).unwrap()
                }),
                (inner.clone(), inner.clone(), inner.clone(), 0usize..5).prop_map(|(a, b, c, k)| {
                    let op = [BinaryOp::Eq, BinaryOp::Ult, BinaryOp::Slt, BinaryOp::Ule, BinaryOp::Sle][k];
                    BitVecExpr::binary(op, a, b).unwrap().select(&c, &c.not())
                }),
                inner.clone().prop_map(|a| BitVecExpr::unary(UnaryOp::Neg, a)),
                inner.clone().prop_map(|a| {
                    let wide = BitVecExpr::extend(true, 8, a).unwrap();
                    BitVecExpr::extract(11, 4, wide).unwrap()
                }),
                (inner.clone(), inner).prop_map(|(a, b)| {
                    let c = BitVecExpr::concat(a, b).unwrap();
                    BitVecExpr::extract(7, 0, c).unwrap()
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let bare = print(&e, VarStyle::Bare);
            prop_assert_eq!(parse_expr(&bare, &decls()).unwrap(), e.clone());
            let q = e.to_string();
            prop_assert_eq!(parse_expr(&q, &Declarations::new()).unwrap(), e);
        }
    }
}
