use std::collections::HashMap;
use std::sync::Arc;

use super::{BinaryOp, BitVecExpr, ExprError, ExprKind, Node, UnaryOp};
use crate::bv::BvValue;

/// Concrete values for expression variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    values: HashMap<Arc<str>, BvValue>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<Arc<str>>, value: BvValue) {
        self.values.insert(name.into(), value);
    }

    pub fn insert_u64(&mut self, name: impl Into<Arc<str>>, width: u32, value: u64) {
        self.insert(name, BvValue::from_u64(value, width));
    }

    pub fn get(&self, name: &str) -> Option<&BvValue> {
        self.values.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Arc<str>, &BvValue)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluates `e` under `a`. Shared sub-expressions are evaluated once.
pub fn eval(e: &BitVecExpr, a: &Assignment) -> Result<BvValue, ExprError> {
    let mut memo = HashMap::new();
    eval_memo(e, a, &mut memo)
}

fn eval_memo(
    e: &BitVecExpr,
    a: &Assignment,
    memo: &mut HashMap<*const Node, BvValue>,
) -> Result<BvValue, ExprError> {
    let shared = e.is_shared() && !e.children().is_empty();
    if shared {
        if let Some(v) = memo.get(&e.ptr()) {
            return Ok(*v);
        }
    }
    let v = match e.kind() {
        ExprKind::Const(v) => *v,
        ExprKind::Var(name) => {
            let v = a
                .get(name)
                .ok_or_else(|| ExprError::UnboundVariable(name.to_string()))?;
            if v.width() != e.width() {
                return Err(ExprError::WidthMismatch(format!(
                    "`{name}` bound to a {}-bit value, declared {} bits",
                    v.width(),
                    e.width()
                )));
            }
            *v
        }
        ExprKind::Unary(op, x) => {
            let x = eval_memo(x, a, memo)?;
            match op {
                UnaryOp::Not => x.not(),
                UnaryOp::Neg => x.neg(),
            }
        }
        ExprKind::Binary(op, x, y) => {
            let x = eval_memo(x, a, memo)?;
            let y = eval_memo(y, a, memo)?;
            use std::cmp::Ordering::*;
            match op {
                BinaryOp::Add => x.add(&y),
                BinaryOp::Sub => x.sub(&y),
                BinaryOp::Mul => x.mul(&y),
                BinaryOp::And => x.and(&y),
                BinaryOp::Or => x.or(&y),
                BinaryOp::Xor => x.xor(&y),
                BinaryOp::Eq => BvValue::from_bool(x == y),
                BinaryOp::Ult => BvValue::from_bool(x.ucmp(&y) == Less),
                BinaryOp::Ule => BvValue::from_bool(x.ucmp(&y) != Greater),
                BinaryOp::Slt => BvValue::from_bool(x.scmp(&y) == Less),
                BinaryOp::Sle => BvValue::from_bool(x.scmp(&y) != Greater),
            }
        }
        ExprKind::Ite(c, t, f) => {
            if eval_memo(c, a, memo)?.is_true() {
                eval_memo(t, a, memo)?
            } else {
                eval_memo(f, a, memo)?
            }
        }
        ExprKind::Extract { hi, lo, arg } => eval_memo(arg, a, memo)?.extract(*hi, *lo),
        ExprKind::Extend { signed, by, arg } => {
            let x = eval_memo(arg, a, memo)?;
            if *signed {
                x.sign_extend(*by)
            } else {
                x.zero_extend(*by)
            }
        }
        ExprKind::Concat(h, l) => {
            let h = eval_memo(h, a, memo)?;
            let l = eval_memo(l, a, memo)?;
            h.concat(&l)
        }
    };
    if shared {
        memo.insert(e.ptr(), v);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant() {
        let e = BitVecExpr::from_u64(5, 32);
        assert_eq!(eval(&e, &Assignment::new()).unwrap().low_u64(), 5);
    }

    #[test]
    fn modular_wraparound() {
        let x = BitVecExpr::var("x", 32).unwrap();
        let e = x.add(&BitVecExpr::from_u64(1, 32));
        let mut a = Assignment::new();
        a.insert_u64("x", 32, 0xFFFF_FFFF);
        assert!(eval(&e, &a).unwrap().is_zero());
    }

    #[test]
    fn ite_selects_then() {
        let x = BitVecExpr::var("x", 32).unwrap();
        let e = x
            .eq_(&BitVecExpr::from_u64(4, 32))
            .select(&BitVecExpr::from_u64(5, 32), &BitVecExpr::from_u64(9, 32));
        let mut a = Assignment::new();
        a.insert_u64("x", 32, 4);
        assert_eq!(eval(&e, &a).unwrap().low_u64(), 5);
        a.insert_u64("x", 32, 3);
        assert_eq!(eval(&e, &a).unwrap().low_u64(), 9);
    }

    #[test]
    fn errors() {
        let x = BitVecExpr::var("x", 8).unwrap();
        assert_eq!(
            eval(&x, &Assignment::new()),
            Err(ExprError::UnboundVariable("x".into()))
        );
        let mut a = Assignment::new();
        a.insert_u64("x", 16, 1);
        assert!(matches!(eval(&x, &a), Err(ExprError::WidthMismatch(_))));
    }

    #[test]
    fn signed_comparisons() {
        let m1 = BitVecExpr::from_u64(0xFF, 8);
        let one = BitVecExpr::from_u64(1, 8);
        let slt = BitVecExpr::binary(BinaryOp::Slt, m1.clone(), one.clone()).unwrap();
        let e = Assignment::new();
        assert!(eval(&slt, &e).unwrap().is_true());
        assert!(!eval(&m1.ult(&one), &e).unwrap().is_true());
    }

    #[test]
    fn deep_sharing_is_linear() {
        // x doubled 200 times: a tree walk would take 2^200 steps
        let mut e = BitVecExpr::var("x", 64).unwrap();
        for _ in 0..200 {
            e = e.add(&e);
        }
        let mut a = Assignment::new();
        a.insert_u64("x", 64, 1);
        assert!(eval(&e, &a).unwrap().is_zero());
    }
}
