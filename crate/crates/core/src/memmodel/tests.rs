use super::*;
use crate::expr::{eval, Assignment};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use super::Strategy;
use crate::expr::ExprKind;

fn addr() -> BitVecExpr {
    BitVecExpr::var("a", 64).unwrap()
}

fn read_at(r: &ModeledRead, a: u64, extra: &Assignment) -> u128 {
    let mut asg = extra.clone();
    asg.insert_u64("a", 64, a);
    eval(&r.expr, &asg).unwrap().to_u128().unwrap()
}

fn k(v: u64, w: u32) -> BitVecExpr {
    BitVecExpr::from_u64(v, w)
}

fn table_check() -> MemorySnapshot {
    MemorySnapshot::from_values(0x201020, 4, &[3, 7, 14, 0, 5, 11, 9], 8).unwrap()
}

fn mixed_pieces(base: u64) -> MemorySnapshot {
    MemorySnapshot::from_values(base, 4, &[1, 9, 17, 15, 13, 1, 17, 15], 0).unwrap()
}

#[test]
fn ite_table_check() {
    let r = build_ite(&table_check(), &addr()).unwrap();
    let vals = [3u64, 7, 14, 0, 5, 11, 9];
    let expected = vals
        .iter()
        .enumerate()
        .rev()
        .fold(k(14, 32), |els, (i, &v)| addr().eq_(&k(0x201020 + 4 * i as u64, 64)).select(&k(v, 32), &els));
    assert_eq!(r.expr, expected);
    assert_eq!(r.expr.width(), 32);
}

#[test]
fn ite_merges_equal_values() {
    let snap = MemorySnapshot::from_values(0x100, 4, &[5, 7, 5], 4).unwrap();
    let r = build_ite(&snap, &addr()).unwrap();
    let a = addr();
    let expected = a.eq_(&k(0x100, 64)).or(&a.eq_(&k(0x108, 64))).select(
        &k(5, 32),
        &a.eq_(&k(0x104, 64)).select(&k(7, 32), &k(7, 32)),
    );
    assert_eq!(r.expr, expected);
    for x in 0xF0..0x118 {
        let want = match x {
            0x100 | 0x108 => 5,
            _ => 7,
        };
        assert_eq!(read_at(&r, x, &Assignment::new()), want);
    }
}

#[test]
fn ite_single_cell() {
    let snap = MemorySnapshot::from_values(0x40, 8, &[42], 0).unwrap();
    let r = build_ite(&snap, &addr()).unwrap();
    assert_eq!(r.expr, addr().eq_(&k(0x40, 64)).select(&k(42, 64), &k(42, 64)));
}

#[test]
fn empty_region_is_an_error() {
    let snap = MemorySnapshot {
        base: 0,
        access_size: 4,
        cells: vec![],
        current_offset: 0,
    };
    for s in Strategy::ALL {
        assert_eq!(model_read(&snap, &addr(), s).unwrap_err(), MemModelError::EmptyRegion);
    }
}

#[test]
fn bst_tree_shape() {
    // four cells v1, v2, v2, v3 with current value v2
    let snap = MemorySnapshot::from_values(0x100, 8, &[1, 2, 2, 3], 8).unwrap();
    let r = build_bst(&snap, &addr()).unwrap();
    let a = addr();
    let cur = k(2, 64);
    let at = |x: u64, v: u64, els: &BitVecExpr| a.eq_(&k(x, 64)).select(&k(v, 64), els);
    let expected = a.ult(&k(0x110, 64)).select(
        &a.ult(&k(0x100, 64)).select(&cur, &at(0x100, 1, &at(0x108, 2, &cur))),
        &a.ult(&k(0x118, 64)).select(&at(0x110, 2, &cur), &at(0x118, 3, &cur)),
    );
    assert_eq!(r.expr, expected);
}

#[test]
fn bst_two_cells() {
    let snap = MemorySnapshot::from_values(0x10, 4, &[7, 8], 0).unwrap();
    let r = build_bst(&snap, &addr()).unwrap();
    for x in 0..0x30 {
        let want = match x {
            0x14 => 8,
            _ => 7,
        };
        assert_eq!(read_at(&r, x, &Assignment::new()), want, "at {x:#x}");
    }
}

#[test]
fn mixed_pieces_linearized() {
    let base = 0x8000;
    let snap = mixed_pieces(base);
    let r = build_linearized(&snap, &addr()).unwrap();
    assert_eq!(r.segments.len(), 2);
    assert_eq!(r.horizontal, vec![(15, vec![12, 28])]);
    assert_eq!(r.singles, vec![(24, 17)]);
    let shown: Vec<String> = r.segments.iter().map(|s| s.to_string()).collect();
    assert_eq!(shown, ["2x+1", "-3x+61"]);
    assert_eq!(r.symbolic_prefix_count, 0);
    assert_eq!(r.equation_width, 32);
    // expected: 12|28 -> 15; else <24 ? (<16 ? 2x+1 : -3x+61) : (<32 ? 17 : current)
    let expected = |x: u64| -> u128 {
        if x == 12 || x == 28 {
            15
        } else if x < 24 {
            if x < 16 {
                (2 * x + 1) as u128
            } else {
                (61 - 3 * x as i64) as u32 as u128
            }
        } else if x < 32 {
            17
        } else {
            1
        }
    };
    for x in (0..32).step_by(4).chain([32, 36, 100, u64::MAX - 3]) {
        assert_eq!(read_at(&r, base.wrapping_add(x), &Assignment::new()), expected(x), "idx {x}");
    }
    // the outermost node tests the horizontal group
    let ExprKind::Ite(cond, then, _) = r.expr.kind() else { panic!() };
    assert_eq!(then.as_const().unwrap().low_u64(), 15);
    assert!(matches!(cond.kind(), ExprKind::Binary(crate::expr::BinaryOp::Or, _, _)));
}

#[test]
fn below_base_wraps_to_current() {
    let snap = mixed_pieces(0x8000);
    let r = build_linearized(&snap, &addr()).unwrap();
    assert_eq!(read_at(&r, 0x8000 - 4, &Assignment::new()), 1);
    assert_eq!(read_at(&r, 0, &Assignment::new()), 1);
}

#[test]
fn symbolic_cell_is_outermost() {
    let mut snap = mixed_pieces(0x8000);
    let s = BitVecExpr::var("s", 32).unwrap();
    snap.set_symbolic(8, s.clone()).unwrap();
    let r = build_linearized(&snap, &addr()).unwrap();
    assert_eq!(r.symbolic_prefix_count, 1);
    let ExprKind::Ite(cond, then, _) = r.expr.kind() else { panic!() };
    assert_eq!(*then, s);
    let idx = addr().sub(&k(0x8000, 64));
    assert_eq!(*cond, idx.eq_(&k(8, 64)));
    let mut asg = Assignment::new();
    asg.insert_u64("s", 32, 0xDEAD);
    assert_eq!(read_at(&r, 0x8008, &asg), 0xDEAD);
    assert_eq!(read_at(&r, 0x8004, &asg), 9);
}

#[test]
fn wide_access_falls_back() {
    let w = 128;
    let cells = (0..4u64)
        .map(|i| Cell {
            offset: i * 16,
            concrete_value: BvValue::from_u64(i * 3, w),
            symbolic_value: None,
        })
        .collect();
    let snap = MemorySnapshot {
        base: 0x1000,
        access_size: 16,
        cells,
        current_offset: 16,
    };
    let r = model_read(&snap, &addr(), Strategy::Linearized).unwrap();
    assert!(r.fell_back_to_ite);
    assert_eq!(r.strategy, Strategy::Linearized);
    assert_eq!(r.expr, build_ite(&snap, &addr()).unwrap().expr);
    assert_eq!(r.expr.width(), 128);
}

#[test]
fn dispatch_matches_builders() {
    let snap = table_check();
    assert_eq!(
        model_read(&snap, &addr(), Strategy::Ite).unwrap().expr,
        build_ite(&snap, &addr()).unwrap().expr
    );
    assert_eq!(
        model_read(&snap, &addr(), Strategy::Bst).unwrap().expr,
        build_bst(&snap, &addr()).unwrap().expr
    );
}

#[test]
fn snapshot_text_round_trip() {
    let mut snap = table_check();
    let x = BitVecExpr::var("in_0", 8).unwrap();
    snap.set_symbolic(4, x.zext(24).add(&k(1, 32))).unwrap();
    let text = snap.to_string();
    assert!(text.starts_with("base=0x201020 access=4 current=0x8\n0x0 0x00000003\n"));
    let back: MemorySnapshot = text.parse().unwrap();
    assert_eq!(back, snap);
    assert_eq!(back.to_string(), text);
}

#[test]
fn snapshot_parse_errors() {
    let bad = [
        "",
        "base=0x0 access=4\n0x0 0x1\n",
        "base=0x0 access=4 current=0x0\n0x0 0x100000000\n",
        "base=0x0 access=4 current=0x4\n0x0 0x1\n",
        "base=0x0 access=4 current=0x0\n0x0 0x1\n0x8 0x1\n",
        "base=0x0 access=4 current=0x0\n0x0 0x1 sym=(bvadd\n",
        "base=0x0 access=2 current=0x0\n0x0 0x1 sym=(as x (_ BitVec 8))\n",
    ];
    for t in bad {
        assert!(t.parse::<MemorySnapshot>().is_err(), "{t:?}");
    }
}

fn arb_snapshot() -> impl proptest::strategy::Strategy<Value = (MemorySnapshot, Assignment)> {
    (
        0usize..4,
        prop::collection::vec((0u64..6, any::<u64>(), prop::bool::weighted(0.2)), 1..40),
        0u64..1 << 48,
        any::<prop::sample::Index>(),
        any::<bool>(),
    )
        .prop_map(|(sz, raw, base_raw, cur, small)| {
            let size = [1u32, 2, 4, 8][sz];
            let w = size * 8;
            let mask = if w == 64 { u64::MAX } else { (1u64 << w) - 1 };
            let base = base_raw / size as u64 * size as u64;
            let mut asg = Assignment::new();
            let cells: Vec<Cell> = raw
                .iter()
                .enumerate()
                .map(|(i, &(small_v, big_v, sym))| {
                    let v = if small { small_v } else { big_v } & mask;
                    let symbolic_value = sym.then(|| {
                        let name = format!("m{i}");
                        asg.insert(name.as_str(), BvValue::from_u64(v, w));
                        BitVecExpr::var(name, w).unwrap()
                    });
                    Cell {
                        offset: i as u64 * size as u64,
                        concrete_value: BvValue::from_u64(v, w),
                        symbolic_value,
                    }
                })
                .collect();
            let current_offset = cur.index(cells.len()) as u64 * size as u64;
            (
                MemorySnapshot {
                    base,
                    access_size: size,
                    cells,
                    current_offset,
                },
                asg,
            )
        })
}

proptest! {
    #[test]
    fn all_strategies_sound((snap, asg) in arb_snapshot()) {
        let size = snap.access_size as u64;
        let current = snap.current_value().to_u128().unwrap();
        for s in Strategy::ALL {
            let r = model_read(&snap, &addr(), s).unwrap();
            prop_assert_eq!(r.expr.width(), snap.value_width());
            prop_assert!(r.equation_width >= snap.value_width());
            for c in &snap.cells {
                let want = c.concrete_value.to_u128().unwrap();
                prop_assert_eq!(read_at(&r, snap.base + c.offset, &asg), want);
            }
            // aligned addresses outside the window
            for d in 1..=4u64 {
                if snap.base >= d * size {
                    prop_assert_eq!(read_at(&r, snap.base - d * size, &asg), current);
                }
                prop_assert_eq!(read_at(&r, snap.upper() + (d - 1) * size, &asg), current);
            }
            if s != Strategy::Linearized {
                // every unsampled address
                for a in snap.base.saturating_sub(2 * size)..snap.upper() + 2 * size {
                    if snap.cell_at(a).is_none() {
                        prop_assert_eq!(read_at(&r, a, &asg), current);
                    }
                }
            }
        }
    }

    #[test]
    fn strategies_agree_on_concrete_regions(vals in prop::collection::vec(0u64..8, 1..33), cur in any::<prop::sample::Index>()) {
        let snap = MemorySnapshot::from_values(0x4000, 4, &vals, cur.index(vals.len()) as u64 * 4).unwrap();
        let rs: Vec<_> = Strategy::ALL.iter().map(|&s| model_read(&snap, &addr(), s).unwrap()).collect();
        let none = Assignment::new();
        for a in 0x4000 - 16..snap.upper() + 16 {
            let ite = read_at(&rs[0], a, &none);
            prop_assert_eq!(read_at(&rs[1], a, &none), ite);
            if a % 4 == 0 || !(0x4000..snap.upper()).contains(&a) {
                prop_assert_eq!(read_at(&rs[2], a, &none), ite, "addr {:#x}", a);
            }
        }
    }

    #[test]
    fn merging_preserves_semantics(vals in prop::collection::vec(0u64..4, 1..20)) {
        let snap = MemorySnapshot::from_values(0x100, 2, &vals, 0).unwrap();
        let merged = build_ite(&snap, &addr()).unwrap();
        let unmerged = snap.cells.iter().rev().fold(BitVecExpr::constant(snap.current_value().clone()), |els, c| {
            addr().eq_(&k(0x100 + c.offset, 64)).select(&BitVecExpr::constant(c.concrete_value.clone()), &els)
        });
        for a in 0xF0..0x100 + 2 * vals.len() as u64 + 8 {
            let mut asg = Assignment::new();
            asg.insert_u64("a", 64, a);
            prop_assert_eq!(eval(&merged.expr, &asg).unwrap(), eval(&unmerged, &asg).unwrap());
        }
    }

    #[test]
    fn snapshot_round_trip((snap, _) in arb_snapshot()) {
        let text = snap.to_string();
        let back: MemorySnapshot = text.parse().unwrap();
        prop_assert_eq!(&back, &snap);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn segments_exact_in_modular_arithmetic((snap, _) in arb_snapshot()) {
        if let Ok(r) = build_linearized(&snap, &addr()) {
            let w = r.equation_width;
            for s in &r.segments {
                for x in (s.first_offset..=s.last_offset).step_by(snap.access_size as usize) {
                    let v = BvValue::from_i128(s.m, w).mul(&BvValue::from_u64(x, w)).add(&BvValue::from_i128(s.b, w));
                    let want = snap.cells[(x / snap.access_size as u64) as usize].concrete_value.clone();
                    prop_assert_eq!(v.extract(snap.value_width() - 1, 0), want);
                }
            }
        }
    }
}

