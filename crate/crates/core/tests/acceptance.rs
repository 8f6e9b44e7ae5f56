//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use symread::bounds::{infer_lower_bound_ast, resolve_bounds, BoundsPolicy, SolverOracle};
use symread::bv::BvValue;
use symread::expr::{eval, Assignment, BitVecExpr};
use symread::memmodel::{build_linearized, model_read, MemorySnapshot, Strategy};
use symread::microexec::{covdiff, explore, ExploreConfig, Program, ReplayVerdict, RunConfig};
use symread::smtlib::{prove_equal, Equivalence, SolverCommand};

const BIN: &str = env!("CARGO_BIN_EXE_symread");

fn corpus(rel: &str) -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus")).join(rel)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn solver() -> Result<SolverCommand, Verdict> {
    let s = SolverCommand::from_env();
    if s.is_available() {
        Ok(s)
    } else {
        Err(verdict(false, format!("solver `{s}` unavailable")))
    }
}

fn program(rel: &str) -> (Program, Vec<u8>) {
    let src = fs::read_to_string(corpus(&format!("{rel}.asm"))).unwrap();
    (src.parse().unwrap(), fs::read(corpus(&format!("{rel}.seed"))).unwrap())
}

fn run_cfg(symaddr: bool) -> RunConfig {
    RunConfig {
        symaddr,
        ..Default::default()
    }
}

fn table_check_example() -> Verdict {
    let s = match solver() {
        Ok(s) => s,
        Err(v) => return v,
    };
    let (prog, seed) = program("demo/table_check");
    let start = Instant::now();
    let on = explore(&prog, &seed, &ExploreConfig::new(run_cfg(true), s.clone())).unwrap();
    let elapsed = start.elapsed();
    let off = explore(&prog, &seed, &ExploreConfig::new(run_cfg(false), s)).unwrap();
    let inputs: Vec<&Vec<u8>> = on.corpus.iter().map(|e| &e.input.bytes).collect();
    let ok = inputs == [&vec![4u8]]
        && on.corpus[0].verdict == ReplayVerdict::Correct
        && off.stats.total_branches == 0
        && elapsed < Duration::from_secs(5);
    verdict(
        ok,
        format!(
            "inputs={inputs:?} verdicts={:?} off_symbolic_branches={} time={:.2}s (limit 5s)",
            on.corpus.iter().map(|e| e.verdict).collect::<Vec<_>>(),
            off.stats.total_branches,
            elapsed.as_secs_f64()
        ),
    )
}

fn mixed_pieces() -> Verdict {
    let snap = MemorySnapshot::from_values(0x8000, 4, &[1, 9, 17, 15, 13, 1, 17, 15], 0).unwrap();
    let r = build_linearized(&snap, &BitVecExpr::var("a", 64).unwrap()).unwrap();
    let segs: Vec<(i128, i128, Vec<u64>)> = r
        .segments
        .iter()
        .map(|s| {
            let stride = (s.last_offset - s.first_offset) / (s.points as u64 - 1).max(1);
            (s.m, s.b, (0..s.points as u64).map(|i| s.first_offset + i * stride).collect())
        })
        .collect();
    let want_segs = vec![(2, 1, vec![0, 4, 8]), (-3, 61, vec![16, 20])];
    let ok = segs == want_segs && r.horizontal == vec![(15, vec![12, 28])] && r.singles == vec![(24, 17)];
    verdict(
        ok,
        format!("segments={segs:?} horizontal={:?} singles={:?}", r.horizontal, r.singles),
    )
}

/// Random region: linear runs, repeats and noise, with up to a quarter of
/// the cells symbolic.
fn random_region(rng: &mut ChaCha8Rng, access: u32, symbolic: bool) -> (MemorySnapshot, Assignment) {
    let n = rng.gen_range(2..=64usize);
    let w = access * 8;
    let mut vals: Vec<BvValue> = Vec::with_capacity(n);
    while vals.len() < n {
        match rng.gen_range(0..3) {
            0 => {
                let (m, b) = (rng.gen_range(-5i128..=5), rng.gen_range(0..1000i128));
                for x in 0..rng.gen_range(2..8) {
                    vals.push(BvValue::from_i128(m * x * access as i128 + b, w));
                }
            }
            1 => vals.push(BvValue::from_u64(rng.gen_range(0..3), w)),
            _ => {
                let limbs: Vec<u64> = (0..w.div_ceil(64)).map(|_| rng.gen()).collect();
                vals.push(BvValue::from_limbs(&limbs, w));
            }
        }
    }
    vals.truncate(n);
    let size = access as u64;
    let span = n as u64 * size;
    let base = match rng.gen_range(0..4) {
        0 => 0,
        1 => u64::MAX - span - rng.gen_range(0..4) * size,
        _ => rng.gen::<u64>() >> rng.gen_range(0..48),
    };
    let cur = rng.gen_range(0..n) as u64 * size;
    let mut snap = MemorySnapshot {
        base,
        access_size: access,
        cells: vals
            .into_iter()
            .enumerate()
            .map(|(i, v)| symread::memmodel::Cell {
                offset: i as u64 * size,
                concrete_value: v,
                symbolic_value: None,
            })
            .collect(),
        current_offset: cur,
    };
    let mut asg = Assignment::new();
    if symbolic {
        for j in 0..rng.gen_range(0..=n / 4) {
            let off = rng.gen_range(0..n) as u64 * size;
            let v = BitVecExpr::var(format!("s_{j}"), w).unwrap();
            let e = v.add(&BitVecExpr::from_u64(j as u64 + 1, w));
            snap.set_symbolic(off, e).unwrap();
            let limbs: Vec<u64> = (0..w.div_ceil(64)).map(|_| rng.gen()).collect();
            asg.insert(format!("s_{j}"), BvValue::from_limbs(&limbs, w));
        }
    }
    snap.validate().unwrap();
    (snap, asg)
}

/// Checks every strategy against the snapshot at each cell and at aligned
/// addresses just outside the window (including wrapped ones). Returns the
/// first mismatch.
fn check_sound(snap: &MemorySnapshot, asg: &Assignment) -> Result<(), String> {
    let a = BitVecExpr::var("a", 64).unwrap();
    let size = snap.access_size as u64;
    let mut probes: Vec<(u64, BvValue)> = Vec::new();
    for c in &snap.cells {
        let want = match &c.symbolic_value {
            Some(e) => eval(e, asg).unwrap(),
            None => c.concrete_value.clone(),
        };
        probes.push((snap.base + c.offset, want));
    }
    for k in 1..=3u64 {
        probes.push((snap.base.wrapping_sub(k * size), snap.current_value().clone()));
        if let Some(above) = snap.upper().checked_add((k - 1) * size) {
            probes.push((above, snap.current_value().clone()));
        }
    }
    for st in Strategy::ALL {
        let r = model_read(snap, &a, st).map_err(|e| format!("{st}: {e}"))?;
        if snap.access_size >= 16 && st == Strategy::Linearized && !r.fell_back_to_ite {
            return Err("16-byte linearized read did not fall back".into());
        }
        for (addr, want) in &probes {
            let mut full = asg.clone();
            full.insert("a", BvValue::from_u64(*addr, 64));
            let got = eval(&r.expr, &full).map_err(|e| e.to_string())?;
            if &got != want {
                return Err(format!("{st} at {addr:#x}: got {got:?}, want {want:?} in\n{snap}"));
            }
        }
    }
    Ok(())
}

fn soundness(regions: usize, sizes: &[u32], seed: u64) -> (usize, Option<String>, Duration) {
    let start = Instant::now();
    let results: Vec<Result<(), String>> = (0..regions)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let access = sizes[rng.gen_range(0..sizes.len())];
            let (snap, asg) = random_region(&mut rng, access, true);
            check_sound(&snap, &asg)
        })
        .collect();
    let passed = results.iter().filter(|r| r.is_ok()).count();
    let first = results.into_iter().find_map(Result::err);
    (passed, first, start.elapsed())
}

fn oracle_soundness() -> Verdict {
    let n = 1000;
    let (passed, first, t) = soundness(n, &[1, 2, 4, 8], 3);
    verdict(
        passed == n && t < Duration::from_secs(60),
        format!(
            "{passed}/{n} regions sound, time={:.1}s (limit 60s){}",
            t.as_secs_f64(),
            first.map(|e| format!(" first failure: {e}")).unwrap_or_default()
        ),
    )
}

fn cross_strategy_equivalence() -> Verdict {
    let s = match solver() {
        Ok(s) => s,
        Err(v) => return v,
    };
    let n = 100;
    let results: Vec<[bool; 3]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let access = [1, 2, 4, 8][rng.gen_range(0..4)];
            let (snap, _) = random_region(&mut rng, access, false);
            let a = BitVecExpr::var("a", 64).unwrap();
            let size = snap.access_size as u64;
            let rel = a.sub(&BitVecExpr::from_u64(snap.base, 64));
            let domain = rel
                .ult(&BitVecExpr::from_u64(snap.span(), 64))
                .and(&rel.and(&BitVecExpr::from_u64(size - 1, 64)).eq_(&BitVecExpr::from_u64(0, 64)));
            let reads: Vec<BitVecExpr> = Strategy::ALL.iter().map(|&st| model_read(&snap, &a, st).unwrap().expr).collect();
            let pair = |x: usize, y: usize| {
                matches!(
                    prove_equal(&reads[x], &reads[y], &domain, &s, Duration::from_secs(30)),
                    Ok(Equivalence::Equal)
                )
            };
            [pair(0, 1), pair(0, 2), pair(1, 2)]
        })
        .collect();
    let equal = results.iter().flatten().filter(|&&b| b).count();
    verdict(equal == 3 * n, format!("{equal}/{} pairs Equal over {n} regions", 3 * n))
}

fn bounds_correctness() -> Verdict {
    let s = match solver() {
        Ok(s) => s,
        Err(v) => return v,
    };
    let n = 200;
    let failures: Vec<String> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
            let size = [1u64, 2, 4, 8][rng.gen_range(0..4)];
            let c = rng.gen_range(0x1000..0x1_0000_0000u64) * size;
            let k = rng.gen_range(1..=256u64);
            let x0 = rng.gen_range(0..k);
            let x = BitVecExpr::var("in_0", 8).unwrap();
            let addr = BitVecExpr::from_u64(c, 64).add(&x.zext(56).mul(&BitVecExpr::from_u64(size, 64)));
            let slice = if k == 256 {
                vec![]
            } else {
                vec![x.ult(&BitVecExpr::from_u64(k, 8))]
            };
            let concrete = c + x0 * size;
            // brute force over every x the slice admits
            let addrs: Vec<u64> = (0..256u64)
                .filter(|&v| {
                    let mut a = Assignment::new();
                    a.insert_u64("in_0", 8, v);
                    slice.iter().all(|e| eval(e, &a).unwrap().is_true())
                })
                .map(|v| c + v * size)
                .collect();
            let (lo, hi) = (*addrs.iter().min().unwrap(), *addrs.iter().max().unwrap() + size);
            let policy = BoundsPolicy {
                use_ast: false,
                use_solver: true,
                max_elements: 256,
                ..Default::default()
            };
            let mut oracle = SolverOracle::new(s.clone(), slice, Duration::from_secs(30), true);
            let b = resolve_bounds(&addr, concrete, size as u32, &policy, Some(&mut oracle));
            let ast = infer_lower_bound_ast(&addr, concrete, 4096);
            if (b.lower, b.upper) != (lo, hi) || ast != Some(c) {
                Some(format!(
                    "C={c:#x} s={size} k={k}: solver [{:#x},{:#x}) brute [{lo:#x},{hi:#x}) ast {ast:x?}",
                    b.lower, b.upper
                ))
            } else {
                None
            }
        })
        .collect();
    verdict(
        failures.is_empty(),
        format!(
            "{}/{n} cases match{}",
            n - failures.len(),
            failures.first().map(|f| format!(", first mismatch: {f}")).unwrap_or_default()
        ),
    )
}

fn branch_discovery() -> Verdict {
    let s = match solver() {
        Ok(s) => s,
        Err(v) => return v,
    };
    let mut names: Vec<String> = fs::read_dir(corpus("demo"))
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().to_string_lossy().strip_suffix(".asm").map(str::to_string))
        .collect();
    names.sort();
    let tmp = tempfile::tempdir().unwrap();
    let (mut superset, mut strict, mut cov_ok) = (0, 0, 0);
    let mut notes = Vec::new();
    for name in &names {
        let (prog, seed) = program(&format!("demo/{name}"));
        let mut sites: Vec<BTreeSet<usize>> = Vec::new();
        for (mode, symaddr) in [("on", true), ("off", false)] {
            let rep = explore(&prog, &seed, &ExploreConfig::new(run_cfg(symaddr), s.clone())).unwrap();
            rep.write(&tmp.path().join(format!("{name}-{mode}")), &prog, &seed).unwrap();
            sites.push(rep.seed_run.stats.unique_sites.clone());
        }
        let sup = sites[1].is_subset(&sites[0]);
        superset += sup as usize;
        strict += (sup && sites[0].len() > sites[1].len()) as usize;
        let d = covdiff(&tmp.path().join(format!("{name}-on")), &tmp.path().join(format!("{name}-off"))).unwrap();
        let good = !d.only_a.is_empty() && d.only_b.is_empty();
        cov_ok += good as usize;
        notes.push(format!("{name}:{}/{}:+{}-{}", sites[0].len(), sites[1].len(), d.only_a.len(), d.only_b.len()));
    }
    let n = names.len();
    verdict(
        n == 10 && superset == n && strict >= 8 && cov_ok >= 8,
        format!("superset {superset}/{n}, strict {strict}/{n}, coverage direction {cov_ok}/{n} [{}]", notes.join(" ")),
    )
}

fn bench_harness() -> Verdict {
    if let Err(v) = solver() {
        return v;
    }
    let tmp = tempfile::tempdir().unwrap();
    let cases = tmp.path().join("synthetic");
    let gen = Command::new(BIN)
        .args(["gen-bench", "--kind", "synthetic", "--count", "50", "--seed", "7", "--out"])
        .arg(&cases)
        .status()
        .unwrap();
    if !gen.success() {
        return verdict(false, "gen-bench failed");
    }
    let bench = |dir: &Path, csv: &Path| {
        let o = Command::new(BIN)
            .args(["bench", "--jobs", "4", "--timeout", "60", "--corpus"])
            .arg(dir)
            .arg("--out")
            .arg(csv)
            .output()
            .unwrap();
        (o.status.success(), String::from_utf8_lossy(&o.stdout).into_owned(), fs::read_to_string(csv).unwrap_or_default())
    };
    let (ok, grid, csv) = bench(&cases, &tmp.path().join("synthetic.csv"));
    let header_ok = grid.lines().next().is_some_and(|h| ["ITE", "BST", "LIN"].iter().all(|c| h.contains(c)));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let solved = rows.iter().filter(|r| r[2] == "sat" || r[2] == "unsat").count();

    let (ok2, _, lut) = bench(&corpus("bench-lookup"), &tmp.path().join("lookup.csv"));
    let total = |label: &str| -> f64 {
        lut.lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[1] == label)
            .map(|r| r[3].parse::<f64>().unwrap())
            .sum()
    };
    let (lin, ite) = (total("LIN"), total("ITE"));
    verdict(
        ok && ok2 && header_ok && rows.len() == 150 && solved == 150 && lin <= ite,
        format!(
            "synthetic cells {}/150 solved, columns {}; lookup corpus total LIN={lin:.3}s ITE={ite:.3}s",
            solved,
            if header_ok { "ITE,BST,LIN" } else { "missing" }
        ),
    )
}

fn fallback_rule() -> Verdict {
    let n = 200;
    let (passed, first, t) = soundness(n, &[16, 32, 64], 9000);
    verdict(
        passed == n,
        format!(
            "{passed}/{n} wide-access regions fell back and stayed sound ({:.1}s){}",
            t.as_secs_f64(),
            first.map(|e| format!(" first failure: {e}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("table check example", table_check_example),
        ("mixed-piece linearization", mixed_pieces),
        ("oracle soundness", oracle_soundness),
        ("cross-strategy equivalence", cross_strategy_equivalence),
        ("bounds correctness", bounds_correctness),
        ("branch discovery and coverage direction", branch_discovery),
        ("bench harness", bench_harness),
        ("fallback rule", fallback_rule),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        failed += !v.pass as usize;
        println!("criterion {}: {} {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
