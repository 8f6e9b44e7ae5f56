use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{emit, Emitter, Goal, Script, SmtError, SolverVerdict, Status};
use crate::expr::sexpr::{parse_indexed_literal, parse_literal, read_sexps, Sexp};
use crate::expr::{Assignment, BitVecExpr};

/// Environment variable holding the default solver command line.
pub const SOLVER_ENV: &str = "SYMREAD_SOLVER";

/// An external SMT-LIBv2 solver: executable plus arguments. The solver must
/// read a script from standard input (`z3 -in`, `yices-smt2`, `bitwuzla`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl fmt::Display for SolverCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.program.display())?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

impl SolverCommand {
    /// Splits a command line on whitespace.
    pub fn parse(cmdline: &str) -> Option<Self> {
        let mut parts = cmdline.split_whitespace();
        let program = PathBuf::from(parts.next()?);
        Some(SolverCommand {
            program,
            args: parts.map(str::to_string).collect(),
        })
    }

    /// `$SYMREAD_SOLVER`, else `z3 -in`.
    pub fn from_env() -> Self {
        std::env::var(SOLVER_ENV)
            .ok()
            .and_then(|s| Self::parse(&s))
            .unwrap_or_else(|| Self::parse("z3 -in").unwrap())
    }

    /// Whether the executable can be found (absolute/relative path or `$PATH`).
    pub fn is_available(&self) -> bool {
        let p = &self.program;
        if p.components().count() > 1 {
            return is_executable(p);
        }
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|d| is_executable(&d.join(p))))
            .unwrap_or(false)
    }

    fn spawn(&self) -> Result<Child, SmtError> {
        Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SmtError::SolverSpawn {
                cmd: self.to_string(),
                reason: e.to_string(),
            })
    }
}

fn is_executable(p: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    std::fs::metadata(p)
        .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

/// Runs `script` in a fresh solver process, killing it after `timeout`.
pub fn check(
    script: &Script,
    solver: &SolverCommand,
    timeout: Duration,
) -> Result<SolverVerdict, SmtError> {
    let text = emit(script)?;
    let start = Instant::now();
    let mut child = solver.spawn()?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = String::new();
        let res = stdout.read_to_string(&mut buf).map(|_| buf);
        let _ = tx.send(res);
    });
    // a solver that dies early closes the pipe; the status read reports it
    let _ = stdin.write_all(text.as_bytes());
    drop(stdin);
    let output = match rx.recv_timeout(timeout) {
        Ok(res) => res?,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(SolverVerdict {
                status: Status::Timeout,
                model: None,
                wall_time: start.elapsed(),
            });
        }
    };
    let _ = child.wait();
    let wall_time = start.elapsed();
    let (status, model) = parse_response(&output, &script.goal, &script.declarations)?;
    Ok(SolverVerdict {
        status,
        model,
        wall_time,
    })
}

fn parse_response(
    output: &str,
    goal: &Goal,
    decls: &BTreeMap<Arc<str>, u32>,
) -> Result<(Status, Option<Assignment>), SmtError> {
    let items = read_sexps(output).map_err(|e| SmtError::Parse(e.to_string()))?;
    let status = match items.first().and_then(Sexp::atom) {
        Some("sat") => Status::Sat,
        Some("unsat") => Status::Unsat,
        Some("unknown") | Some("timeout") => Status::Unknown,
        _ => {
            let head: String = output.chars().take(200).collect();
            return Err(SmtError::Parse(format!("expected sat/unsat/unknown, got {head:?}")));
        }
    };
    let model = match (status, goal) {
        (Status::Sat, Goal::GetModel(vars)) if !vars.is_empty() => {
            let values = items
                .get(1)
                .ok_or_else(|| SmtError::Parse("missing get-value response".into()))?;
            Some(parse_model(values, decls)?)
        }
        (Status::Sat, Goal::GetModel(_)) => Some(Assignment::new()),
        _ => None,
    };
    Ok((status, model))
}

fn parse_model(values: &Sexp, decls: &BTreeMap<Arc<str>, u32>) -> Result<Assignment, SmtError> {
    let Sexp::List(pairs, _) = values else {
        return Err(SmtError::Parse("get-value response is not a list".into()));
    };
    let mut out = Assignment::new();
    for pair in pairs {
        let Sexp::List(kv, _) = pair else {
            return Err(SmtError::Parse("get-value entry is not a pair".into()));
        };
        let [Sexp::Atom(name, _), value] = kv.as_slice() else {
            return Err(SmtError::Parse("get-value entry is not a pair".into()));
        };
        let v = match value {
            Sexp::Atom(lit, pos) => parse_literal(lit, *pos),
            Sexp::List(items, pos) => parse_indexed_literal(items, *pos).and_then(|v| {
                v.ok_or_else(|| crate::expr::ExprError::Parse {
                    pos: *pos,
                    msg: "unexpected value".into(),
                })
            }),
        }
        .map_err(|e| SmtError::Parse(e.to_string()))?;
        if let Some(w) = decls.get(name.as_str()) {
            if *w != v.width() {
                return Err(SmtError::Parse(format!(
                    "`{name}` has width {} in model, declared {w}",
                    v.width()
                )));
            }
        }
        out.insert(name.as_str(), v);
    }
    Ok(out)
}

/// A long-lived solver process driven with `push`/`pop`, for sequences of
/// closely related queries over one fixed set of base assertions.
pub struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    declared: BTreeMap<Arc<str>, u32>,
    timeout: Duration,
    dead: bool,
    pub queries: usize,
}

impl Session {
    pub fn start(solver: &SolverCommand, base: &[BitVecExpr], timeout: Duration) -> Result<Self, SmtError> {
        let mut child = solver.spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut s = Session {
            child,
            stdin,
            lines: rx,
            declared: BTreeMap::new(),
            timeout,
            dead: false,
            queries: 0,
        };
        s.send("(set-logic QF_BV)\n")?;
        s.assert_all(base)?;
        Ok(s)
    }

    fn send(&mut self, text: &str) -> Result<(), SmtError> {
        self.stdin.write_all(text.as_bytes())?;
        self.stdin.flush()?;
        Ok(())
    }

    fn assert_all(&mut self, exprs: &[BitVecExpr]) -> Result<(), SmtError> {
        let mut out = String::new();
        for e in exprs {
            for (name, w) in e.variables() {
                if !self.declared.contains_key(&name) {
                    out.push_str(&format!("(declare-const {name} (_ BitVec {w}))\n"));
                    self.declared.insert(name, w);
                }
            }
        }
        let mut em = Emitter::new(exprs);
        for e in exprs {
            let body = em.boolean(e);
            em.flush_defs(&mut out);
            out.push_str(&format!("(assert {body})\n"));
        }
        self.send(&out)
    }

    /// Satisfiability of the base assertions plus `extra`.
    pub fn check_with(&mut self, extra: &[BitVecExpr]) -> Result<Status, SmtError> {
        if self.dead {
            return Err(SmtError::Parse("session terminated after a timeout".into()));
        }
        self.queries += 1;
        self.send("(push 1)\n")?;
        self.assert_all(extra)?;
        self.send("(check-sat)\n")?;
        let status = loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(line) => match line.trim() {
                    "" => continue,
                    "sat" => break Status::Sat,
                    "unsat" => break Status::Unsat,
                    "unknown" => break Status::Unknown,
                    other => return Err(SmtError::Parse(format!("unexpected solver line {other:?}"))),
                },
                Err(RecvTimeoutError::Timeout) => {
                    self.dead = true;
                    let _ = self.child.kill();
                    return Ok(Status::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.dead = true;
                    return Err(SmtError::Parse("solver exited".into()));
                }
            }
        };
        self.send("(pop 1)\n")?;
        Ok(status)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.stdin.write_all(b"(exit)\n");
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_model_values() {
        let decls: BTreeMap<Arc<str>, u32> = [("x".into(), 8), ("y".into(), 16)].into_iter().collect();
        let goal = Goal::GetModel(vec!["x".into(), "y".into()]);
        let (st, m) = parse_response("sat\n((x #x01)\n (y (_ bv300 16)))\n", &goal, &decls).unwrap();
        assert_eq!(st, Status::Sat);
        let m = m.unwrap();
        assert_eq!(m.get("x").unwrap().low_u64(), 1);
        assert_eq!(m.get("y").unwrap().low_u64(), 300);
    }

    #[test]
    fn unsat_ignores_trailing_errors() {
        let decls = BTreeMap::new();
        let goal = Goal::GetModel(vec!["x".into()]);
        let out = "unsat\n(error \"line 4 column 10: model is not available\")\n";
        let (st, m) = parse_response(out, &goal, &decls).unwrap();
        assert_eq!(st, Status::Unsat);
        assert!(m.is_none());
    }

    #[test]
    fn garbage_is_a_parse_error() {
        let decls = BTreeMap::new();
        assert!(matches!(
            parse_response("(error \"boom\")", &Goal::CheckSat, &decls),
            Err(SmtError::Parse(_))
        ));
        assert!(parse_response("", &Goal::CheckSat, &decls).is_err());
    }

    #[test]
    fn command_line_parsing() {
        let c = SolverCommand::parse("z3 -in -smt2").unwrap();
        assert_eq!(c.program, PathBuf::from("z3"));
        assert_eq!(c.args, vec!["-in", "-smt2"]);
        assert!(SolverCommand::parse("   ").is_none());
        assert!(!SolverCommand::parse("/nonexistent/solver").unwrap().is_available());
    }

    #[test]
    fn missing_solver_is_a_spawn_error() {
        let s = Script::new(vec![], Goal::CheckSat);
        let cmd = SolverCommand::parse("/nonexistent/solver").unwrap();
        assert!(matches!(
            check(&s, &cmd, Duration::from_secs(1)),
            Err(SmtError::SolverSpawn { .. })
        ));
    }
}
