//! Termination of prs-loops via eventual positivity of guard closed forms, decided by an external SMT solver.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use num_traits::{One, Signed};

use crate::closedform::{closed_form_solvable, integral_pe, PolyExp};
use crate::expr::{Formula, QPoly, Rational, Var};
use crate::loops::{chain, classify, integer_spectrum, Loop};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TerminationVerdict {
    Terminating,
    NonTerminating { witness: Option<BTreeMap<Var, Rational>> },
    Unknown { reason: String },
}

impl TerminationVerdict {
    pub fn unknown(reason: impl Into<String>) -> Self {
        TerminationVerdict::Unknown {
            reason: reason.into(),
        }
    }

    pub fn is_terminating(&self) -> bool {
        matches!(self, TerminationVerdict::Terminating)
    }
}

/// Decides termination of a single loop on all integer inputs.
pub trait TerminationOracle {
    fn check(&self, l: &Loop) -> TerminationVerdict;
}

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

pub const SOLVER_ENV: &str = "LOOPBOUND_SMT";

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub path: Option<PathBuf>,
    pub timeout_ms: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            path: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl SolverConfig {
    /// Explicit path if given, else the `LOOPBOUND_SMT` environment variable.
    pub fn resolve(path: Option<PathBuf>, timeout_ms: u64) -> Self {
        let path = path.or_else(|| std::env::var_os(SOLVER_ENV).map(PathBuf::from));
        SolverConfig { path, timeout_ms }
    }
}

/// Oracle backed by an SMT-LIB solver process.
#[derive(Clone, Debug, Default)]
pub struct SmtOracle {
    pub config: SolverConfig,
}

impl SmtOracle {
    pub fn new(config: SolverConfig) -> Self {
        SmtOracle { config }
    }
}

impl TerminationOracle for SmtOracle {
    fn check(&self, l: &Loop) -> TerminationVerdict {
        check_termination(l, &self.config)
    }
}

/// Oracle that reports every loop as terminating; only for tests of the bound pipeline.
#[derive(Clone, Copy, Debug, Default)]
pub struct AssumeTerminating;

impl TerminationOracle for AssumeTerminating {
    fn check(&self, _l: &Loop) -> TerminationVerdict {
        TerminationVerdict::Terminating
    }
}

/// Chain a prs-loop until all eigenvalues are non-negative integers.
pub fn tnn_chain(l: &Loop) -> Option<(Loop, u32)> {
    let p = classify(l).period?;
    let chained = chain(l, p);
    let spec = integer_spectrum(&chained)?;
    if spec.iter().any(|c| c.is_negative()) {
        Some((chain(l, 2 * p), 2 * p))
    } else {
        Some((chained, p))
    }
}

/// SMT-LIB script asserting that some integer input runs forever.
pub fn nontermination_formula(l: &Loop) -> Option<String> {
    let (tnn, _) = tnn_chain(l)?;
    let cl = closed_form_solvable::<Rational>(&tnn).ok()?;
    let xi = tnn.guard.map_atoms(&mut |a| eventually_positive(&integral_pe(&cl.apply(a.poly()))));
    let mut s = String::from("(set-logic QF_NIA)\n");
    for v in &tnn.vars {
        s.push_str(&format!("(declare-const {} Int)\n", symbol(v)));
    }
    s.push_str(&format!("(assert {})\n", smt_formula(&xi)));
    s.push_str("(check-sat)\n");
    Some(s)
}

/// Summands sorted by growth; the largest non-vanishing one must be positive.
fn eventually_positive(pe: &PolyExp<Rational>) -> Formula {
    let ts = pe.terms();
    let mut cases = Vec::new();
    for j in (0..ts.len()).rev() {
        let mut conj: Vec<Formula> = ts[j + 1..]
            .iter()
            .map(|t| Formula::eq(&t.coeff, &QPoly::zero()))
            .collect();
        conj.push(Formula::Atom(crate::expr::Atom::gt_zero(ts[j].coeff.clone())));
        cases.push(Formula::and(conj));
    }
    Formula::or(cases)
}

fn symbol(v: &Var) -> String {
    format!("|{}|", v.name())
}

fn smt_int(c: &Rational) -> String {
    debug_assert!(c.is_integer());
    let n = c.to_integer();
    if n.is_negative() {
        format!("(- {})", -n)
    } else {
        n.to_string()
    }
}

fn smt_poly(p: &QPoly) -> String {
    let mut terms = Vec::new();
    for (m, c) in p.terms() {
        let mut fs = Vec::new();
        if m.is_one() || !c.is_one() {
            fs.push(smt_int(c));
        }
        for (v, e) in m.pairs() {
            for _ in 0..*e {
                fs.push(symbol(v));
            }
        }
        terms.push(if fs.len() == 1 {
            fs.pop().unwrap()
        } else {
            format!("(* {})", fs.join(" "))
        });
    }
    match terms.len() {
        0 => "0".into(),
        1 => terms.pop().unwrap(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

fn smt_formula(f: &Formula) -> String {
    match f {
        Formula::Atom(a) => format!("(> {} 0)", smt_poly(a.poly())),
        Formula::And(xs) if xs.is_empty() => "true".into(),
        Formula::Or(xs) if xs.is_empty() => "false".into(),
        Formula::And(xs) => format!("(and {})", xs.iter().map(smt_formula).collect::<Vec<_>>().join(" ")),
        Formula::Or(xs) => format!("(or {})", xs.iter().map(smt_formula).collect::<Vec<_>>().join(" ")),
    }
}

fn cache() -> &'static Mutex<HashMap<(String, String), TerminationVerdict>> {
    static CACHE: OnceLock<Mutex<HashMap<(String, String), TerminationVerdict>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn check_termination(l: &Loop, cfg: &SolverConfig) -> TerminationVerdict {
    if l.guard_is_false() {
        return TerminationVerdict::Terminating;
    }
    let Some(script) = nontermination_formula(l) else {
        return TerminationVerdict::unknown("closed form unavailable");
    };
    let Some(path) = &cfg.path else {
        return TerminationVerdict::unknown("no solver configured");
    };
    let key = (path.display().to_string(), script.clone());
    if let Some(v) = cache().lock().unwrap().get(&key) {
        return v.clone();
    }
    let verdict = match run_solver(path, &script, cfg.timeout_ms) {
        Ok(out) => interpret(&out),
        Err(reason) => TerminationVerdict::unknown(reason),
    };
    if !matches!(verdict, TerminationVerdict::Unknown { .. }) {
        cache().lock().unwrap().insert(key, verdict.clone());
    }
    verdict
}

fn solver_args(path: &std::path::Path) -> Vec<&'static str> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.contains("cvc") {
        vec!["--lang=smt2", "--produce-models"]
    } else if name.contains("yices") {
        vec![]
    } else {
        vec!["-in", "-smt2"]
    }
}

/// Run the solver on `script` followed by `(get-model)`, killing it after `timeout_ms`.
pub fn run_solver(path: &std::path::Path, script: &str, timeout_ms: u64) -> Result<String, String> {
    let mut child = Command::new(path)
        .args(solver_args(path))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("cannot start solver: {e}"))?;
    let mut input = script.to_string();
    input.push_str("(get-model)\n(exit)\n");
    if let Some(mut stdin) = child.stdin.take() {
        stdin
            .write_all(input.as_bytes())
            .map_err(|e| format!("cannot write to solver: {e}"))?;
    }
    let mut stdout = child.stdout.take().ok_or("no solver stdout")?;
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err("termination unknown: solver timeout".into());
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(format!("solver wait failed: {e}")),
        }
    }
    reader.join().map_err(|_| "solver output lost".to_string())
}

fn interpret(out: &str) -> TerminationVerdict {
    let first = out.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    match first {
        "unsat" => TerminationVerdict::Terminating,
        "sat" => TerminationVerdict::NonTerminating {
            witness: parse_model(out),
        },
        "unknown" => TerminationVerdict::unknown("solver returned unknown"),
        other => TerminationVerdict::unknown(format!("unexpected solver output: {other}")),
    }
}

/// Extract integer assignments `(define-fun |x| () Int v)` from a model.
pub fn parse_model(out: &str) -> Option<BTreeMap<Var, Rational>> {
    let mut res = BTreeMap::new();
    let mut rest = out;
    while let Some(i) = rest.find("(define-fun") {
        rest = &rest[i + "(define-fun".len()..];
        let toks = tokenize(rest);
        // name ( ) Int value
        if toks.len() < 5 || toks[1] != "(" || toks[2] != ")" {
            continue;
        }
        let name = toks[0].trim_matches('|');
        let value = if toks[4] == "(" && toks.get(5) == Some(&"-") {
            toks.get(6).and_then(|t| t.parse::<i128>().ok()).map(|n| -n)
        } else {
            toks[4].parse::<i128>().ok()
        };
        if let Some(n) = value {
            res.insert(Var::new(name), Rational::from_integer(n.into()));
        }
    }
    Some(res)
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() && out.len() < 8 {
        match bytes[i] {
            b' ' | b'\n' | b'\t' | b'\r' => i += 1,
            b'(' | b')' => {
                out.push(&s[i..i + 1]);
                i += 1;
            }
            b'|' => {
                let end = s[i + 1..].find('|').map(|j| i + 2 + j).unwrap_or(s.len());
                out.push(&s[i..end]);
                i = end;
            }
            _ => {
                let start = i;
                while i < bytes.len() && !b" \n\t\r()".contains(&bytes[i]) {
                    i += 1;
                }
                out.push(&s[start..i]);
            }
        }
    }
    out
}

/// Find a solver on `PATH`, preferring z3.
pub fn find_solver_on_path() -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    for name in ["z3", "cvc5", "yices-smt2"] {
        for dir in std::env::split_paths(&path) {
            let cand = dir.join(name);
            if cand.is_file() {
                return Some(cand);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, Atom};
    use crate::loops::Update;

    fn v(s: &str) -> QPoly {
        QPoly::var(Var::new(s))
    }

    fn simple(guard: Formula, var: &str, img: QPoly) -> Loop {
        let mut u = Update::new();
        u.insert(Var::new(var), img);
        Loop::new(&[Var::new(var)], guard, u)
    }

    #[test]
    fn formula_text_is_deterministic() {
        let l = simple(Formula::Atom(Atom::gt_zero(v("x"))), "x", &v("x") + &QPoly::one());
        let a = nontermination_formula(&l).unwrap();
        let b = nontermination_formula(&l).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("(declare-const |x| Int)"));
        assert!(a.contains("(check-sat)"));
    }

    #[test]
    fn false_guard_short_circuits() {
        let l = simple(Formula::ff(), "x", v("x"));
        assert_eq!(check_termination(&l, &SolverConfig::default()), TerminationVerdict::Terminating);
    }

    #[test]
    fn missing_solver_is_unknown() {
        let l = simple(Formula::Atom(Atom::gt_zero(v("x"))), "x", v("x").scale(&rat(2)));
        assert_eq!(
            check_termination(&l, &SolverConfig::default()),
            TerminationVerdict::unknown("no solver configured")
        );
    }

    #[test]
    fn model_parsing() {
        let out = "sat\n(\n  (define-fun |x| () Int\n    (- 3))\n  (define-fun y () Int 7)\n)\n";
        let m = parse_model(out).unwrap();
        assert_eq!(m[&Var::new("x")], rat(-3));
        assert_eq!(m[&Var::new("y")], rat(7));
    }
}
