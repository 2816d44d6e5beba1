//! Acceptance suite: prints PASS/FAIL/SKIP per criterion and exits non-zero on failure.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use loopbound::bounds::{relax_logs, Bound, BoundClass};
use loopbound::cli::oracle_check;
use loopbound::closedform::{closed_form_solvable, PeTerm, PolyExp};
use loopbound::expr::{abs_state, rat, ratio, Int, Rational, State, Var};
use loopbound::global::{analyze, cycle_runtime, Analysis, AnalysisConfig, Features};
use loopbound::its::{graph_analysis, parse, IntegerProgram};
use loopbound::loops::{chain, classify, Loop};
use loopbound::rtloop::{
    loop_runtime_bound, monotonicity_threshold, sth_bound_log, sth_bound_poly, RuntimeOptions,
};
use loopbound::szloop::{chained_fallback, loop_size_bound, SizePath};
use loopbound::termination::{
    check_termination, find_solver_on_path, SmtOracle, SolverConfig, TerminationOracle, TerminationVerdict,
};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Pass,
    Skip,
    Fail,
}

struct Criterion {
    failures: Vec<String>,
    skips: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { failures: Vec::new(), skips: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn eq(&mut self, got: impl AsRef<str>, want: &str, what: &str) {
        let got = got.as_ref();
        self.check(got == want, format!("{what}: got `{got}`, want `{want}`"));
    }

    fn skip(&mut self, what: impl Into<String>) {
        self.skips.push(what.into());
    }

    fn status(&self) -> Status {
        if !self.failures.is_empty() {
            Status::Fail
        } else if !self.skips.is_empty() {
            Status::Skip
        } else {
            Status::Pass
        }
    }
}

fn state(pairs: &[(&str, i64)]) -> State {
    pairs.iter().map(|(n, x)| (Var::new(n), Int::from(*x))).collect()
}

fn solver() -> Option<SolverConfig> {
    let cfg = SolverConfig::resolve(None, 20_000);
    if cfg.path.is_some() {
        return Some(cfg);
    }
    find_solver_on_path().map(|p| SolverConfig { path: Some(p), timeout_ms: 20_000 })
}

/// Equal after simplification, or numerically equal on a grid of non-negative states.
fn same_bound(got: &Bound, want: &str) -> bool {
    let want = Bound::parse(want).expect("expected bound parses").simplify();
    let got = got.simplify();
    if got.render() == want.render() {
        return true;
    }
    let vars: Vec<Var> = got.vars().union(&want.vars()).cloned().collect();
    for k in 0..40u64 {
        let s: State = vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), Int::from((k * 7 + i as u64 * 13) % 23)))
            .collect();
        let (Ok(a), Ok(b)) = (got.eval_f64(&s), want.eval_f64(&s)) else { return false };
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return false;
        }
    }
    true
}

/// Number of iterations of `l` from `s`, capped.
fn loop_rc(l: &Loop, s: &State, cap: u64) -> (u64, Vec<State>) {
    let mut cur = s.clone();
    let mut trace = vec![cur.clone()];
    let mut n = 0;
    while n < cap && l.guard.eval(&cur).unwrap_or(false) {
        cur = l.vars.iter().map(|v| (v.clone(), l.image(v).eval_int(&cur).expect("integral update"))).collect();
        trace.push(cur.clone());
        n += 1;
    }
    (n, trace)
}

fn analyze_text(text: &str, features: Features, oracle: &dyn TerminationOracle) -> (IntegerProgram, Analysis) {
    let p = parse(text).expect("program parses");
    let a = analyze(&p, &AnalysisConfig { features }, oracle);
    (p, a)
}

fn c1() -> Criterion {
    let mut c = Criterion::new();
    let cl = classify(&running_loop());
    c.check(cl.is_solvable(), format!("loop is solvable, kind {}", cl.kind()));
    let blocks: Vec<Vec<String>> =
        cl.blocks.iter().map(|b| b.vars.iter().map(|v| v.to_string()).collect()).collect();
    c.check(
        blocks == vec![vec!["x1", "x2"], vec!["x3"], vec!["x4"], vec!["x5"]],
        format!("blocks {blocks:?}"),
    );
    let mut ev: Vec<String> = cl.blocks.iter().flat_map(|b| b.eigenvalue_strings()).collect();
    ev.sort();
    let mut want = vec!["i", "-i", "1", "-2", "3"];
    want.sort();
    c.check(ev == want, format!("eigenvalues {ev:?}"));
    c.check(cl.period == Some(2), format!("period {:?}", cl.period));
    c
}

fn c2() -> Criterion {
    let mut c = Criterion::new();
    let l2 = chain(&running_loop(), 2);
    c.check(l2.image(&Var::new("x4")) == v("x4").scale(&rat(4)), "x4 -> 4*x4");
    let x5 = &v("x5").scale(&rat(9)) + &v("x3").pow(2).scale(&rat(4));
    c.check(l2.image(&Var::new("x5")) == x5, format!("x5 -> {}", l2.image(&Var::new("x5")).render()));
    c.check(l2.image(&Var::new("x3")) == v("x3"), "x3 unchanged");
    c.check(l2.image(&Var::new("x1")) == v("x1").scale(&rat(-1)), "x1 -> -x1");
    c
}

fn c3() -> Criterion {
    let mut c = Criterion::new();
    let cl = closed_form_solvable::<Rational>(&running_loop().drop_irrelevant()).expect("closed form");
    c.eq(cl.get(&Var::new("x5")).render(), "(1/2*x3^2 + x5)*3^n - 1/2*x3^2", "cl(x5)");
    let l2 = chain(&running_loop().drop_irrelevant(), 2);
    let cl2 = closed_form_solvable::<Rational>(&l2).expect("closed form of chained loop");
    let x5 = cl2.get(&Var::new("x5"));
    let summand = x5.terms().iter().any(|t| {
        t.b == rat(9) && t.a == 0 && t.coeff == &v("x3").pow(2).scale(&ratio(1, 2)) + &v("x5")
    });
    c.check(summand, format!("chained cl(x5) = {}", x5.render()));
    // exhaustive integer check on random solvable loops
    let mut loops = 0;
    for seed in 0..50u64 {
        let l = random_solvable_loop(seed);
        let cl = match loopbound::closedform::closed_form(&l) {
            Ok(cl) => cl,
            Err(e) => {
                c.check(false, format!("seed {seed}: no closed form: {e}"));
                continue;
            }
        };
        loops += 1;
        let s: State = l.vars.iter().enumerate().map(|(i, v)| (v.clone(), Int::from(i as i64 * 3 - 2))).collect();
        let mut cur = s.clone();
        for n in 0..=12u32 {
            if n >= cl.start {
                for x in &l.vars {
                    let got = cl.get(x).eval(&s, n).expect("evaluates");
                    let ok = got.im == rat(0) && got.re == Rational::from_integer(cur[x].clone());
                    c.check(ok, format!("seed {seed}: {x} at n={n}"));
                }
            }
            cur = l.vars.iter().map(|x| (x.clone(), l.image(x).eval_int(&cur).unwrap())).collect();
        }
    }
    c.check(loops == 50, format!("{loops} of 50 random loops solved"));
    c
}

fn c4() -> Criterion {
    let mut c = Criterion::new();
    let cases: [(Rational, u32, Rational, u32, u64, u64); 6] = [
        (rat(4), 0, rat(3), 1, 1, 7),
        (rat(9), 0, rat(1), 1, 1, 0),
        (rat(16), 0, rat(9), 1, 1, 0),
        (rat(9), 0, rat(1), 0, 1, 1),
        (ratio(3, 2), 0, rat(1), 0, 1, 1),
        (ratio(19, 2), 0, rat(9), 0, 1, 1),
    ];
    for (b1, a1, b2, a2, k, want) in cases {
        let got = monotonicity_threshold(&b1, a1, &b2, a2, k);
        c.check(got == Ok(want), format!("(({b1},{a1}),({b2},{a2}),{k}) -> {got:?}, want {want}"));
    }
    c
}

fn guard_pe() -> PolyExp<Rational> {
    PolyExp::from_terms(
        vec![
            PeTerm { coeff: v("x4").pow(2).scale(&rat(-2)), a: 0, b: rat(16) },
            PeTerm { coeff: &v("x3").pow(2) + &v("x5").scale(&rat(2)), a: 0, b: rat(9) },
            PeTerm { coeff: &v("x3").pow(5).scale(&rat(2)) - &v("x3").pow(2), a: 0, b: rat(1) },
        ],
        0,
    )
}

fn c5() -> Criterion {
    let mut c = Criterion::new();
    let pe = guard_pe();
    let poly = sth_bound_poly(&pe).expect("poly sth");
    c.eq(poly.render(), "max{1, 2*x3^2 + 4*x3^5 + 4*x5}", "poly sth");
    let log = sth_bound_log(&pe).expect("log sth").map(|b| relax_logs(&b));
    c.eq(log.as_ref().map_or("none".into(), |b| b.render()), "3/2 + 3/2*log2(x3^2 + 2*x3^5 + 2*x5)", "log sth");
    let s = state(&[("x3", 0), ("x4", 1), ("x5", 10)]);
    let signs: Vec<bool> = (0..40u32).map(|n| pe.eval(&s, n).unwrap() > rat(0)).collect();
    let last = *signs.last().unwrap();
    let sth = signs.iter().rposition(|b| *b != last).map_or(0, |i| i + 1) as f64;
    c.check(sth == 5.0, format!("true sth {sth}"));
    let abs = abs_state(&s);
    c.check(poly.eval_f64(&abs).unwrap() >= sth, "poly sth covers the true sth");
    if let Some(log) = log {
        c.check(log.eval_f64(&abs).unwrap() >= sth, "log sth covers the true sth");
    }
    c
}

fn c6(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let l = running_loop();
    let s = state(&[("x1", 10), ("x2", 10), ("x3", 2), ("x4", 1), ("x5", 10)]);
    let (rc, _) = loop_rc(&l, &s, 10_000);
    c.check(rc == 9, format!("oracle rc {rc}"));
    let Some(cfg) = cfg else {
        c.skip("loop runtime bounds need an SMT solver");
        return c;
    };
    let oracle = SmtOracle::new(cfg.clone());
    match loop_runtime_bound(&l, &oracle) {
        Ok(r) => {
            c.eq(r.rb.render(), "3 + 3*log2(x3^2 + 2*x3^5 + 2*x5)", "rb of the running loop");
            let x = r.rb.eval_f64(&abs_state(&s)).unwrap_or(f64::NAN);
            c.check((22.3..=22.5).contains(&x), format!("eval {x}"));
            c.check(x >= rc as f64, "bound covers the oracle");
            let y = Bound::parse("2*y1 + y2").unwrap();
            let want = r.rb.subst(&|w| (w == &Var::new("x5")).then(|| y.clone()));
            match loop_runtime_bound(&defective_loop(), &oracle) {
                Ok(r3) => c.check(
                    r3.rb.simplify().render() == want.simplify().render(),
                    format!("defective loop: {} vs {}", r3.rb.render(), want.render()),
                ),
                Err(e) => c.check(false, format!("defective loop: {e}")),
            }
        }
        Err(e) => c.check(false, format!("running loop: {e}")),
    }
    c
}

fn c7(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let l = running_loop();
    let rb = Bound::parse("3 + 3*log2(x3^2 + 2*x3^5 + 2*x5)").unwrap();
    let r = loop_size_bound(&l, &rb).expect("size bound");
    c.check(r.path == SizePath::GaussianExact, "Gaussian path");
    c.eq(r.sb[&Var::new("x1")].render(), "sqrt(10)*x1 + 2*x2", "sb(x1)");
    let cap = Bound::parse("(1/2*x3^2 + x5)*27*(x3^2 + 2*x3^5 + 2*x5)^5 + 1/2*x3^2").unwrap();
    let sb5 = &r.sb[&Var::new("x5")];
    for k in 0..60i64 {
        let s = state(&[("x1", 0), ("x2", 0), ("x3", k % 5), ("x4", 1), ("x5", 1 + k * 3)]);
        let (a, b) = (sb5.eval_f64(&s).unwrap(), cap.eval_f64(&s).unwrap());
        c.check(a <= b * (1.0 + 1e-12), format!("sb(x5) {a} above {b} at {k}"));
    }
    // fallback: sizes along actual runs of the loop
    let fb = chained_fallback(&l, &rb).expect("fallback");
    for k in 0..40i64 {
        let s = state(&[("x1", k - 20), ("x2", 3 - k), ("x3", k % 3 - 1), ("x4", 1 + k % 4), ("x5", k * 5 - 30)]);
        let (_, trace) = loop_rc(&l, &s, 200);
        let abs = abs_state(&s);
        for st in &trace {
            for (x, val) in st {
                let ok = fb.sb[x].admits(&num_traits::Signed::abs(val), &abs).unwrap_or(false);
                c.check(ok, format!("fallback sb({x}) from {k}"));
            }
        }
    }
    let Some(cfg) = cfg else {
        c.skip("lifted size bounds need an SMT solver");
        return c;
    };
    let oracle = SmtOracle::new(cfg.clone());
    let (p, a) = analyze_text(FIG2, Features::default(), &oracle);
    let lifted = a.sb("t3", "x5");
    c.check(lifted.classify() <= BoundClass::poly(6), format!("lifted class {}", lifted.classify()));
    let mut f = Features::default();
    f.disable("gaussian").unwrap();
    let a2 = analyze(&p, &AnalysisConfig { features: f }, &oracle);
    let rep = oracle_check(&p, &a2, 100, 100_000, 7);
    c.check(rep.passed(), format!("fallback analysis: {} violations", rep.violations.len()));
    c
}

fn c8(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let Some(cfg) = cfg else {
        c.skip("whole-program runtime bounds need an SMT solver");
        return c;
    };
    let (_, a) = analyze_text(FIG2, Features::default(), &SmtOracle::new(cfg.clone()));
    let rb = |id: &str| a.rb(id).clone();
    for (id, want) in [
        ("t0", "1"),
        ("t4", "1"),
        ("t1", "x6"),
        ("t2", "x6"),
        ("t3", "x6*(3 + 3*log2(2*x6 + 68))"),
        ("t5", "max{x1, (2 + sqrt(10))*x6}"),
    ] {
        let got = rb(id);
        c.check(same_bound(&got, want), format!("RB({id}) = {}, want {want}", got.render()));
    }
    for (v, want) in [("x1", "(2 + sqrt(10))*x6"), ("x5", "(2 + x6)*27*(2*x6 + 68)^5 + 2")] {
        let got = a.sb("t3", v).clone();
        c.check(same_bound(&got, want), format!("SB(t3, {v}) = {}, want {want}", got.render()));
    }
    c.check(a.overall_class() == BoundClass::polylog(1, 1), format!("overall class {}", a.class));
    c
}

fn c9(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let Some(cfg) = cfg else {
        c.skip("cycle runtime bounds need an SMT solver");
        return c;
    };
    let oracle = SmtOracle::new(cfg.clone());
    let p = parse(FIG2_SPLIT).expect("program parses");
    let t1 = p.index_of("t1").unwrap();
    let cyc = graph_analysis(&p)
        .simple_cycles
        .into_iter()
        .find(|cy| cy.ids(&p) == ["t3a", "t3b"] || cy.ids(&p) == ["t3b", "t3a"]);
    match cyc {
        Some(cy) => {
            let local = cycle_runtime(&p, &cy, &RuntimeOptions::default(), &oracle);
            match local.get(&t1) {
                Some(Ok(b)) => c.eq(b.render(), "4 + 3*log2(x3^2 + 2*x3^5 + 2*x5)", "local bound at t1"),
                other => c.check(false, format!("local bound at t1: {other:?}")),
            }
        }
        None => c.check(false, "cycle t3a, t3b not found"),
    }
    let a = analyze(&p, &AnalysisConfig::default(), &oracle);
    c.check(a.overall_class() == BoundClass::polylog(1, 1), format!("overall class {}", a.class));
    c
}

fn c10(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let cfg = cfg.clone().unwrap_or_default();
    let (_, a) = analyze_text(FIG3, Features::default(), &SmtOracle::new(cfg));
    let got = a.sb("t3", "x3").clone();
    c.check(same_bound(&got, "x1 + x3 + 3*x1*x2^2"), format!("SB(t3, x3) = {}", got.render()));
    let class = a.overall_class();
    c.check(matches!(class, BoundClass::Finite { log: 0, .. }), format!("overall class {}", a.class));
    c
}

fn c11(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let l2 = chain(&running_loop().drop_irrelevant(), 2);
    match cfg {
        Some(cfg) => {
            let v = check_termination(&l2, cfg);
            c.check(v == TerminationVerdict::Terminating, format!("verdict {v:?}"));
        }
        None => {
            let v = check_termination(&l2, &SolverConfig::default());
            c.check(matches!(v, TerminationVerdict::Unknown { .. }), format!("verdict without solver {v:?}"));
            c.skip("no SMT solver");
        }
    }
    c
}

fn c12(cfg: &Option<SolverConfig>) -> Criterion {
    let mut c = Criterion::new();
    let oracle = SmtOracle::new(cfg.clone().unwrap_or_default());
    let mut corpus: Vec<(String, String)> = vec![
        ("fig2".into(), FIG2.into()),
        ("fig2_split".into(), FIG2_SPLIT.into()),
        ("fig3".into(), FIG3.into()),
    ];
    corpus.extend((0..50u64).map(|s| (format!("generated {s}"), random_program(s))));
    let mut checked = 0;
    let mut finite = 0;
    for (k, (name, text)) in corpus.iter().enumerate() {
        let p = match parse(text) {
            Ok(p) => p,
            Err(e) => {
                c.check(false, format!("{name}: {e}"));
                continue;
            }
        };
        let a = analyze(&p, &AnalysisConfig::default(), &oracle);
        if !a.overall.is_omega() {
            finite += 1;
        }
        let rep = oracle_check(&p, &a, 100, 100_000, 1000 + k as u64);
        checked += rep.checked_bounds;
        for viol in rep.violations.iter().take(3) {
            let what = viol.var.as_ref().map_or(format!("RB({})", viol.transition), |x| {
                format!("SB({}, {x})", viol.transition)
            });
            c.check(false, format!("{name}: {what} observed {} from {} > {}", viol.observed, viol.initial, viol.bound.render()));
        }
    }
    println!("    {} programs, {finite} with finite overall bound, {checked} bound checks", corpus.len());
    c
}

fn main() {
    let cfg = solver();
    match &cfg {
        Some(s) => println!("SMT solver: {}", s.path.as_ref().unwrap().display()),
        None => println!("SMT solver: none (runtime parts are skipped)"),
    }
    let criteria: Vec<(&str, Box<dyn Fn() -> Criterion>)> = vec![
        ("loop classification", Box::new(c1)),
        ("chaining", Box::new(c2)),
        ("closed forms", Box::new(c3)),
        ("monotonicity thresholds", Box::new(c4)),
        ("stabilization thresholds", Box::new(c5)),
        ("loop runtime bounds", Box::new(|| c6(&cfg))),
        ("loop size bounds", Box::new(|| c7(&cfg))),
        ("whole program", Box::new(|| c8(&cfg))),
        ("split cycle", Box::new(|| c9(&cfg))),
        ("commuting cycles", Box::new(|| c10(&cfg))),
        ("termination", Box::new(|| c11(&cfg))),
        ("oracle soundness", Box::new(|| c12(&cfg))),
    ];
    let mut summary: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failed = false;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let c = run();
        let (label, st) = match c.status() {
            Status::Pass => ("PASS", Status::Pass),
            Status::Skip => ("SKIP", Status::Skip),
            Status::Fail => ("FAIL", Status::Fail),
        };
        println!("{label} {:>2} {name} ({:.1}s)", k + 1, t.elapsed().as_secs_f64());
        for f in &c.failures {
            println!("    {f}");
        }
        for s in &c.skips {
            println!("    skipped: {s}");
        }
        *summary.entry(label).or_default() += 1;
        failed |= st == Status::Fail;
    }
    println!("{summary:?}");
    if failed {
        std::process::exit(1);
    }
}
