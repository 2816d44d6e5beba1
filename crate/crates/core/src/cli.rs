//! Command-line front end.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use num_traits::Signed;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::bounds::Bound;
use crate::expr::{abs_state, Int, QPoly, State, Var};
use crate::global::{analyze, Analysis, AnalysisConfig, Features};
use crate::its::{chain_transitions, graph_analysis, parse, run_oracle, IntegerProgram, OracleConfig, TempStrategy};
use crate::loops::{classify, Loop};
use crate::termination::{SmtOracle, SolverConfig};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Classify,
    Check,
}

#[derive(Debug, Parser)]
#[command(name = "loopbound", version, about = "Runtime and size bounds for integer programs")]
pub struct Args {
    /// Optional mode word (analyze, classify, check) followed by input files.
    #[arg(required = true, value_name = "[MODE] FILE")]
    pub inputs: Vec<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// SMT-LIB solver binary; falls back to $LOOPBOUND_SMT.
    #[arg(long, value_name = "PATH")]
    pub smt_solver: Option<PathBuf>,
    /// Solver timeout in milliseconds.
    #[arg(long, default_value_t = 5000)]
    pub smt_timeout: u64,
    #[arg(long)]
    pub json: bool,
    /// Print how each bound was obtained.
    #[arg(long)]
    pub explain: bool,
    /// Comma-separated features to switch off: twn, closedforms, logbounds, commuting, gaussian.
    #[arg(long, value_delimiter = ',')]
    pub disable: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub oracle_samples: usize,
    #[arg(long, default_value_t = 100_000)]
    pub oracle_cap: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub transition: String,
    /// `None` for runtime bounds.
    pub var: Option<Var>,
    pub initial: String,
    pub observed: String,
    pub bound: Bound,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    pub truncated_runs: usize,
    pub checked_bounds: usize,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn render_state(s: &State) -> String {
    let parts: Vec<String> = s.iter().map(|(v, x)| format!("{v}={x}")).collect();
    format!("({})", parts.join(", "))
}

/// Samples initial states, runs the adversarial oracle, and compares every
/// finite bound against the observed counters and sizes.
pub fn oracle_check(p: &IntegerProgram, a: &Analysis, samples: usize, cap: u64, seed: u64) -> CheckReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rep = CheckReport {
        samples,
        truncated_runs: 0,
        checked_bounds: 0,
        violations: Vec::new(),
    };
    for k in 0..samples {
        let sigma: State = p
            .vars
            .iter()
            .map(|v| (v.clone(), Int::from(rng.random_range(-12i64..=12))))
            .collect();
        let cfg = OracleConfig {
            strategy: TempStrategy::Adversarial,
            step_cap: cap,
            temp_range: 16,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
        };
        let run = run_oracle(p, &sigma, &cfg);
        if run.truncated {
            rep.truncated_runs += 1;
        }
        let abs = abs_state(&sigma);
        for tb in &a.transitions {
            let count = Int::from(run.counters.get(&tb.id).copied().unwrap_or(0));
            if !tb.rb.is_omega() {
                rep.checked_bounds += 1;
                if !tb.rb.admits(&count, &abs).unwrap_or(false) {
                    rep.violations.push(Violation {
                        transition: tb.id.clone(),
                        var: None,
                        initial: render_state(&sigma),
                        observed: count.to_string(),
                        bound: tb.rb.clone(),
                    });
                }
            }
            let Some(sizes) = run.sizes.get(&tb.id) else { continue };
            for (v, b) in &tb.sb {
                if b.is_omega() {
                    continue;
                }
                let Some(x) = sizes.get(v) else { continue };
                rep.checked_bounds += 1;
                if !b.admits(&x.abs(), &abs).unwrap_or(false) {
                    rep.violations.push(Violation {
                        transition: tb.id.clone(),
                        var: Some(v.clone()),
                        initial: render_state(&sigma),
                        observed: x.to_string(),
                        bound: b.clone(),
                    });
                }
            }
        }
    }
    rep
}

#[derive(Clone, Debug, Serialize)]
pub struct CycleClass {
    pub cycle: Vec<String>,
    pub kind: String,
    pub period: Option<u32>,
    pub blocks: Vec<Vec<Var>>,
    pub eigenvalues: Vec<String>,
}

pub fn classify_cycles(p: &IntegerProgram) -> Vec<CycleClass> {
    graph_analysis(p)
        .simple_cycles
        .iter()
        .map(|c| {
            let t = chain_transitions(p, &c.transitions);
            let gv = t.guard.vars();
            let vars: Vec<Var> = p
                .vars
                .iter()
                .filter(|v| gv.contains(*v) || t.image(v) != QPoly::var((*v).clone()))
                .cloned()
                .collect();
            let update = t.update.into_iter().filter(|(v, _)| vars.contains(v)).collect();
            let l = Loop::new(&vars, t.guard, update);
            let cl = classify(&l);
            CycleClass {
                cycle: c.ids(p),
                kind: cl.kind().to_string(),
                period: cl.period,
                blocks: cl.blocks.iter().map(|b| b.vars.clone()).collect(),
                eigenvalues: cl.blocks.iter().flat_map(|b| b.eigenvalue_strings()).collect(),
            }
        })
        .collect()
}

pub fn render_analysis(a: &Analysis, explain: bool) -> String {
    let mut out = String::new();
    for t in &a.transitions {
        let _ = writeln!(out, "{} ({} -> {}): RB = {}  [{}]", t.id, t.src, t.dst, t.rb.render(), t.rb_class);
        if explain {
            let _ = writeln!(out, "    via {}", t.rb_method);
            for r in &t.reasons {
                let _ = writeln!(out, "    failed: {r}");
            }
        }
        for (v, b) in &t.sb {
            let _ = write!(out, "    SB({}, {v}) = {}", t.id, b.render());
            if explain {
                let _ = write!(out, "  [{}]", t.sb_method[v]);
            }
            out.push('\n');
        }
    }
    if explain && !a.local.is_empty() {
        let _ = writeln!(out, "local bounds:");
        for l in &a.local {
            let _ = writeln!(
                out,
                "    {} {{{}}} at entry {}: {}",
                l.kind,
                l.transitions.join(", "),
                l.entry,
                l.bound.render()
            );
        }
    }
    let _ = writeln!(out, "overall: {}", a.overall.render());
    let _ = writeln!(out, "class: {}", a.class);
    out
}

/// Runs the command line; returns the process exit code.
pub fn run(args: Args) -> i32 {
    let mut inputs = args.inputs.clone();
    let mut mode = args.mode.unwrap_or(Mode::Analyze);
    if let Some(m) = inputs.first().and_then(|s| Mode::from_str(s, true).ok()) {
        if args.mode.is_none() {
            mode = m;
        }
        inputs.remove(0);
    }
    if inputs.is_empty() {
        eprintln!("error: no input file");
        return 2;
    }
    let mut features = Features::default();
    for f in &args.disable {
        if let Err(e) = features.disable(f.trim()) {
            eprintln!("error: {e}");
            return 2;
        }
    }
    let cfg = AnalysisConfig { features };
    let oracle = SmtOracle::new(SolverConfig::resolve(args.smt_solver.clone(), args.smt_timeout));
    let mut code = 0;
    for path in &inputs {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{path}: {e}");
                code = code.max(2);
                continue;
            }
        };
        let p = match parse(&text) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("{path}:{e}");
                code = code.max(2);
                continue;
            }
        };
        match mode {
            Mode::Classify => {
                let cs = classify_cycles(&p);
                if args.json {
                    let doc = serde_json::json!({"version": REPORT_VERSION, "file": path, "cycles": cs});
                    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
                } else {
                    println!("{path}:");
                    for c in &cs {
                        let period = c.period.map_or("none".to_string(), |p| p.to_string());
                        let blocks: Vec<String> = c
                            .blocks
                            .iter()
                            .map(|b| format!("{{{}}}", b.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")))
                            .collect();
                        println!(
                            "  cycle {}: {} period {} blocks {} eigenvalues {{{}}}",
                            c.cycle.join(","),
                            c.kind,
                            period,
                            blocks.join(" "),
                            c.eigenvalues.join(", ")
                        );
                    }
                }
            }
            Mode::Analyze | Mode::Check => {
                let a = analyze(&p, &cfg, &oracle);
                let check = (mode == Mode::Check)
                    .then(|| oracle_check(&p, &a, args.oracle_samples, args.oracle_cap, args.seed));
                if args.json {
                    let doc = serde_json::json!({
                        "version": REPORT_VERSION,
                        "file": path,
                        "analysis": a,
                        "check": check,
                    });
                    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
                } else {
                    println!("{path}:");
                    print!("{}", render_analysis(&a, args.explain));
                    if let Some(c) = &check {
                        for v in &c.violations {
                            let what = match &v.var {
                                Some(x) => format!("SB({}, {x})", v.transition),
                                None => format!("RB({})", v.transition),
                            };
                            println!("FAIL {what}: observed {} from {} exceeds {}", v.observed, v.initial, v.bound.render());
                        }
                        let verdict = if c.passed() { "PASS" } else { "FAIL" };
                        println!(
                            "{verdict}: {} bound checks over {} runs ({} truncated), {} violations",
                            c.checked_bounds,
                            c.samples,
                            c.truncated_runs,
                            c.violations.len()
                        );
                    }
                }
                if check.is_some_and(|c| !c.passed()) {
                    code = code.max(1);
                }
            }
        }
    }
    code
}
