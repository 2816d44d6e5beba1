//! Integer programs: model, text format, reference interpreter and graph analyses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{Signed, ToPrimitive, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Atom, Formula, Int, QPoly, Rational, State, Var};
use crate::loops::{compose, Loop, Update};

pub type Location = String;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ItsError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
}

impl ItsError {
    fn at(line: usize, col: usize, msg: impl Into<String>) -> ItsError {
        ItsError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub src: Location,
    pub dst: Location,
    pub guard: Formula,
    /// Total on the program variables.
    pub update: Update<Rational>,
}

impl Transition {
    pub fn is_self_loop(&self) -> bool {
        self.src == self.dst
    }

    pub fn image(&self, v: &Var) -> QPoly {
        self.update
            .get(v)
            .cloned()
            .unwrap_or_else(|| QPoly::var(v.clone()))
    }

    pub fn update_mentions(&self, vs: &BTreeSet<Var>) -> bool {
        self.update.values().any(|p| p.vars().iter().any(|w| vs.contains(w)))
    }

    /// The loop this self-loop corresponds to; guard atoms over `temps` are dropped.
    pub fn to_loop(&self, vars: &[Var], temps: &BTreeSet<Var>) -> Loop {
        let guard = self
            .guard
            .weaken(&|a| a.poly().vars().iter().all(|v| !temps.contains(v)));
        Loop::new(vars, guard, self.update.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerProgram {
    pub vars: Vec<Var>,
    pub temps: Vec<Var>,
    pub locations: Vec<Location>,
    pub start: Location,
    pub transitions: Vec<Transition>,
}

impl IntegerProgram {
    pub fn temp_set(&self) -> BTreeSet<Var> {
        self.temps.iter().cloned().collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.id == id)
    }

    pub fn by_id(&self, id: &str) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.id == id)
    }

    pub fn initial(&self) -> Vec<usize> {
        (0..self.transitions.len())
            .filter(|&i| self.transitions[i].src == self.start)
            .collect()
    }

    /// Transitions ending in the source of `t`.
    pub fn predecessors(&self, t: usize) -> Vec<usize> {
        let src = &self.transitions[t].src;
        (0..self.transitions.len())
            .filter(|&i| &self.transitions[i].dst == src)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let ts: Vec<_> = self
            .transitions
            .iter()
            .map(|t| {
                let upd: BTreeMap<String, String> = t
                    .update
                    .iter()
                    .filter(|(v, p)| **p != QPoly::var((*v).clone()))
                    .map(|(v, p)| (v.to_string(), p.render()))
                    .collect();
                serde_json::json!({
                    "id": t.id,
                    "src": t.src,
                    "dst": t.dst,
                    "guard": t.guard.render(),
                    "update": upd,
                })
            })
            .collect();
        serde_json::json!({
            "vars": self.vars,
            "temps": self.temps,
            "locations": self.locations,
            "start": self.start,
            "transitions": ts,
        })
    }
}

impl fmt::Display for IntegerProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |vs: &[Var]| vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(f, "vars {}", names(&self.vars))?;
        if !self.temps.is_empty() {
            writeln!(f, "temp {}", names(&self.temps))?;
        }
        writeln!(f, "start {}", self.start)?;
        for t in &self.transitions {
            write!(f, "{}: {}", t.id, t.src)?;
            if !t.guard.is_true() {
                write!(f, " ({})", t.guard)?;
            }
            write!(f, " -> {}", t.dst)?;
            let upd: Vec<String> = self
                .vars
                .iter()
                .filter(|v| t.image(v) != QPoly::var((*v).clone()))
                .map(|v| format!("{v} := {}", t.image(v)))
                .collect();
            if !upd.is_empty() {
                write!(f, " {{ {} }}", upd.join("; "))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parser

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(Int),
    Sym(&'static str),
    Newline,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 20] = [
    ":=", "->", "<=", ">=", "!=", "==", "&&", "||", "<", ">", "=", "(", ")", "{", "}", ";", ":", "+",
    "-", "*",
];

fn lex(text: &str) -> Result<Vec<Token>, ItsError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (ln, col) = (li + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let s = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let lit: String = chars[s..i].iter().collect();
                let n = lit.parse::<Int>().map_err(|_| ItsError::at(ln, col, "bad number"))?;
                out.push(Token { tok: Tok::Num(n), line: ln, col });
            } else if c.is_alphabetic() || c == '_' {
                let s = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '\'' | '.'))
                {
                    i += 1;
                }
                let id: String = chars[s..i].iter().collect();
                out.push(Token { tok: Tok::Ident(id), line: ln, col });
            } else if c == '^' {
                out.push(Token { tok: Tok::Sym("^"), line: ln, col });
                i += 1;
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let sym = SYMBOLS
                    .iter()
                    .find(|s| rest.starts_with(**s))
                    .ok_or_else(|| ItsError::at(ln, col, format!("unexpected character `{c}`")))?;
                out.push(Token { tok: Tok::Sym(sym), line: ln, col });
                i += sym.len();
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line: li + 1,
            col: chars.len() + 1,
        });
    }
    let last = out.last().map(|t| t.line).unwrap_or(1);
    out.push(Token { tok: Tok::Eof, line: last + 1, col: 1 });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    vars: Vec<Var>,
    temps: Vec<Var>,
    declared_vars: bool,
}

enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ItsError> {
        let (l, c) = self.here();
        Err(ItsError::at(l, c, msg))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_newlines();
        if matches!(self.peek(), Tok::Sym(x) if *x == s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), ItsError> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn ident(&mut self) -> Result<String, ItsError> {
        self.skip_newlines();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn known(&self, name: &str) -> bool {
        !self.declared_vars
            || self.vars.iter().any(|v| v.name() == name)
            || self.temps.iter().any(|v| v.name() == name)
    }

    fn poly(&mut self) -> Result<QPoly, ItsError> {
        let mut acc = if self.eat("-") {
            -self.term()?
        } else {
            self.term()?
        };
        loop {
            if self.eat("+") {
                acc = &acc + &self.term()?;
            } else if self.eat("-") {
                acc = &acc - &self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<QPoly, ItsError> {
        let mut acc = self.factor()?;
        while self.eat("*") {
            acc = &acc * &self.factor()?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<QPoly, ItsError> {
        let base = self.primary()?;
        if self.eat("^") {
            self.skip_newlines();
            match self.bump() {
                Tok::Num(n) => {
                    let e = n.to_u32().filter(|e| *e <= 64);
                    match e {
                        Some(e) => Ok(base.pow(e)),
                        None => self.err("exponent too large"),
                    }
                }
                _ => self.err("expected exponent"),
            }
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<QPoly, ItsError> {
        self.skip_newlines();
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(QPoly::constant(Rational::from_integer(n)))
            }
            Tok::Ident(s) => {
                if !self.known(&s) {
                    return self.err(format!("undeclared variable `{s}`"));
                }
                self.bump();
                Ok(QPoly::var(Var::new(&s)))
            }
            Tok::Sym("(") => {
                self.bump();
                let p = self.poly()?;
                self.expect(")")?;
                Ok(p)
            }
            Tok::Sym("-") => {
                self.bump();
                Ok(-self.factor()?)
            }
            _ => self.err("expected polynomial"),
        }
    }

    fn cmp_op(&mut self) -> Option<Cmp> {
        self.skip_newlines();
        let op = match self.peek() {
            Tok::Sym("<") => Cmp::Lt,
            Tok::Sym("<=") => Cmp::Le,
            Tok::Sym(">") => Cmp::Gt,
            Tok::Sym(">=") => Cmp::Ge,
            Tok::Sym("=") | Tok::Sym("==") => Cmp::Eq,
            Tok::Sym("!=") => Cmp::Ne,
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Formula, ItsError> {
        let mut lhs = self.poly()?;
        let mut parts = Vec::new();
        while let Some(op) = self.cmp_op() {
            let rhs = self.poly()?;
            parts.push(match op {
                Cmp::Lt => Formula::Atom(Atom::gt(&rhs, &lhs)),
                Cmp::Le => Formula::Atom(Atom::ge(&rhs, &lhs)),
                Cmp::Gt => Formula::Atom(Atom::gt(&lhs, &rhs)),
                Cmp::Ge => Formula::Atom(Atom::ge(&lhs, &rhs)),
                Cmp::Eq => Formula::eq(&lhs, &rhs),
                Cmp::Ne => Formula::neq(&lhs, &rhs),
            });
            lhs = rhs;
        }
        if parts.is_empty() {
            return self.err("expected comparison operator");
        }
        Ok(Formula::and(parts))
    }

    fn literal(&mut self) -> Result<Formula, ItsError> {
        self.skip_newlines();
        match self.peek().clone() {
            Tok::Ident(s) if s == "true" => {
                self.bump();
                Ok(Formula::tt())
            }
            Tok::Ident(s) if s == "false" => {
                self.bump();
                Ok(Formula::ff())
            }
            Tok::Sym("(") => {
                let save = self.pos;
                if let Ok(f) = self.comparison() {
                    return Ok(f);
                }
                self.pos = save;
                self.bump();
                let f = self.disjunction()?;
                self.expect(")")?;
                Ok(f)
            }
            _ => self.comparison(),
        }
    }

    fn conjunction(&mut self) -> Result<Formula, ItsError> {
        let mut parts = vec![self.literal()?];
        while self.eat("&&") {
            parts.push(self.literal()?);
        }
        Ok(Formula::and(parts))
    }

    fn disjunction(&mut self) -> Result<Formula, ItsError> {
        let mut parts = vec![self.conjunction()?];
        while self.eat("||") {
            parts.push(self.conjunction()?);
        }
        Ok(Formula::or(parts))
    }

    fn name_list(&mut self) -> Result<Vec<String>, ItsError> {
        let mut out = Vec::new();
        while let Tok::Ident(s) = self.peek().clone() {
            self.bump();
            out.push(s);
        }
        match self.peek() {
            Tok::Newline | Tok::Eof => Ok(out),
            _ => self.err("expected identifier or end of line"),
        }
    }
}

struct RawRule {
    id: Option<String>,
    src: String,
    dst: String,
    guard: Formula,
    update: Vec<(Var, QPoly, (usize, usize))>,
    pos: (usize, usize),
}

/// Parses the text format; see the crate README for the grammar.
pub fn parse(text: &str) -> Result<IntegerProgram, ItsError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        vars: Vec::new(),
        temps: Vec::new(),
        declared_vars: false,
    };
    let mut start: Option<(String, (usize, usize))> = None;
    let mut rules = Vec::new();
    loop {
        p.skip_newlines();
        let pos = p.here();
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "vars" || kw == "temp" => {
                p.bump();
                let names = p.name_list()?;
                let list = if kw == "vars" { &mut p.vars } else { &mut p.temps };
                for n in names {
                    let v = Var::new(&n);
                    if list.contains(&v) {
                        return Err(ItsError::at(pos.0, pos.1, format!("duplicate variable `{n}`")));
                    }
                    list.push(v);
                }
                p.declared_vars = true;
            }
            Tok::Ident(kw) if kw == "start" => {
                p.bump();
                let names = p.name_list()?;
                if names.len() != 1 {
                    return Err(ItsError::at(pos.0, pos.1, "expected one start location"));
                }
                start = Some((names[0].clone(), pos));
            }
            Tok::Ident(_) => rules.push(parse_rule(&mut p)?),
            _ => return p.err("expected declaration or rule"),
        }
    }
    if p.vars.iter().any(|v| p.temps.contains(v)) {
        return Err(ItsError::at(1, 1, "variable declared both as program and temporary variable"));
    }
    build(p.vars, p.temps, start, rules)
}

fn parse_rule(p: &mut Parser) -> Result<RawRule, ItsError> {
    let pos = p.here();
    let first = p.ident()?;
    let (id, src) = if matches!(p.peek(), Tok::Sym(":")) {
        p.bump();
        (Some(first), p.ident()?)
    } else {
        (None, first)
    };
    p.skip_newlines();
    let guard = if matches!(p.peek(), Tok::Sym("(")) {
        p.bump();
        let g = p.disjunction()?;
        p.expect(")")?;
        g
    } else {
        Formula::tt()
    };
    p.expect("->")?;
    let dst = p.ident()?;
    let mut update = Vec::new();
    if p.eat("{") {
        loop {
            if p.eat("}") {
                break;
            }
            let vpos = p.here();
            let v = p.ident()?;
            p.expect(":=")?;
            let rhs = p.poly()?;
            update.push((Var::new(&v), rhs, vpos));
            if !p.eat(";") {
                p.expect("}")?;
                break;
            }
        }
    }
    Ok(RawRule {
        id,
        src,
        dst,
        guard,
        update,
        pos,
    })
}

fn build(
    mut vars: Vec<Var>,
    temps: Vec<Var>,
    start: Option<(String, (usize, usize))>,
    rules: Vec<RawRule>,
) -> Result<IntegerProgram, ItsError> {
    let temp_set: BTreeSet<Var> = temps.iter().cloned().collect();
    // without declarations every non-temporary name is a program variable
    let mut seen: BTreeSet<Var> = vars.iter().cloned().collect();
    for r in &rules {
        let mut names: BTreeSet<Var> = r.guard.vars();
        for (v, q, _) in &r.update {
            names.insert(v.clone());
            names.extend(q.vars());
        }
        for v in names {
            if !temp_set.contains(&v) && seen.insert(v.clone()) {
                vars.push(v);
            }
        }
    }
    let start = match start {
        Some((s, _)) => s,
        None => match rules.first() {
            Some(r) => r.src.clone(),
            None => return Err(ItsError::at(1, 1, "empty program")),
        },
    };
    let mut locations = vec![start.clone()];
    let mut ids = BTreeSet::new();
    let mut transitions = Vec::new();
    for (k, r) in rules.into_iter().enumerate() {
        let id = r.id.clone().unwrap_or_else(|| format!("t{k}"));
        if !ids.insert(id.clone()) {
            return Err(ItsError::at(r.pos.0, r.pos.1, format!("duplicate rule id `{id}`")));
        }
        if r.dst == start {
            return Err(ItsError::at(
                r.pos.0,
                r.pos.1,
                format!("transition `{id}` enters the start location `{start}`"),
            ));
        }
        for l in [&r.src, &r.dst] {
            if !locations.contains(l) {
                locations.push(l.clone());
            }
        }
        let mut update: Update<Rational> = vars.iter().map(|v| (v.clone(), QPoly::var(v.clone()))).collect();
        let mut assigned = BTreeSet::new();
        for (v, q, (l, c)) in r.update {
            if temp_set.contains(&v) {
                return Err(ItsError::at(l, c, format!("update of temporary variable `{v}`")));
            }
            if !assigned.insert(v.clone()) {
                return Err(ItsError::at(l, c, format!("variable `{v}` assigned twice")));
            }
            if !q.is_integral() {
                return Err(ItsError::at(l, c, "update must have integer coefficients"));
            }
            update.insert(v, q);
        }
        transitions.push(Transition {
            id,
            src: r.src,
            dst: r.dst,
            guard: r.guard,
            update,
        });
    }
    Ok(IntegerProgram {
        vars,
        temps,
        locations,
        start,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// interpreter

pub type Config = (Location, State);

/// One evaluation step; `None` when `t` does not start at the location or its guard fails.
pub fn step(cfg: &Config, t: &Transition, temp: &State) -> Option<Config> {
    if cfg.0 != t.src {
        return None;
    }
    let mut full = cfg.1.clone();
    full.extend(temp.iter().map(|(k, v)| (k.clone(), v.clone())));
    if !t.guard.eval(&full).ok()? {
        return None;
    }
    let mut next = State::new();
    for v in cfg.1.keys() {
        let val = t.image(v).eval_int(&full).ok()?;
        next.insert(v.clone(), val);
    }
    Some((t.dst.clone(), next))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TempStrategy {
    /// Uniform samples from `[-range, range]`.
    Random,
    /// Prefer staying in cycles with small temporary values; random fallback.
    Adversarial,
    /// All runs for temporary values in `[-range, range]`; for tiny programs.
    Exhaustive,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    /// Executions per transition id.
    pub counters: BTreeMap<String, u64>,
    /// Largest absolute value of each variable after each transition.
    #[serde(serialize_with = "sizes_as_strings")]
    pub sizes: BTreeMap<String, BTreeMap<Var, Int>>,
    pub steps: u64,
    pub truncated: bool,
}

fn sizes_as_strings<S: serde::Serializer>(
    m: &BTreeMap<String, BTreeMap<Var, Int>>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let out: BTreeMap<&String, BTreeMap<&Var, String>> = m
        .iter()
        .map(|(t, vs)| (t, vs.iter().map(|(v, x)| (v, x.to_string())).collect()))
        .collect();
    serde::Serialize::serialize(&out, s)
}

impl OracleReport {
    fn new(p: &IntegerProgram) -> OracleReport {
        OracleReport {
            counters: p.transitions.iter().map(|t| (t.id.clone(), 0)).collect(),
            sizes: BTreeMap::new(),
            steps: 0,
            truncated: false,
        }
    }

    fn record(&mut self, t: &Transition, s: &State) {
        *self.counters.get_mut(&t.id).expect("known transition") += 1;
        self.steps += 1;
        let e = self.sizes.entry(t.id.clone()).or_default();
        for (v, x) in s {
            let a = x.abs();
            match e.get_mut(v) {
                Some(m) if *m >= a => {}
                Some(m) => *m = a,
                None => {
                    e.insert(v.clone(), a);
                }
            }
        }
    }

    fn merge_max(&mut self, o: &OracleReport) {
        for (k, c) in &o.counters {
            let e = self.counters.entry(k.clone()).or_insert(0);
            *e = (*e).max(*c);
        }
        for (t, m) in &o.sizes {
            let e = self.sizes.entry(t.clone()).or_default();
            for (v, x) in m {
                match e.get_mut(v) {
                    Some(y) if *y >= *x => {}
                    Some(y) => *y = x.clone(),
                    None => {
                        e.insert(v.clone(), x.clone());
                    }
                }
            }
        }
        self.steps = self.steps.max(o.steps);
        self.truncated |= o.truncated;
    }
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub strategy: TempStrategy,
    pub step_cap: u64,
    pub temp_range: i64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            strategy: TempStrategy::Adversarial,
            step_cap: 100_000,
            temp_range: 16,
            seed: 0,
        }
    }
}

/// Temporary assignments ordered by magnitude: 0, 1, -1, 2, -2, ...
fn temp_grid(temps: &[Var], range: i64, limit: usize) -> Vec<State> {
    let vals: Vec<i64> = std::iter::once(0)
        .chain((1..=range).flat_map(|k| [k, -k]))
        .collect();
    let mut out = vec![State::new()];
    for v in temps {
        let mut next = Vec::new();
        for s in &out {
            for x in &vals {
                let mut s2 = s.clone();
                s2.insert(v.clone(), Int::from(*x));
                next.push(s2);
                if next.len() >= limit {
                    break;
                }
            }
            if next.len() >= limit {
                break;
            }
        }
        out = next;
    }
    out.sort_by_key(|s| s.values().map(|x| x.abs()).sum::<Int>());
    out
}

fn random_temps(temps: &[Var], range: i64, rng: &mut StdRng) -> State {
    temps
        .iter()
        .map(|v| (v.clone(), Int::from(rng.random_range(-range..=range))))
        .collect()
}

/// Explores one run from `(start, sigma0)` (or all runs for the exhaustive strategy).
pub fn run_oracle(p: &IntegerProgram, sigma0: &State, cfg: &OracleConfig) -> OracleReport {
    match cfg.strategy {
        TempStrategy::Exhaustive => exhaustive(p, sigma0, cfg),
        _ => single_run(p, sigma0, cfg),
    }
}

fn single_run(p: &IntegerProgram, sigma0: &State, cfg: &OracleConfig) -> OracleReport {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let sccs = location_scc_ids(p);
    let grid = temp_grid(&p.temps, cfg.temp_range.min(4), 64);
    let mut rep = OracleReport::new(p);
    let mut cur: Config = (p.start.clone(), sigma0.clone());
    loop {
        if rep.steps >= cfg.step_cap {
            rep.truncated = true;
            break;
        }
        let mut options: Vec<(usize, Config)> = Vec::new();
        for (i, t) in p.transitions.iter().enumerate() {
            if t.src != cur.0 {
                continue;
            }
            let adversarial = cfg.strategy == TempStrategy::Adversarial && rng.random_bool(0.8);
            let found = if adversarial {
                grid.iter().find_map(|tmp| step(&cur, t, tmp))
            } else {
                let mut hit = None;
                for _ in 0..8 {
                    let tmp = random_temps(&p.temps, cfg.temp_range, &mut rng);
                    if let Some(c) = step(&cur, t, &tmp) {
                        hit = Some(c);
                        break;
                    }
                }
                hit.or_else(|| grid.iter().find_map(|tmp| step(&cur, t, tmp)))
            };
            if let Some(c) = found {
                options.push((i, c));
            }
        }
        if options.is_empty() {
            break;
        }
        let pick = if cfg.strategy == TempStrategy::Adversarial && rng.random_bool(0.8) {
            let rank = |i: usize| {
                let t = &p.transitions[i];
                if t.is_self_loop() {
                    0
                } else if sccs[&t.src] == sccs[&t.dst] {
                    1
                } else {
                    2
                }
            };
            let best = options.iter().map(|(i, _)| rank(*i)).min().unwrap_or(0);
            let pool: Vec<usize> = (0..options.len()).filter(|&k| rank(options[k].0) == best).collect();
            pool[rng.random_range(0..pool.len())]
        } else {
            rng.random_range(0..options.len())
        };
        let (i, next) = options.swap_remove(pick);
        rep.record(&p.transitions[i], &next.1);
        cur = next;
    }
    rep
}

fn exhaustive(p: &IntegerProgram, sigma0: &State, cfg: &OracleConfig) -> OracleReport {
    let grid = temp_grid(&p.temps, cfg.temp_range, 4096);
    let mut best = OracleReport::new(p);
    let mut budget = cfg.step_cap;
    let mut path = OracleReport::new(p);
    explore(p, &(p.start.clone(), sigma0.clone()), &grid, &mut path, &mut best, &mut budget);
    best
}

fn explore(
    p: &IntegerProgram,
    cur: &Config,
    grid: &[State],
    path: &mut OracleReport,
    best: &mut OracleReport,
    budget: &mut u64,
) {
    best.merge_max(path);
    let mut seen = BTreeSet::new();
    for t in p.transitions.iter().filter(|t| t.src == cur.0) {
        for tmp in grid {
            if *budget == 0 {
                best.truncated = true;
                return;
            }
            let Some(next) = step(cur, t, tmp) else { continue };
            if !seen.insert((t.id.clone(), next.1.clone())) {
                continue;
            }
            *budget -= 1;
            let saved = path.clone();
            path.record(t, &next.1);
            explore(p, &next, grid, path, best, budget);
            *path = saved;
        }
    }
}

// ---------------------------------------------------------------------------
// graph analysis

/// Index of the location SCC for every location.
fn location_scc_ids(p: &IntegerProgram) -> BTreeMap<Location, usize> {
    let (g, _) = location_graph(p);
    let mut out = BTreeMap::new();
    for (k, comp) in tarjan_scc(&g).into_iter().enumerate() {
        for n in comp {
            out.insert(g[n].clone(), k);
        }
    }
    out
}

fn location_graph(p: &IntegerProgram) -> (DiGraph<Location, usize>, BTreeMap<Location, NodeIndex>) {
    let mut g = DiGraph::new();
    let mut idx = BTreeMap::new();
    for l in &p.locations {
        idx.insert(l.clone(), g.add_node(l.clone()));
    }
    for (i, t) in p.transitions.iter().enumerate() {
        g.add_edge(idx[&t.src], idx[&t.dst], i);
    }
    (g, idx)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scc {
    pub locations: Vec<Location>,
    /// Transitions with both ends inside the component.
    pub transitions: Vec<usize>,
}

impl Scc {
    pub fn is_cyclic(&self) -> bool {
        !self.transitions.is_empty()
    }
}

/// A cycle `t_1, ..., t_n` through pairwise distinct locations with temp-free updates.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SimpleCycle {
    pub transitions: Vec<usize>,
}

impl SimpleCycle {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.transitions.contains(&t)
    }

    /// The sequence starting with the transition that leaves `loc`.
    pub fn rotated_to(&self, p: &IntegerProgram, loc: &str) -> Option<Vec<usize>> {
        let k = self.transitions.iter().position(|&t| p.transitions[t].src == loc)?;
        let n = self.transitions.len();
        Some((0..n).map(|i| self.transitions[(k + i) % n]).collect())
    }

    /// The sequence ending with `t`.
    pub fn ending_with(&self, t: usize) -> Option<Vec<usize>> {
        let k = self.transitions.iter().position(|&x| x == t)?;
        let n = self.transitions.len();
        Some((0..n).map(|i| self.transitions[(k + 1 + i) % n]).collect())
    }

    pub fn locations(&self, p: &IntegerProgram) -> Vec<Location> {
        self.transitions.iter().map(|&t| p.transitions[t].src.clone()).collect()
    }

    pub fn ids(&self, p: &IntegerProgram) -> Vec<String> {
        self.transitions.iter().map(|&t| p.transitions[t].id.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommutingFamily {
    pub location: Location,
    /// Each cycle rotated to start at `location`.
    pub cycles: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphAnalysis {
    /// Location SCCs in topological order.
    pub sccs: Vec<Scc>,
    /// Transition sets of the cyclic SCCs.
    pub components: Vec<Vec<usize>>,
    pub simple_cycles: Vec<SimpleCycle>,
    pub commuting_families: Vec<CommutingFamily>,
}

pub const MAX_CYCLE_LEN: usize = 8;
const MAX_CYCLES: usize = 2000;

/// Location SCCs in topological order.
pub fn sccs(p: &IntegerProgram) -> Vec<Scc> {
    let (g, _) = location_graph(p);
    let mut comps = tarjan_scc(&g);
    comps.reverse();
    comps
        .into_iter()
        .map(|c| {
            let mut locs: Vec<Location> = c.iter().map(|n| g[*n].clone()).collect();
            locs.sort_by_key(|l| p.locations.iter().position(|x| x == l));
            let ts = (0..p.transitions.len())
                .filter(|&i| {
                    locs.contains(&p.transitions[i].src) && locs.contains(&p.transitions[i].dst)
                })
                .collect();
            Scc {
                locations: locs,
                transitions: ts,
            }
        })
        .collect()
}

/// Transitions outside `subset` that end in a source location of `subset`.
pub fn entry_transitions(p: &IntegerProgram, subset: &[usize]) -> Vec<usize> {
    let srcs: BTreeSet<&Location> = subset.iter().map(|&t| &p.transitions[t].src).collect();
    (0..p.transitions.len())
        .filter(|i| !subset.contains(i) && srcs.contains(&p.transitions[*i].dst))
        .collect()
}

/// Simple cycles inside the cyclic SCCs, each listed once starting at its smallest transition.
pub fn simple_cycles(p: &IntegerProgram) -> Vec<SimpleCycle> {
    let temps = p.temp_set();
    let ok: Vec<bool> = p.transitions.iter().map(|t| !t.update_mentions(&temps)).collect();
    let mut out = BTreeSet::new();
    for scc in sccs(p) {
        for &first in &scc.transitions {
            if !ok[first] {
                continue;
            }
            // cycles whose smallest transition index is `first`
            let mut path = vec![first];
            let mut locs = vec![p.transitions[first].src.clone()];
            extend_cycle(p, &scc, &ok, first, &mut path, &mut locs, &mut out);
            if out.len() >= MAX_CYCLES {
                break;
            }
        }
    }
    out.into_iter().collect()
}

fn extend_cycle(
    p: &IntegerProgram,
    scc: &Scc,
    ok: &[bool],
    first: usize,
    path: &mut Vec<usize>,
    locs: &mut Vec<Location>,
    out: &mut BTreeSet<SimpleCycle>,
) {
    if out.len() >= MAX_CYCLES {
        return;
    }
    let last = &p.transitions[*path.last().expect("non-empty path")];
    if last.dst == locs[0] {
        out.insert(SimpleCycle {
            transitions: path.clone(),
        });
        return;
    }
    if path.len() >= MAX_CYCLE_LEN || locs.contains(&last.dst) {
        return;
    }
    let at = last.dst.clone();
    for &t in &scc.transitions {
        if t <= first || !ok[t] || p.transitions[t].src != at {
            continue;
        }
        path.push(t);
        locs.push(at.clone());
        extend_cycle(p, scc, ok, first, path, locs, out);
        path.pop();
        locs.pop();
    }
}

/// `t_1 * ... * t_n`: guards conjoined along the run and updates composed.
/// Guard atoms mentioning temporary variables are dropped first.
pub fn chain_transitions(p: &IntegerProgram, seq: &[usize]) -> Transition {
    let temps = p.temp_set();
    let ident: Update<Rational> = p.vars.iter().map(|v| (v.clone(), QPoly::var(v.clone()))).collect();
    let mut upd = ident;
    let mut guards = Vec::new();
    for &i in seq {
        let t = &p.transitions[i];
        let g = t
            .guard
            .weaken(&|a| a.poly().vars().iter().all(|v| !temps.contains(v)));
        guards.push(g.substitute(&upd));
        upd = compose(&upd, &t.update);
    }
    let first = &p.transitions[seq[0]];
    let last = &p.transitions[*seq.last().expect("non-empty chain")];
    Transition {
        id: seq.iter().map(|&i| p.transitions[i].id.as_str()).collect::<Vec<_>>().join("*"),
        src: first.src.clone(),
        dst: last.dst.clone(),
        guard: Formula::and(guards).fold_constants(),
        update: upd,
    }
}

/// Do two updates commute, as an exact polynomial identity?
pub fn commutes(a: &Update<Rational>, b: &Update<Rational>) -> bool {
    let keys: BTreeSet<&Var> = a.keys().chain(b.keys()).collect();
    let ab = compose(a, b);
    let ba = compose(b, a);
    keys.into_iter().all(|v| {
        let x = ab.get(v).cloned().unwrap_or_else(|| b.get(v).cloned().unwrap_or_else(|| QPoly::var(v.clone())));
        let y = ba.get(v).cloned().unwrap_or_else(|| a.get(v).cloned().unwrap_or_else(|| QPoly::var(v.clone())));
        x == y
    })
}

/// Maximal families of disjoint, pairwise commuting simple cycles at a shared
/// location that receives every entry of their union. Only families of size >= 2.
pub fn commuting_families(p: &IntegerProgram, cycles: &[SimpleCycle]) -> Vec<CommutingFamily> {
    let mut out = Vec::new();
    for loc in &p.locations {
        let cands: Vec<(Vec<usize>, Update<Rational>)> = cycles
            .iter()
            .filter_map(|c| c.rotated_to(p, loc))
            .map(|seq| {
                let u = chain_transitions(p, &seq).update;
                (seq, u)
            })
            .collect();
        if cands.len() < 2 || cands.len() > 16 {
            continue;
        }
        let n = cands.len();
        let mut families: Vec<u32> = Vec::new();
        let mut masks: Vec<u32> = (1u32..(1 << n)).filter(|m| m.count_ones() >= 2).collect();
        masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
        for m in masks {
            if families.iter().any(|f| f & m == m) {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|k| m & (1 << k) != 0).collect();
            if !family_ok(p, loc, &members.iter().map(|&k| &cands[k]).collect::<Vec<_>>()) {
                continue;
            }
            families.push(m);
            out.push(CommutingFamily {
                location: loc.clone(),
                cycles: members.iter().map(|&k| cands[k].0.clone()).collect(),
            });
        }
    }
    out
}

fn family_ok(p: &IntegerProgram, loc: &str, members: &[&(Vec<usize>, Update<Rational>)]) -> bool {
    let mut used_t = BTreeSet::new();
    let mut used_l = BTreeSet::new();
    for (seq, _) in members {
        for &t in seq {
            if !used_t.insert(t) {
                return false;
            }
            let src = &p.transitions[t].src;
            if src != loc && !used_l.insert(src.clone()) {
                return false;
            }
        }
    }
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            if !commutes(&a.1, &b.1) {
                return false;
            }
        }
    }
    let union: Vec<usize> = used_t.into_iter().collect();
    entry_transitions(p, &union)
        .iter()
        .all(|&r| p.transitions[r].dst == loc)
}

pub fn graph_analysis(p: &IntegerProgram) -> GraphAnalysis {
    let sccs = sccs(p);
    let components = sccs
        .iter()
        .filter(|s| s.is_cyclic())
        .map(|s| s.transitions.clone())
        .collect();
    let simple_cycles = simple_cycles(p);
    let commuting_families = commuting_families(p, &simple_cycles);
    GraphAnalysis {
        sccs,
        components,
        simple_cycles,
        commuting_families,
    }
}

/// Does every guard atom and update of `t` stay linear?
pub fn is_linear(t: &Transition) -> bool {
    t.guard.atoms().iter().all(|a| a.poly().degree() <= 1) && t.update.values().all(|p| p.degree() <= 1)
}

/// Zero state over the program variables.
pub fn zero_state(p: &IntegerProgram) -> State {
    p.vars.iter().map(|v| (v.clone(), Int::zero())).collect()
}

/// Unit state helper for tests and examples: `vars[i] = vals[i]`.
pub fn state_of(p: &IntegerProgram, vals: &[i64]) -> State {
    p.vars
        .iter()
        .zip(vals)
        .map(|(v, x)| (v.clone(), Int::from(*x)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const FIG2: &str = include_str!("../programs/fig2.its");

    fn fig2() -> IntegerProgram {
        parse(FIG2).unwrap()
    }

    #[test]
    fn parses_fig2() {
        let p = fig2();
        assert_eq!(p.transitions.len(), 6);
        assert_eq!(p.temps, vec![Var::new("y")]);
        assert_eq!(p.vars.len(), 6);
        assert_eq!(p.initial(), vec![0]);
    }

    #[test]
    fn minimal_program() {
        let p = parse("l0 -> l1").unwrap();
        assert_eq!(p.transitions.len(), 1);
        assert_eq!(p.initial(), vec![0]);
        assert!(p.transitions[0].update.is_empty());
    }

    #[test]
    fn diagnostics_have_positions() {
        let e = parse("vars x\nstart l0\nl0 -> l1 { x := x + }").unwrap_err();
        assert_eq!(e.to_string(), "3:21: expected polynomial");
        let e = parse("vars x\ntemp y\nl0 -> l1 { y := 1 }").unwrap_err();
        assert!(e.to_string().starts_with("3:12: update of temporary"));
        let e = parse("vars x\nstart l0\na: l0 -> l1\na: l1 -> l1").unwrap_err();
        assert!(e.to_string().contains("duplicate rule id"));
        let e = parse("vars x\nstart l0\nl0 -> l1\nl1 -> l0").unwrap_err();
        assert!(e.to_string().contains("enters the start location"));
        let e = parse("vars x\nl0 (z > 0) -> l1").unwrap_err();
        assert!(e.to_string().contains("undeclared variable `z`"));
    }

    #[test]
    fn round_trip_fig2() {
        let p = fig2();
        let q = parse(&p.to_string()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn fig2_trace() {
        let p = fig2();
        let t = |id: &str| p.by_id(id).unwrap().clone();
        let y = |k: i64| -> State { [(Var::new("y"), Int::from(k))].into_iter().collect() };
        let mut c: Config = ("l0".into(), state_of(&p, &[6, 8, 1, 6, 1, 10]));
        c = step(&c, &t("t0"), &y(0)).unwrap();
        c = step(&c, &t("t1"), &y(10)).unwrap();
        assert_eq!(c, ("l2".to_string(), state_of(&p, &[10, 10, 2, 1, 10, 0])));
        let mut k = 0;
        while let Some(n) = step(&c, &t("t3"), &y(0)) {
            c = n;
            k += 1;
        }
        assert_eq!(k, 9);
        let x5 = 12 * 3i64.pow(9) - 2;
        assert_eq!(c.1, state_of(&p, &[50, -80, 2, -512, x5, 0]));
        c = step(&c, &t("t2"), &y(0)).unwrap();
        c = step(&c, &t("t4"), &y(0)).unwrap();
        assert_eq!(c.1[&Var::new("x6")], Int::from(50));
        let mut k = 0;
        while let Some(n) = step(&c, &t("t5"), &y(0)) {
            c = n;
            k += 1;
        }
        assert_eq!(k, 50);
        assert!(step(&c, &t("t5"), &y(0)).is_none());
    }

    #[test]
    fn adversarial_oracle_takes_small_steps() {
        let p = fig2();
        let mut s = zero_state(&p);
        s.insert(Var::new("x6"), Int::from(10));
        let mut best = 0;
        for seed in 0..20 {
            let cfg = OracleConfig {
                seed,
                ..OracleConfig::default()
            };
            let r = run_oracle(&p, &s, &cfg);
            assert!(!r.truncated);
            best = best.max(r.counters["t1"]);
        }
        assert_eq!(best, 10);
    }

    #[test]
    fn initial_only_program_runs_once() {
        let p = parse("vars x\nl0 (x > 0) -> l1 { x := x - 1 }").unwrap();
        let r = run_oracle(&p, &state_of(&p, &[3]), &OracleConfig::default());
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn exhaustive_explores_all_temps() {
        let p = parse("vars x\ntemp y\nl0 -> l1\nl1 (x >= y && y > 0) -> l1 { x := x - y }").unwrap();
        let cfg = OracleConfig {
            strategy: TempStrategy::Exhaustive,
            temp_range: 3,
            ..OracleConfig::default()
        };
        let r = run_oracle(&p, &state_of(&p, &[5]), &cfg);
        assert_eq!(r.counters["t1"], 5);
        assert_eq!(r.sizes["t1"][&Var::new("x")], Int::from(4));
    }

    #[test]
    fn fig2_entries_and_sccs() {
        let p = fig2();
        let id = |s: &str| p.index_of(s).unwrap();
        assert_eq!(entry_transitions(&p, &[id("t3")]), vec![id("t1")]);
        assert_eq!(entry_transitions(&p, &[id("t5")]), vec![id("t4")]);
        let g = graph_analysis(&p);
        let cyclic: Vec<Vec<String>> = g
            .components
            .iter()
            .map(|c| c.iter().map(|&t| p.transitions[t].id.clone()).collect())
            .collect();
        assert_eq!(cyclic, vec![vec!["t1", "t2", "t3"], vec!["t5"]]);
        // t1 updates with a temporary variable, so only the self-loops are simple
        let cycles: Vec<Vec<String>> = g.simple_cycles.iter().map(|c| c.ids(&p)).collect();
        assert_eq!(cycles, vec![vec!["t3"], vec!["t5"]]);
        assert!(g.commuting_families.is_empty());
    }

    #[test]
    fn fig3_commuting_family() {
        let p = parse(include_str!("../programs/fig3.its")).unwrap();
        let g = graph_analysis(&p);
        assert_eq!(g.commuting_families.len(), 1);
        let f = &g.commuting_families[0];
        assert_eq!(f.location, "l1");
        let ids: Vec<&str> = f.cycles.iter().map(|c| p.transitions[c[0]].id.as_str()).collect();
        assert_eq!(ids, ["t2a", "t2b"]);
    }

    #[test]
    fn split_cycle_chains_to_t3() {
        let p = parse(include_str!("../programs/fig2_split.its")).unwrap();
        let fig = fig2();
        let g = graph_analysis(&p);
        let c = g
            .simple_cycles
            .iter()
            .find(|c| c.len() == 2)
            .expect("two-transition cycle");
        let seq = c.rotated_to(&p, "l2").unwrap();
        let chained = chain_transitions(&p, &seq);
        let t3 = fig.by_id("t3").unwrap();
        assert_eq!(chained.update, t3.update);
        assert_eq!(chained.guard, t3.guard);
    }

    #[test]
    fn single_self_loop() {
        let p = parse("vars x\nl0 -> l1\nl1 (x > 0) -> l1 { x := x - 1 }").unwrap();
        let g = graph_analysis(&p);
        assert_eq!(g.components.len(), 1);
        assert_eq!(g.simple_cycles.len(), 1);
        assert_eq!(entry_transitions(&p, &[1]), vec![0]);
    }
}
