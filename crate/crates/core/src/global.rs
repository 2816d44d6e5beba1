//! Whole-program runtime and size bounds: lifting of local bounds, simple and
//! commuting cycles, and the alternating improvement loop.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Signed, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::bounds::{Bound, BoundClass};
use crate::expr::{norm_poly, QPoly, Rational, Var};
use crate::its::{
    chain_transitions, entry_transitions, graph_analysis, CommutingFamily, GraphAnalysis, IntegerProgram,
    SimpleCycle, Transition,
};
use crate::loops::Loop;
use crate::rank::{find_ranking, guard_cases, guard_unsat, implies_nonneg, RankingFunction};
use crate::rtloop::{loop_runtime_bound_with, RuntimeOptions};
use crate::szloop::loop_size_bound_with;
use crate::termination::{TerminationOracle, TerminationVerdict};

pub const FEATURES: [&str; 5] = ["twn", "closedforms", "logbounds", "commuting", "gaussian"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Features {
    /// Runtime bounds for simple cycles via closed forms.
    pub twn: bool,
    /// Size bounds for cycles via closed forms.
    pub closed_forms: bool,
    pub log_bounds: bool,
    pub commuting: bool,
    pub gaussian: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            twn: true,
            closed_forms: true,
            log_bounds: true,
            commuting: true,
            gaussian: true,
        }
    }
}

impl Features {
    pub fn disable(&mut self, name: &str) -> Result<(), String> {
        let flag = match name {
            "twn" => &mut self.twn,
            "closedforms" => &mut self.closed_forms,
            "logbounds" => &mut self.log_bounds,
            "commuting" => &mut self.commuting,
            "gaussian" => &mut self.gaussian,
            _ => return Err(format!("unknown feature `{name}` (expected one of {})", FEATURES.join(", "))),
        };
        *flag = false;
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct AnalysisConfig {
    pub features: Features,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundStore {
    pub rb: Vec<Bound>,
    pub sb: Vec<BTreeMap<Var, Bound>>,
}

fn is_improvable(b: &Bound) -> bool {
    b.classify().is_exp_or_omega()
}

fn normalize(b: Bound) -> Bound {
    let b = b.simplify();
    if b.classify() == BoundClass::Omega {
        Bound::Omega
    } else {
        b
    }
}

fn better(cur: &Bound, new: &Bound) -> bool {
    new.classify() < cur.classify()
}

/// Termination verdicts memoized by loop text.
struct CachedOracle<'a> {
    inner: &'a dyn TerminationOracle,
    cache: RefCell<HashMap<String, TerminationVerdict>>,
}

impl TerminationOracle for CachedOracle<'_> {
    fn check(&self, l: &Loop) -> TerminationVerdict {
        let key = l.to_string();
        if let Some(v) = self.cache.borrow().get(&key) {
            return v.clone();
        }
        let v = self.inner.check(l);
        self.cache.borrow_mut().insert(key, v.clone());
        v
    }
}

/// Local size bound of one transition and variable.
#[derive(Clone, Debug)]
enum Lsb {
    Const(Rational),
    /// `|eta(v)| <= |w| + k`
    Add(Var, Rational),
    Poly(Bound, BTreeSet<Var>),
    Omega,
}

impl Lsb {
    fn deps(&self) -> Vec<Var> {
        match self {
            Lsb::Add(w, _) => vec![w.clone()],
            Lsb::Poly(_, ds) => ds.iter().cloned().collect(),
            _ => Vec::new(),
        }
    }
}

fn local_size(t: &Transition, v: &Var, vars: &[Var], temps: &BTreeSet<Var>) -> Lsb {
    let p = t.image(v);
    if let Some(c) = p.as_constant() {
        return Lsb::Const(c.abs());
    }
    if p.is_affine() {
        // guard-implied -w <= eta(v) <= w
        let cases = guard_cases(t);
        let pv = p.vars();
        let mut cands: Vec<&Var> = vars.iter().filter(|w| pv.contains(*w)).collect();
        cands.extend(vars.iter().filter(|w| !pv.contains(*w)));
        for w in cands {
            let wp = QPoly::var(w.clone());
            let (hi, lo) = (&wp - &p, &wp + &p);
            if cases.iter().all(|h| implies_nonneg(h, &hi) && implies_nonneg(h, &lo)) {
                return Lsb::Add(w.clone(), Rational::zero());
            }
        }
        if p.vars().iter().all(|w| !temps.contains(w)) && p.vars().len() == 1 {
            let w = p.vars().into_iter().next().expect("one variable");
            if p.linear_coeff(&w).abs().is_one() {
                return Lsb::Add(w, p.constant_term().abs());
            }
        }
    }
    if p.vars().iter().any(|w| temps.contains(w)) {
        return Lsb::Omega;
    }
    Lsb::Poly(norm_poly(&p), p.vars())
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalBound {
    pub kind: String,
    pub transitions: Vec<String>,
    pub entry: String,
    pub bound: Bound,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransitionBounds {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub rb: Bound,
    pub rb_class: String,
    pub rb_method: String,
    pub sb: BTreeMap<Var, Bound>,
    pub sb_method: BTreeMap<Var, String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub transitions: Vec<TransitionBounds>,
    pub overall: Bound,
    pub class: String,
    pub rounds: usize,
    pub local: Vec<LocalBound>,
}

impl Analysis {
    fn find(&self, id: &str) -> &TransitionBounds {
        self.transitions
            .iter()
            .find(|t| t.id == id)
            .unwrap_or_else(|| panic!("no transition `{id}`"))
    }

    pub fn rb(&self, id: &str) -> &Bound {
        &self.find(id).rb
    }

    pub fn sb(&self, id: &str, v: &str) -> &Bound {
        &self.find(id).sb[&Var::new(v)]
    }

    pub fn overall_class(&self) -> BoundClass {
        self.overall.classify()
    }
}

struct Analyzer<'a> {
    p: &'a IntegerProgram,
    features: Features,
    oracle: CachedOracle<'a>,
    temps: BTreeSet<Var>,
    graph: GraphAnalysis,
    store: BoundStore,
    rb_how: Vec<String>,
    sb_how: Vec<BTreeMap<Var, String>>,
    reasons: Vec<Vec<String>>,
    preds: Vec<Vec<usize>>,
    lsb: Vec<BTreeMap<Var, Lsb>>,
    dead: Vec<bool>,
    local: Vec<LocalBound>,
    rank_cache: HashMap<(Vec<usize>, Vec<usize>), Option<RankingFunction>>,
    cycle_rt_cache: HashMap<Vec<usize>, BTreeMap<usize, Result<Bound, String>>>,
    cycle_sz_cache: HashMap<Vec<usize>, Option<BTreeMap<Var, Bound>>>,
    comm_cache: HashMap<usize, Option<BTreeMap<usize, BTreeMap<Var, Bound>>>>,
}

/// Analyzes `p`; see [`Analysis`] for the report.
pub fn analyze(p: &IntegerProgram, cfg: &AnalysisConfig, oracle: &dyn TerminationOracle) -> Analysis {
    let mut a = Analyzer::new(p, cfg, oracle);
    let rounds = a.run();
    a.report(rounds)
}

impl<'a> Analyzer<'a> {
    fn new(p: &'a IntegerProgram, cfg: &AnalysisConfig, oracle: &'a dyn TerminationOracle) -> Self {
        let temps = p.temp_set();
        let graph = graph_analysis(p);
        let n = p.transitions.len();
        let in_cycle: BTreeSet<usize> = graph.components.iter().flatten().copied().collect();
        let dead: Vec<bool> = p.transitions.iter().map(guard_unsat).collect();
        let mut rb = Vec::with_capacity(n);
        let mut rb_how = Vec::with_capacity(n);
        let mut sb = Vec::with_capacity(n);
        let mut sb_how = Vec::with_capacity(n);
        let initial: BTreeSet<usize> = p.initial().into_iter().collect();
        for (i, t) in p.transitions.iter().enumerate() {
            let (b, how) = if dead[i] {
                (Bound::zero(), "unsatisfiable guard")
            } else if in_cycle.contains(&i) {
                (Bound::Omega, "none")
            } else {
                (Bound::one(), "not in a cycle")
            };
            rb.push(b);
            rb_how.push(how.to_string());
            let mut s = BTreeMap::new();
            let mut sh = BTreeMap::new();
            for v in &p.vars {
                let img = t.image(v);
                let (b, how) = if dead[i] {
                    (Bound::zero(), "unsatisfiable guard")
                } else if initial.contains(&i) && img.vars().iter().all(|w| !temps.contains(w)) {
                    (norm_poly(&img), "initial update")
                } else {
                    (Bound::Omega, "none")
                };
                s.insert(v.clone(), b);
                sh.insert(v.clone(), how.to_string());
            }
            sb.push(s);
            sb_how.push(sh);
        }
        let preds = (0..n).map(|i| p.predecessors(i)).collect();
        let lsb = p
            .transitions
            .iter()
            .map(|t| {
                p.vars
                    .iter()
                    .map(|v| (v.clone(), local_size(t, v, &p.vars, &temps)))
                    .collect()
            })
            .collect();
        Analyzer {
            p,
            features: cfg.features,
            oracle: CachedOracle {
                inner: oracle,
                cache: RefCell::new(HashMap::new()),
            },
            temps,
            graph,
            store: BoundStore { rb, sb },
            rb_how,
            sb_how,
            reasons: vec![Vec::new(); n],
            preds,
            lsb,
            dead,
            local: Vec::new(),
            rank_cache: HashMap::new(),
            cycle_rt_cache: HashMap::new(),
            cycle_sz_cache: HashMap::new(),
            comm_cache: HashMap::new(),
        }
    }

    fn offer_rb(&mut self, t: usize, b: Bound, how: String) -> bool {
        let b = normalize(b);
        if better(&self.store.rb[t], &b) {
            self.store.rb[t] = b;
            self.rb_how[t] = how;
            self.reasons[t].clear();
            true
        } else {
            false
        }
    }

    fn offer_sb(&mut self, t: usize, v: &Var, b: Bound, how: &str) -> bool {
        let b = normalize(b);
        if better(&self.store.sb[t][v], &b) {
            self.store.sb[t].insert(v.clone(), b);
            self.sb_how[t].insert(v.clone(), how.to_string());
            true
        } else {
            false
        }
    }

    fn sb(&self, t: usize, v: &Var) -> Bound {
        self.store.sb[t].get(v).cloned().unwrap_or(Bound::Omega)
    }

    fn run(&mut self) -> usize {
        let limit = 2 * self.graph.sccs.len() + 2;
        let mut rounds = 0;
        while rounds < limit {
            rounds += 1;
            let mut changed = self.size_pass();
            if self.features.closed_forms {
                changed |= self.closed_form_sizes();
            }
            changed |= self.runtime_pass();
            let done = self.store.rb.iter().all(|b| !is_improvable(b))
                && self.store.sb.iter().all(|m| m.values().all(|b| !is_improvable(b)));
            if !changed || done {
                break;
            }
        }
        rounds
    }

    // -- sizes ---------------------------------------------------------------

    /// Size of `w` before `t` is taken.
    fn input(&self, t: usize, w: &Var) -> Bound {
        if self.p.transitions[t].src == self.p.start {
            return Bound::var(w);
        }
        Bound::max(self.preds[t].iter().map(|&r| self.sb(r, w)).collect())
    }

    fn size_pass(&mut self) -> bool {
        let p = self.p;
        let mut g: DiGraph<(usize, Var), ()> = DiGraph::new();
        let mut idx = BTreeMap::new();
        for (t, _) in p.transitions.iter().enumerate().filter(|(t, _)| !self.dead[*t]) {
            for v in &p.vars {
                idx.insert((t, v.clone()), g.add_node((t, v.clone())));
            }
        }
        for (t, _) in p.transitions.iter().enumerate().filter(|(t, _)| !self.dead[*t]) {
            if p.transitions[t].src == p.start {
                continue;
            }
            for v in &p.vars {
                for w in self.lsb[t][v].deps() {
                    for &r in &self.preds[t] {
                        if let Some(&from) = idx.get(&(r, w.clone())) {
                            g.update_edge(from, idx[&(t, v.clone())], ());
                        }
                    }
                }
            }
        }
        let mut comps = tarjan_scc(&g);
        comps.reverse();
        let mut changed = false;
        for comp in comps {
            let nodes: Vec<(usize, Var)> = comp.iter().map(|n| g[*n].clone()).collect();
            let trivial = nodes.len() == 1 && !g.contains_edge(comp[0], comp[0]);
            if trivial {
                let (t, v) = &nodes[0];
                let b = match &self.lsb[*t][v] {
                    Lsb::Const(c) => Bound::rational(c.clone()),
                    Lsb::Add(w, k) => Bound::sum(vec![self.input(*t, w), Bound::rational(k.clone())]),
                    Lsb::Poly(b, _) => b.subst(&|w| Some(self.input(*t, w))),
                    Lsb::Omega => Bound::Omega,
                };
                changed |= self.offer_sb(*t, v, b, "propagation");
                continue;
            }
            let set: BTreeSet<&(usize, Var)> = nodes.iter().collect();
            let mut outside = Vec::new();
            let mut growth = Vec::new();
            let mut additive = true;
            for (t, v) in &nodes {
                let Lsb::Add(w, k) = &self.lsb[*t][v] else {
                    additive = false;
                    break;
                };
                if p.transitions[*t].src == p.start {
                    outside.push(Bound::var(w));
                }
                for &r in &self.preds[*t] {
                    if !set.contains(&(r, w.clone())) {
                        outside.push(self.sb(r, w));
                    }
                }
                if !k.is_zero() {
                    growth.push(Bound::product(vec![self.store.rb[*t].clone(), Bound::rational(k.clone())]));
                }
            }
            let b = if additive {
                Bound::sum(vec![Bound::max(outside), Bound::sum(growth)])
            } else {
                Bound::Omega
            };
            for (t, v) in &nodes {
                changed |= self.offer_sb(*t, v, b.clone(), "additive scc");
            }
        }
        changed
    }

    fn lift_size(&self, entries: &[usize], local: &BTreeMap<Var, Bound>, v: &Var) -> Bound {
        let Some(l) = local.get(v) else { return Bound::Omega };
        Bound::max(
            entries
                .iter()
                .map(|&r| l.subst(&|w| Some(self.sb(r, w))))
                .collect(),
        )
    }

    fn closed_form_sizes(&mut self) -> bool {
        let mut changed = false;
        let cycles = self.graph.simple_cycles.clone();
        for c in &cycles {
            for &t in &c.transitions {
                if !self.store.sb[t].values().any(is_improvable) {
                    continue;
                }
                let Some(local) = self.cycle_size_local(c, t) else { continue };
                let how = format!("closed form of cycle {}", c.ids(self.p).join(","));
                for v in self.p.vars.clone() {
                    let b = Bound::max(
                        local
                            .iter()
                            .map(|(r, loc)| self.lift_size(&[*r], loc, &v))
                            .collect(),
                    );
                    changed |= self.offer_sb(t, &v, b, &how);
                }
            }
        }
        if self.features.commuting {
            let fams = self.graph.commuting_families.clone();
            for (k, fam) in fams.iter().enumerate() {
                let members: Vec<usize> = fam.cycles.iter().flatten().copied().collect();
                if !members.iter().any(|&t| self.store.sb[t].values().any(is_improvable)) {
                    continue;
                }
                if !self.comm_cache.contains_key(&k) {
                    let r = commuting_size(self.p, fam, &self.features, self.oracle.inner);
                    self.comm_cache.insert(k, r);
                }
                let Some(local) = self.comm_cache[&k].clone() else { continue };
                let entries = entry_transitions(self.p, &members);
                for (t, loc) in local {
                    for v in self.p.vars.clone() {
                        let b = self.lift_size(&entries, &loc, &v);
                        changed |= self.offer_sb(t, &v, b, "commuting cycles");
                    }
                }
            }
        }
        changed
    }

    /// Per entry transition: local size bounds after `t`, keyed by entry.
    fn cycle_size_local(&mut self, c: &SimpleCycle, t: usize) -> Option<BTreeMap<usize, BTreeMap<Var, Bound>>> {
        let p = self.p;
        let seq = c.ending_with(t)?;
        if !self.cycle_sz_cache.contains_key(&seq) {
            let chained = chain_transitions(p, &seq);
            let l = Loop::new(&p.vars, chained.guard.clone(), chained.update.clone());
            let opts = RuntimeOptions {
                log_bounds: self.features.log_bounds,
            };
            let rb = match loop_runtime_bound_with(&l, &self.oracle, &opts) {
                Ok(r) => r.rb,
                Err(_) => single_loop_rank(p, &chained).unwrap_or(Bound::Omega),
            };
            let sb = loop_size_bound_with(&l, &rb, self.features.gaussian).ok().map(|r| r.sb);
            self.cycle_sz_cache.insert(seq.clone(), sb);
        }
        let sb_l = self.cycle_sz_cache[&seq].clone()?;
        let mut out = BTreeMap::new();
        for r in entry_transitions(p, &c.transitions) {
            let at = &p.transitions[r].dst;
            let k = seq.iter().position(|&x| &p.transitions[x].src == at)?;
            let local: BTreeMap<Var, Bound> = if k == 0 {
                sb_l.clone()
            } else {
                let partial = chain_transitions(p, &seq[k..]);
                let norms: BTreeMap<Var, Bound> =
                    p.vars.iter().map(|w| (w.clone(), norm_poly(&partial.image(w)))).collect();
                sb_l.iter().map(|(v, b)| (v.clone(), b.subst_map(&norms))).collect()
            };
            out.insert(r, local);
        }
        Some(out)
    }

    // -- runtime -------------------------------------------------------------

    fn lift_runtime(&self, parts: &[(usize, Bound)]) -> Bound {
        Bound::sum(
            parts
                .iter()
                .map(|(r, l)| {
                    Bound::product(vec![self.store.rb[*r].clone(), l.subst(&|w| Some(self.sb(*r, w)))])
                })
                .collect(),
        )
    }

    fn rank(&mut self, comp: &[usize], strict: &[usize]) -> Option<RankingFunction> {
        let key = (comp.to_vec(), strict.to_vec());
        if !self.rank_cache.contains_key(&key) {
            let r = find_ranking(self.p, comp, strict);
            self.rank_cache.insert(key.clone(), r);
        }
        self.rank_cache[&key].clone()
    }

    fn predecessor_rule(&mut self, comp: &[usize]) -> bool {
        let p = self.p;
        let mut changed = false;
        for &t in comp {
            let tr = &p.transitions[t];
            if tr.is_self_loop() || !is_improvable(&self.store.rb[t]) {
                continue;
            }
            let parts: Vec<Bound> = self.preds[t]
                .iter()
                .filter(|&&r| !p.transitions[r].is_self_loop())
                .map(|&r| self.store.rb[r].clone())
                .collect();
            changed |= self.offer_rb(t, Bound::sum(parts), "sum of incoming transitions".into());
        }
        changed
    }

    fn runtime_pass(&mut self) -> bool {
        let p = self.p;
        let mut changed = false;
        let comps = self.graph.components.clone();
        for comp in &comps {
            let comp: Vec<usize> = comp.iter().copied().filter(|&t| !self.dead[t]).collect();
            let open: Vec<usize> = comp.iter().copied().filter(|&t| is_improvable(&self.store.rb[t])).collect();
            if open.is_empty() {
                continue;
            }
            let mut candidates = vec![comp.clone()];
            if open.len() < comp.len() {
                candidates.push(open.clone());
            }
            for tp in candidates {
                let strict: Vec<usize> = open.iter().copied().filter(|t| tp.contains(t)).collect();
                if strict.is_empty() {
                    continue;
                }
                let Some(rf) = self.rank(&tp, &strict) else {
                    for &t in &strict {
                        let msg = "no linear ranking function".to_string();
                        if !self.reasons[t].contains(&msg) {
                            self.reasons[t].push(msg);
                        }
                    }
                    continue;
                };
                let entries = entry_transitions(p, &tp);
                let parts: Vec<(usize, Bound)> = entries
                    .iter()
                    .map(|&r| (r, rf.local_bound(&p.transitions[r].dst)))
                    .collect();
                let lifted = self.lift_runtime(&parts);
                let fs: Vec<String> = rf.f.iter().map(|(l, f)| format!("{l}: {f}")).collect();
                let how = format!("ranking function [{}]", fs.join(", "));
                let mut any = false;
                for &t in &rf.decreasing {
                    any |= self.offer_rb(t, lifted.clone(), how.clone());
                }
                if any {
                    changed = true;
                    for (r, l) in parts {
                        self.local.push(LocalBound {
                            kind: "ranking".into(),
                            transitions: rf.decreasing.iter().map(|&t| p.transitions[t].id.clone()).collect(),
                            entry: p.transitions[r].id.clone(),
                            bound: l,
                        });
                    }
                }
            }
            changed |= self.predecessor_rule(&comp);
            if self.features.twn {
                changed |= self.cycle_pass(&comp);
                changed |= self.predecessor_rule(&comp);
            }
        }
        changed
    }

    fn cycle_pass(&mut self, comp: &[usize]) -> bool {
        let p = self.p;
        let mut changed = false;
        let cycles: Vec<SimpleCycle> = self
            .graph
            .simple_cycles
            .iter()
            .filter(|c| c.transitions.iter().all(|t| comp.contains(t)))
            .cloned()
            .collect();
        for &t in comp {
            if !is_improvable(&self.store.rb[t]) {
                continue;
            }
            let mut best: Option<(BoundClass, usize, Vec<String>, Bound, Vec<(usize, Bound)>)> = None;
            for c in cycles.iter().filter(|c| c.contains(t)) {
                let locals = self.cycle_runtime_cached(c);
                let mut parts = Vec::new();
                let mut failed = None;
                for (r, l) in &locals {
                    match l {
                        Ok(b) => parts.push((*r, b.clone())),
                        Err(e) => failed = Some(e.clone()),
                    }
                }
                if let Some(e) = failed {
                    let msg = format!("cycle {}: {e}", c.ids(p).join(","));
                    if !self.reasons[t].contains(&msg) {
                        self.reasons[t].push(msg);
                    }
                    continue;
                }
                let lifted = normalize(self.lift_runtime(&parts));
                let key = (lifted.classify(), c.len(), c.ids(p));
                let replace = match &best {
                    None => true,
                    Some((cl, n, ids, _, _)) => key < (*cl, *n, ids.clone()),
                };
                if replace {
                    best = Some((key.0, key.1, key.2, lifted, parts));
                }
            }
            if let Some((_, _, ids, lifted, parts)) = best {
                if self.offer_rb(t, lifted, format!("closed form of cycle {}", ids.join(","))) {
                    changed = true;
                    for (r, l) in parts {
                        self.local.push(LocalBound {
                            kind: "cycle".into(),
                            transitions: ids.clone(),
                            entry: p.transitions[r].id.clone(),
                            bound: l,
                        });
                    }
                }
            }
        }
        changed
    }

    fn cycle_runtime_cached(&mut self, c: &SimpleCycle) -> BTreeMap<usize, Result<Bound, String>> {
        if !self.cycle_rt_cache.contains_key(&c.transitions) {
            let opts = RuntimeOptions {
                log_bounds: self.features.log_bounds,
            };
            let r = cycle_runtime(self.p, c, &opts, &self.oracle);
            self.cycle_rt_cache.insert(c.transitions.clone(), r);
        }
        self.cycle_rt_cache[&c.transitions].clone()
    }

    fn report(self, rounds: usize) -> Analysis {
        let p = self.p;
        let _ = &self.temps;
        let transitions: Vec<TransitionBounds> = p
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| TransitionBounds {
                id: t.id.clone(),
                src: t.src.clone(),
                dst: t.dst.clone(),
                rb: self.store.rb[i].clone(),
                rb_class: self.store.rb[i].classify().to_string(),
                rb_method: self.rb_how[i].clone(),
                sb: self.store.sb[i].clone(),
                sb_method: self.sb_how[i].clone(),
                reasons: if self.store.rb[i].is_omega() {
                    self.reasons[i].clone()
                } else {
                    Vec::new()
                },
            })
            .collect();
        let overall = normalize(Bound::sum(self.store.rb.clone()));
        let mut local: Vec<LocalBound> = Vec::new();
        for l in self.local {
            if !local.iter().any(|m| m.kind == l.kind && m.transitions == l.transitions && m.entry == l.entry && m.bound == l.bound) {
                local.push(l);
            }
        }
        Analysis {
            class: overall.classify().to_string(),
            overall,
            transitions,
            rounds,
            local,
        }
    }
}

/// Local runtime bound of a simple cycle for each of its entry transitions:
/// `1 + rb` of the loop obtained by chaining the cycle from the entry's target,
/// and `rb` itself for self-loops.
pub fn cycle_runtime(
    p: &IntegerProgram,
    c: &SimpleCycle,
    opts: &RuntimeOptions,
    oracle: &dyn TerminationOracle,
) -> BTreeMap<usize, Result<Bound, String>> {
    let mut by_loc: BTreeMap<String, Result<Bound, String>> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for r in entry_transitions(p, &c.transitions) {
        let at = p.transitions[r].dst.clone();
        let res = by_loc
            .entry(at.clone())
            .or_insert_with(|| {
                let seq = c.rotated_to(p, &at).ok_or_else(|| "entry outside cycle".to_string())?;
                let chained = chain_transitions(p, &seq);
                let l = Loop::new(&p.vars, chained.guard, chained.update);
                let rb = loop_runtime_bound_with(&l, oracle, opts).map_err(|e| e.to_string())?.rb;
                Ok(if c.len() == 1 {
                    rb
                } else {
                    Bound::sum(vec![Bound::one(), rb])
                })
            })
            .clone();
        out.insert(r, res);
    }
    out
}

/// Runtime bound of a single transition as a loop, from a linear ranking function.
fn single_loop_rank(p: &IntegerProgram, t: &Transition) -> Option<Bound> {
    let start = "__entry".to_string();
    let ident = p.vars.iter().map(|v| (v.clone(), QPoly::var(v.clone()))).collect();
    let mini = IntegerProgram {
        vars: p.vars.clone(),
        temps: p.temps.clone(),
        locations: vec![start.clone(), t.src.clone()],
        start: start.clone(),
        transitions: vec![
            Transition {
                id: "e".into(),
                src: start,
                dst: t.src.clone(),
                guard: crate::expr::Formula::tt(),
                update: ident,
            },
            Transition {
                id: "c".into(),
                src: t.src.clone(),
                dst: t.src.clone(),
                guard: t.guard.clone(),
                update: t.update.clone(),
            },
        ],
    };
    find_ranking(&mini, &[1], &[1]).map(|rf| rf.local_bound(&t.src))
}

/// The commutator program: each cycle of the family chained into a self-loop
/// at the shared location, entered once from a fresh start location.
pub fn commutator_program(p: &IntegerProgram, fam: &CommutingFamily) -> IntegerProgram {
    let start = "__entry".to_string();
    let ident = p.vars.iter().map(|v| (v.clone(), QPoly::var(v.clone()))).collect();
    let mut transitions = vec![Transition {
        id: "e".into(),
        src: start.clone(),
        dst: fam.location.clone(),
        guard: crate::expr::Formula::tt(),
        update: ident,
    }];
    for (k, seq) in fam.cycles.iter().enumerate() {
        let mut c = chain_transitions(p, seq);
        c.id = format!("c{}", k + 1);
        transitions.push(c);
    }
    IntegerProgram {
        vars: p.vars.clone(),
        temps: Vec::new(),
        locations: vec![start.clone(), fam.location.clone()],
        start,
        transitions,
    }
}

/// Local size bounds for every transition of a commuting family, in terms of
/// the values at the shared location on entry.
pub fn commuting_size(
    p: &IntegerProgram,
    fam: &CommutingFamily,
    features: &Features,
    oracle: &dyn TerminationOracle,
) -> Option<BTreeMap<usize, BTreeMap<Var, Bound>>> {
    let comm = commutator_program(p, fam);
    let mut inner = *features;
    inner.commuting = false;
    let res = analyze(&comm, &AnalysisConfig { features: inner }, oracle);
    let mut sbs: Vec<BTreeMap<Var, Bound>> = Vec::new();
    for k in 0..fam.cycles.len() {
        let c = &comm.transitions[k + 1];
        let rb = res.transitions[k + 1].rb.clone();
        let l = Loop::new(&p.vars, c.guard.clone(), c.update.clone());
        sbs.push(loop_size_bound_with(&l, &rb, features.gaussian).ok()?.sb);
    }
    // sb_1(sb_2(...sb_m))
    let mut acc = sbs.pop()?;
    while let Some(sb) = sbs.pop() {
        acc = sb
            .iter()
            .map(|(v, b)| (v.clone(), b.subst_map(&acc).expand_polynomials()))
            .collect();
    }
    let mut out = BTreeMap::new();
    for seq in &fam.cycles {
        let n = seq.len();
        for j in 0..n {
            let local = if j + 1 == n {
                acc.clone()
            } else {
                let partial = chain_transitions(p, &seq[..=j]);
                p.vars
                    .iter()
                    .map(|v| (v.clone(), norm_poly(&partial.image(v)).subst_map(&acc).expand_polynomials()))
                    .collect()
            };
            out.insert(seq[j], local);
        }
    }
    Some(out)
}

/// The family's composed size bound `sb_[c1,...,cm]` over the variables at the shared location.
pub fn commuting_composed(
    p: &IntegerProgram,
    fam: &CommutingFamily,
    features: &Features,
    oracle: &dyn TerminationOracle,
) -> Option<BTreeMap<Var, Bound>> {
    let last = *fam.cycles.first()?.last()?;
    commuting_size(p, fam, features, oracle).map(|m| m[&last].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::its::parse;
    use crate::termination::AssumeTerminating;

    fn run(src: &str) -> Analysis {
        let p = parse(src).unwrap();
        analyze(&p, &AnalysisConfig::default(), &AssumeTerminating)
    }

    #[test]
    fn straight_line() {
        let a = run("vars x\nl0 -> l1 { x := x + 1 }\nl1 -> l2 { x := 2*x }");
        assert_eq!(a.overall.render(), "2");
        assert_eq!(a.sb("t1", "x").render(), "2 + 2*x");
    }

    #[test]
    fn fig2_runtime() {
        let a = run(include_str!("../programs/fig2.its"));
        assert_eq!(a.rb("t0").render(), "1");
        assert_eq!(a.rb("t4").render(), "1");
        assert_eq!(a.rb("t1").render(), "x6");
        assert_eq!(a.rb("t2").render(), "x6");
        assert_eq!(a.rb("t3").render(), "x6*(3 + 3*log2(68 + 2*x6))");
        assert_eq!(a.sb("t1", "x3").render(), "2");
        assert_eq!(a.sb("t1", "x5").render(), "x6");
        assert_eq!(a.sb("t3", "x1").render(), "(2 + sqrt(10))*x6");
        assert_eq!(a.rb("t5").render(), "max{x1, (2 + sqrt(10))*x6}");
        assert_eq!(a.overall_class(), BoundClass::polylog(1, 1));
    }

    #[test]
    fn fig3_commuting() {
        let a = run(include_str!("../programs/fig3.its"));
        assert_eq!(a.rb("t2a").render(), "x1");
        let expected = Bound::parse("x1 + x3 + 3*x1*x2^2").unwrap().simplify();
        assert_eq!(a.sb("t3", "x3").render(), expected.render());
        assert_eq!(a.overall_class(), BoundClass::poly(3));
    }

    #[test]
    fn unreachable_entry_gives_zero() {
        let a = run("vars x\nl0 (x > 0 && x < 0) -> l1\nl1 (x > 0) -> l1 { x := x - 1 }");
        assert_eq!(a.rb("t0").render(), "0");
        assert_eq!(a.rb("t1").render(), "0");
    }
}
