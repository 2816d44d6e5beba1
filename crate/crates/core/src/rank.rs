//! Linear ranking functions via Farkas' lemma, solved with an exact simplex.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Signed, Zero};

use crate::bounds::Bound;
use crate::expr::{norm_poly, Atom, Monomial, QPoly, Rational, Var};
use crate::its::{IntegerProgram, Location, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<(usize, Rational)>,
    pub rel: Relation,
    pub rhs: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<Rational>, value: Rational },
    Infeasible,
    Unbounded,
}

/// `min c.x` subject to the rows and `x >= 0`.
#[derive(Clone, Debug, Default)]
pub struct Lp {
    pub n: usize,
    pub rows: Vec<Row>,
}

struct Tableau {
    t: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> &Rational {
        &self.t[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c].clone();
        for x in self.t[r].iter_mut() {
            *x = &*x / &p;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (x, y) in row.iter_mut().zip(&prow) {
                if !y.is_zero() {
                    *x = &*x - &(&f * y);
                }
            }
        }
        self.basis[r] = c;
    }

    fn objective(&self, cost: &[Rational]) -> Rational {
        (0..self.t.len())
            .map(|i| &cost[self.basis[i]] * self.rhs(i))
            .fold(Rational::zero(), |a, b| a + b)
    }

    /// Bland's rule; `Err` on unboundedness.
    fn run(&mut self, cost: &[Rational], allowed: usize) -> Result<(), ()> {
        loop {
            let in_basis: BTreeSet<usize> = self.basis.iter().copied().collect();
            let entering = (0..allowed).filter(|j| !in_basis.contains(j)).find(|&j| {
                let mut r = cost[j].clone();
                for (i, row) in self.t.iter().enumerate() {
                    if !row[j].is_zero() {
                        r -= &cost[self.basis[i]] * &row[j];
                    }
                }
                r.is_negative()
            });
            let Some(j) = entering else { return Ok(()) };
            let mut leave: Option<(usize, Rational)> = None;
            for i in 0..self.t.len() {
                let a = &self.t[i][j];
                if !a.is_positive() {
                    continue;
                }
                let ratio = self.rhs(i) / a;
                let better = match &leave {
                    None => true,
                    Some((k, best)) => ratio < *best || (ratio == *best && self.basis[i] < self.basis[*k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            match leave {
                Some((i, _)) => self.pivot(i, j),
                None => return Err(()),
            }
        }
    }
}

impl Lp {
    pub fn new(n: usize) -> Lp {
        Lp { n, rows: Vec::new() }
    }

    pub fn add(&mut self, coeffs: Vec<(usize, Rational)>, rel: Relation, rhs: Rational) {
        self.rows.push(Row { coeffs, rel, rhs });
    }

    pub fn minimize(&self, obj: &[(usize, Rational)]) -> LpOutcome {
        let m = self.rows.len();
        let mut rows: Vec<(Vec<Rational>, Relation, Rational)> = Vec::with_capacity(m);
        for r in &self.rows {
            let mut dense = vec![Rational::zero(); self.n];
            for (j, c) in &r.coeffs {
                dense[*j] += c;
            }
            let (dense, rel, rhs) = if r.rhs.is_negative() {
                let flip = match r.rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (dense.into_iter().map(|x| -x).collect(), flip, -r.rhs.clone())
            } else {
                (dense, r.rel, r.rhs.clone())
            };
            rows.push((dense, rel, rhs));
        }
        let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let arts = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let art_start = self.n + slacks;
        let width = art_start + arts;
        let mut tab = Tableau {
            t: Vec::with_capacity(m),
            basis: Vec::with_capacity(m),
            width,
        };
        let (mut s, mut a) = (self.n, art_start);
        for (dense, rel, rhs) in rows {
            let mut row = dense;
            row.resize(width + 1, Rational::zero());
            row[width] = rhs;
            match rel {
                Relation::Le => {
                    row[s] = Rational::one();
                    tab.basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -Rational::one();
                    row[a] = Rational::one();
                    tab.basis.push(a);
                    s += 1;
                    a += 1;
                }
                Relation::Eq => {
                    row[a] = Rational::one();
                    tab.basis.push(a);
                    a += 1;
                }
            }
            tab.t.push(row);
        }
        let mut cost1 = vec![Rational::zero(); width];
        for c in cost1.iter_mut().skip(art_start) {
            *c = Rational::one();
        }
        if tab.run(&cost1, width).is_err() || tab.objective(&cost1).is_positive() {
            return LpOutcome::Infeasible;
        }
        // drive remaining artificials out of the basis
        let mut i = 0;
        while i < tab.t.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| !tab.t[i][j].is_zero()) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.t.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        let mut cost2 = vec![Rational::zero(); width];
        for (j, c) in obj {
            cost2[*j] += c;
        }
        if tab.run(&cost2, art_start).is_err() {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![Rational::zero(); self.n];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < self.n {
                x[b] = tab.rhs(i).clone();
            }
        }
        let value = obj.iter().map(|(j, c)| c * &x[*j]).fold(Rational::zero(), |a, b| a + b);
        LpOutcome::Optimal { x, value }
    }

    pub fn feasible(&self) -> Option<Vec<Rational>> {
        match self.minimize(&[]) {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    /// Exact check of a candidate point.
    pub fn satisfied_by(&self, x: &[Rational]) -> bool {
        x.iter().all(|v| !v.is_negative())
            && self.rows.iter().all(|r| {
                let lhs = r
                    .coeffs
                    .iter()
                    .map(|(j, c)| c * &x[*j])
                    .fold(Rational::zero(), |a, b| a + b);
                match r.rel {
                    Relation::Le => lhs <= r.rhs,
                    Relation::Ge => lhs >= r.rhs,
                    Relation::Eq => lhs == r.rhs,
                }
            })
    }
}

/// `p = a.z + b` over the variables `zs`; `None` if `p` is not affine in them.
pub fn affine(p: &QPoly, zs: &[Var]) -> Option<(Vec<Rational>, Rational)> {
    if !p.is_affine() || p.vars().iter().any(|v| !zs.contains(v)) {
        return None;
    }
    Some((zs.iter().map(|z| p.linear_coeff(z)).collect(), p.constant_term()))
}

/// Hypotheses `h >= 0` from a conjunction of atoms; non-linear atoms are dropped.
pub fn hypotheses(atoms: &[Atom]) -> Vec<QPoly> {
    atoms
        .iter()
        .filter(|a| a.poly().is_affine())
        .map(|a| {
            let mut h = a.poly().clone();
            h.add_term(Monomial::one(), -Rational::one());
            h
        })
        .collect()
}

fn zs_of(hyps: &[QPoly], extra: &[&QPoly]) -> Vec<Var> {
    let mut out = BTreeSet::new();
    for h in hyps.iter().chain(extra.iter().copied()) {
        out.extend(h.vars());
    }
    out.into_iter().collect()
}

/// Are the affine hypotheses `h >= 0` satisfiable over the reals?
pub fn satisfiable(hyps: &[QPoly]) -> bool {
    let zs = zs_of(hyps, &[]);
    // z = z+ - z-
    let mut lp = Lp::new(2 * zs.len());
    for h in hyps {
        let Some((a, b)) = affine(h, &zs) else { continue };
        let coeffs = a
            .iter()
            .enumerate()
            .flat_map(|(k, c)| [(2 * k, c.clone()), (2 * k + 1, -c.clone())])
            .collect();
        lp.add(coeffs, Relation::Ge, -b);
    }
    lp.feasible().is_some()
}

/// Farkas check of `hyps >= 0 ==> g >= 0`. Sound, incomplete for integers.
pub fn implies_nonneg(hyps: &[QPoly], g: &QPoly) -> bool {
    let zs = zs_of(hyps, &[g]);
    let Some((q, r)) = affine(g, &zs) else { return false };
    let rows: Vec<(Vec<Rational>, Rational)> = hyps.iter().filter_map(|h| affine(h, &zs)).collect();
    let mut lp = Lp::new(rows.len());
    for (w, qw) in q.iter().enumerate() {
        let coeffs = rows.iter().enumerate().map(|(k, (a, _))| (k, a[w].clone())).collect();
        lp.add(coeffs, Relation::Eq, qw.clone());
    }
    let coeffs = rows.iter().enumerate().map(|(k, (_, b))| (k, b.clone())).collect();
    lp.add(coeffs, Relation::Le, r);
    lp.feasible().is_some() || !satisfiable(hyps)
}

/// Feasible linear guard disjuncts of `t` as hypotheses.
pub fn guard_cases(t: &Transition) -> Vec<Vec<QPoly>> {
    t.guard
        .dnf()
        .iter()
        .map(|d| hypotheses(d))
        .filter(|h| satisfiable(h))
        .collect()
}

/// True when the linear part of the guard is already unsatisfiable.
pub fn guard_unsat(t: &Transition) -> bool {
    guard_cases(t).is_empty()
}

#[derive(Clone, Debug)]
pub struct RankingFunction {
    pub f: BTreeMap<Location, QPoly>,
    /// Indices of the transitions that strictly decrease `f`.
    pub decreasing: Vec<usize>,
    pub component: Vec<usize>,
}

impl RankingFunction {
    pub fn at(&self, loc: &str) -> QPoly {
        self.f.get(loc).cloned().unwrap_or_default()
    }

    /// `||f_loc||`, the bound on decreasing steps after entering at `loc`.
    pub fn local_bound(&self, loc: &str) -> Bound {
        norm_poly(&self.at(loc))
    }

    fn delta(&self, t: &Transition) -> QPoly {
        let after = self.at(&t.dst).substitute(&t.update);
        &self.at(&t.src) - &after
    }

    /// `f_src - f_dst(eta) >= 1` and `f_src >= 1` under every guard case.
    pub fn decreases(&self, t: &Transition) -> bool {
        let mut d = self.delta(t);
        d.add_term(Monomial::one(), -Rational::one());
        let mut f = self.at(&t.src);
        f.add_term(Monomial::one(), -Rational::one());
        guard_cases(t).iter().all(|h| implies_nonneg(h, &d) && implies_nonneg(h, &f))
    }

    pub fn non_increasing(&self, t: &Transition) -> bool {
        let d = self.delta(t);
        guard_cases(t).iter().all(|h| implies_nonneg(h, &d))
    }

    /// Exact re-check of all conditions.
    pub fn verify(&self, p: &IntegerProgram) -> bool {
        self.component.iter().all(|&i| {
            let t = &p.transitions[i];
            if self.decreasing.contains(&i) {
                self.decreases(t)
            } else {
                self.non_increasing(t)
            }
        })
    }
}

/// Linear form over the template unknowns plus a constant.
#[derive(Clone, Default)]
struct Lin {
    coeffs: BTreeMap<usize, Rational>,
    constant: Rational,
}

impl Lin {
    fn add(&mut self, k: usize, c: Rational) {
        *self.coeffs.entry(k).or_insert_with(Rational::zero) += c;
    }
}

/// Template `f_l = c_l.x + d_l`; each unknown `k` is split into columns `2k` and `2k + 1`.
struct Template {
    vars: Vec<Var>,
    locs: Vec<Location>,
}

impl Template {
    fn c(&self, loc: &str, v: usize) -> usize {
        let l = self.locs.iter().position(|x| x == loc).expect("template location");
        l * (self.vars.len() + 1) + v
    }

    fn d(&self, loc: &str) -> usize {
        self.c(loc, self.vars.len())
    }

    fn unknowns(&self) -> usize {
        self.locs.len() * (self.vars.len() + 1)
    }
}

fn split(lin: &BTreeMap<usize, Rational>, sign: &Rational) -> Vec<(usize, Rational)> {
    lin.iter()
        .flat_map(|(k, c)| [(2 * k, c * sign), (2 * k + 1, -(c * sign))])
        .collect()
}

/// Searches for a linear ranking function on `component` that strictly decreases on `strict`.
pub fn synthesize(p: &IntegerProgram, component: &[usize], strict: &[usize]) -> Option<RankingFunction> {
    let mut locs: Vec<Location> = Vec::new();
    for &i in component {
        let t = &p.transitions[i];
        for l in [&t.src, &t.dst] {
            if !locs.contains(l) {
                locs.push(l.clone());
            }
        }
    }
    let tpl = Template {
        vars: p.vars.clone(),
        locs,
    };
    let mut zs: Vec<Var> = p.vars.clone();
    zs.extend(p.temps.iter().cloned());
    let base = 2 * tpl.unknowns();
    let mut lp = Lp::new(base);
    let cond = |lp: &mut Lp, q: Vec<Lin>, r: Lin, hyps: &[(Vec<Rational>, Rational)]| {
        let lam0 = lp.n;
        lp.n += hyps.len();
        for (w, qw) in q.iter().enumerate() {
            let mut coeffs = split(&qw.coeffs, &Rational::one());
            for (k, (a, _)) in hyps.iter().enumerate() {
                if !a[w].is_zero() {
                    coeffs.push((lam0 + k, -a[w].clone()));
                }
            }
            lp.add(coeffs, Relation::Eq, -qw.constant.clone());
        }
        let mut coeffs = split(&r.coeffs, &Rational::one());
        for (k, (_, b)) in hyps.iter().enumerate() {
            coeffs.push((lam0 + k, -b.clone()));
        }
        lp.add(coeffs, Relation::Ge, -r.constant);
    };
    for &i in component {
        let t = &p.transitions[i];
        // coefficients of f_dst(eta) in z, per unknown
        let mut q: Vec<Lin> = vec![Lin::default(); zs.len()];
        let mut r = Lin::default();
        for (vi, v) in tpl.vars.iter().enumerate() {
            q[vi].add(tpl.c(&t.src, vi), Rational::one());
            match affine(&t.image(v), &zs) {
                Some((a, b)) => {
                    let k = tpl.c(&t.dst, vi);
                    for (w, aw) in a.iter().enumerate() {
                        if !aw.is_zero() {
                            q[w].add(k, -aw.clone());
                        }
                    }
                    if !b.is_zero() {
                        r.add(k, -b);
                    }
                }
                None => {
                    let k = tpl.c(&t.dst, vi);
                    lp.add(vec![(2 * k, Rational::one())], Relation::Eq, Rational::zero());
                    lp.add(vec![(2 * k + 1, Rational::one())], Relation::Eq, Rational::zero());
                }
            }
        }
        r.add(tpl.d(&t.src), Rational::one());
        r.add(tpl.d(&t.dst), -Rational::one());
        let is_strict = strict.contains(&i);
        for case in guard_cases(t) {
            let hyps: Vec<(Vec<Rational>, Rational)> = case.iter().filter_map(|h| affine(h, &zs)).collect();
            let mut r1 = r.clone();
            if is_strict {
                r1.constant -= Rational::one();
            }
            cond(&mut lp, q.clone(), r1, &hyps);
            if is_strict {
                let mut qf: Vec<Lin> = vec![Lin::default(); zs.len()];
                for (vi, _) in tpl.vars.iter().enumerate() {
                    qf[vi].add(tpl.c(&t.src, vi), Rational::one());
                }
                let mut rf = Lin::default();
                rf.add(tpl.d(&t.src), Rational::one());
                rf.constant = -Rational::one();
                cond(&mut lp, qf, rf, &hyps);
            }
        }
    }
    let obj: Vec<(usize, Rational)> = (0..base).map(|j| (j, Rational::one())).collect();
    let LpOutcome::Optimal { x, .. } = lp.minimize(&obj) else {
        return None;
    };
    let val = |k: usize| &x[2 * k] - &x[2 * k + 1];
    let mut f = BTreeMap::new();
    for l in &tpl.locs {
        let mut poly = QPoly::constant(val(tpl.d(l)));
        for (vi, v) in tpl.vars.iter().enumerate() {
            let c = val(tpl.c(l, vi));
            if !c.is_zero() {
                poly = &poly + &QPoly::var(v.clone()).scale(&c);
            }
        }
        f.insert(l.clone(), poly);
    }
    let rf = RankingFunction {
        f,
        decreasing: strict.to_vec(),
        component: component.to_vec(),
    };
    rf.verify(p).then_some(rf)
}

/// Tries all of `unbounded` as strict, then each one alone, and extends the
/// decreasing set by every other transition that `f` happens to decrease.
pub fn find_ranking(p: &IntegerProgram, component: &[usize], unbounded: &[usize]) -> Option<RankingFunction> {
    let mut found = synthesize(p, component, unbounded);
    if found.is_none() {
        found = unbounded.iter().find_map(|&t| synthesize(p, component, &[t]));
    }
    let mut rf = found?;
    for &i in component {
        if !rf.decreasing.contains(&i) && rf.decreases(&p.transitions[i]) {
            rf.decreasing.push(i);
        }
    }
    rf.decreasing.sort_unstable();
    Some(rf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;
    use crate::its::parse;

    #[test]
    fn simplex_small() {
        // min -x - y s.t. x + 2y <= 4, 3x + y <= 6
        let mut lp = Lp::new(2);
        lp.add(vec![(0, rat(1)), (1, rat(2))], Relation::Le, rat(4));
        lp.add(vec![(0, rat(3)), (1, rat(1))], Relation::Le, rat(6));
        match lp.minimize(&[(0, rat(-1)), (1, rat(-1))]) {
            LpOutcome::Optimal { x, value } => {
                assert_eq!(x, vec![rat(8) / rat(5), rat(6) / rat(5)]);
                assert_eq!(value, rat(-14) / rat(5));
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn simplex_infeasible_and_unbounded() {
        let mut lp = Lp::new(1);
        lp.add(vec![(0, rat(1))], Relation::Ge, rat(3));
        lp.add(vec![(0, rat(1))], Relation::Le, rat(2));
        assert_eq!(lp.minimize(&[]), LpOutcome::Infeasible);
        let mut lp = Lp::new(1);
        lp.add(vec![(0, rat(1))], Relation::Ge, rat(3));
        assert_eq!(lp.minimize(&[(0, rat(-1))]), LpOutcome::Unbounded);
    }

    #[test]
    fn simplex_equalities_and_degenerate_rows() {
        let mut lp = Lp::new(3);
        lp.add(vec![(0, rat(1)), (1, rat(1))], Relation::Eq, rat(2));
        lp.add(vec![(0, rat(2)), (1, rat(2))], Relation::Eq, rat(4));
        lp.add(vec![(2, rat(1)), (0, rat(-1))], Relation::Ge, rat(-1));
        let LpOutcome::Optimal { x, value } = lp.minimize(&[(2, rat(1)), (1, rat(1))]) else {
            panic!()
        };
        assert_eq!(value, rat(1));
        assert!(lp.satisfied_by(&x));
    }

    fn fig2() -> IntegerProgram {
        parse(include_str!("../programs/fig2.its")).unwrap()
    }

    #[test]
    fn inner_counter_ranks_by_x6() {
        let p = fig2();
        let t5 = p.index_of("t5").unwrap();
        let rf = find_ranking(&p, &[t5], &[t5]).unwrap();
        assert_eq!(rf.at("l3").render(), "x6");
        assert_eq!(rf.local_bound("l3").render(), "x6");
    }

    #[test]
    fn outer_loop_ranks_t1() {
        let p = fig2();
        let id = |s: &str| p.index_of(s).unwrap();
        let comp = [id("t1"), id("t2"), id("t3")];
        let rf = find_ranking(&p, &comp, &comp).unwrap();
        assert_eq!(rf.decreasing, vec![id("t1")]);
        assert_eq!(rf.at("l1").render(), "x6");
        assert!(rf.verify(&p));
    }

    #[test]
    fn unsat_guard() {
        let p = parse("vars x\nl0 -> l1\nl1 (x > 0 && x < 0) -> l1 { x := x + 1 }").unwrap();
        assert!(guard_unsat(&p.transitions[1]));
        assert!(!guard_unsat(&p.transitions[0]));
    }

    #[test]
    fn implication() {
        let x = QPoly::var(Var::new("x"));
        let h = vec![&x - &QPoly::from_i64(3)];
        assert!(implies_nonneg(&h, &(&x - &QPoly::from_i64(1))));
        assert!(!implies_nonneg(&h, &(&QPoly::from_i64(5) - &x)));
    }

    #[test]
    fn no_linear_ranking_for_growing_loop() {
        let p = parse("vars x\nl0 -> l1\nl1 (x > 0) -> l1 { x := x + 1 }").unwrap();
        assert!(find_ranking(&p, &[1], &[1]).is_none());
    }
}
