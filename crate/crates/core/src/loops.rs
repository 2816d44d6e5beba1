//! Single-path loops `while (guard) { x := update(x) }` and their classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::expr::{Field, Formula, GaussianRational, Int, Monomial, Poly, QPoly, Rational, Var};
use crate::linalg::{char_poly, jordan, to_int_coeffs, LinalgError, Matrix, QMatrix, SpectralField};

/// Simultaneous substitution `x := update(x)`; absent variables are unchanged.
pub type Update<C> = BTreeMap<Var, Poly<C>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub vars: Vec<Var>,
    pub guard: Formula,
    pub update: Update<Rational>,
}

impl fmt::Display for Loop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "while ({}) {{ ", self.guard)?;
        for v in &self.vars {
            write!(f, "{v} := {}; ", self.image(v))?;
        }
        write!(f, "}}")
    }
}

impl Loop {
    /// Builds a loop; the variable set is closed under guard and update occurrences.
    pub fn new(vars: &[Var], guard: Formula, update: Update<Rational>) -> Loop {
        let mut all: BTreeSet<Var> = vars.iter().cloned().collect();
        all.extend(guard.vars());
        for (v, p) in &update {
            all.insert(v.clone());
            all.extend(p.vars());
        }
        let update = update
            .into_iter()
            .filter(|(v, p)| *p != QPoly::var(v.clone()))
            .collect();
        Loop {
            vars: all.into_iter().collect(),
            guard,
            update,
        }
    }

    pub fn image(&self, v: &Var) -> QPoly {
        self.update
            .get(v)
            .cloned()
            .unwrap_or_else(|| QPoly::var(v.clone()))
    }

    /// Complete update map over all loop variables.
    pub fn full_update(&self) -> Update<Rational> {
        self.vars.iter().map(|v| (v.clone(), self.image(v))).collect()
    }

    /// `eta(p)`: substitute the update into `p`.
    pub fn apply(&self, p: &QPoly) -> QPoly {
        p.substitute(&self.update)
    }

    /// The update iterated `k` times.
    pub fn update_power(&self, k: u32) -> Update<Rational> {
        let mut cur: Update<Rational> = self
            .vars
            .iter()
            .map(|v| (v.clone(), QPoly::var(v.clone())))
            .collect();
        for _ in 0..k {
            cur = compose(&self.update, &cur);
        }
        cur
    }

    /// Dependency edges `v -> w` when `eta(v)` mentions `w`.
    pub fn dependencies(&self) -> BTreeMap<Var, BTreeSet<Var>> {
        self.vars
            .iter()
            .map(|v| (v.clone(), self.image(v).vars()))
            .collect()
    }

    /// Restrict to variables that can influence the guard.
    pub fn drop_irrelevant(&self) -> Loop {
        let deps = self.dependencies();
        let mut keep: BTreeSet<Var> = self.guard.vars();
        let mut stack: Vec<Var> = keep.iter().cloned().collect();
        while let Some(v) = stack.pop() {
            for w in deps.get(&v).into_iter().flatten() {
                if keep.insert(w.clone()) {
                    stack.push(w.clone());
                }
            }
        }
        Loop {
            vars: self.vars.iter().filter(|v| keep.contains(*v)).cloned().collect(),
            guard: self.guard.clone(),
            update: self
                .update
                .iter()
                .filter(|(v, _)| keep.contains(*v))
                .map(|(v, p)| (v.clone(), p.clone()))
                .collect(),
        }
    }

    /// Is the guard syntactically unsatisfiable?
    pub fn guard_is_false(&self) -> bool {
        self.guard.fold_constants().is_false()
    }

    pub fn classify(&self) -> Classification {
        classify(self)
    }
}

/// `(outer o inner)(v) = inner(v)[w := outer(w)]`: run `outer` first, then `inner`.
pub fn compose<C: Field>(outer: &Update<C>, inner: &Update<C>) -> Update<C> {
    inner
        .iter()
        .map(|(v, p)| (v.clone(), p.substitute(outer)))
        .collect()
}

/// One strongly connected block of the dependency graph.
#[derive(Clone, Debug, Serialize)]
pub struct Block {
    pub vars: Vec<Var>,
    #[serde(skip)]
    pub matrix: QMatrix,
    /// Characteristic polynomial coefficients, lowest degree first.
    #[serde(skip)]
    pub char_poly: Vec<Rational>,
    #[serde(skip)]
    pub gaussian: Option<Vec<GaussianRational>>,
    pub period: Option<u32>,
}

impl Block {
    pub fn eigenvalue_strings(&self) -> Vec<String> {
        match &self.gaussian {
            Some(g) => g.iter().map(Field::render).collect(),
            None => vec!["?".into()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Tnn,
    Twn,
    Prs,
    Solvable,
    Unsolvable,
}

impl fmt::Display for LoopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopKind::Tnn => "tnn",
            LoopKind::Twn => "twn",
            LoopKind::Prs => "prs",
            LoopKind::Solvable => "solvable",
            LoopKind::Unsolvable => "unsolvable",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    /// Blocks in dependency order (dependencies first).
    pub blocks: Vec<Block>,
    pub defective: BTreeSet<Var>,
    /// Least common multiple of block periods, if every block has one.
    pub period: Option<u32>,
}

impl Classification {
    pub fn kind(&self) -> LoopKind {
        if !self.defective.is_empty() {
            return LoopKind::Unsolvable;
        }
        let twn = self.blocks.iter().all(|b| b.vars.len() == 1);
        if twn {
            let nonneg = self
                .blocks
                .iter()
                .all(|b| !b.matrix[(0, 0)].is_negative());
            return if nonneg { LoopKind::Tnn } else { LoopKind::Twn };
        }
        if self.period.is_some() {
            LoopKind::Prs
        } else {
            LoopKind::Solvable
        }
    }

    pub fn is_solvable(&self) -> bool {
        self.defective.is_empty()
    }

    /// Gaussian eigenvalues of all blocks, if every block has them.
    pub fn gaussian_spectrum(&self) -> Option<Vec<GaussianRational>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.gaussian.clone()?);
        }
        Some(out)
    }
}

pub fn classify(l: &Loop) -> Classification {
    let deps = l.dependencies();
    let mut g: DiGraph<Var, ()> = DiGraph::new();
    let idx: BTreeMap<Var, _> = l.vars.iter().map(|v| (v.clone(), g.add_node(v.clone()))).collect();
    for (v, ws) in &deps {
        for w in ws {
            if let (Some(a), Some(b)) = (idx.get(v), idx.get(w)) {
                g.add_edge(*a, *b, ());
            }
        }
    }
    // tarjan_scc yields sinks first, i.e. dependencies before dependents
    let sccs = tarjan_scc(&g);
    let mut blocks = Vec::new();
    let mut defective: BTreeSet<Var> = BTreeSet::new();
    for comp in sccs {
        let mut vars: Vec<Var> = comp.iter().map(|n| g[*n].clone()).collect();
        vars.sort();
        let set: BTreeSet<Var> = vars.iter().cloned().collect();
        let depends_on_defective = vars
            .iter()
            .any(|v| deps[v].iter().any(|w| defective.contains(w)));
        match block_matrix(l, &vars, &set) {
            Some(m) if !depends_on_defective => {
                let cp = char_poly(&m);
                let gaussian = to_int_coeffs(&cp).and_then(|c| GaussianRational::roots(&c));
                let period = block_period(&m);
                blocks.push(Block {
                    vars,
                    matrix: m,
                    char_poly: cp,
                    gaussian,
                    period,
                });
            }
            _ => defective.extend(vars),
        }
    }
    let period = if defective.is_empty() {
        blocks
            .iter()
            .try_fold(1u32, |acc, b| b.period.map(|p| acc.lcm(&p)))
    } else {
        None
    };
    Classification {
        blocks,
        defective,
        period,
    }
}

/// Linear part of the block, if every block variable occurs only linearly with constant coefficient.
fn block_matrix(l: &Loop, vars: &[Var], set: &BTreeSet<Var>) -> Option<QMatrix> {
    let n = vars.len();
    let mut m = QMatrix::zeros(n, n);
    for (i, v) in vars.iter().enumerate() {
        for (mono, c) in l.image(v).terms() {
            let inside: Vec<&Var> = mono.vars().filter(|w| set.contains(*w)).collect();
            if inside.is_empty() {
                continue;
            }
            if mono.degree() != 1 {
                return None;
            }
            let j = vars.iter().position(|w| w == inside[0])?;
            m[(i, j)] = c.clone();
        }
    }
    Some(m)
}

/// Least `p <= dim^3` such that `A^p` has only integer eigenvalues.
pub fn block_period(a: &QMatrix) -> Option<u32> {
    let dim = a.rows() as u32;
    let limit = dim.pow(3).max(1);
    let mut pw = a.clone();
    for p in 1..=limit {
        if let Some(c) = to_int_coeffs(&char_poly(&pw)) {
            if Rational::roots(&c).is_some() {
                return Some(p);
            }
        }
        pw = pw.mul(a);
    }
    None
}

/// Integer eigenvalues of the linear part of `update` restricted to each block.
pub fn integer_spectrum(l: &Loop) -> Option<Vec<Int>> {
    let c = classify(l);
    if !c.is_solvable() {
        return None;
    }
    let mut out = Vec::new();
    for b in &c.blocks {
        let roots = Rational::roots(&to_int_coeffs(&b.char_poly)?)?;
        out.extend(roots.into_iter().map(|r| r.to_integer()));
    }
    Some(out)
}

/// Chained loop: guard `phi && eta(phi) && ... && eta^(p-1)(phi)`, update `eta^p`.
pub fn chain(l: &Loop, p: u32) -> Loop {
    let mut guards = Vec::new();
    let id: Update<Rational> = l.vars.iter().map(|v| (v.clone(), QPoly::var(v.clone()))).collect();
    let mut cur = id;
    for _ in 0..p {
        guards.push(l.guard.substitute(&cur));
        cur = compose(&l.update, &cur);
    }
    Loop::new(&l.vars, Formula::and(guards), cur)
}

/// Linear automorphism `x_S -> P*x_S` per block, with its inverse.
#[derive(Clone, Debug)]
pub struct Automorphism<C: Field> {
    pub forward: BTreeMap<Var, Poly<C>>,
    pub inverse: BTreeMap<Var, Poly<C>>,
}

impl<C: Field> Automorphism<C> {
    pub fn identity(vars: &[Var]) -> Self {
        let m: BTreeMap<Var, Poly<C>> = vars.iter().map(|v| (v.clone(), Poly::var(v.clone()))).collect();
        Automorphism {
            forward: m.clone(),
            inverse: m,
        }
    }

    pub fn apply(&self, p: &Poly<C>) -> Poly<C> {
        p.substitute(&self.forward)
    }

    pub fn apply_inverse(&self, p: &Poly<C>) -> Poly<C> {
        p.substitute(&self.inverse)
    }
}

/// Automorphism bringing every block into Jordan form over `C`.
pub fn build_automorphism<C: SpectralField>(
    l: &Loop,
    cls: &Classification,
) -> Result<Automorphism<C>, LinalgError> {
    let mut aut = Automorphism::identity(&l.vars);
    for b in &cls.blocks {
        if b.vars.len() == 1 {
            continue;
        }
        let ints = to_int_coeffs(&b.char_poly).ok_or(LinalgError::NonGaussianSpectrum)?;
        let eig = C::roots(&ints).ok_or(LinalgError::NonGaussianSpectrum)?;
        let a: Matrix<C> = b.matrix.map(|c| C::from_rat(c.clone()));
        let jf = jordan(&a, &eig)?;
        for (i, v) in b.vars.iter().enumerate() {
            let fwd = Poly::from_terms(
                b.vars
                    .iter()
                    .enumerate()
                    .map(|(j, w)| (Monomial::var(w.clone()), jf.p[(i, j)].clone())),
            );
            let inv = Poly::from_terms(
                b.vars
                    .iter()
                    .enumerate()
                    .map(|(j, w)| (Monomial::var(w.clone()), jf.p_inv[(i, j)].clone())),
            );
            aut.forward.insert(v.clone(), fwd);
            aut.inverse.insert(v.clone(), inv);
        }
    }
    Ok(aut)
}

/// Conjugated update `theta^-1(eta(theta(v)))`.
pub fn conjugate_update<C: Field>(update: &Update<C>, vars: &[Var], aut: &Automorphism<C>) -> Update<C> {
    vars.iter()
        .map(|v| {
            let t = aut.apply(&Poly::var(v.clone()));
            let e = t.substitute(update);
            (v.clone(), aut.apply_inverse(&e))
        })
        .collect()
}

/// Conjugated loop over the rationals: guard `theta^-1(phi)`, update `theta^-1(eta(theta(x)))`.
pub fn conjugate(l: &Loop, aut: &Automorphism<Rational>) -> Loop {
    let guard = l.guard.substitute(&aut.inverse);
    let update = conjugate_update(&l.full_update(), &l.vars, aut);
    Loop::new(&l.vars, guard, update)
}

/// Lift a rational update to coefficients in `C`.
pub fn lift_update<C: Field>(u: &Update<Rational>) -> Update<C> {
    u.iter()
        .map(|(v, p)| (v.clone(), p.map_coeffs(|c| C::from_rat(c.clone()))))
        .collect()
}

/// Replacement of an unsolvable part by a fresh variable `x` standing for `q`.
#[derive(Clone, Debug)]
pub struct Elimination {
    pub fresh: Var,
    pub replaced: QPoly,
}

/// Maximal nesting of eliminations.
pub const MAX_ELIMINATIONS: usize = 3;

fn fresh_var(used: &BTreeSet<Var>) -> Var {
    (1..)
        .map(|k| Var::new(&format!("x{k}")))
        .find(|v| !used.contains(v))
        .unwrap()
}

/// Replace defective parts of the guard by fresh variables until the loop is solvable.
pub fn eliminate_unsolvable(l: &Loop) -> Option<(Loop, Vec<Elimination>)> {
    let mut cur = l.clone();
    let mut elims = Vec::new();
    for _ in 0..MAX_ELIMINATIONS {
        let cls = classify(&cur);
        if cls.is_solvable() {
            return Some((cur, elims));
        }
        let (next, e) = eliminate_once(&cur, &cls.defective)?;
        elims.push(e);
        cur = next.drop_irrelevant();
    }
    classify(&cur).is_solvable().then_some((cur, elims))
}

fn eliminate_once(l: &Loop, defective: &BTreeSet<Var>) -> Option<(Loop, Elimination)> {
    let used: BTreeSet<Var> = l.vars.iter().cloned().collect();
    let x = fresh_var(&used);
    for q in candidate_subpolys(l, defective) {
        if let Some(res) = try_eliminate(l, defective, &q, &x) {
            return Some((
                res,
                Elimination {
                    fresh: x,
                    replaced: q,
                },
            ));
        }
    }
    None
}

/// Parts of guard atoms built only from defective variables, largest first.
fn candidate_subpolys(l: &Loop, defective: &BTreeSet<Var>) -> Vec<QPoly> {
    let mut out: Vec<QPoly> = Vec::new();
    for a in l.guard.atoms() {
        let terms: Vec<(Monomial, Rational)> = a
            .poly()
            .terms()
            .filter(|(m, _)| !m.is_one() && m.vars().all(|v| defective.contains(v)))
            .map(|(m, c)| (m.clone(), c.clone()))
            .collect();
        let k = terms.len().min(8);
        if k == 0 {
            continue;
        }
        let mut subsets: Vec<Vec<usize>> = (1u32..(1 << k))
            .map(|mask| (0..k).filter(|i| mask & (1 << i) != 0).collect())
            .collect();
        subsets.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        for s in subsets {
            let q = QPoly::from_terms(s.iter().map(|&i| terms[i].clone()));
            if !out.contains(&q) {
                out.push(q);
            }
        }
    }
    out
}

fn try_eliminate(l: &Loop, defective: &BTreeSet<Var>, q: &QPoly, x: &Var) -> Option<Loop> {
    // pick a defective variable occurring linearly in q with constant coefficient
    for v in q.vars() {
        let alpha = q.linear_coeff(&v);
        if alpha.is_zero() || q.degree_in(&v) != 1 {
            continue;
        }
        if q.terms().any(|(m, _)| m.degree_in(&v) > 0 && m.degree() > 1) {
            continue;
        }
        // v = (x - (q - alpha*v)) / alpha
        let rest = q - &QPoly::var(v.clone()).scale(&alpha);
        let v_star = (&QPoly::var(x.clone()) - &rest).scale(&(Rational::one() / alpha));
        let mut sub = BTreeMap::new();
        sub.insert(v.clone(), v_star);
        let free_of_defective = |p: &QPoly| p.vars().iter().all(|w| !defective.contains(w));
        let eta_q = l.apply(q).substitute(&sub);
        if !free_of_defective(&eta_q) {
            continue;
        }
        let guard = l.guard.substitute(&sub);
        if !guard.vars().iter().all(|w| !defective.contains(w)) {
            continue;
        }
        let mut update: Update<Rational> = BTreeMap::new();
        let mut ok = true;
        for w in &l.vars {
            if defective.contains(w) {
                continue;
            }
            let img = l.image(w).substitute(&sub);
            if !free_of_defective(&img) {
                ok = false;
                break;
            }
            update.insert(w.clone(), img);
        }
        if !ok {
            continue;
        }
        update.insert(x.clone(), eta_q);
        let vars: Vec<Var> = l
            .vars
            .iter()
            .filter(|w| !defective.contains(*w))
            .cloned()
            .chain(std::iter::once(x.clone()))
            .collect();
        return Some(Loop::new(&vars, guard, update));
    }
    None
}

/// Sign of an integer as `-1, 0, 1`.
pub fn sign(x: &Int) -> i32 {
    if x.is_negative() {
        -1
    } else if x.is_zero() {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, Atom};

    fn v(s: &str) -> QPoly {
        QPoly::var(Var::new(s))
    }

    fn vars(names: &[&str]) -> Vec<Var> {
        names.iter().map(|n| Var::new(n)).collect()
    }

    /// The running example: rotation block, twn tail, non-linear guard.
    pub fn paper_loop() -> Loop {
        let guard = Formula::and(vec![
            Formula::Atom(Atom::gt(&v("x5"), &(&v("x4").pow(2) - &v("x3").pow(5)))),
            Formula::neq(&v("x4"), &QPoly::zero()),
        ]);
        let mut u = Update::new();
        u.insert(Var::new("x1"), &v("x1").scale(&rat(3)) + &v("x2").scale(&rat(2)));
        u.insert(Var::new("x2"), &v("x1").scale(&rat(-5)) - &v("x2").scale(&rat(3)));
        u.insert(Var::new("x4"), v("x4").scale(&rat(-2)));
        u.insert(Var::new("x5"), &v("x5").scale(&rat(3)) + &v("x3").pow(2));
        Loop::new(&vars(&["x1", "x2", "x3", "x4", "x5"]), guard, u)
    }

    #[test]
    fn classify_paper_loop() {
        let l = paper_loop();
        let c = l.classify();
        assert_eq!(c.kind(), LoopKind::Prs);
        assert_eq!(c.period, Some(2));
        let rot = c.blocks.iter().find(|b| b.vars.len() == 2).unwrap();
        assert_eq!(rot.eigenvalue_strings(), vec!["-i", "i"]);
        let reduced = l.drop_irrelevant();
        assert_eq!(reduced.vars, vars(&["x3", "x4", "x5"]));
        assert_eq!(reduced.classify().kind(), LoopKind::Twn);
        assert_eq!(reduced.classify().period, Some(1));
    }

    #[test]
    fn chaining_squares_the_update() {
        let l = paper_loop().drop_irrelevant();
        let c = chain(&l, 2);
        assert_eq!(c.image(&Var::new("x4")), v("x4").scale(&rat(4)));
        assert_eq!(c.classify().kind(), LoopKind::Tnn);
    }

    #[test]
    fn eliminate_defective_pair() {
        let guard = Formula::and(vec![
            Formula::Atom(Atom::gt(
                &(&v("y1").scale(&rat(2)) - &v("y2")),
                &(&v("x4").pow(2) - &v("x3").pow(5)),
            )),
            Formula::neq(&v("x4"), &QPoly::zero()),
        ]);
        let mut u = Update::new();
        u.insert(Var::new("x1"), &v("x1").scale(&rat(3)) + &v("x2").scale(&rat(2)));
        u.insert(Var::new("x2"), &v("x1").scale(&rat(-5)) - &v("x2").scale(&rat(3)));
        u.insert(Var::new("x4"), v("x4").scale(&rat(-2)));
        u.insert(Var::new("y1"), &(&v("y1") + &v("y1").pow(2)) + &v("x3").pow(2));
        u.insert(
            Var::new("y2"),
            &(&(&v("y1").scale(&rat(-4)) + &v("y1").pow(2).scale(&rat(2))) + &v("y2").scale(&rat(3)))
                + &v("x3").pow(2),
        );
        let l = Loop::new(&vars(&["x1", "x2", "x3", "x4", "y1", "y2"]), guard, u);
        assert_eq!(l.classify().kind(), LoopKind::Unsolvable);
        let (m, elims) = eliminate_unsolvable(&l).unwrap();
        assert_eq!(elims.len(), 1);
        assert_eq!(elims[0].fresh, Var::new("x5"));
        assert_eq!(elims[0].replaced.render(), "2*y1 - y2");
        assert_eq!(m.image(&Var::new("x5")).render(), "x3^2 + 3*x5");
        assert!(m.classify().is_solvable());
    }
}
