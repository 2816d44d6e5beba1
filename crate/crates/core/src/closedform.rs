//! Poly-exponential expressions and closed forms of solvable updates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::One;
use thiserror::Error;

use crate::expr::{Atom, Field, GaussianRational, Int, Poly, QPoly, Rational, State, Var};
use crate::linalg::{solve, LinalgError, Matrix, SpectralField};
use crate::loops::{build_automorphism, classify, conjugate_update, lift_update, Loop, Update};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClosedFormError {
    #[error("update of {0} is not triangular weakly non-linear")]
    NotTwn(Var),
    #[error("summation reduction failed")]
    SummationFailed,
    #[error("rational closed form required")]
    RationalRequired,
    #[error("loop is not solvable")]
    Unsolvable,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One summand `coeff * n^a * b^n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeTerm<C: Field> {
    pub coeff: Poly<C>,
    pub a: u32,
    pub b: C,
}

/// Sum of `p_j * n^(a_j) * b_j^n`, valid for `n >= start`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyExp<C: Field> {
    terms: Vec<PeTerm<C>>,
    pub start: u32,
}

fn term_key<C: Field>(t: &PeTerm<C>) -> (Rational, C, u32) {
    (t.b.norm_sq(), t.b.clone(), t.a)
}

impl<C: Field> PolyExp<C> {
    pub fn zero() -> Self {
        PolyExp {
            terms: Vec::new(),
            start: 0,
        }
    }

    pub fn from_terms(terms: Vec<PeTerm<C>>, start: u32) -> Self {
        let mut merged: BTreeMap<(Rational, C, u32), Poly<C>> = BTreeMap::new();
        for t in terms {
            let key = term_key(&t);
            let slot = merged.entry(key).or_insert_with(Poly::zero);
            *slot = &*slot + &t.coeff;
        }
        PolyExp {
            terms: merged
                .into_iter()
                .filter(|(_, p)| !p.is_zero())
                .map(|((_, b, a), coeff)| PeTerm { coeff, a, b })
                .collect(),
            start,
        }
    }

    /// The polynomial `p` as a constant-in-`n` expression.
    pub fn constant(p: Poly<C>) -> Self {
        Self::from_terms(
            vec![PeTerm {
                coeff: p,
                a: 0,
                b: C::one(),
            }],
            0,
        )
    }

    pub fn terms(&self) -> &[PeTerm<C>] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut t = self.terms.clone();
        t.extend(o.terms.iter().cloned());
        Self::from_terms(t, self.start.max(o.start))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut t = Vec::new();
        for x in &self.terms {
            for y in &o.terms {
                t.push(PeTerm {
                    coeff: &x.coeff * &y.coeff,
                    a: x.a + y.a,
                    b: x.b.clone() * y.b.clone(),
                });
            }
        }
        Self::from_terms(t, self.start.max(o.start))
    }

    pub fn scale(&self, c: &C) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| PeTerm {
                    coeff: t.coeff.scale(c),
                    a: t.a,
                    b: t.b.clone(),
                })
                .collect(),
            self.start,
        )
    }

    pub fn pow(&self, mut e: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Self::constant(Poly::one());
        acc.start = self.start;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// `p[v := f(v)]`, keeping variables without an image as constants.
    pub fn from_poly(p: &Poly<C>, f: &dyn Fn(&Var) -> Option<PolyExp<C>>) -> Self {
        let mut acc = Self::zero();
        for (m, c) in p.terms() {
            let mut prod = Self::constant(Poly::constant(c.clone()));
            for (v, e) in m.pairs() {
                let base = f(v).unwrap_or_else(|| Self::constant(Poly::var(v.clone())));
                prod = prod.mul(&base.pow(*e));
            }
            acc = acc.add(&prod);
        }
        acc
    }

    /// Apply `f` to every coefficient polynomial.
    pub fn map_coeffs<D: Field>(&self, f: &dyn Fn(&Poly<C>) -> Poly<D>, base: &dyn Fn(&C) -> D) -> PolyExp<D> {
        PolyExp::from_terms(
            self.terms
                .iter()
                .map(|t| PeTerm {
                    coeff: f(&t.coeff),
                    a: t.a,
                    b: base(&t.b),
                })
                .collect(),
            self.start,
        )
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.terms.iter().flat_map(|t| t.coeff.vars()).collect()
    }

    pub fn eval(&self, s: &State, n: u32) -> Result<C, crate::expr::ExprError> {
        let mut acc = C::zero();
        let nn = C::from_i64(n as i64);
        for t in &self.terms {
            let c = t.coeff.eval_with(&|v| s.get(v).map(|x| C::from_rat(Rational::from_integer(x.clone()))))?;
            acc = acc + c * nn.pow(t.a) * t.b.pow(n);
        }
        Ok(acc)
    }

    /// Evaluate at a fixed `n`, leaving a polynomial in the program variables.
    pub fn at(&self, n: u32) -> Poly<C> {
        let nn = C::from_i64(n as i64);
        self.terms.iter().fold(Poly::zero(), |acc, t| {
            &acc + &t.coeff.scale(&(nn.pow(t.a) * t.b.pow(n)))
        })
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (i, t) in self.terms.iter().rev().enumerate() {
            let mut factors = Vec::new();
            if t.a > 0 {
                factors.push(if t.a == 1 { "n".to_string() } else { format!("n^{}", t.a) });
            }
            if !t.b.is_one() {
                let b = t.b.render();
                let wrap = t.b.is_compound() || b.starts_with('-') || b.contains('/');
                factors.push(if wrap { format!("({b})^n") } else { format!("{b}^n") });
            }
            let cs = t.coeff.render();
            let part = if factors.is_empty() {
                cs
            } else if t.coeff == Poly::one() {
                factors.join("*")
            } else if t.coeff.num_terms() == 1 && !cs.contains(['+', ' ']) {
                format!("{cs}*{}", factors.join("*"))
            } else {
                format!("({cs})*{}", factors.join("*"))
            };
            if i == 0 {
                out.push_str(&part);
            } else if let Some(rest) = part.strip_prefix('-') {
                out.push_str(" - ");
                out.push_str(rest);
            } else {
                out.push_str(" + ");
                out.push_str(&part);
            }
        }
        out
    }
}

impl<C: Field> fmt::Display for PolyExp<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl PolyExp<GaussianRational> {
    pub fn to_rational(&self) -> Result<PolyExp<Rational>, ClosedFormError> {
        let mut terms = Vec::new();
        for t in &self.terms {
            let b = t.b.to_rat().ok_or(ClosedFormError::RationalRequired)?;
            let coeff = t.coeff.to_rational().ok_or(ClosedFormError::RationalRequired)?;
            terms.push(PeTerm { coeff, a: t.a, b });
        }
        Ok(PolyExp::from_terms(terms, self.start))
    }
}

impl PolyExp<Rational> {
    pub fn to_gaussian(&self) -> PolyExp<GaussianRational> {
        self.map_coeffs(&|p| p.to_gaussian(), &|b| GaussianRational::from_rat(b.clone()))
    }
}

/// Closed forms of all loop variables with a common start value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosedForm<C: Field> {
    pub forms: BTreeMap<Var, PolyExp<C>>,
    pub start: u32,
}

impl<C: Field> ClosedForm<C> {
    pub fn get(&self, v: &Var) -> PolyExp<C> {
        self.forms
            .get(v)
            .cloned()
            .unwrap_or_else(|| PolyExp::constant(Poly::var(v.clone())))
    }

    /// `p[x := cl(x)]`.
    pub fn apply(&self, p: &Poly<C>) -> PolyExp<C> {
        let mut r = PolyExp::from_poly(p, &|v| self.forms.get(v).cloned());
        r.start = self.start;
        r
    }
}

impl ClosedForm<GaussianRational> {
    pub fn to_rational(&self) -> Result<ClosedForm<Rational>, ClosedFormError> {
        Ok(ClosedForm {
            forms: self
                .forms
                .iter()
                .map(|(v, p)| Ok((v.clone(), p.to_rational()?)))
                .collect::<Result<_, ClosedFormError>>()?,
            start: self.start,
        })
    }
}

/// Split `eta(x) = c*x + p` with `p` free of `x`.
fn split_twn<C: Field>(x: &Var, img: &Poly<C>) -> Option<(C, Poly<C>)> {
    let mut c = C::zero();
    let mut rest = Poly::zero();
    for (m, k) in img.terms() {
        let d = m.degree_in(x);
        if d == 0 {
            rest.add_term(m.clone(), k.clone());
        } else if d == 1 && m.degree() == 1 {
            c = k.clone();
        } else {
            return None;
        }
    }
    Some((c, rest))
}

/// Exact iterates `eta^k` of an update, computed on demand.
struct Iterates<C: Field> {
    update: Update<C>,
    seq: Vec<Update<C>>,
}

impl<C: Field> Iterates<C> {
    fn new(vars: &[Var], update: &Update<C>) -> Self {
        let id: Update<C> = vars.iter().map(|v| (v.clone(), Poly::var(v.clone()))).collect();
        let mut full = id.clone();
        for (v, p) in update {
            full.insert(v.clone(), p.clone());
        }
        Iterates {
            update: full,
            seq: vec![id],
        }
    }

    fn get(&mut self, k: usize, v: &Var) -> Poly<C> {
        while self.seq.len() <= k {
            let last = self.seq.last().unwrap();
            let next = last
                .iter()
                .map(|(w, p)| (w.clone(), p.substitute(&self.update)))
                .collect();
            self.seq.push(next);
        }
        self.seq[k].get(v).cloned().unwrap_or_else(|| Poly::var(v.clone()))
    }
}

/// Closed form of a triangular weakly non-linear update.
pub fn closed_form_twn<C: Field>(vars: &[Var], update: &Update<C>) -> Result<ClosedForm<C>, ClosedFormError> {
    let image = |v: &Var| update.get(v).cloned().unwrap_or_else(|| Poly::var(v.clone()));
    let mut split: BTreeMap<Var, (C, Poly<C>)> = BTreeMap::new();
    for v in vars {
        let s = split_twn(v, &image(v)).ok_or_else(|| ClosedFormError::NotTwn(v.clone()))?;
        split.insert(v.clone(), s);
    }
    // triangular order
    let mut order: Vec<Var> = Vec::new();
    let mut done: BTreeSet<Var> = BTreeSet::new();
    while order.len() < vars.len() {
        let next = vars.iter().find(|v| {
            !done.contains(*v) && split[*v].1.vars().iter().all(|w| done.contains(w) || !split.contains_key(w))
        });
        let Some(v) = next else {
            let v = vars.iter().find(|v| !done.contains(*v)).unwrap();
            return Err(ClosedFormError::NotTwn(v.clone()));
        };
        done.insert(v.clone());
        order.push(v.clone());
    }

    let mut iters = Iterates::new(vars, update);
    let mut forms: BTreeMap<Var, PolyExp<C>> = BTreeMap::new();
    let mut start = 0u32;
    for v in &order {
        let (c, p) = &split[v];
        let tail = PolyExp::from_poly(p, &|w| forms.get(w).cloned());
        let m0 = tail.start.max(if p.is_zero() { 0 } else { start_of(&forms, p) });
        let s = if c.is_zero() { m0 + 1 } else { m0 };
        let basis = summation_basis(c, &tail);
        let pe = fit(v, &basis, s, &mut iters)?;
        start = start.max(s);
        forms.insert(v.clone(), pe);
    }
    Ok(ClosedForm { forms, start })
}

fn start_of<C: Field>(forms: &BTreeMap<Var, PolyExp<C>>, p: &Poly<C>) -> u32 {
    p.vars().iter().filter_map(|w| forms.get(w)).map(|f| f.start).max().unwrap_or(0)
}

/// Candidate `(a, b)` pairs for `sum_{i<n} c^(n-1-i) * tail(i)`.
fn summation_basis<C: Field>(c: &C, tail: &PolyExp<C>) -> Vec<(u32, C)> {
    let mut deg: BTreeMap<C, u32> = BTreeMap::new();
    for t in tail.terms() {
        let d = deg.entry(t.b.clone()).or_insert(0);
        *d = (*d).max(t.a);
    }
    let mut out: Vec<(u32, C)> = Vec::new();
    if !c.is_zero() {
        out.push((0, c.clone()));
    }
    for (b, a) in deg {
        let top = if &b == c { a + 1 } else { a };
        for k in 0..=top {
            if !out.contains(&(k, b.clone())) {
                out.push((k, b.clone()));
            }
        }
    }
    out
}

fn fit<C: Field>(
    v: &Var,
    basis: &[(u32, C)],
    s: u32,
    iters: &mut Iterates<C>,
) -> Result<PolyExp<C>, ClosedFormError> {
    let u = basis.len();
    if u == 0 {
        return Ok(PolyExp {
            terms: Vec::new(),
            start: s,
        });
    }
    let row = |n: u32| -> Vec<C> {
        let nn = C::from_i64(n as i64);
        basis.iter().map(|(a, b)| nn.pow(*a) * b.pow(n)).collect()
    };
    let m = Matrix::from_rows((0..u).map(|i| row(s + i as u32)).collect());
    let rhs: Vec<Poly<C>> = (0..u).map(|i| iters.get(s as usize + i, v)).collect();
    let coeffs = solve(&m, &rhs, Poly::zero(), |acc, k, p| acc + &p.scale(k))
        .map_err(|_| ClosedFormError::SummationFailed)?;
    let pe = PolyExp::from_terms(
        basis
            .iter()
            .zip(coeffs)
            .map(|((a, b), coeff)| PeTerm {
                coeff,
                a: *a,
                b: b.clone(),
            })
            .collect(),
        s,
    );
    for n in (s + u as u32)..(s + 3 * u as u32) {
        if pe.at(n) != iters.get(n as usize, v) {
            return Err(ClosedFormError::SummationFailed);
        }
    }
    Ok(pe)
}

/// Closed form of a solvable loop over `C` via blockwise Jordan conjugation.
pub fn closed_form_solvable<C: SpectralField>(l: &Loop) -> Result<ClosedForm<C>, ClosedFormError> {
    let cls = classify(l);
    if !cls.is_solvable() {
        return Err(ClosedFormError::Unsolvable);
    }
    let aut = build_automorphism::<C>(l, &cls)?;
    let lifted: Update<C> = lift_update(&l.full_update());
    let conj = conjugate_update(&lifted, &l.vars, &aut);
    let cl_t = closed_form_twn(&l.vars, &conj)?;
    let mut forms = BTreeMap::new();
    for v in &l.vars {
        let inv = aut.apply_inverse(&Poly::var(v.clone()));
        let pe = cl_t.apply(&inv);
        forms.insert(v.clone(), pe.map_coeffs(&|p| aut.apply(p), &|b| b.clone()));
    }
    Ok(ClosedForm {
        forms,
        start: cl_t.start,
    })
}

/// Rational closed form for loops whose spectrum is integral, Gaussian otherwise.
pub fn closed_form(l: &Loop) -> Result<ClosedForm<GaussianRational>, ClosedFormError> {
    match closed_form_solvable::<Rational>(l) {
        Ok(cf) => Ok(ClosedForm {
            forms: cf.forms.iter().map(|(v, p)| (v.clone(), p.to_gaussian())).collect(),
            start: cf.start,
        }),
        Err(_) => closed_form_solvable::<GaussianRational>(l),
    }
}

/// Guard atoms with closed forms substituted and denominators cleared.
pub fn guard_pe(l: &Loop, cl: &ClosedForm<Rational>) -> Vec<(Atom, PolyExp<Rational>)> {
    l.guard
        .atoms()
        .into_iter()
        .map(|a| (a.clone(), integral_pe(&cl.apply(a.poly()))))
        .collect()
}

/// Scale by the positive lcm of all coefficient denominators.
pub fn integral_pe(pe: &PolyExp<Rational>) -> PolyExp<Rational> {
    use num_integer::Integer;
    let mut l = Int::one();
    for t in pe.terms() {
        l = l.lcm(&t.coeff.denominator_lcm());
    }
    pe.scale(&Rational::from_integer(l))
}

/// Clear denominators of a rational polynomial in place of a closed-form summand.
pub fn integral_poly(p: &QPoly) -> QPoly {
    p.scale(&Rational::from_integer(p.denominator_lcm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, Formula};

    fn v(s: &str) -> QPoly {
        QPoly::var(Var::new(s))
    }

    fn vars(names: &[&str]) -> Vec<Var> {
        names.iter().map(|n| Var::new(n)).collect()
    }

    fn paper_loop() -> Loop {
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
    fn twn_tail() {
        let l = paper_loop().drop_irrelevant();
        let cl = closed_form_solvable::<Rational>(&l).unwrap();
        assert_eq!(cl.get(&Var::new("x5")).render(), "(1/2*x3^2 + x5)*3^n - 1/2*x3^2");
        assert_eq!(cl.get(&Var::new("x4")).render(), "x4*(-2)^n");
        assert_eq!(cl.start, 0);
    }

    #[test]
    fn gaussian_rotation() {
        let l = paper_loop();
        let cl = closed_form_solvable::<GaussianRational>(&l).unwrap();
        let x1 = cl.get(&Var::new("x1"));
        let bases: Vec<String> = x1.terms().iter().map(|t| t.b.render()).collect();
        assert_eq!(bases, vec!["-i", "i"]);
        let mut s = State::new();
        for (k, name) in ["x1", "x2", "x3", "x4", "x5"].iter().enumerate() {
            s.insert(Var::new(name), Int::from(k as i64 * 3 - 4));
        }
        let mut cur = s.clone();
        for n in 0..8u32 {
            for w in &l.vars {
                let got = cl.get(w).eval(&s, n).unwrap();
                assert_eq!(got, GaussianRational::from_rat(Rational::from_integer(cur[w].clone())));
            }
            cur = l
                .vars
                .iter()
                .map(|w| (w.clone(), l.image(w).eval_int(&cur).unwrap()))
                .collect();
        }
    }

    #[test]
    fn zero_coefficient_shifts_start() {
        let mut u = Update::new();
        u.insert(Var::new("x"), v("y").pow(2));
        u.insert(Var::new("y"), &v("y").scale(&rat(2)) + &QPoly::one());
        let cl = closed_form_twn(&vars(&["x", "y"]), &u).unwrap();
        assert_eq!(cl.start, 1);
        let x = cl.get(&Var::new("x"));
        let mut s = State::new();
        s.insert(Var::new("x"), Int::from(7));
        s.insert(Var::new("y"), Int::from(3));
        // y_n = 4*2^n - 1, x_n = y_(n-1)^2
        assert_eq!(x.eval(&s, 1).unwrap(), rat(9));
        assert_eq!(x.eval(&s, 3).unwrap(), rat(15 * 15));
    }

    #[test]
    fn guard_pe_of_chained_loop() {
        let l = crate::loops::chain(&paper_loop().drop_irrelevant(), 2);
        let cl = closed_form_solvable::<Rational>(&l).unwrap();
        let pes = guard_pe(&l, &cl);
        let rendered: Vec<String> = pes.iter().map(|(_, p)| p.render()).collect();
        assert!(rendered.contains(&"-2*x4^2*16^n + (x3^2 + 2*x5)*9^n - x3^2 + 2*x3^5".to_string()), "{rendered:?}");
        assert!(rendered.contains(&"x4*4^n".to_string()));
        assert!(rendered.contains(&"-x4*4^n".to_string()));
    }
}
