//! Bound expressions: weakly monotone functions over non-negative variables.
//!
//! Evaluation uses outward-rounded interval arithmetic, so a bound that is
//! reported to hold at a state does hold for the exact real value.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::{rat, Int, Monomial, Rational, State, Var};

/// Working precision (fractional bits) of interval evaluation.
pub const DEFAULT_PRECISION: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundError {
    #[error("unbound variable `{0}` in bound")]
    Unbound(Var),
    #[error("bound syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
}

/// Finite sum `q_1*sqrt(r_1) + ... ` with squarefree radicands `r_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Surd {
    terms: BTreeMap<Int, Rational>,
}

impl Surd {
    pub fn zero() -> Surd {
        Surd::default()
    }

    pub fn one() -> Surd {
        Surd::from_rational(Rational::one())
    }

    pub fn from_i64(n: i64) -> Surd {
        Surd::from_rational(rat(n))
    }

    pub fn from_rational(r: Rational) -> Surd {
        let mut s = Surd::zero();
        s.add_term(Int::one(), r);
        s
    }

    fn add_term(&mut self, radicand: Int, q: Rational) {
        if q.is_zero() {
            return;
        }
        let e = self.terms.entry(radicand.clone()).or_insert_with(Rational::zero);
        *e += q;
        if e.is_zero() {
            self.terms.remove(&radicand);
        }
    }

    /// Exact square root of a non-negative rational.
    pub fn sqrt_of(r: &Rational) -> Surd {
        assert!(!r.is_negative(), "square root of a negative number");
        if r.is_zero() {
            return Surd::zero();
        }
        let n = r.numer() * r.denom();
        let (s, f) = squarefree_split(&n);
        let mut out = Surd::zero();
        out.add_term(f, Rational::new(s, r.denom().clone()));
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.to_rational().is_some_and(|r| r.is_one())
    }

    pub fn to_rational(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&Int::one()).cloned(),
            _ => None,
        }
    }

    pub fn add(&self, o: &Surd) -> Surd {
        let mut out = self.clone();
        for (r, q) in &o.terms {
            out.add_term(r.clone(), q.clone());
        }
        out
    }

    pub fn sub(&self, o: &Surd) -> Surd {
        let mut out = self.clone();
        for (r, q) in &o.terms {
            out.add_term(r.clone(), -q.clone());
        }
        out
    }

    pub fn mul(&self, o: &Surd) -> Surd {
        let mut out = Surd::zero();
        for (r1, q1) in &self.terms {
            for (r2, q2) in &o.terms {
                let g = r1.gcd(r2);
                let rad = (r1 / &g) * (r2 / &g);
                out.add_term(rad, q1 * q2 * Rational::from_integer(g));
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Surd {
        (0..k).fold(Surd::one(), |acc, _| acc.mul(self))
    }

    /// Enclosing interval with `prec` fractional bits.
    pub fn interval(&self, prec: u32) -> (Rational, Rational) {
        let mut lo = Rational::zero();
        let mut hi = Rational::zero();
        for (r, q) in &self.terms {
            if r.is_one() {
                lo += q;
                hi += q;
                continue;
            }
            let scale = Int::one() << prec;
            let s = (r * &scale * &scale).sqrt();
            let (sl, sh) = (
                Rational::new(s.clone(), scale.clone()),
                Rational::new(s + 1, scale),
            );
            if q.is_negative() {
                lo += q * &sh;
                hi += q * &sl;
            } else {
                lo += q * &sl;
                hi += q * &sh;
            }
        }
        (lo, hi)
    }

    pub fn signum(&self) -> Ordering {
        if self.is_zero() {
            return Ordering::Equal;
        }
        let mut prec = 32;
        loop {
            let (lo, hi) = self.interval(prec);
            if lo.is_positive() {
                return Ordering::Greater;
            }
            if hi.is_negative() {
                return Ordering::Less;
            }
            // Non-zero surds are separated from 0 at some finite precision.
            prec *= 2;
            if prec > 1 << 14 {
                return Ordering::Equal;
            }
        }
    }

    pub fn cmp_value(&self, o: &Surd) -> Ordering {
        self.sub(o).signum()
    }

    /// Least integer not below the value.
    pub fn ceil(&self) -> Int {
        if let Some(r) = self.to_rational() {
            return r.ceil().to_integer();
        }
        let (_, hi) = self.interval(64);
        let c = hi.ceil().to_integer();
        let cand: Int = &c - Int::one();
        if self.cmp_value(&Surd::from_rational(Rational::from_integer(cand.clone())))
            != Ordering::Greater
        {
            cand
        } else {
            c
        }
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        let mut entries: Vec<(&Int, &Rational)> = self.terms.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        for (r, q) in entries {
            let s = if r.is_one() {
                q.to_string()
            } else if q.is_one() {
                format!("sqrt({r})")
            } else if (-q).is_one() {
                format!("-sqrt({r})")
            } else {
                format!("{q}*sqrt({r})")
            };
            parts.push(s);
        }
        if parts.is_empty() {
            return "0".into();
        }
        parts.join(" + ").replace("+ -", "- ")
    }

    fn is_compound(&self) -> bool {
        self.terms.len() > 1
    }
}

impl fmt::Display for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// `n = s^2 * f`; `f` is squarefree when `n` has no prime factor above the trial limit squared.
fn squarefree_split(n: &Int) -> (Int, Int) {
    let mut n = n.clone();
    let mut s = Int::one();
    let mut f = Int::one();
    let mut p = Int::from(2u32);
    let limit = Int::from(1_000_000u32);
    while &p * &p <= n && p <= limit {
        let mut e = 0u32;
        while (&n % &p).is_zero() {
            n /= &p;
            e += 1;
        }
        for _ in 0..e / 2 {
            s *= &p;
        }
        if e % 2 == 1 {
            f *= &p;
        }
        p += if p == Int::from(2u32) { 1u32 } else { 2u32 };
    }
    let r = n.sqrt();
    if &r * &r == n {
        s *= r;
    } else {
        f *= n;
    }
    (s, f)
}

/// Asymptotic class `n^poly * log(n)^log`, exponential, or unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoundClass {
    Finite { poly: u32, log: u32 },
    Exp,
    Omega,
}

impl BoundClass {
    pub const CONST: BoundClass = BoundClass::Finite { poly: 0, log: 0 };

    pub fn poly(d: u32) -> BoundClass {
        BoundClass::Finite { poly: d, log: 0 }
    }

    pub fn log(k: u32) -> BoundClass {
        BoundClass::Finite { poly: 0, log: k }
    }

    pub fn polylog(d: u32, k: u32) -> BoundClass {
        BoundClass::Finite { poly: d, log: k }
    }

    fn add(self, o: BoundClass) -> BoundClass {
        match (self, o) {
            (BoundClass::Omega, _) | (_, BoundClass::Omega) => BoundClass::Omega,
            (BoundClass::Exp, _) | (_, BoundClass::Exp) => BoundClass::Exp,
            (
                BoundClass::Finite { poly: a, log: b },
                BoundClass::Finite { poly: c, log: d },
            ) => BoundClass::Finite {
                poly: a + c,
                log: b + d,
            },
        }
    }

    fn scale(self, k: u32) -> BoundClass {
        match self {
            BoundClass::Finite { poly, log } => BoundClass::Finite {
                poly: poly * k,
                log: log * k,
            },
            c if k == 0 => {
                let _ = c;
                BoundClass::CONST
            }
            c => c,
        }
    }

    pub fn is_exp_or_omega(self) -> bool {
        matches!(self, BoundClass::Exp | BoundClass::Omega)
    }
}

impl fmt::Display for BoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BoundClass::Omega => f.write_str("unbounded"),
            BoundClass::Exp => f.write_str("O(EXP)"),
            BoundClass::Finite { poly: 0, log: 0 } => f.write_str("O(1)"),
            BoundClass::Finite { poly, log } => {
                let mut parts = Vec::new();
                match poly {
                    0 => {}
                    1 => parts.push("n".to_string()),
                    d => parts.push(format!("n^{d}")),
                }
                match log {
                    0 => {}
                    1 => parts.push("log(n)".to_string()),
                    k => parts.push(format!("log(n)^{k}")),
                }
                write!(f, "O({})", parts.join("*"))
            }
        }
    }
}

/// Symbolic bound over non-negative variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    Const(Surd),
    Omega,
    Var(Var),
    Sum(Vec<Bound>),
    Product(Vec<Bound>),
    Pow(Box<Bound>, u32),
    /// `base^arg` with a rational base of at least 1.
    Exp(Rational, Box<Bound>),
    /// `log_base(max{1, arg})` with a rational base above 1.
    Log(Rational, Box<Bound>),
    Max(Vec<Bound>),
}

/// Serialized as its rendered text.
impl serde::Serialize for Bound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl Default for Bound {
    fn default() -> Self {
        Bound::zero()
    }
}

impl Bound {
    pub fn zero() -> Bound {
        Bound::Const(Surd::zero())
    }

    pub fn one() -> Bound {
        Bound::Const(Surd::one())
    }

    pub fn int(n: i64) -> Bound {
        Bound::Const(Surd::from_i64(n))
    }

    pub fn rational(r: Rational) -> Bound {
        Bound::Const(Surd::from_rational(r))
    }

    pub fn var(v: &Var) -> Bound {
        Bound::Var(v.clone())
    }

    pub fn sum(parts: Vec<Bound>) -> Bound {
        Bound::Sum(parts).simplify()
    }

    pub fn product(parts: Vec<Bound>) -> Bound {
        Bound::Product(parts).simplify()
    }

    pub fn max(parts: Vec<Bound>) -> Bound {
        Bound::Max(parts).simplify()
    }

    pub fn pow(b: Bound, k: u32) -> Bound {
        Bound::Pow(Box::new(b), k).simplify()
    }

    pub fn exp(base: Rational, arg: Bound) -> Bound {
        Bound::Exp(base, Box::new(arg)).simplify()
    }

    pub fn log(base: Rational, arg: Bound) -> Bound {
        Bound::Log(base, Box::new(arg)).simplify()
    }

    /// `c * m` for a surd coefficient and a monomial.
    pub fn scaled_monomial(c: Surd, m: &Monomial) -> Bound {
        let mut fs = vec![Bound::Const(c)];
        for (v, e) in m.pairs() {
            fs.push(if *e == 1 {
                Bound::Var(v.clone())
            } else {
                Bound::Pow(Box::new(Bound::Var(v.clone())), *e)
            });
        }
        Bound::Product(fs)
    }

    /// Multiplies out polynomial subterms into sums of monomials.
    pub fn expand_polynomials(&self) -> Bound {
        if let Some(terms) = self.as_polynomial() {
            let parts = terms.iter().map(|(m, c)| Bound::scaled_monomial(c.clone(), m)).collect();
            return Bound::sum(parts);
        }
        match self {
            Bound::Sum(xs) => Bound::sum(xs.iter().map(Bound::expand_polynomials).collect()),
            Bound::Product(xs) => Bound::product(xs.iter().map(Bound::expand_polynomials).collect()),
            Bound::Max(xs) => Bound::max(xs.iter().map(Bound::expand_polynomials).collect()),
            Bound::Pow(b, k) => Bound::pow(b.expand_polynomials(), *k),
            Bound::Exp(base, b) => Bound::exp(base.clone(), b.expand_polynomials()),
            Bound::Log(base, b) => Bound::log(base.clone(), b.expand_polynomials()),
            b => b.clone(),
        }
    }

    fn as_polynomial(&self) -> Option<BTreeMap<Monomial, Surd>> {
        fn mul(a: &BTreeMap<Monomial, Surd>, b: &BTreeMap<Monomial, Surd>) -> BTreeMap<Monomial, Surd> {
            let mut out: BTreeMap<Monomial, Surd> = BTreeMap::new();
            for (ma, ca) in a {
                for (mb, cb) in b {
                    let e = out.entry(ma.mul(mb)).or_insert_with(Surd::zero);
                    *e = e.add(&ca.mul(cb));
                }
            }
            out.retain(|_, c| !c.is_zero());
            out
        }
        match self {
            Bound::Const(c) => Some([(Monomial::one(), c.clone())].into_iter().collect()),
            Bound::Var(v) => Some([(Monomial::var(v.clone()), Surd::one())].into_iter().collect()),
            Bound::Sum(xs) => {
                let mut out: BTreeMap<Monomial, Surd> = BTreeMap::new();
                for x in xs {
                    for (m, c) in x.as_polynomial()? {
                        let e = out.entry(m).or_insert_with(Surd::zero);
                        *e = e.add(&c);
                    }
                }
                Some(out)
            }
            Bound::Product(xs) => {
                let mut acc = Bound::one().as_polynomial()?;
                for x in xs {
                    acc = mul(&acc, &x.as_polynomial()?);
                }
                Some(acc)
            }
            Bound::Pow(b, k) => {
                let base = b.as_polynomial()?;
                let mut acc = Bound::one().as_polynomial()?;
                for _ in 0..*k {
                    acc = mul(&acc, &base);
                }
                Some(acc)
            }
            _ => None,
        }
    }

    pub fn is_omega(&self) -> bool {
        matches!(self, Bound::Omega)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Bound::Const(c) if c.is_zero())
    }

    pub fn as_const(&self) -> Option<&Surd> {
        match self {
            Bound::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Bound::Const(_) | Bound::Omega => {}
            Bound::Var(v) => {
                out.insert(v.clone());
            }
            Bound::Sum(xs) | Bound::Product(xs) | Bound::Max(xs) => {
                xs.iter().for_each(|x| x.collect_vars(out))
            }
            Bound::Pow(b, _) | Bound::Exp(_, b) | Bound::Log(_, b) => b.collect_vars(out),
        }
    }

    pub fn contains_var(&self, v: &Var) -> bool {
        self.vars().contains(v)
    }

    /// Replace variables; unmapped variables are kept. Result is simplified.
    pub fn subst(&self, f: &dyn Fn(&Var) -> Option<Bound>) -> Bound {
        self.subst_raw(f).simplify()
    }

    pub fn subst_map(&self, map: &BTreeMap<Var, Bound>) -> Bound {
        self.subst(&|v| map.get(v).cloned())
    }

    fn subst_raw(&self, f: &dyn Fn(&Var) -> Option<Bound>) -> Bound {
        match self {
            Bound::Const(_) | Bound::Omega => self.clone(),
            Bound::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Bound::Sum(xs) => Bound::Sum(xs.iter().map(|x| x.subst_raw(f)).collect()),
            Bound::Product(xs) => Bound::Product(xs.iter().map(|x| x.subst_raw(f)).collect()),
            Bound::Max(xs) => Bound::Max(xs.iter().map(|x| x.subst_raw(f)).collect()),
            Bound::Pow(b, k) => Bound::Pow(Box::new(b.subst_raw(f)), *k),
            Bound::Exp(k, b) => Bound::Exp(k.clone(), Box::new(b.subst_raw(f))),
            Bound::Log(k, b) => Bound::Log(k.clone(), Box::new(b.subst_raw(f))),
        }
    }

    /// Enclosure of the value at `|s|`.
    pub fn eval(&self, s: &State, prec: u32) -> Result<Interval, BoundError> {
        let w = prec.max(8) + 16;
        self.eval_w(s, w)
    }

    fn eval_w(&self, s: &State, w: u32) -> Result<Interval, BoundError> {
        Ok(match self {
            Bound::Omega => Interval::omega(),
            Bound::Const(c) => {
                let (lo, hi) = c.interval(w);
                Interval::new(Ext::Fin(lo.max(Rational::zero())), Ext::Fin(hi)).round(w)
            }
            Bound::Var(v) => {
                let x = s.get(v).ok_or_else(|| BoundError::Unbound(v.clone()))?;
                let r = Rational::from_integer(x.abs());
                Interval::point(r)
            }
            Bound::Sum(xs) => {
                let mut acc = Interval::point(Rational::zero());
                for x in xs {
                    acc = acc.add(&x.eval_w(s, w)?).round(w);
                }
                acc
            }
            Bound::Product(xs) => {
                let mut acc = Interval::point(Rational::one());
                for x in xs {
                    acc = acc.mul(&x.eval_w(s, w)?).round(w);
                }
                acc
            }
            Bound::Max(xs) => {
                let mut acc = Interval::point(Rational::zero());
                for x in xs {
                    acc = acc.max(&x.eval_w(s, w)?);
                }
                acc
            }
            Bound::Pow(b, k) => b.eval_w(s, w)?.pow(*k).round(w),
            Bound::Log(k, b) => b.eval_w(s, w)?.log(k, w).round(w),
            Bound::Exp(k, b) => b.eval_w(s, w)?.exp(k, w).round(w),
        })
    }

    /// Certified check `value <= bound(|s|)` for an integer `value`.
    pub fn admits(&self, value: &Int, s: &State) -> Result<bool, BoundError> {
        let iv = self.eval(s, DEFAULT_PRECISION)?;
        let v = Rational::from_integer(value.abs());
        if Ext::Fin(v.clone()) <= iv.lo {
            return Ok(true);
        }
        if iv.hi < Ext::Fin(v.clone()) {
            return Ok(false);
        }
        let iv = self.eval(s, 512)?;
        Ok(Ext::Fin(v) <= iv.hi)
    }

    pub fn eval_f64(&self, s: &State) -> Result<f64, BoundError> {
        let iv = self.eval(s, DEFAULT_PRECISION)?;
        Ok(match iv.hi {
            Ext::Inf => f64::INFINITY,
            Ext::Fin(r) => r.to_f64().unwrap_or(f64::INFINITY),
        })
    }

    /// Asymptotic class of the bound in terms of the input size.
    pub fn classify(&self) -> BoundClass {
        self.simplify().class_raw()
    }

    fn class_raw(&self) -> BoundClass {
        match self {
            Bound::Const(_) => BoundClass::CONST,
            Bound::Omega => BoundClass::Omega,
            Bound::Var(_) => BoundClass::poly(1),
            Bound::Sum(xs) | Bound::Max(xs) => xs
                .iter()
                .map(Bound::class_raw)
                .max()
                .unwrap_or(BoundClass::CONST),
            Bound::Product(xs) => xs
                .iter()
                .fold(BoundClass::CONST, |acc, x| acc.add(x.class_raw())),
            Bound::Pow(b, k) => b.class_raw().scale(*k),
            Bound::Log(_, a) => match a.as_ref() {
                Bound::Exp(_, e) => e.class_raw(),
                _ => match a.class_raw() {
                    BoundClass::Finite { poly: 0, log: 0 } => BoundClass::CONST,
                    BoundClass::Finite { .. } => BoundClass::log(1),
                    c => c,
                },
            },
            Bound::Exp(_, e) => match e.class_raw() {
                BoundClass::Finite { poly: 0, log: 0 } => BoundClass::CONST,
                BoundClass::Omega => BoundClass::Omega,
                _ => {
                    let collapsed = collapse_exponents(self);
                    if &collapsed != self && !contains_exp(&collapsed) {
                        collapsed.class_raw()
                    } else {
                        BoundClass::Exp
                    }
                }
            },
        }
    }

    /// Semantics-preserving normalization.
    pub fn simplify(&self) -> Bound {
        match self {
            Bound::Const(_) | Bound::Omega | Bound::Var(_) => self.clone(),
            Bound::Sum(xs) => simplify_sum(xs.iter().map(Bound::simplify).collect()),
            Bound::Product(xs) => simplify_product(xs.iter().map(Bound::simplify).collect()),
            Bound::Max(xs) => simplify_max(xs.iter().map(Bound::simplify).collect()),
            Bound::Pow(b, k) => simplify_pow(b.simplify(), *k),
            Bound::Exp(k, e) => simplify_exp(k.clone(), e.simplify()),
            Bound::Log(k, a) => simplify_log(k.clone(), a.simplify()),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s, 0);
        s
    }

    // 0: sum level, 1: product level, 2: power base level
    fn write(&self, out: &mut String, prec: u8) {
        match self {
            Bound::Const(c) => {
                let paren = (prec >= 1 && c.is_compound())
                    || (prec >= 2 && c.to_rational().is_some_and(|r| !r.is_integer()));
                if paren {
                    out.push('(');
                }
                out.push_str(&c.render());
                if paren {
                    out.push(')');
                }
            }
            Bound::Omega => out.push_str("omega"),
            Bound::Var(v) => out.push_str(v.name()),
            Bound::Sum(xs) => {
                if xs.is_empty() {
                    out.push('0');
                    return;
                }
                if prec >= 1 {
                    out.push('(');
                }
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" + ");
                    }
                    x.write(out, 0);
                }
                if prec >= 1 {
                    out.push(')');
                }
            }
            Bound::Product(xs) => {
                if xs.is_empty() {
                    out.push('1');
                    return;
                }
                if prec >= 2 {
                    out.push('(');
                }
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push('*');
                    }
                    x.write(out, 1);
                }
                if prec >= 2 {
                    out.push(')');
                }
            }
            Bound::Pow(b, k) => {
                b.write(out, 2);
                out.push_str(&format!("^{k}"));
            }
            Bound::Exp(k, e) => {
                if prec >= 2 {
                    out.push('(');
                }
                if k.is_integer() {
                    out.push_str(&k.to_string());
                } else {
                    out.push_str(&format!("({k})"));
                }
                out.push('^');
                match e.as_ref() {
                    Bound::Var(_) => e.write(out, 2),
                    Bound::Const(c) if c.to_rational().is_some_and(|r| r.is_integer()) => {
                        e.write(out, 2)
                    }
                    _ => {
                        out.push('(');
                        e.write(out, 0);
                        out.push(')');
                    }
                }
                if prec >= 2 {
                    out.push(')');
                }
            }
            Bound::Log(k, a) => {
                if k.is_integer() {
                    out.push_str(&format!("log{k}("));
                } else {
                    out.push_str(&format!("log[{k}]("));
                }
                a.write(out, 0);
                out.push(')');
            }
            Bound::Max(xs) => {
                out.push_str("max{");
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    x.write(out, 0);
                }
                out.push('}');
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Bound::Const(c) => json!({"op": "const", "value": c.render()}),
            Bound::Omega => json!({"op": "omega"}),
            Bound::Var(v) => json!({"op": "var", "name": v.name()}),
            Bound::Sum(xs) => json!({"op": "sum", "args": xs.iter().map(Bound::to_json).collect::<Vec<_>>()}),
            Bound::Product(xs) => json!({"op": "product", "args": xs.iter().map(Bound::to_json).collect::<Vec<_>>()}),
            Bound::Max(xs) => json!({"op": "max", "args": xs.iter().map(Bound::to_json).collect::<Vec<_>>()}),
            Bound::Pow(b, k) => json!({"op": "pow", "base": b.to_json(), "exp": k}),
            Bound::Exp(k, e) => json!({"op": "exp", "base": k.to_string(), "arg": e.to_json()}),
            Bound::Log(k, a) => json!({"op": "log", "base": k.to_string(), "arg": a.to_json()}),
        }
    }

    /// Parse the textual form produced by [`Bound::render`].
    pub fn parse(text: &str) -> Result<Bound, BoundError> {
        let mut p = BoundParser {
            src: text.as_bytes(),
            pos: 0,
        };
        let b = p.sum()?;
        p.ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        Ok(b.simplify())
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn contains_exp(b: &Bound) -> bool {
    match b {
        Bound::Exp(..) => true,
        Bound::Const(_) | Bound::Omega | Bound::Var(_) => false,
        Bound::Sum(xs) | Bound::Product(xs) | Bound::Max(xs) => xs.iter().any(contains_exp),
        Bound::Pow(b, _) | Bound::Log(_, b) => contains_exp(b),
    }
}

/// Ordering key: monomials first (by power list), then everything else structurally.
fn canon_cmp(a: &Bound, b: &Bound) -> Ordering {
    match (a, b) {
        (Bound::Const(x), Bound::Const(y)) => return x.cmp_value(y),
        (Bound::Const(_), _) => return Ordering::Less,
        (_, Bound::Const(_)) => return Ordering::Greater,
        _ => {}
    }
    match (monomial_key(a), monomial_key(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

fn monomial_key(b: &Bound) -> Option<Vec<(Var, u32)>> {
    match b {
        Bound::Var(v) => Some(vec![(v.clone(), 1)]),
        Bound::Pow(x, k) => match x.as_ref() {
            Bound::Var(v) => Some(vec![(v.clone(), *k)]),
            _ => None,
        },
        Bound::Product(fs) => {
            let mut out = Vec::new();
            for f in fs {
                match f {
                    Bound::Const(_) => {}
                    g => out.extend(monomial_key(g)?),
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// Split a normalized term into its constant coefficient and the rest.
fn split_coef(t: &Bound) -> (Surd, Bound) {
    if let Bound::Product(fs) = t {
        if let Some(Bound::Const(c)) = fs.first() {
            let rest: Vec<Bound> = fs[1..].to_vec();
            let rest = if rest.len() == 1 {
                rest.into_iter().next().unwrap()
            } else {
                Bound::Product(rest)
            };
            return (c.clone(), rest);
        }
    }
    (Surd::one(), t.clone())
}

fn simplify_sum(children: Vec<Bound>) -> Bound {
    let mut flat = Vec::new();
    for c in children {
        match c {
            Bound::Sum(xs) => flat.extend(xs),
            Bound::Omega => return Bound::Omega,
            x => flat.push(x),
        }
    }
    let mut constant = Surd::zero();
    let mut groups: BTreeMap<Bound, Surd> = BTreeMap::new();
    for t in flat {
        match t {
            Bound::Const(c) => constant = constant.add(&c),
            t => {
                let (c, rest) = split_coef(&t);
                let e = groups.entry(rest).or_default();
                *e = e.add(&c);
            }
        }
    }
    let mut terms: Vec<Bound> = groups
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(rest, c)| {
            if c.is_one() {
                rest
            } else {
                simplify_product(vec![Bound::Const(c), rest])
            }
        })
        .collect();
    // distributing a coefficient may expose nested sums
    if terms.iter().any(|t| matches!(t, Bound::Sum(_))) {
        let mut all = terms;
        all.push(Bound::Const(constant));
        return simplify_sum(all);
    }
    terms.sort_by(canon_cmp);
    if !constant.is_zero() {
        terms.insert(0, Bound::Const(constant.clone()));
    }
    match terms.len() {
        0 => Bound::Const(constant),
        1 => terms.pop().unwrap(),
        _ => Bound::Sum(terms),
    }
}

fn simplify_product(children: Vec<Bound>) -> Bound {
    let mut flat = Vec::new();
    for c in children {
        match c {
            Bound::Product(xs) => flat.extend(xs),
            x => flat.push(x),
        }
    }
    if flat.iter().any(Bound::is_zero) {
        return Bound::zero();
    }
    if flat.iter().any(Bound::is_omega) {
        return Bound::Omega;
    }
    let mut c = Surd::one();
    let mut powers: BTreeMap<Bound, u32> = BTreeMap::new();
    for f in flat {
        match f {
            Bound::Const(k) => c = c.mul(&k),
            Bound::Pow(b, k) => *powers.entry(*b).or_default() += k,
            x => *powers.entry(x).or_default() += 1,
        }
    }
    let mut factors: Vec<Bound> = Vec::new();
    for (b, k) in powers {
        match simplify_pow(b, k) {
            Bound::Const(k) => c = c.mul(&k),
            Bound::Product(xs) => factors.extend(xs),
            x => factors.push(x),
        }
    }
    if c.is_zero() {
        return Bound::zero();
    }
    if factors.is_empty() {
        return Bound::Const(c);
    }
    if !c.is_one() && factors.len() == 1 {
        if let Bound::Sum(ts) = &factors[0] {
            return simplify_sum(
                ts.iter()
                    .map(|t| simplify_product(vec![Bound::Const(c.clone()), t.clone()]))
                    .collect(),
            );
        }
    }
    factors.sort_by(canon_cmp);
    if !c.is_one() {
        factors.insert(0, Bound::Const(c));
    }
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Bound::Product(factors)
    }
}

fn simplify_pow(b: Bound, k: u32) -> Bound {
    match (b, k) {
        (_, 0) => Bound::one(),
        (b, 1) => b,
        (Bound::Const(c), k) => Bound::Const(c.pow(k)),
        (Bound::Omega, _) => Bound::Omega,
        (Bound::Pow(x, j), k) => simplify_pow(*x, j * k),
        (Bound::Product(fs), k) => {
            simplify_product(fs.into_iter().map(|f| simplify_pow(f, k)).collect())
        }
        (b, k) => Bound::Pow(Box::new(b), k),
    }
}

fn simplify_exp(k: Rational, e: Bound) -> Bound {
    if k.is_one() {
        return Bound::one();
    }
    match e {
        Bound::Omega => Bound::Omega,
        Bound::Const(c) => match c.to_rational() {
            Some(r) if r.is_integer() && !r.is_negative() => {
                let n = r.to_integer().to_u32().unwrap_or(u32::MAX);
                if n <= 4096 {
                    Bound::rational(pow_rat(&k, n))
                } else {
                    Bound::Exp(k, Box::new(Bound::Const(c)))
                }
            }
            _ => Bound::Exp(k, Box::new(Bound::Const(c))),
        },
        e => Bound::Exp(k, Box::new(e)),
    }
}

fn simplify_log(k: Rational, a: Bound) -> Bound {
    let a = match a {
        Bound::Max(xs) => {
            let kept: Vec<Bound> = xs
                .into_iter()
                .filter(|x| match x {
                    Bound::Const(c) => c.cmp_value(&Surd::one()) == Ordering::Greater,
                    _ => true,
                })
                .collect();
            simplify_max(kept)
        }
        a => a,
    };
    match a {
        Bound::Omega => Bound::Omega,
        Bound::Const(c) => {
            if c.cmp_value(&Surd::one()) != Ordering::Greater {
                return Bound::zero();
            }
            if let Some(r) = c.to_rational() {
                let mut p = Rational::one();
                for j in 0..4096u32 {
                    if p == r {
                        return Bound::int(j as i64);
                    }
                    if p > r {
                        break;
                    }
                    p *= &k;
                }
            }
            Bound::Log(k, Box::new(Bound::Const(c)))
        }
        a => Bound::Log(k, Box::new(a)),
    }
}

fn simplify_max(children: Vec<Bound>) -> Bound {
    let mut flat: Vec<Bound> = Vec::new();
    for c in children {
        match c {
            Bound::Max(xs) => flat.extend(xs),
            Bound::Omega => return Bound::Omega,
            x if x.is_zero() => {}
            x => flat.push(x),
        }
    }
    flat.sort_by(canon_cmp);
    flat.dedup();
    let n = flat.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || !keep[j] {
                continue;
            }
            if dominates(&flat[j], &flat[i]) {
                keep[i] = false;
                break;
            }
        }
    }
    let mut out: Vec<Bound> = flat
        .into_iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(b))
        .collect();
    match out.len() {
        0 => Bound::zero(),
        1 => out.pop().unwrap(),
        _ => Bound::Max(out),
    }
}

/// Sufficient syntactic check for `a >= b` at every non-negative assignment.
pub fn dominates(a: &Bound, b: &Bound) -> bool {
    if a == b || b.is_zero() || a.is_omega() {
        return true;
    }
    if b.is_omega() {
        return false;
    }
    match (a, b) {
        (Bound::Const(x), Bound::Const(y)) => return x.cmp_value(y) != Ordering::Less,
        (_, Bound::Max(bs)) => return bs.iter().all(|y| dominates(a, y)),
        (Bound::Max(xs), _) => {
            if xs.iter().any(|x| dominates(x, b)) {
                return true;
            }
        }
        _ => {}
    }
    let (ca, ta) = linear_parts(a);
    let (cb, tb) = linear_parts(b);
    if ca.cmp_value(&cb) == Ordering::Less {
        return false;
    }
    let mut used = vec![false; ta.len()];
    'outer: for (beta, tb) in &tb {
        for (i, (alpha, ta)) in ta.iter().enumerate() {
            if !used[i] && alpha.cmp_value(beta) != Ordering::Less && term_dominates(ta, tb) {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn linear_parts(b: &Bound) -> (Surd, Vec<(Surd, Bound)>) {
    match b {
        Bound::Const(c) => (c.clone(), Vec::new()),
        Bound::Sum(ts) => {
            let mut c = Surd::zero();
            let mut out = Vec::new();
            for t in ts {
                match t {
                    Bound::Const(k) => c = c.add(k),
                    t => out.push(split_coef(t)),
                }
            }
            (c, out)
        }
        t => (Surd::zero(), vec![split_coef(t)]),
    }
}

fn term_dominates(a: &Bound, b: &Bound) -> bool {
    if a == b {
        return true;
    }
    match (a, b) {
        (Bound::Log(k1, x), Bound::Log(k2, y)) => k1 <= k2 && dominates(x, y),
        (Bound::Pow(x, i), Bound::Pow(y, j)) => i == j && dominates(x, y),
        (Bound::Exp(k1, x), Bound::Exp(k2, y)) => k1 >= k2 && dominates(x, y),
        (Bound::Max(xs), _) => xs.iter().any(|x| term_dominates(x, b) || dominates(x, b)),
        (Bound::Product(xs), Bound::Product(ys)) if xs.len() == ys.len() => {
            xs.iter().zip(ys).all(|(x, y)| dominates(x, y))
        }
        (Bound::Sum(_), _) | (_, Bound::Sum(_)) => dominates(a, b),
        _ => false,
    }
}

fn pow_rat(k: &Rational, n: u32) -> Rational {
    let mut acc = Rational::one();
    let mut base = k.clone();
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    acc
}

/// Least half-integer `r` with `log_k(x) <= r * log2(x)` for all `x >= 1`.
pub fn log_base_factor(k: &Rational) -> Rational {
    assert!(k > &Rational::one(), "log base must exceed 1");
    // r >= 1/log2(k)  <=>  k^(2r) >= 4
    let four = rat(4);
    let mut m = 1u32;
    while pow_rat(k, m) < four {
        m += 1;
    }
    Rational::new(m.into(), 2.into())
}

/// Over-approximation: rewrite every logarithm to base 2 and split power-of-two factors.
pub fn relax_logs(b: &Bound) -> Bound {
    relax_logs_raw(b).simplify()
}

fn relax_logs_raw(b: &Bound) -> Bound {
    match b {
        Bound::Const(_) | Bound::Omega | Bound::Var(_) => b.clone(),
        Bound::Sum(xs) => Bound::Sum(xs.iter().map(relax_logs_raw).collect()),
        Bound::Product(xs) => Bound::Product(xs.iter().map(relax_logs_raw).collect()),
        Bound::Max(xs) => Bound::Max(xs.iter().map(relax_logs_raw).collect()),
        Bound::Pow(x, k) => Bound::Pow(Box::new(relax_logs_raw(x)), *k),
        Bound::Exp(k, x) => Bound::Exp(k.clone(), Box::new(relax_logs_raw(x))),
        Bound::Log(k, x) => {
            let arg = relax_logs_raw(x).simplify();
            let two = rat(2);
            let factor = if *k == two {
                Rational::one()
            } else {
                log_base_factor(k)
            };
            let (shift, arg) = split_power_of_two(&arg);
            let log2 = Bound::Log(two, Box::new(arg));
            let inner = Bound::Sum(vec![Bound::int(shift as i64), log2]);
            Bound::Product(vec![Bound::rational(factor), inner])
        }
    }
}

/// `log2(c*t) <= j + log2(t)` where the content `c` of the argument is `2^j`; `c <= 1` is dropped.
fn split_power_of_two(arg: &Bound) -> (u32, Bound) {
    let (c, terms) = linear_parts(arg);
    let mut coefs: Vec<Rational> = Vec::new();
    if !c.is_zero() {
        match c.to_rational() {
            Some(r) => coefs.push(r),
            None => return (0, arg.clone()),
        }
    }
    for (k, _) in &terms {
        match k.to_rational() {
            Some(r) => coefs.push(r),
            None => return (0, arg.clone()),
        }
    }
    if coefs.is_empty() {
        return (0, arg.clone());
    }
    let num = coefs.iter().fold(Int::zero(), |g, r| g.gcd(r.numer()));
    let den = coefs.iter().fold(Int::one(), |l, r| l.lcm(r.denom()));
    let content = Rational::new(num, den);
    let mut j = 0u32;
    let mut p = Rational::one();
    while p < content {
        p *= rat(2);
        j += 1;
    }
    if content > Rational::one() && p != content {
        return (0, arg.clone());
    }
    if content == Rational::one() {
        return (0, arg.clone());
    }
    let inv = Surd::from_rational(content.recip());
    let scaled = simplify_product(vec![Bound::Const(inv), arg.clone()]);
    (j, scaled)
}

/// Over-approximation of `k^(c0 + sum c_i*log_m_i(t_i))` by `k^ceil(c0) * prod max{1,t_i}^e_i`.
pub fn collapse_exponents(b: &Bound) -> Bound {
    collapse_raw(&b.simplify()).simplify()
}

fn collapse_raw(b: &Bound) -> Bound {
    match b {
        Bound::Const(_) | Bound::Omega | Bound::Var(_) => b.clone(),
        Bound::Sum(xs) => Bound::Sum(xs.iter().map(collapse_raw).collect()),
        Bound::Product(xs) => Bound::Product(xs.iter().map(collapse_raw).collect()),
        Bound::Max(xs) => Bound::Max(xs.iter().map(collapse_raw).collect()),
        Bound::Pow(x, k) => Bound::Pow(Box::new(collapse_raw(x)), *k),
        Bound::Log(k, x) => Bound::Log(k.clone(), Box::new(collapse_raw(x))),
        Bound::Exp(k, e) => {
            let e = collapse_raw(e).simplify();
            match collapse_one(k, &e) {
                Some(r) => r,
                None => Bound::Exp(k.clone(), Box::new(e)),
            }
        }
    }
}

fn collapse_one(k: &Rational, e: &Bound) -> Option<Bound> {
    let (c0, terms) = linear_parts(e);
    if terms.is_empty() {
        return None;
    }
    let mut factors = Vec::new();
    let c0 = c0.ceil();
    let c0 = c0.to_u32()?;
    factors.push(Bound::rational(pow_rat(k, c0)));
    for (c, t) in terms {
        let c = c.to_rational()?;
        let Bound::Log(m, arg) = t else {
            return None;
        };
        // least e with m^(e*v) >= k^u for c = u/v
        let u = c.numer().to_u32()?;
        let v = c.denom().to_u32()?;
        let target = pow_rat(k, u);
        let step = pow_rat(&m, v);
        let mut acc = Rational::one();
        let mut ex = 0u32;
        while acc < target {
            acc *= &step;
            ex += 1;
            if ex > 10_000 {
                return None;
            }
        }
        let base = Bound::Max(vec![Bound::one(), *arg]);
        factors.push(Bound::Pow(Box::new(base), ex));
    }
    Some(Bound::Product(factors))
}

/// Extended non-negative rational.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ext {
    Fin(Rational),
    Inf,
}

/// Closed interval of non-negative extended rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interval {
    pub lo: Ext,
    pub hi: Ext,
}

/// Values beyond this many bits are treated as infinite during evaluation.
const MAX_BITS: u64 = 1 << 20;

impl Interval {
    pub fn new(lo: Ext, hi: Ext) -> Interval {
        Interval { lo, hi }
    }

    pub fn point(r: Rational) -> Interval {
        Interval::new(Ext::Fin(r.clone()), Ext::Fin(r))
    }

    pub fn omega() -> Interval {
        Interval::new(Ext::Inf, Ext::Inf)
    }

    pub fn contains(&self, r: &Rational) -> bool {
        self.lo <= Ext::Fin(r.clone()) && Ext::Fin(r.clone()) <= self.hi
    }

    fn round(self, w: u32) -> Interval {
        let scale = Rational::from_integer(Int::one() << w);
        let f = |e: Ext, up: bool| match e {
            Ext::Inf => Ext::Inf,
            Ext::Fin(r) => {
                if r.is_integer() || r.denom().bits() <= w as u64 {
                    return Ext::Fin(r);
                }
                if r.numer().bits() > MAX_BITS {
                    return if up { Ext::Inf } else { Ext::Fin(r.floor()) };
                }
                let x = &r * &scale;
                let x = if up { x.ceil() } else { x.floor() };
                Ext::Fin(x / &scale)
            }
        };
        Interval::new(f(self.lo, false), f(self.hi, true))
    }

    fn add(&self, o: &Interval) -> Interval {
        let f = |a: &Ext, b: &Ext| match (a, b) {
            (Ext::Fin(x), Ext::Fin(y)) => Ext::Fin(x + y),
            _ => Ext::Inf,
        };
        Interval::new(f(&self.lo, &o.lo), f(&self.hi, &o.hi))
    }

    fn mul(&self, o: &Interval) -> Interval {
        let f = |a: &Ext, b: &Ext| match (a, b) {
            (Ext::Fin(x), Ext::Fin(y)) => Ext::Fin(x * y),
            (Ext::Fin(x), Ext::Inf) | (Ext::Inf, Ext::Fin(x)) if x.is_zero() => {
                Ext::Fin(Rational::zero())
            }
            _ => Ext::Inf,
        };
        Interval::new(f(&self.lo, &o.lo), f(&self.hi, &o.hi))
    }

    fn max(&self, o: &Interval) -> Interval {
        Interval::new(
            self.lo.clone().max(o.lo.clone()),
            self.hi.clone().max(o.hi.clone()),
        )
    }

    fn pow(&self, k: u32) -> Interval {
        let f = |a: &Ext| match a {
            Ext::Fin(x) => {
                if x.numer().bits().saturating_mul(k as u64) > MAX_BITS {
                    Ext::Inf
                } else {
                    Ext::Fin(pow_rat(x, k))
                }
            }
            Ext::Inf if k == 0 => Ext::Fin(Rational::one()),
            Ext::Inf => Ext::Inf,
        };
        Interval::new(f(&self.lo), f(&self.hi))
    }

    fn log(&self, k: &Rational, w: u32) -> Interval {
        let (kl, kh) = log2_bounds(k, w);
        let lo = match &self.lo {
            Ext::Inf => Ext::Inf,
            Ext::Fin(x) if x <= &Rational::one() => Ext::Fin(Rational::zero()),
            Ext::Fin(x) => Ext::Fin(log2_bounds(x, w).0 / &kh),
        };
        let hi = match &self.hi {
            Ext::Inf => Ext::Inf,
            Ext::Fin(x) if x <= &Rational::one() => Ext::Fin(Rational::zero()),
            Ext::Fin(x) => Ext::Fin(log2_bounds(x, w).1 / &kl),
        };
        Interval::new(lo, hi)
    }

    fn exp(&self, k: &Rational, w: u32) -> Interval {
        let lo = match &self.lo {
            Ext::Inf => Ext::Inf,
            Ext::Fin(x) => exp_bound(k, x, w, false),
        };
        let hi = match &self.hi {
            Ext::Inf => Ext::Inf,
            Ext::Fin(x) => exp_bound(k, x, w, true),
        };
        Interval::new(lo, hi)
    }
}

/// Lower and upper bounds on `log2(y)` for `y >= 1`, accurate to `2^-p`.
pub fn log2_bounds(y: &Rational, p: u32) -> (Rational, Rational) {
    assert!(y >= &Rational::one());
    // integer part from bit lengths
    let mut e: i64 = y.numer().bits() as i64 - y.denom().bits() as i64;
    let two = Rational::from_integer(2.into());
    let pow2 = |k: i64| -> Rational {
        if k >= 0 {
            Rational::from_integer(Int::one() << k as u64)
        } else {
            Rational::new(Int::one(), Int::one() << (-k) as u64)
        }
    };
    let mut z = y / pow2(e);
    while z >= two {
        z /= &two;
        e += 1;
    }
    while z < Rational::one() {
        z *= &two;
        e -= 1;
    }
    let w = p + 8;
    let one_w = Int::one() << w;
    let two_w = Int::one() << (w + 1);
    let scaled = &z * Rational::from_integer(one_w.clone());
    let mut zl = scaled.floor().to_integer();
    let mut zu = scaled.ceil().to_integer();
    let mut bits_l = Int::zero();
    let mut bits_u = Int::zero();
    for _ in 0..p {
        zl = (&zl * &zl) >> w;
        zu = (&zu * &zu + &one_w - 1u32) >> w;
        bits_l <<= 1;
        bits_u <<= 1;
        if zl >= two_w {
            bits_l += 1u32;
            zl >>= 1;
        }
        if zu >= two_w {
            bits_u += 1u32;
            zu = (&zu + 1u32) >> 1;
        }
    }
    let denom = Int::one() << p;
    let lo = Rational::from_integer(e.into()) + Rational::new(bits_l, denom.clone());
    let hi = Rational::from_integer(e.into()) + Rational::new(bits_u + 1u32, denom);
    (lo, hi)
}

/// Bound on `k^x` for rational `k >= 1`, `x >= 0`.
fn exp_bound(k: &Rational, x: &Rational, w: u32, upper: bool) -> Ext {
    if x.is_integer() {
        let n = x.to_integer();
        let bits = (k.numer().bits() + 1).saturating_mul(n.to_u64().unwrap_or(u64::MAX));
        if bits > MAX_BITS {
            return if upper {
                Ext::Inf
            } else {
                Ext::Fin(Rational::from_integer(Int::one() << MAX_BITS))
            };
        }
        return Ext::Fin(pow_rat(k, n.to_u32().unwrap()));
    }
    let (kl, kh) = log2_bounds(k, w);
    let t = if upper { x * kh } else { x * kl };
    if t > Rational::from_integer(MAX_BITS.into()) {
        return if upper {
            Ext::Inf
        } else {
            Ext::Fin(Rational::from_integer(Int::one() << MAX_BITS))
        };
    }
    Ext::Fin(pow2_bound(&t, w, upper))
}

/// Bound on `2^t` for rational `t >= 0`.
fn pow2_bound(t: &Rational, w: u32, upper: bool) -> Rational {
    let m = t.floor().to_integer();
    let f = t - Rational::from_integer(m.clone());
    let p = w;
    let scaled = (&f * Rational::from_integer(Int::one() << p)).floor().to_integer();
    let mut digits = if upper { scaled + 1u32 } else { scaled };
    let mut whole = m.to_u64().unwrap();
    if digits >= (Int::one() << p) {
        digits -= Int::one() << p;
        whole += 1;
    }
    // roots r_i = 2^(2^-i) in fixed point with scale 2^w
    let one_w = Int::one() << w;
    let mut acc = one_w.clone();
    let mut r = Int::from(2u32) << w;
    for i in 1..=p {
        r = (&r << w).sqrt();
        if upper {
            r += 1u32;
        }
        let bit = (&digits >> (p - i)) & Int::one();
        if bit.is_one() {
            acc = if upper {
                (&acc * &r + &one_w - 1u32) >> w
            } else {
                (&acc * &r) >> w
            };
        }
    }
    Rational::new(acc << whole, one_w)
}

struct BoundParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl BoundParser<'_> {
    fn err(&self, msg: &str) -> BoundError {
        BoundError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.ws();
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), BoundError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{s}`")))
        }
    }

    fn sum(&mut self) -> Result<Bound, BoundError> {
        let mut terms = vec![self.product()?];
        while self.eat("+") {
            terms.push(self.product()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Bound::Sum(terms)
        })
    }

    fn product(&mut self) -> Result<Bound, BoundError> {
        let mut fs = vec![self.power()?];
        while self.eat("*") {
            fs.push(self.power()?);
        }
        Ok(if fs.len() == 1 {
            fs.pop().unwrap()
        } else {
            Bound::Product(fs)
        })
    }

    fn power(&mut self) -> Result<Bound, BoundError> {
        let base = self.atom()?;
        if !self.eat("^") {
            return Ok(base);
        }
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let k = self.integer()?;
            return Ok(Bound::Pow(Box::new(base), k.to_u32().ok_or_else(|| self.err("exponent too large"))?));
        }
        let e = self.atom()?;
        match base {
            Bound::Const(c) => {
                let k = c.to_rational().ok_or_else(|| self.err("irrational base"))?;
                Ok(Bound::Exp(k, Box::new(e)))
            }
            _ => Err(self.err("non-constant base of exponential")),
        }
    }

    fn integer(&mut self) -> Result<Int, BoundError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected integer"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok(s.parse().unwrap())
    }

    fn rational(&mut self) -> Result<Rational, BoundError> {
        let n = self.integer()?;
        if self.src.get(self.pos) == Some(&b'/')
            && self.src.get(self.pos + 1).is_some_and(|c| c.is_ascii_digit())
        {
            self.pos += 1;
            let d = self.integer()?;
            return Ok(Rational::new(n, d));
        }
        Ok(Rational::from_integer(n))
    }

    fn atom(&mut self) -> Result<Bound, BoundError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let b = self.sum()?;
                self.expect(")")?;
                Ok(b)
            }
            Some(c) if c.is_ascii_digit() => Ok(Bound::rational(self.rational()?)),
            Some(_) => {
                if self.eat("sqrt(") {
                    let r = self.rational()?;
                    self.expect(")")?;
                    return Ok(Bound::Const(Surd::sqrt_of(&r)));
                }
                if self.eat("max{") {
                    let mut xs = vec![self.sum()?];
                    while self.eat(",") {
                        xs.push(self.sum()?);
                    }
                    self.expect("}")?;
                    return Ok(Bound::Max(xs));
                }
                if self.eat("omega") {
                    return Ok(Bound::Omega);
                }
                if self.eat("log[") {
                    let k = self.rational()?;
                    self.expect("](")?;
                    let a = self.sum()?;
                    self.expect(")")?;
                    return Ok(Bound::Log(k, Box::new(a)));
                }
                let save = self.pos;
                if self.eat("log") && self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    let k = self.integer()?;
                    self.expect("(")?;
                    let a = self.sum()?;
                    self.expect(")")?;
                    return Ok(Bound::Log(Rational::from_integer(k), Box::new(a)));
                }
                self.pos = save;
                self.ws();
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric()
                        || self.src[self.pos] == b'_'
                        || self.src[self.pos] == b'\''
                        || self.src[self.pos] == b'%')
                {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(self.err("unexpected character"));
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                Ok(Bound::Var(Var::new(name)))
            }
            None => Err(self.err("unexpected end of input")),
        }
    }
}

/// Sign helper for big integers.
pub fn is_nonneg(x: &BigInt) -> bool {
    x.sign() != Sign::Minus
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(s: &str) -> Bound {
        Bound::parse(s).unwrap()
    }

    fn st(pairs: &[(&str, i64)]) -> State {
        pairs
            .iter()
            .map(|(v, x)| (Var::new(v), Int::from(*x)))
            .collect()
    }

    #[test]
    fn surd_arithmetic() {
        let s10 = Surd::sqrt_of(&rat(10));
        assert_eq!(s10.mul(&s10).to_rational(), Some(rat(10)));
        assert_eq!(Surd::sqrt_of(&rat(8)).render(), "2*sqrt(2)");
        let two_plus = Surd::from_i64(2).add(&s10);
        assert_eq!(two_plus.render(), "2 + sqrt(10)");
        assert_eq!(two_plus.ceil(), Int::from(6));
        assert_eq!(s10.cmp_value(&Surd::from_i64(3)), Ordering::Greater);
    }

    #[test]
    fn like_terms_merge() {
        let x = b("sqrt(10)*x6 + 2*x6");
        assert_eq!(x.render(), "(2 + sqrt(10))*x6");
    }

    #[test]
    fn constant_distributes_into_sum() {
        assert_eq!(b("2*(3/2 + 3/2*log2(x))").render(), "3 + 3*log2(x)");
    }

    #[test]
    fn max_subsumption() {
        assert_eq!(b("max{x1, x1 + 2}").render(), "2 + x1");
        assert_eq!(b("max{1, 68 + 2*x6}").render(), "68 + 2*x6");
        assert_eq!(
            b("max{x1, (2 + sqrt(10))*x6}").render(),
            "max{x1, (2 + sqrt(10))*x6}"
        );
        assert_eq!(b("max{x6, (2 + sqrt(10))*x6}").render(), "(2 + sqrt(10))*x6");
    }

    #[test]
    fn omega_absorbs_but_zero_wins() {
        assert_eq!(b("x + omega"), Bound::Omega);
        assert_eq!(b("0*omega"), Bound::zero());
    }

    #[test]
    fn classification() {
        assert_eq!(b("3 + 3*log2(68 + 2*x6)").classify(), BoundClass::log(1));
        assert_eq!(
            b("x6*(3 + 3*log2(68 + 2*x6))").classify(),
            BoundClass::polylog(1, 1)
        );
        assert_eq!(b("x1*x2^2 + x3").classify(), BoundClass::poly(3));
        assert_eq!(b("2^x").classify(), BoundClass::Exp);
        assert_eq!(b("3^(3 + 3*log2(x))").classify(), BoundClass::poly(5));
        assert_eq!(Bound::Omega.classify(), BoundClass::Omega);
    }

    #[test]
    fn log2_enclosure() {
        for y in [1i64, 2, 3, 5, 68, 1000, 1 << 20] {
            let (lo, hi) = log2_bounds(&rat(y), 40);
            let exact = (y as f64).log2();
            assert!(to_f(&lo) <= exact + 1e-12 && exact <= to_f(&hi) + 1e-12);
            assert!(to_f(&hi) - to_f(&lo) < 1e-9);
        }
    }

    fn to_f(r: &Rational) -> f64 {
        r.to_f64().unwrap()
    }

    #[test]
    fn eval_encloses() {
        let s = st(&[("x", 7)]);
        let iv = b("3^(1/2*x) + log[32/19](x) + sqrt(10)*x").eval(&s, 64).unwrap();
        let exact = 3f64.powf(3.5) + 7f64.ln() / (32f64 / 19.0).ln() + 10f64.sqrt() * 7.0;
        let (Ext::Fin(lo), Ext::Fin(hi)) = (iv.lo, iv.hi) else {
            panic!()
        };
        assert!(to_f(&lo) <= exact + 1e-9 && exact <= to_f(&hi) + 1e-9);
        assert!(to_f(&hi) - to_f(&lo) < 1e-9);
    }

    #[test]
    fn log_relaxation() {
        let r = relax_logs(&b("max{1, log6(2*x3^2 + 4*x3^5), log[32/19](2*x3^2 + 4*x3^5 + 4*x5)}"));
        assert_eq!(r.render(), "3/2 + 3/2*log2(x3^2 + 2*x3^5 + 2*x5)");
        assert_eq!(log_base_factor(&rat(6)), Rational::new(1.into(), 2.into()));
    }

    #[test]
    fn exponent_collapse() {
        let c = collapse_exponents(&b("3^(3 + 3*log2(68 + 2*x6))"));
        assert_eq!(c.render(), "27*(68 + 2*x6)^5");
        let d = collapse_exponents(&b("2^(3 + 3*log2(x))"));
        assert_eq!(d.render(), "8*max{1, x}^3");
    }

    #[test]
    fn render_parse_roundtrip() {
        for s in [
            "3 + 3*log2(x3^2 + 2*x3^5 + 2*x5)",
            "max{x1, (2 + sqrt(10))*x6}",
            "x6*(3 + 3*log2(68 + 2*x6))",
            "27*(2 + x6)*(68 + 2*x6)^5",
            "2^x + log[32/19](y)",
            "omega",
        ] {
            let x = b(s);
            assert_eq!(x.render(), s);
            assert_eq!(b(&x.render()), x);
        }
    }
}
