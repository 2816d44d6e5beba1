//! Variables, exact coefficient fields, multivariate polynomials and guard formulas.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::Hash;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{Bound, Surd};

pub type Int = BigInt;
pub type Rational = BigRational;

/// Program state: integer values of program variables.
pub type State = BTreeMap<Var, Int>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error("division by zero")]
    DivisionByZero,
}

pub fn rat(n: i64) -> Rational {
    Rational::from_integer(n.into())
}

pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

/// Program or auxiliary variable, ordered naturally (`x2 < x10`).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: &str) -> Self {
        Var(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    fn split(&self) -> (&str, Option<u64>) {
        let s: &str = &self.0;
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        if cut == s.len() {
            return (s, None);
        }
        (&s[..cut], s[cut..].parse().ok())
    }
}

impl Ord for Var {
    fn cmp(&self, other: &Self) -> Ordering {
        let (p1, n1) = self.split();
        let (p2, n2) = other.split();
        p1.cmp(p2)
            .then(n1.cmp(&n2))
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Var {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Var {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Var::new(&s))
    }
}

/// Exact field used for polynomial coefficients.
pub trait Field:
    Clone
    + fmt::Debug
    + PartialEq
    + Eq
    + Ord
    + Hash
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn from_rat(r: Rational) -> Self;

    fn from_i64(n: i64) -> Self {
        Self::from_rat(rat(n))
    }

    /// Squared modulus.
    fn norm_sq(&self) -> Rational;

    /// The value as a rational, if it is real.
    fn to_rat(&self) -> Option<Rational>;

    fn conj(&self) -> Self;

    /// Modulus as an exact surd.
    fn modulus(&self) -> Surd {
        match self.to_rat() {
            Some(r) => Surd::from_rational(r.abs()),
            None => Surd::sqrt_of(&self.norm_sq()),
        }
    }

    fn render(&self) -> String;

    /// True if the value needs parentheses when used as a factor.
    fn is_compound(&self) -> bool {
        false
    }

    fn pow(&self, mut e: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            e >>= 1;
        }
        acc
    }
}

impl Field for Rational {
    fn from_rat(r: Rational) -> Self {
        r
    }

    fn norm_sq(&self) -> Rational {
        self * self
    }

    fn to_rat(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn conj(&self) -> Self {
        self.clone()
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

/// Number `re + im*i` with rational parts.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GaussianRational {
    pub re: Rational,
    pub im: Rational,
}

impl GaussianRational {
    pub fn new(re: Rational, im: Rational) -> Self {
        GaussianRational { re, im }
    }

    pub fn i() -> Self {
        GaussianRational::new(Rational::zero(), Rational::one())
    }

    pub fn is_gaussian_integer(&self) -> bool {
        self.re.is_integer() && self.im.is_integer()
    }
}

impl Zero for GaussianRational {
    fn zero() -> Self {
        GaussianRational::new(Rational::zero(), Rational::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

impl One for GaussianRational {
    fn one() -> Self {
        GaussianRational::new(Rational::one(), Rational::zero())
    }
}

impl Add for GaussianRational {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        GaussianRational::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for GaussianRational {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        GaussianRational::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for GaussianRational {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        GaussianRational::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }
}

impl Div for GaussianRational {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let d = o.norm_sq();
        let num = self * o.conj();
        GaussianRational::new(num.re / &d, num.im / d)
    }
}

impl Neg for GaussianRational {
    type Output = Self;
    fn neg(self) -> Self {
        GaussianRational::new(-self.re, -self.im)
    }
}

impl Field for GaussianRational {
    fn from_rat(r: Rational) -> Self {
        GaussianRational::new(r, Rational::zero())
    }

    fn norm_sq(&self) -> Rational {
        &self.re * &self.re + &self.im * &self.im
    }

    fn to_rat(&self) -> Option<Rational> {
        self.im.is_zero().then(|| self.re.clone())
    }

    fn conj(&self) -> Self {
        GaussianRational::new(self.re.clone(), -self.im.clone())
    }

    fn render(&self) -> String {
        if self.im.is_zero() {
            return self.re.to_string();
        }
        let im = if self.im.is_one() {
            "i".to_string()
        } else if (-&self.im).is_one() {
            "-i".to_string()
        } else {
            format!("{}*i", self.im)
        };
        if self.re.is_zero() {
            im
        } else if self.im.is_negative() {
            format!("{} - {}", self.re, im.trim_start_matches('-'))
        } else {
            format!("{} + {}", self.re, im)
        }
    }

    fn is_compound(&self) -> bool {
        !self.re.is_zero() && !self.im.is_zero()
    }
}

/// Power product, sorted by variable, exponents positive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<(Var, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: Var) -> Self {
        Monomial(vec![(v, 1)])
    }

    pub fn from_pairs(mut pairs: Vec<(Var, u32)>) -> Self {
        pairs.retain(|(_, e)| *e > 0);
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Var, u32)> = Vec::with_capacity(pairs.len());
        for (v, e) in pairs {
            match out.last_mut() {
                Some((w, f)) if *w == v => *f += e,
                _ => out.push((v, e)),
            }
        }
        Monomial(out)
    }

    pub fn pairs(&self) -> &[(Var, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn degree_in(&self, v: &Var) -> u32 {
        self.0
            .iter()
            .find(|(w, _)| w == v)
            .map(|(_, e)| *e)
            .unwrap_or(0)
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.0.iter().map(|(v, _)| v)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((self.0[i].0.clone(), self.0[i].1 + other.0[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    /// Lexicographic order on the sorted power list, used for rendering.
    pub fn display_cmp(&self, other: &Monomial) -> Ordering {
        match (self.is_one(), other.is_one()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => self.0.cmp(&other.0),
        }
    }
}

impl Ord for Monomial {
    /// Graded lexicographic order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            let (mut i, mut j) = (0, 0);
            loop {
                match (self.0.get(i), other.0.get(j)) {
                    (None, None) => return Ordering::Equal,
                    (Some(_), None) => return Ordering::Greater,
                    (None, Some(_)) => return Ordering::Less,
                    (Some((v, e)), Some((w, f))) => match v.cmp(w) {
                        Ordering::Less => return Ordering::Greater,
                        Ordering::Greater => return Ordering::Less,
                        Ordering::Equal => {
                            if e != f {
                                return e.cmp(f);
                            }
                            i += 1;
                            j += 1;
                        }
                    },
                }
            }
        })
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(v, e)| {
                if *e == 1 {
                    v.to_string()
                } else {
                    format!("{v}^{e}")
                }
            })
            .collect();
        f.write_str(&parts.join("*"))
    }
}

/// Multivariate polynomial with coefficients in `C`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Poly<C: Field> {
    terms: BTreeMap<Monomial, C>,
}

pub type QPoly = Poly<Rational>;
pub type GPoly = Poly<GaussianRational>;

impl<C: Field> Default for Poly<C> {
    fn default() -> Self {
        Poly::zero()
    }
}

impl<C: Field> Poly<C> {
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Poly::constant(C::one())
    }

    pub fn constant(c: C) -> Self {
        Poly::term(c, Monomial::one())
    }

    pub fn from_i64(n: i64) -> Self {
        Poly::constant(C::from_i64(n))
    }

    pub fn var(v: Var) -> Self {
        Poly::term(C::one(), Monomial::var(v))
    }

    pub fn term(c: C, m: Monomial) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Poly { terms }
    }

    pub fn from_terms(it: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Poly::zero();
        for (m, c) in it {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(d) => {
                let s = d.clone() + c;
                if s.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *d = s;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> C {
        self.terms.get(m).cloned().unwrap_or_else(C::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    pub fn constant_term(&self) -> C {
        self.coeff(&Monomial::one())
    }

    pub fn as_constant(&self) -> Option<C> {
        self.is_constant().then(|| self.constant_term())
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, v: &Var) -> u32 {
        self.terms.keys().map(|m| m.degree_in(v)).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.terms
            .keys()
            .flat_map(|m| m.vars().cloned())
            .collect()
    }

    pub fn contains_var(&self, v: &Var) -> bool {
        self.terms.keys().any(|m| m.degree_in(v) > 0)
    }

    /// Affine if every monomial has degree at most one.
    pub fn is_affine(&self) -> bool {
        self.degree() <= 1
    }

    /// Coefficient of `v` in the degree-one part.
    pub fn linear_coeff(&self, v: &Var) -> C {
        self.coeff(&Monomial::var(v.clone()))
    }

    pub fn scale(&self, c: &C) -> Self {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, d)| (m.clone(), d.clone() * c.clone()))
                .collect(),
        }
    }

    pub fn pow(&self, mut e: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Poly::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn map_coeffs<D: Field>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        Poly::from_terms(self.terms.iter().map(|(m, c)| (m.clone(), f(c))))
    }

    /// Simultaneous substitution of variables by polynomials.
    pub fn substitute(&self, map: &BTreeMap<Var, Poly<C>>) -> Poly<C> {
        self.substitute_with(&|v| map.get(v).cloned())
    }

    pub fn substitute_with(&self, f: &dyn Fn(&Var) -> Option<Poly<C>>) -> Poly<C> {
        let mut cache: BTreeMap<(Var, u32), Poly<C>> = BTreeMap::new();
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let mut prod = Poly::constant(c.clone());
            for (v, e) in m.pairs() {
                let factor = match f(v) {
                    Some(p) => cache
                        .entry((v.clone(), *e))
                        .or_insert_with(|| p.pow(*e))
                        .clone(),
                    None => Poly::term(C::one(), Monomial(vec![(v.clone(), *e)])),
                };
                prod = &prod * &factor;
            }
            out = &out + &prod;
        }
        out
    }

    pub fn rename(&self, map: &BTreeMap<Var, Var>) -> Poly<C> {
        Poly::from_terms(self.terms.iter().map(|(m, c)| {
            let pairs = m
                .pairs()
                .iter()
                .map(|(v, e)| (map.get(v).cloned().unwrap_or_else(|| v.clone()), *e))
                .collect();
            (Monomial::from_pairs(pairs), c.clone())
        }))
    }

    /// Evaluate with every variable bound by `val`.
    pub fn eval_with(&self, val: &dyn Fn(&Var) -> Option<C>) -> Result<C, ExprError> {
        let mut acc = C::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (v, e) in m.pairs() {
                let x = val(v).ok_or_else(|| ExprError::Unbound(v.clone()))?;
                t = t * x.pow(*e);
            }
            acc = acc + t;
        }
        Ok(acc)
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut items: Vec<(&Monomial, &C)> = self.terms.iter().collect();
        items.sort_by(|a, b| a.0.display_cmp(b.0));
        let mut out = String::new();
        for (k, (m, c)) in items.into_iter().enumerate() {
            let (neg, mag) = split_sign(c);
            let body = if m.is_one() {
                mag.render()
            } else if mag.is_one() {
                m.to_string()
            } else if mag.is_compound() {
                format!("({})*{}", mag.render(), m)
            } else {
                format!("{}*{}", mag.render(), m)
            };
            if k == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            out.push_str(&body);
        }
        out
    }
}

fn split_sign<C: Field>(c: &C) -> (bool, C) {
    match c.to_rat() {
        Some(r) if r.is_negative() => (true, -c.clone()),
        _ => (false, c.clone()),
    }
}

impl<C: Field> fmt::Display for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl<'a, C: Field> Add<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn add(self, o: &Poly<C>) -> Poly<C> {
        let mut out = self.clone();
        for (m, c) in &o.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<'a, C: Field> Sub<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn sub(self, o: &Poly<C>) -> Poly<C> {
        let mut out = self.clone();
        for (m, c) in &o.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl<'a, C: Field> Mul<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn mul(self, o: &Poly<C>) -> Poly<C> {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                out.add_term(m1.mul(m2), c1.clone() * c2.clone());
            }
        }
        out
    }
}

impl<C: Field> Add for Poly<C> {
    type Output = Poly<C>;
    fn add(self, o: Poly<C>) -> Poly<C> {
        &self + &o
    }
}

impl<C: Field> Sub for Poly<C> {
    type Output = Poly<C>;
    fn sub(self, o: Poly<C>) -> Poly<C> {
        &self - &o
    }
}

impl<C: Field> Mul for Poly<C> {
    type Output = Poly<C>;
    fn mul(self, o: Poly<C>) -> Poly<C> {
        &self * &o
    }
}

impl<C: Field> Neg for Poly<C> {
    type Output = Poly<C>;
    fn neg(self) -> Poly<C> {
        self.scale(&-C::one())
    }
}

impl QPoly {
    /// Evaluate at an integer state.
    pub fn eval(&self, s: &State) -> Result<Rational, ExprError> {
        self.eval_with(&|v| s.get(v).map(|x| Rational::from_integer(x.clone())))
    }

    /// Evaluate at an integer state, requiring an integer result.
    pub fn eval_int(&self, s: &State) -> Result<Int, ExprError> {
        let r = self.eval(s)?;
        Ok(r.floor().to_integer())
    }

    pub fn is_integral(&self) -> bool {
        self.terms.values().all(|c| c.is_integer())
    }

    /// Least common multiple of coefficient denominators.
    pub fn denominator_lcm(&self) -> Int {
        self.terms
            .values()
            .fold(Int::one(), |acc, c| acc.lcm(c.denom()))
    }

    /// Gcd of the numerators of an integral polynomial.
    pub fn content(&self) -> Int {
        self.terms
            .values()
            .fold(Int::zero(), |acc, c| acc.gcd(c.numer()))
    }

    pub fn to_gaussian(&self) -> GPoly {
        self.map_coeffs(|c| GaussianRational::from_rat(c.clone()))
    }
}

impl GPoly {
    pub fn to_rational(&self) -> Option<QPoly> {
        let mut out = QPoly::zero();
        for (m, c) in self.terms() {
            out.add_term(m.clone(), c.to_rat()?);
        }
        Some(out)
    }
}

/// `||p||`: sum of coefficient moduli times monomials.
pub fn norm_poly<C: Field>(p: &Poly<C>) -> Bound {
    let terms = p
        .terms()
        .map(|(m, c)| Bound::scaled_monomial(c.modulus(), m))
        .collect();
    Bound::Sum(terms).simplify()
}

/// Strict positivity constraint `p > 0` with integer coefficients and content 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    poly: QPoly,
}

impl Atom {
    pub fn gt_zero(p: QPoly) -> Atom {
        let l = Rational::from_integer(p.denominator_lcm());
        let p = p.scale(&l);
        let g = p.content();
        let p = if g > Int::one() {
            p.scale(&Rational::new(Int::one(), g))
        } else {
            p
        };
        Atom { poly: p }
    }

    /// `lhs > rhs`
    pub fn gt(lhs: &QPoly, rhs: &QPoly) -> Atom {
        Atom::gt_zero(lhs - rhs)
    }

    /// `lhs >= rhs`, i.e. `lhs - rhs + 1 > 0` over the integers.
    pub fn ge(lhs: &QPoly, rhs: &QPoly) -> Atom {
        let l = Rational::from_integer((lhs - rhs).denominator_lcm());
        let d = (lhs - rhs).scale(&l);
        Atom::gt_zero(&d + &QPoly::one())
    }

    pub fn poly(&self) -> &QPoly {
        &self.poly
    }

    pub fn eval(&self, s: &State) -> Result<bool, ExprError> {
        Ok(self.poly.eval(s)?.is_positive())
    }

    /// Constant truth value, if the atom has no variables.
    pub fn constant_value(&self) -> Option<bool> {
        self.poly.as_constant().map(|c| c.is_positive())
    }

    pub fn substitute(&self, map: &BTreeMap<Var, QPoly>) -> Atom {
        Atom::gt_zero(self.poly.substitute(map))
    }

    /// Renders as `lhs op rhs` with positive terms on the left.
    pub fn render(&self) -> String {
        let mut pos = QPoly::zero();
        let mut neg = QPoly::zero();
        for (m, c) in self.poly.terms() {
            if c.is_negative() {
                neg.add_term(m.clone(), -c.clone());
            } else {
                pos.add_term(m.clone(), c.clone());
            }
        }
        // q + 1 > neg over the integers is q >= neg.
        if pos.constant_term().is_one() && pos.num_terms() > 1 {
            let mut q = pos.clone();
            q.add_term(Monomial::one(), -Rational::one());
            return format!("{} >= {}", q.render(), neg.render());
        }
        format!("{} > {}", pos.render(), neg.render())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Boolean combination of atoms; `And([])` is true and `Or([])` is false.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Default for Formula {
    fn default() -> Self {
        Formula::tt()
    }
}

impl Formula {
    pub fn tt() -> Formula {
        Formula::And(Vec::new())
    }

    pub fn ff() -> Formula {
        Formula::Or(Vec::new())
    }

    pub fn atom(a: Atom) -> Formula {
        Formula::Atom(a)
    }

    pub fn and(parts: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::And(qs) => out.extend(qs),
                Formula::Or(qs) if qs.is_empty() => return Formula::ff(),
                q => out.push(q),
            }
        }
        if out.len() == 1 {
            return out.pop().unwrap();
        }
        Formula::And(out)
    }

    pub fn or(parts: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::Or(qs) => out.extend(qs),
                Formula::And(qs) if qs.is_empty() => return Formula::tt(),
                q => out.push(q),
            }
        }
        if out.len() == 1 {
            return out.pop().unwrap();
        }
        Formula::Or(out)
    }

    /// `p != q` as `p > q || q > p`.
    pub fn neq(lhs: &QPoly, rhs: &QPoly) -> Formula {
        Formula::or(vec![
            Formula::Atom(Atom::gt(lhs, rhs)),
            Formula::Atom(Atom::gt(rhs, lhs)),
        ])
    }

    /// `p = q` as `p >= q && q >= p`.
    pub fn eq(lhs: &QPoly, rhs: &QPoly) -> Formula {
        Formula::and(vec![
            Formula::Atom(Atom::ge(lhs, rhs)),
            Formula::Atom(Atom::ge(rhs, lhs)),
        ])
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Formula::And(v) if v.is_empty())
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Formula::Or(v) if v.is_empty())
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|f| f.collect_atoms(out)),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.atoms()
            .into_iter()
            .flat_map(|a| a.poly().vars())
            .collect()
    }

    pub fn map_atoms(&self, f: &mut dyn FnMut(&Atom) -> Formula) -> Formula {
        match self {
            Formula::Atom(a) => f(a),
            Formula::And(v) => Formula::and(v.iter().map(|g| g.map_atoms(f)).collect()),
            Formula::Or(v) => Formula::or(v.iter().map(|g| g.map_atoms(f)).collect()),
        }
    }

    pub fn substitute(&self, map: &BTreeMap<Var, QPoly>) -> Formula {
        self.map_atoms(&mut |a| Formula::Atom(a.substitute(map))).fold_constants()
    }

    /// Replace variable-free atoms by their truth value.
    pub fn fold_constants(&self) -> Formula {
        self.map_atoms(&mut |a| match a.constant_value() {
            Some(true) => Formula::tt(),
            Some(false) => Formula::ff(),
            None => Formula::Atom(a.clone()),
        })
    }

    pub fn eval(&self, s: &State) -> Result<bool, ExprError> {
        match self {
            Formula::Atom(a) => a.eval(s),
            Formula::And(v) => {
                for f in v {
                    if !f.eval(s)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Or(v) => {
                for f in v {
                    if f.eval(s)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Disjunctive normal form as a list of atom conjunctions.
    pub fn dnf(&self) -> Vec<Vec<Atom>> {
        match self {
            Formula::Atom(a) => vec![vec![a.clone()]],
            Formula::Or(v) => v.iter().flat_map(|f| f.dnf()).collect(),
            Formula::And(v) => {
                let mut acc: Vec<Vec<Atom>> = vec![Vec::new()];
                for f in v {
                    let d = f.dnf();
                    let mut next = Vec::new();
                    for a in &acc {
                        for b in &d {
                            let mut c = a.clone();
                            c.extend(b.iter().cloned());
                            next.push(c);
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }

    /// Keep only atoms satisfying `keep`; dropped atoms become true.
    pub fn weaken(&self, keep: &dyn Fn(&Atom) -> bool) -> Formula {
        self.map_atoms(&mut |a| {
            if keep(a) {
                Formula::Atom(a.clone())
            } else {
                Formula::tt()
            }
        })
    }

    pub fn render(&self) -> String {
        self.render_prec(0)
    }

    fn render_prec(&self, prec: u8) -> String {
        match self {
            Formula::Atom(a) => a.render(),
            Formula::And(v) if v.is_empty() => "true".into(),
            Formula::Or(v) if v.is_empty() => "false".into(),
            Formula::And(v) => {
                let s = v
                    .iter()
                    .map(|f| f.render_prec(2))
                    .collect::<Vec<_>>()
                    .join(" && ");
                if prec > 2 {
                    format!("({s})")
                } else {
                    s
                }
            }
            Formula::Or(v) => {
                let s = v
                    .iter()
                    .map(|f| f.render_prec(1))
                    .collect::<Vec<_>>()
                    .join(" || ");
                if prec > 1 {
                    format!("({s})")
                } else {
                    s
                }
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Absolute values of a state.
pub fn abs_state(s: &State) -> State {
    s.iter().map(|(v, x)| (v.clone(), x.abs())).collect()
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> QPoly {
        QPoly::var(Var::new(s))
    }

    #[test]
    fn natural_var_order() {
        let mut vs = vec![Var::new("x10"), Var::new("x2"), Var::new("y1"), Var::new("x1")];
        vs.sort();
        let names: Vec<&str> = vs.iter().map(Var::name).collect();
        assert_eq!(names, ["x1", "x2", "x10", "y1"]);
    }

    #[test]
    fn render_sorted_constant_last() {
        let p = &(&v("x5").scale(&rat(2)) + &v("x3").pow(5).scale(&rat(2))) + &v("x3").pow(2);
        assert_eq!(p.render(), "x3^2 + 2*x3^5 + 2*x5");
        let q = &v("x6").scale(&rat(2)) + &QPoly::from_i64(68);
        assert_eq!(q.render(), "2*x6 + 68");
    }

    #[test]
    fn gaussian_arithmetic() {
        let i = GaussianRational::i();
        assert_eq!(i.clone() * i.clone(), -GaussianRational::one());
        let a = GaussianRational::new(rat(1), rat(3));
        assert_eq!(a.norm_sq(), rat(10));
        assert_eq!((a.clone() / a).to_rat(), Some(rat(1)));
    }

    #[test]
    fn atom_normalization() {
        let a = Atom::gt(&v("x").scale(&rat(4)), &QPoly::from_i64(2));
        assert_eq!(a.poly().render(), "2*x - 1");
        let b = Atom::ge(&v("x"), &v("y"));
        assert_eq!(b.poly().render(), "x - y + 1");
    }

    #[test]
    fn substitution_and_eval() {
        let p = &v("x").pow(2) + &v("y");
        let mut m = BTreeMap::new();
        m.insert(Var::new("x"), &v("y") + &QPoly::one());
        let q = p.substitute(&m);
        assert_eq!(q.render(), "3*y + y^2 + 1");
        let mut s = State::new();
        s.insert(Var::new("y"), Int::from(2));
        assert_eq!(q.eval(&s).unwrap(), rat(11));
    }

    #[test]
    fn dnf_expansion() {
        let a = Formula::Atom(Atom::gt_zero(v("x")));
        let f = Formula::and(vec![a.clone(), Formula::neq(&v("y"), &QPoly::zero())]);
        assert_eq!(f.dnf().len(), 2);
        assert!(Formula::tt().dnf() == vec![Vec::<Atom>::new()]);
        assert!(Formula::ff().dnf().is_empty());
    }
}
