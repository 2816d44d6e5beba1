//! Runtime bounds for prs-loops from stabilization thresholds of their guards.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{relax_logs, Bound, BoundClass};
use crate::closedform::{closed_form_solvable, guard_pe, ClosedFormError, PolyExp};
use crate::expr::{norm_poly, rat, Monomial, QPoly, Rational, Var};
use crate::loops::{classify, eliminate_unsolvable, Elimination, Loop};
use crate::termination::{tnn_chain, TerminationOracle, TerminationVerdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThresholdError {
    #[error("invalid threshold query: ({0}, {1}) is not above ({2}, {3})")]
    Invalid(Rational, u32, Rational, u32),
    #[error("threshold search exceeded {0} steps")]
    TooLarge(u64),
    #[error("poly-exponential expression has a base outside the non-negative rationals")]
    BadBase,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeFailure {
    #[error("loop is not solvable and no elimination applies")]
    Unsolvable,
    #[error("loop is not periodic rational")]
    NotPrs,
    #[error("loop does not terminate")]
    NotTerminating,
    #[error("termination unknown: {0}")]
    TerminationUnknown(String),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

const SCAN_LIMIT: u64 = 1_000_000;

fn pow_nat(n: u64, a: u32) -> Rational {
    Rational::from_integer(num_bigint::BigInt::from(n).pow(a))
}

fn pow_rat(b: &Rational, n: u64) -> Rational {
    num_traits::pow::pow(b.clone(), n as usize)
}

/// Least `n0` with `n^a1 * b1^n > k * n^a2 * b2^n` for every `n >= n0`.
pub fn monotonicity_threshold(
    b1: &Rational,
    a1: u32,
    b2: &Rational,
    a2: u32,
    k: u64,
) -> Result<u64, ThresholdError> {
    let above = b1 > b2 || (b1 == b2 && a1 > a2);
    if !above || b1.is_zero() || b2.is_negative() || k == 0 {
        return Err(ThresholdError::Invalid(b1.clone(), a1, b2.clone(), a2));
    }
    let kk = Rational::from_integer(k.into());
    let holds = |n: u64| pow_nat(n, a1) * pow_rat(b1, n) > &kk * pow_nat(n, a2) * pow_rat(b2, n);
    // from n_star on the ratio of both sides is non-decreasing
    let mut n_star = 1u64;
    if a1 < a2 && !b2.is_zero() {
        let q = b1 / b2;
        let d = a2 - a1;
        while pow_rat(&(Rational::new((n_star + 1).into(), n_star.into())), d as u64) > q {
            n_star += 1;
            if n_star > SCAN_LIMIT {
                return Err(ThresholdError::TooLarge(SCAN_LIMIT));
            }
        }
    }
    let mut m = n_star;
    while !holds(m) {
        m += 1;
        if m - n_star > SCAN_LIMIT {
            return Err(ThresholdError::TooLarge(SCAN_LIMIT));
        }
    }
    let mut n = m;
    while n > 0 {
        if !holds(n - 1) {
            return Ok(n);
        }
        n -= 1;
    }
    Ok(0)
}

/// Per-monomial maximum of absolute coefficients.
pub fn overapprox_join(polys: &[&QPoly]) -> QPoly {
    let mut best: BTreeMap<Monomial, Rational> = BTreeMap::new();
    for p in polys {
        for (m, c) in p.terms() {
            let e = best.entry(m.clone()).or_insert_with(Rational::zero);
            if c.abs() > *e {
                *e = c.abs();
            }
        }
    }
    QPoly::from_terms(best)
}

struct Summand {
    p: QPoly,
    a: u32,
    b: Rational,
}

fn summands(pe: &PolyExp<Rational>) -> Result<Vec<Summand>, ThresholdError> {
    pe.terms()
        .iter()
        .map(|t| {
            if t.b.is_negative() {
                Err(ThresholdError::BadBase)
            } else {
                Ok(Summand {
                    p: t.coeff.clone(),
                    a: t.a,
                    b: t.b.clone(),
                })
            }
        })
        .collect()
}

fn join_bound(s: &[Summand]) -> Bound {
    let ps: Vec<&QPoly> = s.iter().map(|x| &x.p).collect();
    norm_poly(&overapprox_join(&ps))
}

/// `N_j` for 1-based `j >= 2`.
fn n_j(s: &[Summand], j: usize) -> Result<u64, ThresholdError> {
    if j == 2 {
        return Ok(1);
    }
    let (x, y) = (&s[j - 2], &s[j - 3]);
    let mt_prime = monotonicity_threshold(&x.b, x.a, &y.b, y.a, (j - 2) as u64)?;
    if j == 3 {
        return Ok(mt_prime);
    }
    let mut mt = 0;
    for z in &s[..j - 3] {
        mt = mt.max(monotonicity_threshold(&y.b, y.a, &z.b, z.a, 1)?);
    }
    Ok(mt.max(mt_prime))
}

/// Polynomial bound `max{C, 2 * join(p_1..p_(l-1))}` on the stabilization threshold.
pub fn sth_bound_poly(pe: &PolyExp<Rational>) -> Result<Bound, ThresholdError> {
    let s = summands(pe)?;
    if s.len() <= 1 {
        return Ok(Bound::one());
    }
    let mut c = 1u64;
    for j in 2..=s.len() {
        let (cur, prev) = (&s[j - 1], &s[j - 2]);
        let m = if cur.b == prev.b {
            0
        } else {
            monotonicity_threshold(&cur.b, cur.a, &prev.b, prev.a + 1, 1)?
        };
        c = c.max(m).max(n_j(&s, j)?);
    }
    let pol = join_bound(&s[..s.len() - 1]);
    Ok(Bound::max(vec![
        Bound::int(c as i64),
        Bound::product(vec![Bound::int(2), pol]),
    ]))
}

/// Gap used between consecutive bases.
pub fn epsilon(b_hi: &Rational, b_lo: &Rational) -> Rational {
    let half_gap = (b_hi - b_lo) / rat(2);
    half_gap.min(Rational::new(1.into(), 2.into()))
}

/// Logarithmic bound; `None` unless the bases are strictly increasing.
pub fn sth_bound_log(pe: &PolyExp<Rational>) -> Result<Option<Bound>, ThresholdError> {
    let s = summands(pe)?;
    if s.windows(2).any(|w| w[0].b >= w[1].b) {
        return Ok(None);
    }
    if s.len() <= 1 {
        return Ok(Some(Bound::one()));
    }
    let mut c = 1u64;
    let mut logs = Vec::new();
    for j in 2..=s.len() {
        let (cur, prev) = (&s[j - 1], &s[j - 2]);
        let eps = epsilon(&cur.b, &prev.b);
        let mid = &prev.b + &eps;
        let m = monotonicity_threshold(&mid, cur.a, &prev.b, prev.a, 1)?;
        c = c.max(m).max(n_j(&s, j)?);
        let base = &cur.b / &mid;
        let arg = Bound::product(vec![Bound::int(2), join_bound(&s[..j - 1])]);
        logs.push(Bound::log(base, arg));
    }
    logs.push(Bound::int(c as i64));
    Ok(Some(Bound::max(logs)))
}

/// Bound for one atom: the better of both lemmas by asymptotic class.
pub fn atom_bound(pe: &PolyExp<Rational>) -> Result<Bound, ThresholdError> {
    atom_bound_with(pe, &RuntimeOptions::default())
}

pub fn atom_bound_with(pe: &PolyExp<Rational>, opts: &RuntimeOptions) -> Result<Bound, ThresholdError> {
    if pe.terms().len() <= 1 {
        return Ok(Bound::one());
    }
    let poly = sth_bound_poly(pe)?;
    if !opts.log_bounds {
        return Ok(poly);
    }
    Ok(match sth_bound_log(pe)? {
        Some(log) if log.classify() < poly.classify() => log,
        _ => poly,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuntimeOptions {
    /// Allow logarithmic stabilization-threshold bounds.
    pub log_bounds: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions { log_bounds: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RuntimeKind {
    Logarithmic,
    Polynomial,
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomTrace {
    pub atom: String,
    pub pe: String,
    pub bound: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RuntimeTrace {
    pub eliminated: Vec<(Var, String)>,
    pub period: u32,
    pub chain_length: u32,
    pub chained_guard: bool,
    pub loop_used: String,
    pub start_value: u32,
    pub atoms: Vec<AtomTrace>,
    pub unrelaxed: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopRuntimeResult {
    pub rb: Bound,
    pub kind: RuntimeKind,
    pub trace: RuntimeTrace,
}

fn kind_of(b: &Bound) -> RuntimeKind {
    match b.classify() {
        BoundClass::Finite { poly: 0, log } if log > 0 => RuntimeKind::Logarithmic,
        _ => RuntimeKind::Polynomial,
    }
}

/// Stabilization-threshold bound of a tnn-loop: max over atom bounds and the start value.
fn tnn_bound(l: &Loop, opts: &RuntimeOptions) -> Result<(Bound, Vec<AtomTrace>, u32), RuntimeFailure> {
    let cl = closed_form_solvable::<Rational>(l)?;
    let mut parts = vec![Bound::int(cl.start as i64)];
    let mut atoms = Vec::new();
    for (a, pe) in guard_pe(l, &cl) {
        let b = atom_bound_with(&pe, opts)?;
        atoms.push(AtomTrace {
            atom: a.render(),
            pe: pe.render(),
            bound: b.render(),
        });
        parts.push(b);
    }
    Ok((Bound::max(parts), atoms, cl.start))
}

fn verdict(v: TerminationVerdict) -> Result<(), RuntimeFailure> {
    match v {
        TerminationVerdict::Terminating => Ok(()),
        TerminationVerdict::NonTerminating { .. } => Err(RuntimeFailure::NotTerminating),
        TerminationVerdict::Unknown { reason } => Err(RuntimeFailure::TerminationUnknown(reason)),
    }
}

fn back_substitute(rb: &Bound, elims: &[Elimination]) -> Bound {
    elims.iter().rev().fold(rb.clone(), |acc, e| {
        let norm = norm_poly(&e.replaced);
        acc.subst(&|v| (v == &e.fresh).then(|| norm.clone()))
    })
}

/// Runtime bound of a single loop on all integer inputs.
pub fn loop_runtime_bound(
    l: &Loop,
    oracle: &dyn TerminationOracle,
) -> Result<LoopRuntimeResult, RuntimeFailure> {
    loop_runtime_bound_with(l, oracle, &RuntimeOptions::default())
}

pub fn loop_runtime_bound_with(
    l: &Loop,
    oracle: &dyn TerminationOracle,
    opts: &RuntimeOptions,
) -> Result<LoopRuntimeResult, RuntimeFailure> {
    if l.guard_is_false() {
        return Ok(LoopRuntimeResult {
            rb: Bound::zero(),
            kind: RuntimeKind::Polynomial,
            trace: RuntimeTrace {
                eliminated: Vec::new(),
                period: 1,
                chain_length: 1,
                chained_guard: false,
                loop_used: l.to_string(),
                start_value: 0,
                atoms: Vec::new(),
                unrelaxed: "0".into(),
            },
        });
    }
    let reduced = l.drop_irrelevant();
    let (reduced, elims) = if classify(&reduced).is_solvable() {
        (reduced, Vec::new())
    } else {
        eliminate_unsolvable(&reduced).ok_or(RuntimeFailure::Unsolvable)?
    };
    let period = classify(&reduced).period.ok_or(RuntimeFailure::NotPrs)?;
    verdict(oracle.check(&reduced))?;
    let (chained, q) = tnn_chain(&reduced).ok_or(RuntimeFailure::NotPrs)?;

    // plain guard with the iterated update, if that loop terminates as well
    let plain = Loop::new(&reduced.vars, reduced.guard.clone(), chained.update.clone());
    let use_plain = q == 1 || oracle.check(&plain).is_terminating();
    let target = if use_plain { plain } else { chained };
    let (inner, atoms, start) = tnn_bound(&target, opts)?;
    let qb = Bound::int(q as i64);
    let raw = if use_plain {
        Bound::product(vec![qb, inner.clone()])
    } else {
        Bound::sum(vec![
            Bound::product(vec![qb, inner.clone()]),
            Bound::int(q as i64 - 1),
        ])
    };
    let relaxed = if use_plain {
        Bound::product(vec![Bound::int(q as i64), relax_logs(&inner)])
    } else {
        Bound::sum(vec![
            Bound::product(vec![Bound::int(q as i64), relax_logs(&inner)]),
            Bound::int(q as i64 - 1),
        ])
    };
    let rb = back_substitute(&relaxed, &elims).simplify();
    Ok(LoopRuntimeResult {
        kind: kind_of(&rb),
        trace: RuntimeTrace {
            eliminated: elims.iter().map(|e| (e.fresh.clone(), e.replaced.render())).collect(),
            period,
            chain_length: q,
            chained_guard: !use_plain,
            loop_used: target.to_string(),
            start_value: start,
            atoms,
            unrelaxed: back_substitute(&raw, &elims).render(),
        },
        rb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::PeTerm;
    use crate::expr::{ratio, Atom, Formula};
    use crate::loops::Update;
    use crate::termination::AssumeTerminating;

    fn v(s: &str) -> QPoly {
        QPoly::var(Var::new(s))
    }

    #[test]
    fn thresholds() {
        assert_eq!(monotonicity_threshold(&rat(4), 0, &rat(3), 1, 1), Ok(7));
        assert_eq!(monotonicity_threshold(&rat(9), 0, &rat(1), 0, 1), Ok(1));
        assert_eq!(monotonicity_threshold(&rat(9), 0, &rat(1), 1, 1), Ok(0));
        assert_eq!(monotonicity_threshold(&rat(16), 0, &rat(9), 1, 1), Ok(0));
        assert_eq!(monotonicity_threshold(&ratio(3, 2), 0, &rat(1), 0, 1), Ok(1));
        assert_eq!(monotonicity_threshold(&ratio(19, 2), 0, &rat(9), 0, 1), Ok(1));
        assert!(monotonicity_threshold(&rat(2), 1, &rat(2), 1, 1).is_err());
    }

    fn paper_pe() -> PolyExp<Rational> {
        PolyExp::from_terms(
            vec![
                PeTerm { coeff: v("x4").pow(2).scale(&rat(-2)), a: 0, b: rat(16) },
                PeTerm { coeff: &v("x3").pow(2) + &v("x5").scale(&rat(2)), a: 0, b: rat(9) },
                PeTerm { coeff: &v("x3").pow(5).scale(&rat(2)) - &v("x3").pow(2), a: 0, b: rat(1) },
            ],
            0,
        )
    }

    #[test]
    fn join_example() {
        let a = &v("x3").pow(5).scale(&rat(2)) - &v("x3").pow(2);
        let b = &v("x3").pow(2) + &v("x5").scale(&rat(2));
        assert_eq!(overapprox_join(&[&a, &b]).render(), "x3^2 + 2*x3^5 + 2*x5");
    }

    #[test]
    fn poly_sth_example() {
        let b = sth_bound_poly(&paper_pe()).unwrap();
        assert_eq!(b.render(), "max{1, 2*x3^2 + 4*x3^5 + 4*x5}");
    }

    #[test]
    fn log_sth_example() {
        let b = sth_bound_log(&paper_pe()).unwrap().unwrap();
        assert_eq!(relax_logs(&b).render(), "3/2 + 3/2*log2(x3^2 + 2*x3^5 + 2*x5)");
    }

    #[test]
    fn pipeline_with_assumed_termination() {
        let guard = Formula::and(vec![
            Formula::Atom(Atom::gt(&v("x5"), &(&v("x4").pow(2) - &v("x3").pow(5)))),
            Formula::neq(&v("x4"), &QPoly::zero()),
        ]);
        let mut u = Update::new();
        u.insert(Var::new("x1"), &v("x1").scale(&rat(3)) + &v("x2").scale(&rat(2)));
        u.insert(Var::new("x2"), &v("x1").scale(&rat(-5)) - &v("x2").scale(&rat(3)));
        u.insert(Var::new("x4"), v("x4").scale(&rat(-2)));
        u.insert(Var::new("x5"), &v("x5").scale(&rat(3)) + &v("x3").pow(2));
        let names = ["x1", "x2", "x3", "x4", "x5"].map(Var::new);
        let l = Loop::new(&names, guard, u);
        let r = loop_runtime_bound(&l, &AssumeTerminating).unwrap();
        assert_eq!(r.rb.render(), "3 + 3*log2(x3^2 + 2*x3^5 + 2*x5)");
        assert_eq!(r.kind, RuntimeKind::Logarithmic);
        assert_eq!(r.trace.chain_length, 2);
    }
}
