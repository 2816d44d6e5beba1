//! Size bounds for solvable loops from closed forms.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::bounds::{collapse_exponents, Bound};
use crate::closedform::{closed_form, closed_form_solvable, ClosedFormError, PolyExp};
use crate::expr::{norm_poly, Field, Rational, Var};
use crate::loops::{chain, classify, Loop};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SizeError {
    #[error("loop is not solvable")]
    Unsolvable,
    #[error("no closed form: {0}")]
    ClosedForm(#[from] ClosedFormError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SizePath {
    GaussianExact,
    ChainedFallback,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopSizeResult {
    pub sb: BTreeMap<Var, Bound>,
    pub path: SizePath,
}

/// `||pe||` with `n` replaced by the bound `n`.
pub fn norm_pe_at<C: Field>(pe: &PolyExp<C>, n: &Bound) -> Bound {
    let mut parts = Vec::new();
    for t in pe.terms() {
        let mut fs = vec![norm_poly(&t.coeff)];
        if t.a > 0 {
            fs.push(Bound::pow(n.clone(), t.a));
        }
        let m = t.b.modulus();
        if !m.is_one() {
            let base = match m.to_rational() {
                Some(r) => r,
                None => Rational::from_integer(m.ceil()),
            };
            fs.push(Bound::exp(base, n.clone()));
        }
        parts.push(Bound::product(fs));
    }
    Bound::sum(parts)
}

/// `||pe||` as a bound over the program variables and `n`.
pub fn norm_pe<C: Field>(pe: &PolyExp<C>) -> Bound {
    norm_pe_at(pe, &Bound::var(&Var::new("n")))
}

fn finish(b: Bound) -> Bound {
    collapse_exponents(&b.simplify())
}

/// Size bounds of all loop variables along runs of at most `rb` iterations.
pub fn loop_size_bound(l: &Loop, rb: &Bound) -> Result<LoopSizeResult, SizeError> {
    loop_size_bound_with(l, rb, true)
}

/// As [`loop_size_bound`]; with `gaussian` off only the chained fallback is used.
pub fn loop_size_bound_with(l: &Loop, rb: &Bound, gaussian: bool) -> Result<LoopSizeResult, SizeError> {
    if !classify(l).is_solvable() {
        return Err(SizeError::Unsolvable);
    }
    if !gaussian {
        return chained_fallback(l, rb);
    }
    match closed_form(l) {
        Ok(cl) => {
            let mut sb = BTreeMap::new();
            for v in &l.vars {
                let mut parts = vec![norm_pe_at(&cl.get(v), rb)];
                for k in 0..cl.start {
                    parts.push(norm_poly(&l.update_power(k)[v]));
                }
                sb.insert(v.clone(), finish(Bound::max(parts)));
            }
            Ok(LoopSizeResult {
                sb,
                path: SizePath::GaussianExact,
            })
        }
        Err(_) => chained_fallback(l, rb),
    }
}

/// Chain by the period, bound the chained run, then cover the intermediate steps.
pub fn chained_fallback(l: &Loop, rb: &Bound) -> Result<LoopSizeResult, SizeError> {
    let p = classify(l).period.ok_or(SizeError::Unsolvable)?;
    let lp = chain(l, p);
    let cl = closed_form_solvable::<Rational>(&lp)?;
    let mut base: BTreeMap<Var, Bound> = BTreeMap::new();
    for v in &l.vars {
        let mut parts = vec![norm_pe_at(&cl.get(v), rb)];
        for k in 0..cl.start {
            parts.push(norm_poly(&lp.update_power(k)[v]));
        }
        base.insert(v.clone(), Bound::max(parts));
    }
    let mut sb = BTreeMap::new();
    for v in &l.vars {
        let parts: Vec<Bound> = (0..p)
            .map(|k| norm_poly(&l.update_power(k)[v]).subst_map(&base))
            .collect();
        sb.insert(v.clone(), finish(Bound::max(parts)));
    }
    Ok(LoopSizeResult {
        sb,
        path: SizePath::ChainedFallback,
    })
}
