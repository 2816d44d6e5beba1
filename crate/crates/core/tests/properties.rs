mod common;

use common::*;
use loopbound::bounds::Bound;
use loopbound::closedform::closed_form;
use loopbound::expr::{abs_state, rat, Int, Monomial, QPoly, Rational, State, Var};
use loopbound::its::{graph_analysis, parse, step};
use loopbound::rank::find_ranking;
use loopbound::rtloop::{monotonicity_threshold, overapprox_join};
use loopbound::szloop::loop_size_bound;
use num_traits::{Signed, Zero};
use proptest::prelude::*;

fn start_state(vars: &[Var], xs: &[i64]) -> State {
    vars.iter().zip(xs.iter().cycle()).map(|(v, x)| (v.clone(), Int::from(*x))).collect()
}

fn advance(l: &loopbound::loops::Loop, s: &State) -> State {
    l.vars.iter().map(|x| (x.clone(), l.image(x).eval_int(s).unwrap())).collect()
}

fn holds(b1: &Rational, a1: u32, b2: &Rational, a2: u32, k: u64, n: u64) -> bool {
    let p = |b: &Rational, a: u32| Rational::from_integer(Int::from(n).pow(a)) * num_traits::pow(b.clone(), n as usize);
    p(b1, a1) > Rational::from_integer(Int::from(k)) * p(b2, a2)
}

fn small_poly(coeffs: &[i64]) -> QPoly {
    let (x, y) = (Var::new("x"), Var::new("y"));
    let monos = [
        Monomial::one(),
        Monomial::var(x.clone()),
        Monomial::var(y.clone()),
        Monomial::from_pairs(vec![(x.clone(), 2)]),
        Monomial::from_pairs(vec![(x, 1), (y, 1)]),
    ];
    QPoly::from_terms(monos.into_iter().zip(coeffs.iter().map(|c| rat(*c))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_form_matches_interpreter(seed in 0u64..10_000, xs in prop::collection::vec(-9i64..=9, 4)) {
        let l = random_solvable_loop(seed);
        let cl = closed_form(&l).unwrap();
        let s = start_state(&l.vars, &xs);
        let mut cur = s.clone();
        for n in 0..=12u32 {
            if n >= cl.start {
                for x in &l.vars {
                    let got = cl.get(x).eval(&s, n).unwrap();
                    prop_assert!(got.im.is_zero());
                    prop_assert_eq!(got.re, Rational::from_integer(cur[x].clone()));
                }
            }
            cur = advance(&l, &cur);
        }
    }

    #[test]
    fn threshold_is_least(b1n in 1i64..12, b1d in 1i64..4, a1 in 0u32..3, b2n in 0i64..12, a2 in 0u32..3, k in 1u64..5) {
        let b1 = Rational::new(b1n.into(), b1d.into());
        let b2 = rat(b2n);
        prop_assume!(b1 > b2 || (b1 == b2 && a1 > a2));
        if let Ok(n0) = monotonicity_threshold(&b1, a1, &b2, a2, k) {
            for n in n0..n0 + 40 {
                prop_assert!(holds(&b1, a1, &b2, a2, k, n), "fails at {}", n);
            }
            if n0 > 0 {
                prop_assert!(!holds(&b1, a1, &b2, a2, k, n0 - 1));
            }
        }
    }

    #[test]
    fn join_dominates_each_argument(
        p in prop::collection::vec(-5i64..=5, 5),
        q in prop::collection::vec(-5i64..=5, 5),
        x in -20i64..=20,
        y in -20i64..=20,
    ) {
        let (p, q) = (small_poly(&p), small_poly(&q));
        let j = overapprox_join(&[&p, &q]);
        let s = start_state(&[Var::new("x"), Var::new("y")], &[x, y]);
        let abs = abs_state(&s);
        let bound = j.eval(&abs).unwrap();
        prop_assert!(p.eval(&s).unwrap().abs() <= bound);
        prop_assert!(q.eval(&s).unwrap().abs() <= bound);
    }

    #[test]
    fn printed_programs_reparse(seed in 0u64..100_000) {
        let p = parse(&random_program(seed)).unwrap();
        let printed = p.to_string();
        let q = parse(&printed).unwrap();
        prop_assert_eq!(printed, q.to_string());
        prop_assert_eq!(p.transitions.len(), q.transitions.len());
    }

    #[test]
    fn ranking_certificates_hold_on_samples(seed in 0u64..5_000, xs in prop::collection::vec(-15i64..=15, 3), u in -16i64..=16) {
        let p = parse(&random_program(seed)).unwrap();
        let temps: State = p.temps.iter().map(|t| (t.clone(), Int::from(u))).collect();
        for comp in graph_analysis(&p).components {
            let Some(rf) = find_ranking(&p, &comp, &comp) else { continue };
            let s = start_state(&p.vars, &xs);
            for &i in &comp {
                let t = &p.transitions[i];
                let Some((_, after)) = step(&(t.src.clone(), s.clone()), t, &temps) else { continue };
                let before = rf.at(&t.src).eval(&s).unwrap();
                let next = rf.at(&t.dst).eval(&after).unwrap();
                if rf.decreasing.contains(&i) {
                    prop_assert!(before >= &next + rat(1), "{} does not decrease", t.id);
                    prop_assert!(before >= rat(1), "{} not bounded", t.id);
                } else {
                    prop_assert!(before >= next, "{} increases", t.id);
                }
            }
        }
    }

    #[test]
    fn size_bound_respected_within_budget(seed in 0u64..10_000, xs in prop::collection::vec(-6i64..=6, 4), budget in 0i64..8) {
        let l = random_solvable_loop(seed);
        let r = loop_size_bound(&l, &Bound::int(budget)).unwrap();
        let s = start_state(&l.vars, &xs);
        let abs = abs_state(&s);
        let mut cur = s.clone();
        for _ in 0..=budget {
            for x in &l.vars {
                prop_assert!(r.sb[x].admits(&cur[x].abs(), &abs).unwrap(), "sb({}) = {}", x, r.sb[x].render());
            }
            cur = advance(&l, &cur);
        }
    }
}
