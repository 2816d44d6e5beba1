#![allow(dead_code)]

use loopbound::expr::{rat, Atom, Formula, QPoly, Var};
use loopbound::loops::{Loop, Update};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const FIG2: &str = include_str!("../../programs/fig2.its");
pub const FIG2_SPLIT: &str = include_str!("../../programs/fig2_split.its");
pub const FIG3: &str = include_str!("../../programs/fig3.its");

pub fn v(s: &str) -> QPoly {
    QPoly::var(Var::new(s))
}

pub fn vars(names: &[&str]) -> Vec<Var> {
    names.iter().map(|n| Var::new(n)).collect()
}

/// Rotation on (x1, x2), counter x3, sign flip on x4, growth on x5.
pub fn running_loop() -> Loop {
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

/// The running loop with `x5` replaced by the defective pair `y1, y2`.
pub fn defective_loop() -> Loop {
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
        &(&(&v("y1").scale(&rat(-4)) + &v("y1").pow(2).scale(&rat(2))) + &v("y2").scale(&rat(3))) + &v("x3").pow(2),
    );
    Loop::new(&vars(&["x1", "x2", "x3", "x4", "y1", "y2"]), guard, u)
}

fn small(rng: &mut StdRng, lo: i64, hi: i64) -> QPoly {
    QPoly::from_i64(rng.random_range(lo..=hi))
}

/// Random solvable loop with at most four variables: an optional 2x2 linear
/// block followed by triangular variables with polynomial tails.
pub fn random_solvable_loop(seed: u64) -> Loop {
    let mut rng = StdRng::seed_from_u64(seed);
    let dim = rng.random_range(1..=4usize);
    let names: Vec<Var> = (0..dim).map(|i| Var::new(&format!("v{i}"))).collect();
    let mut u = Update::new();
    let mut k = 0;
    if dim >= 2 && rng.random_bool(0.4) {
        let (a, b) = (QPoly::var(names[0].clone()), QPoly::var(names[1].clone()));
        // blocks whose eigenvalues are Gaussian rationals
        let blocks = [[0, -1, 1, 0], [3, 2, -5, -3], [1, -1, 1, 1], [2, 1, 1, 2], [0, 1, 1, 0], [1, 1, 1, 1], [2, 1, 0, -1]];
        let m = blocks[rng.random_range(0..blocks.len())];
        u.insert(names[0].clone(), &a.scale(&rat(m[0])) + &b.scale(&rat(m[1])));
        u.insert(names[1].clone(), &a.scale(&rat(m[2])) + &b.scale(&rat(m[3])));
        k = 2;
    }
    for i in k..dim {
        let me = QPoly::var(names[i].clone());
        let mut img = me.scale(&rat(rng.random_range(-3..=3)));
        for w in names.iter().take(i) {
            let e = rng.random_range(0..=2u32);
            if e > 0 && rng.random_bool(0.5) {
                img = &img + &QPoly::var(w.clone()).pow(e).scale(&rat(rng.random_range(-2..=2)));
            }
        }
        img = &img + &small(&mut rng, -3, 3);
        u.insert(names[i].clone(), img);
    }
    let guard = Formula::Atom(Atom::gt_zero(QPoly::var(names[0].clone())));
    Loop::new(&names, guard, u)
}

fn pick<'a>(rng: &mut StdRng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// Random integer program in the text format over `x, y, z` with temporary `u`.
/// Stages are chained after each other; each stage is one loop shape.
pub fn random_program(seed: u64) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let names = ["x", "y", "z"];
    let mut out = String::from("vars x y z\ntemp u\nstart l0\n");
    out.push_str("l0 -> l1\n");
    let stages = rng.random_range(1..=3);
    for s in 1..=stages {
        let here = format!("l{s}");
        let next = format!("l{}", s + 1);
        let a = pick(&mut rng, &names);
        let b = pick(&mut rng, &names.iter().copied().filter(|n| *n != a).collect::<Vec<_>>());
        let c = rng.random_range(0..=3);
        match rng.random_range(0..7) {
            0 => out.push_str(&format!("{here} ({a} > 0) -> {here} {{ {a} := {a} - 1; {b} := {b} + {c} }}\n")),
            1 => out.push_str(&format!("{here} ({a} >= u && u > 0) -> {here} {{ {a} := {a} - u }}\n")),
            2 => out.push_str(&format!("{here} ({b} > 0 && {a} > {b}) -> {here} {{ {b} := 2*{b} }}\n")),
            3 => out.push_str(&format!(
                "{here} ({b} < {a} && {b} != 0) -> {here} {{ {b} := -2*{b}; {a} := {a} + {c} }}\n"
            )),
            4 => {
                let mid = format!("m{s}");
                out.push_str(&format!("{here} ({a} > 0) -> {mid} {{ {a} := {a} - 1 }}\n"));
                out.push_str(&format!("{mid} -> {here} {{ {b} := {b} + {a}^2 }}\n"));
            }
            5 => {
                let inner = format!("i{s}");
                out.push_str(&format!("{here} ({a} > 0) -> {inner} {{ {a} := {a} - 1; {b} := {a} }}\n"));
                out.push_str(&format!("{inner} ({b} > 0) -> {inner} {{ {b} := {b} - 1 }}\n"));
                out.push_str(&format!("{inner} ({b} <= 0) -> {here}\n"));
            }
            _ => {
                out.push_str(&format!("{here} ({a} > 0) -> {here} {{ {a} := {a} - 1; {b} := {b} + {c} }}\n"));
                out.push_str(&format!("{here} ({a} > 0) -> {here} {{ {a} := {a} - 1; {b} := {b} + {a} + 1 }}\n"));
            }
        }
        let w = pick(&mut rng, &names);
        let r = pick(&mut rng, &names);
        let exit = match rng.random_range(0..4) {
            0 => format!("{here} -> {next}\n"),
            1 => format!("{here} -> {next} {{ {w} := {r} + {c} }}\n"),
            2 => format!("{here} -> {next} {{ {w} := 2*{r} }}\n"),
            _ => format!("{here} -> {next} {{ {w} := {r}*{r} }}\n"),
        };
        out.push_str(&exit);
    }
    out
}
