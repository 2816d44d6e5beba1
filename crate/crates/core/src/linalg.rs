//! Exact matrices, characteristic polynomials, integer and Gaussian spectra, Jordan forms.

use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::expr::{Field, GaussianRational, Int, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("non-gaussian spectrum")]
    NonGaussianSpectrum,
    #[error("singular matrix")]
    Singular,
    #[error("dimension mismatch")]
    Dimension,
}

/// Dense matrix over an exact field.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Matrix<C: Field> {
    rows: usize,
    cols: usize,
    data: Vec<C>,
}

pub type QMatrix = Matrix<Rational>;
pub type GMatrix = Matrix<GaussianRational>;

impl<C: Field> fmt::Debug for Matrix<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[")?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self[(i, j)].render()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl<C: Field> std::ops::Index<(usize, usize)> for Matrix<C> {
    type Output = C;
    fn index(&self, (i, j): (usize, usize)) -> &C {
        &self.data[i * self.cols + j]
    }
}

impl<C: Field> std::ops::IndexMut<(usize, usize)> for Matrix<C> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C {
        &mut self.data[i * self.cols + j]
    }
}

impl<C: Field> Matrix<C> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![C::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<C>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data: Vec<C> = rows.into_iter().flatten().collect();
        assert_eq!(data.len(), r * c, "ragged matrix");
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> Vec<C> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<C> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn map<D: Field>(&self, f: impl Fn(&C) -> D) -> Matrix<D> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn mul(&self, o: &Matrix<C>) -> Matrix<C> {
        assert_eq!(self.cols, o.rows, "dimension mismatch");
        let mut out: Matrix<C> = Matrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    let v = out[(i, j)].clone() + a.clone() * o[(k, j)].clone();
                    out[(i, j)] = v;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C]) -> Vec<C> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(C::zero(), |acc, j| acc + self[(i, j)].clone() * v[j].clone())
            })
            .collect()
    }

    pub fn add(&self, o: &Matrix<C>) -> Matrix<C> {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&o.data) {
            *a = a.clone() + b.clone();
        }
        out
    }

    pub fn sub(&self, o: &Matrix<C>) -> Matrix<C> {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&o.data) {
            *a = a.clone() - b.clone();
        }
        out
    }

    pub fn scale(&self, c: &C) -> Matrix<C> {
        self.map(|x| x.clone() * c.clone())
    }

    pub fn pow(&self, mut e: u32) -> Matrix<C> {
        let mut base = self.clone();
        let mut acc = Matrix::identity(self.rows);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    pub fn trace(&self) -> C {
        (0..self.rows).fold(C::zero(), |acc, i| acc + self[(i, i)].clone())
    }

    pub fn transpose(&self) -> Matrix<C> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// Reduced row echelon form and pivot columns; pivots are the leftmost usable entries.
    pub fn rref(&self) -> (Matrix<C>, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| !m[(i, c)].is_zero()) else {
                continue;
            };
            m.swap_rows(r, p);
            let inv = C::one() / m[(r, c)].clone();
            for j in 0..m.cols {
                m[(r, j)] = m[(r, j)].clone() * inv.clone();
            }
            for i in 0..m.rows {
                if i != r && !m[(i, c)].is_zero() {
                    let f = m[(i, c)].clone();
                    for j in 0..m.cols {
                        let v = m[(i, j)].clone() - f.clone() * m[(r, j)].clone();
                        m[(i, j)] = v;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Basis of the null space; each vector has a 1 at one free column.
    pub fn kernel(&self) -> Vec<Vec<C>> {
        let (r, pivots) = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        free.iter()
            .map(|&f| {
                let mut v = vec![C::zero(); self.cols];
                v[f] = C::one();
                for (i, &p) in pivots.iter().enumerate() {
                    v[p] = -r[(i, f)].clone();
                }
                v
            })
            .collect()
    }

    pub fn inverse(&self) -> Result<Matrix<C>, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::Dimension);
        }
        let n = self.rows;
        let mut aug = Matrix::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = self[(i, j)].clone();
            }
            aug[(i, n + i)] = C::one();
        }
        let (r, pivots) = aug.rref();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return Err(LinalgError::Singular);
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = r[(i, n + j)].clone();
            }
        }
        Ok(out)
    }

    pub fn from_cols(cols: &[Vec<C>]) -> Matrix<C> {
        let n = cols.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                m[(i, j)] = c[i].clone();
            }
        }
        m
    }
}

/// Coefficients `[c_0, ..., c_n]` of `det(lambda*I - A)` (Faddeev-LeVerrier).
pub fn char_poly<C: Field>(a: &Matrix<C>) -> Vec<C> {
    let n = a.rows();
    let mut coeffs = vec![C::zero(); n + 1];
    coeffs[n] = C::one();
    let mut m = Matrix::<C>::zeros(n, n);
    for k in 1..=n {
        let mut next = a.mul(&m);
        for i in 0..n {
            next[(i, i)] = next[(i, i)].clone() + coeffs[n - k + 1].clone();
        }
        m = next;
        let t = a.mul(&m).trace();
        coeffs[n - k] = -(t / C::from_i64(k as i64));
    }
    coeffs
}

/// Integer coefficients of a monic polynomial with integral rational coefficients.
pub fn to_int_coeffs(p: &[Rational]) -> Option<Vec<Int>> {
    p.iter()
        .map(|c| c.is_integer().then(|| c.to_integer()))
        .collect()
}

fn eval_int_poly(p: &[Int], x: &Int) -> Int {
    p.iter().rev().fold(Int::zero(), |acc, c| acc * x + c)
}

/// Divide by `(lambda - r)`; the caller guarantees `r` is a root.
fn deflate(p: &[Int], r: &Int) -> Vec<Int> {
    let n = p.len() - 1;
    let mut q = vec![Int::zero(); n];
    let mut carry = Int::zero();
    for i in (0..n).rev() {
        carry = &p[i + 1] + carry * r;
        q[i] = carry.clone();
    }
    q
}

/// Positive divisors of `n` (trial division; large prime cofactors are kept whole).
pub fn divisors(n: &Int) -> Vec<Int> {
    let mut n = n.abs();
    if n.is_zero() {
        return Vec::new();
    }
    let mut factors: Vec<(Int, u32)> = Vec::new();
    let mut p = Int::from(2);
    while &p * &p <= n && p < Int::from(1_000_000) {
        let mut e = 0;
        while (&n % &p).is_zero() {
            n /= &p;
            e += 1;
        }
        if e > 0 {
            factors.push((p.clone(), e));
        }
        p += 1;
    }
    if n > Int::one() {
        factors.push((n, 1));
    }
    let mut out = vec![Int::one()];
    for (p, e) in factors {
        let mut next = Vec::new();
        for d in &out {
            let mut pk = Int::one();
            for _ in 0..=e {
                next.push(d * &pk);
                pk *= &p;
            }
        }
        out = next;
    }
    out.sort();
    out
}

/// Integer roots with multiplicity, and the remaining cofactor.
pub fn integer_roots(p: &[Int]) -> (Vec<Int>, Vec<Int>) {
    let mut p = p.to_vec();
    while p.len() > 1 && p.last().is_some_and(Zero::is_zero) {
        p.pop();
    }
    let mut roots = Vec::new();
    while p.len() > 1 && p[0].is_zero() {
        p.remove(0);
        roots.push(Int::zero());
    }
    if p.len() <= 1 {
        return (roots, p);
    }
    let mut cands: Vec<Int> = Vec::new();
    for d in divisors(&p[0]) {
        cands.push(d.clone());
        cands.push(-d);
    }
    for r in cands {
        while p.len() > 1 && eval_int_poly(&p, &r).is_zero() {
            p = deflate(&p, &r);
            roots.push(r.clone());
        }
    }
    roots.sort();
    (roots, p)
}

/// Roots in `Z[i]` with multiplicity, or `None` if the spectrum is not Gaussian.
pub fn gaussian_roots(p: &[Int]) -> Option<Vec<GaussianRational>> {
    let (ints, mut rest) = integer_roots(p);
    let mut out: Vec<GaussianRational> = ints
        .into_iter()
        .map(|r| GaussianRational::from_rat(Rational::from_integer(r)))
        .collect();
    'search: while rest.len() > 1 {
        if rest.len() < 3 {
            return None;
        }
        for s in divisors(&rest[0]) {
            let smax = s.to_i64()?;
            let mut a: i64 = 0;
            while a * a < smax {
                let b2 = smax - a * a;
                let b = (b2 as f64).sqrt().round() as i64;
                if b > 0 && b * b == b2 {
                    for sa in [a, -a] {
                        // lambda^2 - 2a*lambda + s
                        let q = [Int::from(smax), Int::from(-2 * sa), Int::one()];
                        if let Some(quot) = divide_exact(&rest, &q) {
                            rest = quot;
                            let (re, im) = (Rational::from_integer(sa.into()), Rational::from_integer(b.into()));
                            out.push(GaussianRational::new(re.clone(), im.clone()));
                            out.push(GaussianRational::new(re, -im));
                            continue 'search;
                        }
                    }
                }
                a += 1;
            }
        }
        return None;
    }
    out.sort();
    Some(out)
}

fn divide_exact(p: &[Int], q: &[Int]) -> Option<Vec<Int>> {
    let mut r = p.to_vec();
    let dq = q.len() - 1;
    if r.len() < q.len() {
        return None;
    }
    let mut quot = vec![Int::zero(); r.len() - dq];
    for i in (0..quot.len()).rev() {
        let (c, rem) = r[i + dq].div_rem(&q[dq]);
        if !rem.is_zero() {
            return None;
        }
        quot[i] = c.clone();
        for j in 0..=dq {
            r[i + j] -= &c * &q[j];
        }
    }
    r.iter().all(Zero::is_zero).then_some(quot)
}

/// Coefficient fields able to host the spectrum of an integer matrix.
pub trait SpectralField: Field {
    fn roots(p: &[Int]) -> Option<Vec<Self>>;
}

impl SpectralField for Rational {
    fn roots(p: &[Int]) -> Option<Vec<Self>> {
        let (r, rest) = integer_roots(p);
        (rest.len() <= 1).then(|| r.into_iter().map(Rational::from_integer).collect())
    }
}

impl SpectralField for GaussianRational {
    fn roots(p: &[Int]) -> Option<Vec<Self>> {
        gaussian_roots(p)
    }
}

/// Jordan decomposition `J = P*A*P^-1` with ones on the superdiagonal.
#[derive(Clone, Debug)]
pub struct Jordan<C: Field> {
    pub j: Matrix<C>,
    pub p: Matrix<C>,
    pub p_inv: Matrix<C>,
    /// Length of each Jordan block in order.
    pub blocks: Vec<(C, usize)>,
}

/// Jordan form of `a` given its eigenvalues with multiplicity.
pub fn jordan<C: Field>(a: &Matrix<C>, eigenvalues: &[C]) -> Result<Jordan<C>, LinalgError> {
    let n = a.rows();
    if eigenvalues.len() != n {
        return Err(LinalgError::NonGaussianSpectrum);
    }
    let mut mult: BTreeMap<C, usize> = BTreeMap::new();
    let mut order: Vec<C> = Vec::new();
    for l in eigenvalues {
        if !mult.contains_key(l) {
            order.push(l.clone());
        }
        *mult.entry(l.clone()).or_default() += 1;
    }
    let mut cols: Vec<Vec<C>> = Vec::new();
    let mut blocks = Vec::new();
    for lambda in order {
        let m = mult[&lambda];
        let nmat = a.sub(&Matrix::identity(n).scale(&lambda));
        let mut kernels: Vec<Vec<Vec<C>>> = vec![Vec::new()];
        let mut power = Matrix::identity(n);
        while kernels.last().unwrap().len() < m {
            power = power.mul(&nmat);
            let k = power.kernel();
            if k.len() == kernels.last().unwrap().len() {
                return Err(LinalgError::NonGaussianSpectrum);
            }
            kernels.push(k);
        }
        let top = kernels.len() - 1;
        let mut chosen: Vec<Vec<C>> = Vec::new();
        let mut chains: Vec<Vec<Vec<C>>> = Vec::new();
        for level in (1..=top).rev() {
            for cand in &kernels[level] {
                let mut span: Vec<Vec<C>> = kernels[level - 1].clone();
                span.extend(chosen.iter().cloned());
                if in_span(&span, cand) {
                    continue;
                }
                let mut chain = vec![cand.clone()];
                for _ in 1..level {
                    let prev = chain.last().unwrap();
                    chain.push(nmat.mul_vec(prev));
                }
                chain.reverse();
                chosen.extend(chain.iter().cloned());
                chains.push(chain);
            }
        }
        for chain in chains {
            blocks.push((lambda.clone(), chain.len()));
            cols.extend(chain);
        }
    }
    if cols.len() != n {
        return Err(LinalgError::NonGaussianSpectrum);
    }
    let q = Matrix::from_cols(&cols);
    let q_inv = q.inverse()?;
    let j = q_inv.mul(a).mul(&q);
    Ok(Jordan {
        j,
        p: q_inv,
        p_inv: q,
        blocks,
    })
}

fn in_span<C: Field>(span: &[Vec<C>], v: &[C]) -> bool {
    if span.is_empty() {
        return v.iter().all(Zero::is_zero);
    }
    let base = Matrix::from_cols(span).rank();
    let mut ext = span.to_vec();
    ext.push(v.to_vec());
    Matrix::from_cols(&ext).rank() == base
}

/// Solve `m * x = rhs` for a square non-singular `m`, with right-hand sides in any module over `C`.
pub fn solve<C: Field, V: Clone>(
    m: &Matrix<C>,
    rhs: &[V],
    zero: V,
    axpy: impl Fn(&V, &C, &V) -> V,
) -> Result<Vec<V>, LinalgError> {
    let inv = m.inverse()?;
    Ok((0..inv.rows())
        .map(|i| {
            (0..inv.cols()).fold(zero.clone(), |acc, j| axpy(&acc, &inv[(i, j)], &rhs[j]))
        })
        .collect())
}

/// Integer power `k^e` of a field element.
pub fn field_pow<C: Field>(k: &C, e: u32) -> C {
    k.pow(e)
}

/// Whether every entry is an integer.
pub fn is_integral(m: &QMatrix) -> bool {
    m.data.iter().all(|c| c.is_integer())
}

pub fn signum_i(x: &Int) -> i32 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}
