//! Small dense complex linear algebra.
//!
//! Everything here works on matrices of at most a few dozen rows, so the
//! algorithms favour accuracy over speed: cyclic Jacobi for Hermitian
//! eigenproblems, one-sided Jacobi for singular values, partial-pivoting LU
//! for determinants and solves, and twice-applied modified Gram-Schmidt for
//! thin QR factorisations.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:>12.5e}{:+.5e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&v| C64::new(v, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<C64>]) -> Self {
        let n = cols.len();
        let rows = cols.first().map_or(0, Vec::len);
        Self::from_fn(rows, n, |r, c| cols[c][r])
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[C64]) {
        for (r, &z) in v.iter().enumerate() {
            self[(r, c)] = z;
        }
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus of `self - self^H`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    /// Sub-matrix picked by row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |r, c| self[(rows[r], cols[c])])
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

pub fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    // sum conj(a_i) b_i
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Unitary; column `j` belongs to `values[j]`.
    pub vectors: ComplexMatrix,
}

/// Cyclic complex Jacobi. Off-diagonal entries are annihilated until each is
/// negligible relative to the geometric mean of its two diagonal entries, which
/// keeps small eigenvalues of graded positive definite matrices accurate.
pub fn hermitian_eigen(a: &ComplexMatrix) -> Result<HermitianEigen> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("hermitian_eigen needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let scale = a.max_abs();
    let dev = a.hermitian_deviation();
    if dev > 1e-10 * scale {
        return Err(Error::NotHermitian { deviation: dev });
    }
    // symmetrise
    let mut h = ComplexMatrix::from_fn(n, n, |r, c| (a[(r, c)] + a[(c, r)].conj()) * 0.5);
    let mut v = ComplexMatrix::identity(n);
    const EPS: f64 = f64::EPSILON;

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = h[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let app = h[(p, p)].re;
                let aqq = h[(q, q)].re;
                if r <= EPS * (app.abs() * aqq.abs()).sqrt() || r < 1e-300 {
                    h[(p, q)] = ZERO;
                    h[(q, p)] = ZERO;
                    continue;
                }
                rotated = true;
                let phase = apq / r;
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // 2x2 unitary acting on columns p, q
                let vpp = C64::new(c, 0.0);
                let vpq = phase * s;
                let vqp = -phase.conj() * s;
                let vqq = C64::new(c, 0.0);
                for i in 0..n {
                    let hip = h[(i, p)];
                    let hiq = h[(i, q)];
                    h[(i, p)] = hip * vpp + hiq * vqp;
                    h[(i, q)] = hip * vpq + hiq * vqq;
                }
                for j in 0..n {
                    let hpj = h[(p, j)];
                    let hqj = h[(q, j)];
                    h[(p, j)] = vpp.conj() * hpj + vqp.conj() * hqj;
                    h[(q, j)] = vpq.conj() * hpj + vqq.conj() * hqj;
                }
                h[(p, q)] = ZERO;
                h[(q, p)] = ZERO;
                h[(p, p)] = C64::new(h[(p, p)].re, 0.0);
                h[(q, q)] = C64::new(h[(q, q)].re, 0.0);
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * vpp + viq * vqp;
                    v[(i, q)] = vip * vpq + viq * vqq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| h[(i, i)].re.total_cmp(&h[(j, j)].re));
    let values = order.iter().map(|&i| h[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

struct Lu {
    lu: ComplexMatrix,
    perm: Vec<usize>,
    sign: f64,
    singular_at: Option<usize>,
}

fn lu_decompose(a: &ComplexMatrix, pivot_tol: f64) -> Lu {
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular_at = None;
    for k in 0..n {
        let (mut best, mut best_abs) = (k, lu[(k, k)].norm());
        for r in (k + 1)..n {
            let v = lu[(r, k)].norm();
            if v > best_abs {
                best = r;
                best_abs = v;
            }
        }
        if best != k {
            for c in 0..n {
                let tmp = lu[(k, c)];
                lu[(k, c)] = lu[(best, c)];
                lu[(best, c)] = tmp;
            }
            perm.swap(k, best);
            sign = -sign;
        }
        if best_abs <= pivot_tol {
            singular_at.get_or_insert(k);
            if best_abs == 0.0 {
                continue;
            }
        }
        let piv = lu[(k, k)];
        for r in (k + 1)..n {
            let f = lu[(r, k)] / piv;
            lu[(r, k)] = f;
            if f == ZERO {
                continue;
            }
            for c in (k + 1)..n {
                let u = lu[(k, c)];
                lu[(r, c)] -= f * u;
            }
        }
    }
    Lu { lu, perm, sign, singular_at }
}

/// Determinant by partial-pivoting LU.
pub fn determinant(a: &ComplexMatrix) -> C64 {
    assert!(a.is_square(), "determinant of a non-square matrix");
    match a.rows {
        0 => ONE,
        1 => a[(0, 0)],
        _ => {
            let lu = lu_decompose(a, 0.0);
            let mut det = C64::new(lu.sign, 0.0);
            for i in 0..a.rows {
                det *= lu.lu[(i, i)];
            }
            det
        }
    }
}

/// Solves `A x = b`.
pub fn solve(a: &ComplexMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if !a.is_square() || a.rows != b.len() {
        return Err(Error::Dimension(format!("solve: {}x{} with rhs {}", a.rows, a.cols, b.len())));
    }
    let n = a.rows;
    let lu = lu_decompose(a, 1e-13 * a.max_abs());
    if let Some(pivot) = lu.singular_at {
        return Err(Error::Singular { pivot });
    }
    let mut y: Vec<C64> = lu.perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for k in 0..i {
            let l = lu.lu[(i, k)];
            y[i] = y[i] - l * y[k];
        }
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let u = lu.lu[(i, k)];
            y[i] = y[i] - u * y[k];
        }
        y[i] /= lu.lu[(i, i)];
    }
    Ok(y)
}

/// Singular values, descending, by one-sided (Hestenes) Jacobi.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    // work on the orientation with fewer columns
    let w = if a.cols > a.rows { a.adjoint() } else { a.clone() };
    let (m, n) = (w.rows, w.cols);
    let mut cols: Vec<Vec<C64>> = (0..n).map(|c| w.column(c)).collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma = dot_conj(&cols[p], &cols[q]);
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let xp = cols[p][i];
                    let xq = cols[q][i];
                    cols[p][i] = xp * c - xq * phase.conj() * s;
                    cols[q][i] = xp * phase * s + xq * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Thin QR of an `m x p` matrix (`p <= m`): `a = q r` with orthonormal
/// columns in `q` and upper triangular `r`. Modified Gram-Schmidt applied
/// twice.
pub fn thin_qr(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let (m, p) = (a.rows, a.cols);
    let mut q: Vec<Vec<C64>> = (0..p).map(|c| a.column(c)).collect();
    let mut r = ComplexMatrix::zeros(p, p);
    for j in 0..p {
        for _pass in 0..2 {
            for i in 0..j {
                let proj = dot_conj(&q[i], &q[j]);
                r[(i, j)] += proj;
                let qi = q[i].clone();
                for (x, y) in q[j].iter_mut().zip(&qi) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm2(&q[j]);
        r[(j, j)] = C64::new(nrm, 0.0);
        if nrm > 0.0 {
            for x in q[j].iter_mut() {
                *x /= nrm;
            }
        } else {
            // degenerate column: complete with any unit vector orthogonal to the rest
            let mut e = vec![ZERO; m];
            'search: for k in 0..m {
                e.iter_mut().for_each(|z| *z = ZERO);
                e[k] = ONE;
                for i in 0..j {
                    let proj = dot_conj(&q[i], &e);
                    let qi = q[i].clone();
                    for (x, y) in e.iter_mut().zip(&qi) {
                        *x -= proj * y;
                    }
                }
                let n = norm2(&e);
                if n > 0.5 {
                    e.iter_mut().for_each(|z| *z /= n);
                    break 'search;
                }
            }
            q[j] = e;
        }
    }
    (ComplexMatrix::from_columns(&q), r)
}

/// Solves `r x = b` for upper triangular `r`.
pub fn solve_upper(r: &ComplexMatrix, b: &[C64]) -> Vec<C64> {
    let n = r.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let u = r[(i, k)];
            x[i] = x[i] - u * x[k];
        }
        x[i] /= r[(i, i)];
    }
    x
}

/// Moore-Penrose style solve of a Hermitian positive semi-definite system
/// `h x = b`, discarding eigen-directions below `rel_cut * max eigenvalue`.
pub fn hermitian_pinv_solve(h: &ComplexMatrix, b: &[C64], rel_cut: f64) -> Result<Vec<C64>> {
    let eig = hermitian_eigen(h)?;
    let top = eig.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let n = h.rows;
    let mut x = vec![ZERO; n];
    for (j, &lam) in eig.values.iter().enumerate() {
        if lam.abs() <= rel_cut * top || lam == 0.0 {
            continue;
        }
        let vj = eig.vectors.column(j);
        let coef = dot_conj(&vj, b) / lam;
        for (xi, vi) in x.iter_mut().zip(&vj) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}
