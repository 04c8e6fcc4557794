//! The sesquilinear boundary form `[fg](x)` of Green's formula
//!
//! ```text
//! ∫_a^X (ḡ M[f] - f conj(M[g])) dx = [fg](X) - [fg](a)
//! ```
//!
//! represented by an `m × m` matrix `B(x)` with `[fg](x) = Ḡᵀ B F`, where
//! `F = (f, f', …, f^(m-1))` and `G` likewise.

use std::sync::OnceLock;

use crate::coeffdsl::Expr;
use crate::error::{Error, Result};
use crate::expression::SymmetricExpression;
use crate::linalg::{determinant, ComplexMatrix, C64, I, ZERO};

/// `B(x)` at a point.
#[derive(Debug, Clone)]
pub struct ConcomitantMatrix {
    pub x: f64,
    pub b: ComplexMatrix,
}

impl ConcomitantMatrix {
    /// `Ḡᵀ B F`.
    pub fn apply(&self, f: &[C64], g: &[C64]) -> C64 {
        let m = self.b.rows();
        let mut acc = ZERO;
        for a in 0..m {
            if g[a] == ZERO {
                continue;
            }
            let mut row = ZERO;
            for c in 0..m {
                row += self.b[(a, c)] * f[c];
            }
            acc += g[a].conj() * row;
        }
        acc
    }

    /// `‖B + B*‖_max`.
    pub fn skew_deviation(&self) -> f64 {
        let m = self.b.rows();
        let mut dev: f64 = 0.0;
        for r in 0..m {
            for c in 0..m {
                dev = dev.max((self.b[(r, c)] + self.b[(c, r)].conj()).norm());
            }
        }
        dev
    }

    pub fn determinant(&self) -> C64 {
        determinant(&self.b)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

fn sign(r: usize) -> f64 {
    if r % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Assembles `B(x)` from the closed-form concomitants of the even terms
///
/// ```text
/// P_r = Σ_{j<r} (-1)^(r+j) [ḡ^(j) (s_r f^(r))^(r-1-j) - f^(j) (s_r ḡ^(r))^(r-1-j)]
/// ```
///
/// and of the odd terms
///
/// ```text
/// Q_r = (i(-1)^r/2) { Σ_{j≤r} (-1)^j [ḡ^(j) (q_r f^(r))^(r-j) + f^(j) (q_r ḡ^(r))^(r-j)]
///                   + Σ_{j<r} (-1)^j [ḡ^(j) (q_r f^(r+1))^(r-1-j) + f^(j) (q_r ḡ^(r+1))^(r-1-j)] }
/// ```
///
/// with inner derivatives expanded by Leibniz. Entry `(a, b)` multiplies
/// `ḡ^(a) f^(b)`.
pub fn concomitant_matrix(expr: &SymmetricExpression, x: f64) -> Result<ConcomitantMatrix> {
    let m = expr.order();
    let mut b = ComplexMatrix::zeros(m, m);

    for r in 1..=expr.h() {
        if expr.s_coefficient(r).is_zero() {
            continue;
        }
        for j in 0..r {
            let n = r - 1 - j;
            for l in 0..=n {
                let v = sign(r + j) * binom(n, l) * expr.s_derivative(r, l, x)?;
                let other = 2 * r - 1 - j - l;
                b[(j, other)] += C64::new(v, 0.0);
                b[(other, j)] -= C64::new(v, 0.0);
            }
        }
    }

    for r in 0..expr.k() {
        if expr.q_coefficient(r).is_zero() {
            continue;
        }
        let front = I * (0.5 * sign(r));
        for j in 0..=r {
            let n = r - j;
            for l in 0..=n {
                let v = front * (sign(j) * binom(n, l) * expr.q_derivative(r, l, x)?);
                let other = r + n - l;
                b[(j, other)] += v;
                b[(other, j)] += v;
            }
        }
        for j in 0..r {
            let n = r - 1 - j;
            for l in 0..=n {
                let v = front * (sign(j) * binom(n, l) * expr.q_derivative(r, l, x)?);
                let other = r + 1 + n - l;
                b[(j, other)] += v;
                b[(other, j)] += v;
            }
        }
    }

    Ok(ConcomitantMatrix { x, b })
}

fn check_len(expr: &SymmetricExpression, v: &[C64], what: &str) -> Result<()> {
    if v.len() != expr.order() {
        return Err(Error::Dimension(format!("{what} has length {}, expected {}", v.len(), expr.order())));
    }
    Ok(())
}

/// `[fg](x)` for derivative vectors `F`, `G`.
pub fn bracket(expr: &SymmetricExpression, f: &[C64], g: &[C64], x: f64) -> Result<C64> {
    check_len(expr, f, "F")?;
    check_len(expr, g, "G")?;
    Ok(concomitant_matrix(expr, x)?.apply(f, g))
}

/// Matrix with entry `(r, s) = [f_r g_s](x)`.
pub fn bracket_gram(expr: &SymmetricExpression, fs: &[Vec<C64>], gs: &[Vec<C64>], x: f64) -> Result<ComplexMatrix> {
    for f in fs {
        check_len(expr, f, "F")?;
    }
    for g in gs {
        check_len(expr, g, "G")?;
    }
    let b = concomitant_matrix(expr, x)?;
    Ok(ComplexMatrix::from_fn(fs.len(), gs.len(), |r, s| b.apply(&fs[r], &gs[s])))
}

/// `|det [f_r g_s](x)|` for families of `m + 1` vectors. The form has rank at
/// most `m`, so this vanishes up to round-off.
pub fn determinantal_identity_check(
    expr: &SymmetricExpression,
    fs: &[Vec<C64>],
    gs: &[Vec<C64>],
    x: f64,
) -> Result<f64> {
    let n = expr.order() + 1;
    if fs.len() != n || gs.len() != n {
        return Err(Error::Dimension(format!("identity check needs {n} vectors per family")));
    }
    Ok(determinant(&bracket_gram(expr, fs, gs, x)?).norm())
}

/// A function on the real line whose derivatives can be sampled exactly.
pub trait SampledFunction {
    /// `(f, f', …, f^(count-1))(x)`.
    fn derivatives(&self, x: f64, count: usize) -> Result<Vec<C64>>;
}

/// Complex polynomial `Σ a_p x^p`.
#[derive(Debug, Clone)]
pub struct Polynomial {
    pub coeffs: Vec<C64>,
}

impl SampledFunction for Polynomial {
    fn derivatives(&self, x: f64, count: usize) -> Result<Vec<C64>> {
        let mut out = Vec::with_capacity(count);
        let mut c = self.coeffs.clone();
        for _ in 0..count {
            let v = c.iter().rev().fold(ZERO, |acc, a| acc * x + a);
            out.push(v);
            c = c.iter().enumerate().skip(1).map(|(p, a)| a * p as f64).collect();
        }
        Ok(out)
    }
}

/// `c · e^(μx)`.
#[derive(Debug, Clone, Copy)]
pub struct Exponential {
    pub c: C64,
    pub mu: C64,
}

impl SampledFunction for Exponential {
    fn derivatives(&self, x: f64, count: usize) -> Result<Vec<C64>> {
        let base = self.c * (self.mu * x).exp();
        let mut out = Vec::with_capacity(count);
        let mut p = C64::new(1.0, 0.0);
        for _ in 0..count {
            out.push(base * p);
            p *= self.mu;
        }
        Ok(out)
    }
}

/// A real function given as a coefficient expression, optionally supported
/// on a closed interval and zero outside it.
#[derive(Debug, Clone)]
pub struct ExprFunction {
    derivs: Vec<Expr>,
    support: Option<(f64, f64)>,
}

impl ExprFunction {
    pub fn new(ast: &Expr, max_order: usize, support: Option<(f64, f64)>) -> Self {
        let mut derivs = Vec::with_capacity(max_order + 1);
        let mut cur = ast.simplify();
        for _ in 0..=max_order {
            let next = cur.derivative(1);
            derivs.push(cur);
            cur = next;
        }
        Self { derivs, support }
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }
}

impl SampledFunction for ExprFunction {
    fn derivatives(&self, x: f64, count: usize) -> Result<Vec<C64>> {
        if count > self.derivs.len() {
            return Err(Error::Dimension(format!("{} derivatives requested, {} available", count, self.derivs.len())));
        }
        if let Some((lo, hi)) = self.support {
            if x <= lo || x >= hi {
                return Ok(vec![ZERO; count]);
            }
        }
        self.derivs[..count].iter().map(|d| Ok(C64::new(d.eval(x)?, 0.0))).collect()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

pub(crate) fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(8))
}

/// `|([fg](X) - [fg](a)) - ∫_a^X (ḡ M[f] - f conj(M[g]))|` using `panels`
/// equal panels of 8-point Gauss-Legendre quadrature.
pub fn green_residual(
    expr: &SymmetricExpression,
    f: &dyn SampledFunction,
    g: &dyn SampledFunction,
    a: f64,
    x_end: f64,
    panels: usize,
) -> Result<f64> {
    Ok(green_parts(expr, f, g, a, x_end, panels)?.0)
}

/// [`green_residual`] divided by `|[fg](X)| + |[fg](a)| + ∫ (|ḡ M[f]| + |f M[g]|)`.
pub fn green_relative_residual(
    expr: &SymmetricExpression,
    f: &dyn SampledFunction,
    g: &dyn SampledFunction,
    a: f64,
    x_end: f64,
    panels: usize,
) -> Result<f64> {
    let (res, scale) = green_parts(expr, f, g, a, x_end, panels)?;
    Ok(if scale > 0.0 { res / scale } else { res })
}

fn green_parts(
    expr: &SymmetricExpression,
    f: &dyn SampledFunction,
    g: &dyn SampledFunction,
    a: f64,
    x_end: f64,
    panels: usize,
) -> Result<(f64, f64)> {
    let m = expr.order();
    let (nodes, weights) = gl8();
    let width = (x_end - a) / panels.max(1) as f64;
    let mut integral = ZERO;
    let mut magnitude = 0.0;
    for p in 0..panels.max(1) {
        let lo = a + p as f64 * width;
        let mut panel = ZERO;
        let mut mag = 0.0;
        for (t, w) in nodes.iter().zip(weights) {
            let x = lo + 0.5 * width * (t + 1.0);
            let fd = f.derivatives(x, m + 1)?;
            let gd = g.derivatives(x, m + 1)?;
            let mf = expr.apply(&fd, x)?;
            let mg = expr.apply(&gd, x)?;
            let (u, v) = (gd[0].conj() * mf, fd[0] * mg.conj());
            panel += (u - v) * *w;
            mag += (u.norm() + v.norm()) * *w;
        }
        integral += panel * (0.5 * width);
        magnitude += mag * 0.5 * width;
    }
    let at = |x: f64| -> Result<C64> {
        let fd = f.derivatives(x, m)?;
        let gd = g.derivatives(x, m)?;
        bracket(expr, &fd, &gd, x)
    };
    let (end, start) = (at(x_end)?, at(a)?);
    Ok((((end - start) - integral).norm(), end.norm() + start.norm() + magnitude))
}
