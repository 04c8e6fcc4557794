//! Formally symmetric differential expressions
//!
//! ```text
//! M[y] = Σ_{r=0}^{h} (-1)^r (s_r y^(r))^(r)
//!      + ½ Σ_{r=0}^{k-1} i^(2r+1) {(q_r y^(r))^(r+1) + (q_r y^(r+1))^(r)}
//! ```
//!
//! with order `m = 2k` (`h = k`, `s_k > 0`) or `m = 2k - 1` (`h = k - 1`,
//! `q_{k-1} > 0`).

use std::fmt;

use serde::Serialize;

use crate::coeffdsl::{self, Expr};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64, I, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        })
    }
}

/// A coefficient together with its symbolic derivatives `0..=max_order`.
#[derive(Debug, Clone)]
struct Coefficient {
    name: String,
    derivs: Vec<Expr>,
}

impl Coefficient {
    fn new(name: String, ast: &Expr, max_order: usize) -> Self {
        let mut derivs = Vec::with_capacity(max_order + 1);
        let mut cur = ast.simplify();
        for _ in 0..=max_order {
            let next = cur.derivative(1);
            derivs.push(cur);
            cur = next;
        }
        Self { name, derivs }
    }

    fn is_zero(&self) -> bool {
        self.derivs[0].is_zero()
    }

    fn eval(&self, order: usize, x: f64) -> Result<f64> {
        self.derivs[order]
            .eval(x)
            .map_err(|e| Error::Coefficient { name: self.name.clone(), source: Box::new(e) })
    }
}

/// The expression `M` with its coefficient families.
#[derive(Debug, Clone)]
pub struct SymmetricExpression {
    order: usize,
    parity: Parity,
    k: usize,
    h: usize,
    s: Vec<Coefficient>,
    q: Vec<Coefficient>,
    origin: f64,
}

/// A positivity or finiteness failure found by [`SymmetricExpression::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub coefficient: String,
    pub x: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at x={}: {}", self.coefficient, self.x, self.message)
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

impl SymmetricExpression {
    /// Builds an expression of the given order. Missing trailing entries of
    /// `s` (up to index `h`) and `q` (up to index `k - 1`) are taken as zero.
    pub fn new(order: usize, s: Vec<Expr>, q: Vec<Expr>, origin: f64) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidExpression(format!("order must be at least 2, got {order}")));
        }
        let (parity, k) = if order % 2 == 0 { (Parity::Even, order / 2) } else { (Parity::Odd, (order + 1) / 2) };
        let h = match parity {
            Parity::Even => k,
            Parity::Odd => k - 1,
        };
        if s.len() > h + 1 {
            return Err(Error::InvalidExpression(format!(
                "order {order} admits at most {} s coefficients (s_0..s_{h}), got {}",
                h + 1,
                s.len()
            )));
        }
        if q.len() > k {
            return Err(Error::InvalidExpression(format!(
                "order {order} admits at most {k} q coefficients (q_0..q_{}), got {}",
                k - 1,
                q.len()
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidExpression(format!("origin must be finite, got {origin}")));
        }
        let mut s = s;
        s.resize(h + 1, Expr::zero());
        let mut q = q;
        q.resize(k, Expr::zero());
        let s = s.iter().enumerate().map(|(r, e)| Coefficient::new(format!("s_{r}"), e, r)).collect();
        let q = q.iter().enumerate().map(|(r, e)| Coefficient::new(format!("q_{r}"), e, r + 1)).collect();
        Ok(Self { order, parity, k, h, s, q, origin })
    }

    /// Parses coefficient strings and builds the expression.
    pub fn from_strings(order: usize, s: &[&str], q: &[&str], origin: f64) -> Result<Self> {
        let parse_all = |prefix: &str, items: &[&str]| -> Result<Vec<Expr>> {
            items
                .iter()
                .enumerate()
                .map(|(r, t)| {
                    coeffdsl::parse(t)
                        .map_err(|e| Error::Coefficient { name: format!("{prefix}_{r}"), source: Box::new(e) })
                })
                .collect()
        };
        Self::new(order, parse_all("s", s)?, parse_all("q", q)?, origin)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// True when every `q_r` is identically zero, so `M` has real coefficients.
    pub fn is_real(&self) -> bool {
        self.q.iter().all(Coefficient::is_zero)
    }

    pub fn s_coefficient(&self, r: usize) -> &Expr {
        &self.s[r].derivs[0]
    }

    pub fn q_coefficient(&self, r: usize) -> &Expr {
        &self.q[r].derivs[0]
    }

    /// `s_r^(l)(x)`; `l` may not exceed `r`.
    pub fn s_derivative(&self, r: usize, l: usize, x: f64) -> Result<f64> {
        self.s[r].eval(l, x)
    }

    /// `q_r^(l)(x)`; `l` may not exceed `r + 1`.
    pub fn q_derivative(&self, r: usize, l: usize, x: f64) -> Result<f64> {
        self.q[r].eval(l, x)
    }

    /// Default positivity grid: 256 points geometric in `x - a + 1` on `[a, a + x_max]`.
    pub fn default_grid(&self, x_max: f64) -> Vec<f64> {
        geometric_grid(self.origin, x_max, 256)
    }

    /// Reports every finiteness or positivity violation on the grid.
    pub fn validate(&self, grid: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        let leading = match self.parity {
            Parity::Even => &self.s[self.k],
            Parity::Odd => &self.q[self.k - 1],
        };
        for &x in grid {
            for coef in self.s.iter().chain(&self.q) {
                for (l, d) in coef.derivs.iter().enumerate() {
                    let name = if l == 0 { coef.name.clone() } else { format!("{}^({l})", coef.name) };
                    match d.eval(x) {
                        Ok(v) if v.is_finite() => {}
                        Ok(v) => out.push(Violation { coefficient: name, x, message: format!("non-finite value {v}") }),
                        Err(e) => out.push(Violation { coefficient: name, x, message: e.to_string() }),
                    }
                }
            }
            if let Ok(v) = leading.derivs[0].eval(x) {
                if !(v > 0.0) {
                    let kind = match self.parity {
                        Parity::Even => "s_k",
                        Parity::Odd => "q_{k-1}",
                    };
                    out.push(Violation {
                        coefficient: leading.name.clone(),
                        x,
                        message: format!("{kind} ≤ 0 at x={x} (value {v})"),
                    });
                }
            }
        }
        out
    }

    /// Coefficients `c_0..c_m` with `M[y](x) = Σ c_j y^(j)(x)`.
    pub fn expand_coefficients(&self, x: f64) -> Result<Vec<C64>> {
        let mut c = vec![ZERO; self.order + 1];
        for r in 0..=self.h {
            if self.s[r].is_zero() {
                continue;
            }
            for l in 0..=r {
                let v = sign(r) * binom(r, l) * self.s[r].eval(l, x)?;
                c[2 * r - l] += C64::new(v, 0.0);
            }
        }
        for r in 0..self.k {
            if self.q[r].is_zero() {
                continue;
            }
            for l in 0..=r + 1 {
                let w = 0.5 * sign(r) * (binom(r + 1, l) + binom(r, l)) * self.q[r].eval(l, x)?;
                c[2 * r + 1 - l] += I * w;
            }
        }
        Ok(c)
    }

    /// `M[f](x)` from the derivative vector `(f, f', …, f^(m))`.
    pub fn apply(&self, derivs: &[C64], x: f64) -> Result<C64> {
        if derivs.len() != self.order + 1 {
            return Err(Error::Dimension(format!("apply needs {} derivatives, got {}", self.order + 1, derivs.len())));
        }
        let c = self.expand_coefficients(x)?;
        Ok(c.iter().zip(derivs).map(|(a, b)| a * b).sum())
    }

    /// Last row `(λδ_{j0} - c_j) / c_m` of the companion matrix.
    pub fn companion_row(&self, lambda: C64, x: f64) -> Result<Vec<C64>> {
        let c = self.expand_coefficients(x)?;
        let cm = c[self.order];
        if cm.norm() < 1e-14 {
            return Err(Error::Degenerate { x });
        }
        Ok((0..self.order)
            .map(|j| {
                let l = if j == 0 { lambda } else { ZERO };
                (l - c[j]) / cm
            })
            .collect())
    }

    /// First-order system matrix for `M[y] = λy` in the state `(y, …, y^(m-1))`.
    pub fn companion_matrix(&self, lambda: C64, x: f64) -> Result<ComplexMatrix> {
        let row = self.companion_row(lambda, x)?;
        let m = self.order;
        let mut a = ComplexMatrix::zeros(m, m);
        for i in 0..m - 1 {
            a[(i, i + 1)] = ONE;
        }
        for (j, v) in row.into_iter().enumerate() {
            a[(m - 1, j)] = v;
        }
        Ok(a)
    }
}

/// `n` points `a - 1 + (x_max + 1)^(i/(n-1))`, from `a` to `a + x_max`.
pub fn geometric_grid(a: f64, x_max: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut g: Vec<f64> =
        (0..n).map(|i| a - 1.0 + (x_max + 1.0).powf(i as f64 / (n - 1) as f64)).collect();
    g[0] = a;
    g[n - 1] = a + x_max;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn validate_examples() {
        let e = SymmetricExpression::from_strings(2, &["0", "1"], &[], 0.0).unwrap();
        assert!(e.validate(&e.default_grid(10.0)).is_empty());

        let e = SymmetricExpression::from_strings(2, &["0", "-1"], &[], 0.0).unwrap();
        let v = e.validate(&[0.0, 1.0]);
        assert_eq!(v.len(), 2);
        assert!(v[0].message.starts_with("s_k ≤ 0 at x=0"));

        let e = SymmetricExpression::from_strings(3, &["0"], &["0", "1"], 0.0).unwrap();
        assert!(e.validate(&e.default_grid(10.0)).is_empty());
    }

    #[test]
    fn validate_reports_domain_errors() {
        let e = SymmetricExpression::from_strings(2, &["log(x)", "1"], &[], 0.0).unwrap();
        let v = e.validate(&[0.0, 1.0]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].coefficient, "s_0");
        assert_eq!(v[0].x, 0.0);
    }

    #[test]
    fn rejects_too_many_coefficients() {
        assert!(SymmetricExpression::from_strings(3, &["0", "1", "2"], &["0", "1"], 0.0).is_err());
        assert!(SymmetricExpression::from_strings(2, &["0", "1"], &["0", "1"], 0.0).is_err());
        assert!(SymmetricExpression::from_strings(1, &["1"], &[], 0.0).is_err());
    }

    #[test]
    fn expand_examples() {
        let e = SymmetricExpression::from_strings(2, &["0", "1"], &[], 0.0).unwrap();
        assert_eq!(e.expand_coefficients(0.7).unwrap(), vec![ZERO, ZERO, c(-1.0, 0.0)]);

        let e = SymmetricExpression::from_strings(3, &["0"], &["0", "1"], 0.0).unwrap();
        assert_eq!(e.expand_coefficients(2.0).unwrap(), vec![ZERO, ZERO, ZERO, c(0.0, -1.0)]);

        let e = SymmetricExpression::from_strings(2, &["-(1+x)^4", "1"], &[], 0.0).unwrap();
        assert_eq!(e.expand_coefficients(1.0).unwrap(), vec![c(-16.0, 0.0), ZERO, c(-1.0, 0.0)]);
    }

    #[test]
    fn apply_examples() {
        let e = SymmetricExpression::from_strings(2, &["0", "1"], &[], 0.0).unwrap();
        let d = [c(4.0, 0.0), c(4.0, 0.0), c(2.0, 0.0)];
        assert_eq!(e.apply(&d, 2.0).unwrap(), c(-2.0, 0.0));
        assert_eq!(e.apply(&[ZERO; 3], 2.0).unwrap(), ZERO);

        let e = SymmetricExpression::from_strings(3, &["0"], &["0", "1"], 0.0).unwrap();
        let d = [c(1.0, 0.0), c(3.0, 0.0), c(6.0, 0.0), c(6.0, 0.0)];
        assert_eq!(e.apply(&d, 1.0).unwrap(), c(0.0, -6.0));
    }

    #[test]
    fn companion_examples() {
        let e = SymmetricExpression::from_strings(2, &["0", "1"], &[], 0.0).unwrap();
        assert_eq!(e.companion_row(ZERO, 0.0).unwrap(), vec![ZERO, ZERO]);
        let a = e.companion_matrix(I, 0.0).unwrap();
        assert_eq!(a[(0, 1)], ONE);
        assert_eq!(a[(1, 0)], c(0.0, -1.0));
        assert_eq!(a[(1, 1)], ZERO);

        let e = SymmetricExpression::from_strings(3, &["0"], &["0", "1"], 0.0).unwrap();
        let row = e.companion_row(I, 3.0).unwrap();
        assert_eq!(row, vec![c(-1.0, 0.0), ZERO, ZERO]);
    }

    #[test]
    fn leading_coefficient_sign() {
        for (m, s, q) in [
            (2, vec!["0", "1+x^2"], vec![]),
            (4, vec!["x", "1", "2+sin(x)"], vec!["x"]),
            (3, vec!["1"], vec!["x", "exp(x)"]),
            (5, vec!["1", "x"], vec!["0", "1", "2"]),
        ] {
            let e = SymmetricExpression::from_strings(m, &s, &q, 0.0).unwrap();
            let k = e.k();
            for x in [0.0, 0.5, 3.0] {
                let cm = e.expand_coefficients(x).unwrap()[m];
                match e.parity() {
                    Parity::Even => assert!(cm.re * sign(k) > 0.0 && cm.im == 0.0),
                    Parity::Odd => {
                        let v = cm / (I * sign(k - 1));
                        assert!(v.re > 0.0 && v.im.abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn real_expressions_have_real_coefficients() {
        let e = SymmetricExpression::from_strings(6, &["x", "sin(x)", "x^2", "1+x"], &[], 0.0).unwrap();
        assert!(e.is_real());
        for x in [0.0, 1.3, 4.0] {
            assert!(e.expand_coefficients(x).unwrap().iter().all(|z| z.im == 0.0));
        }
    }

    // Independent oracle: build each term of M[f] as an AST, differentiate it
    // symbolically as a whole, and evaluate.
    fn brute_force(m: usize, s: &[Expr], q: &[Expr], f: &Expr, x: f64) -> C64 {
        let mul = |a: &Expr, b: &Expr| Expr::Mul(Arc::new(a.clone()), Arc::new(b.clone()));
        let mut acc = ZERO;
        for (r, sr) in s.iter().enumerate() {
            let t = mul(sr, &f.derivative(r)).derivative(r);
            acc += C64::new(sign(r) * t.eval(x).unwrap(), 0.0);
        }
        let _ = m;
        for (r, qr) in q.iter().enumerate() {
            let t1 = mul(qr, &f.derivative(r)).derivative(r + 1);
            let t2 = mul(qr, &f.derivative(r + 1)).derivative(r);
            let ipow = I.powi(2 * r as i32 + 1);
            acc += ipow * 0.5 * (t1.eval(x).unwrap() + t2.eval(x).unwrap());
        }
        acc
    }

    fn poly(coeffs: &[f64]) -> Expr {
        let text: Vec<String> = coeffs.iter().enumerate().map(|(p, a)| format!("({a})*x^{p}")).collect();
        coeffdsl::parse(&text.join("+")).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn expansion_matches_term_by_term_oracle(
            m in 2usize..=6,
            raw in proptest::collection::vec(-2.0f64..2.0, 24),
            x in 0.0f64..3.0,
        ) {
            let k = (m + 1) / 2;
            let h = if m % 2 == 0 { k } else { k - 1 };
            let coef = |i: usize| poly(&raw[3 * i..3 * i + 3]);
            let mut s: Vec<Expr> = (0..=h).map(coef).collect();
            let q: Vec<Expr> = (0..k).map(|r| coef(h + 1 + r)).collect();
            s[h] = coeffdsl::parse("2+x^2").unwrap();
            let f = poly(&raw[18..18 + (m + 1).min(6)]);
            let e = SymmetricExpression::new(m, s.clone(), q.clone(), 0.0).unwrap();
            let derivs: Vec<C64> = (0..=m).map(|j| C64::new(f.derivative(j).eval(x).unwrap(), 0.0)).collect();
            let got = e.apply(&derivs, x).unwrap();
            let want = brute_force(m, &s, &q, &f, x);
            prop_assert!((got - want).norm() <= 1e-9 * (1.0 + want.norm()), "{got} vs {want}");
        }
    }
}
