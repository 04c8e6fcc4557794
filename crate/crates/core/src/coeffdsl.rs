//! Coefficient expressions in one real variable `x`.
//!
//! Coefficients are written as ordinary arithmetic strings such as
//! `"-(1+x)^4"` or `"2*exp(-x)+x^2/3"`. They are parsed into an [`Expr`]
//! tree which can be evaluated and differentiated symbolically to any order,
//! so no coefficient derivative is ever approximated by finite differences.
//!
//! Grammar (highest precedence first):
//!
//! ```text
//! primary := number | "x" | func "(" expr ")" | "(" expr ")"
//! power   := primary ("^" int)*          int may carry a sign, or be "(-n)"
//! unary   := "-" unary | "+" unary | power
//! term    := unary (("*" | "/") unary)*
//! expr    := term (("+" | "-") term)*
//! func    := exp | log | sin | cos | sqrt
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Elementary functions admitted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Immutable expression tree. Children are reference counted so derivative
/// trees share structure with their parents.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    /// Integer power; the exponent is always a literal.
    Pow(Arc<Expr>, i32),
    Call(Func, Arc<Expr>),
}

impl Expr {
    pub fn zero() -> Self {
        Expr::Const(0.0)
    }

    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Depth of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.depth(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    /// Evaluates the expression at `x`.
    ///
    /// Domain violations (log of a non-positive number, sqrt of a negative
    /// number, division by zero) are reported with the offending sub-expression.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let domain = |node: &Expr, reason: &str| Error::Domain {
            node: node.to_string(),
            x,
            reason: reason.to_string(),
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var => x,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(domain(self, "division by zero"));
                }
                a.eval(x)? / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval(x)?;
                if base == 0.0 && *n < 0 {
                    return Err(domain(self, "division by zero"));
                }
                base.powi(*n)
            }
            Expr::Call(f, a) => {
                let v = a.eval(x)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(domain(self, "log of a non-positive value"));
                        }
                        v.ln()
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(domain(self, "sqrt of a negative value"));
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Symbolic derivative of the given order with respect to `x`.
    pub fn derivative(&self, order: usize) -> Expr {
        let mut e = self.simplify();
        for _ in 0..order {
            e = e.d().simplify();
        }
        e
    }

    /// Single derivative without simplification of the result.
    fn d(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Neg(a) => Neg(Arc::new(a.d())),
            Add(a, b) => Add(Arc::new(a.d()), Arc::new(b.d())),
            Sub(a, b) => Sub(Arc::new(a.d()), Arc::new(b.d())),
            Mul(a, b) => Add(
                Arc::new(Mul(Arc::new(a.d()), b.clone())),
                Arc::new(Mul(a.clone(), Arc::new(b.d()))),
            ),
            Div(a, b) => Div(
                Arc::new(Sub(
                    Arc::new(Mul(Arc::new(a.d()), b.clone())),
                    Arc::new(Mul(a.clone(), Arc::new(b.d()))),
                )),
                Arc::new(Pow(b.clone(), 2)),
            ),
            Pow(a, n) => {
                if *n == 0 {
                    return Const(0.0);
                }
                Mul(
                    Arc::new(Mul(Arc::new(Const(*n as f64)), Arc::new(Pow(a.clone(), n - 1)))),
                    Arc::new(a.d()),
                )
            }
            Call(f, a) => {
                let da = Arc::new(a.d());
                let outer = match f {
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Log => Div(Arc::new(Const(1.0)), a.clone()),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(Arc::new(Call(Func::Sin, a.clone()))),
                    Func::Sqrt => Div(
                        Arc::new(Const(1.0)),
                        Arc::new(Mul(Arc::new(Const(2.0)), Arc::new(Call(Func::Sqrt, a.clone())))),
                    ),
                };
                Mul(Arc::new(outer), da)
            }
        }
    }

    /// Conservative simplification: constant folding and neutral elements.
    pub fn simplify(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) | Var => self.clone(),
            Neg(a) => {
                let a = a.simplify();
                match a {
                    Const(c) => Const(-c),
                    Neg(inner) => (*inner).clone(),
                    other => Neg(Arc::new(other)),
                }
            }
            Add(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => Const(x + y),
                    (Some(x), _) if x == 0.0 => b,
                    (_, Some(y)) if y == 0.0 => a,
                    _ => Add(Arc::new(a), Arc::new(b)),
                }
            }
            Sub(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => Const(x - y),
                    (_, Some(y)) if y == 0.0 => a,
                    (Some(x), _) if x == 0.0 => Neg(Arc::new(b)).simplify(),
                    _ => Sub(Arc::new(a), Arc::new(b)),
                }
            }
            Mul(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => Const(x * y),
                    (Some(x), _) | (_, Some(x)) if x == 0.0 => Const(0.0),
                    (Some(x), _) if x == 1.0 => b,
                    (_, Some(y)) if y == 1.0 => a,
                    (Some(x), _) if x == -1.0 => Neg(Arc::new(b)).simplify(),
                    (_, Some(y)) if y == -1.0 => Neg(Arc::new(a)).simplify(),
                    _ => Mul(Arc::new(a), Arc::new(b)),
                }
            }
            Div(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) if y != 0.0 => Const(x / y),
                    (Some(x), _) if x == 0.0 => Const(0.0),
                    (_, Some(y)) if y == 1.0 => a,
                    _ => Div(Arc::new(a), Arc::new(b)),
                }
            }
            Pow(a, n) => {
                let a = a.simplify();
                match (*n, a.as_const()) {
                    (0, _) => Const(1.0),
                    (1, _) => a,
                    (n, Some(c)) if c != 0.0 || n > 0 => Const(c.powi(n)),
                    (n, _) => Pow(Arc::new(a), n),
                }
            }
            Call(f, a) => Call(*f, Arc::new(a.simplify())),
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised output that parses back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var => write!(f, "x"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a}+{b})"),
            Expr::Sub(a, b) => write!(f, "({a}-{b})"),
            Expr::Mul(a, b) => write!(f, "({a}*{b})"),
            Expr::Div(a, b) => write!(f, "({a}/{b})"),
            Expr::Pow(a, n) => {
                if *n < 0 {
                    write!(f, "({a}^({n}))")
                } else {
                    write!(f, "({a}^{n})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Parses a coefficient expression.
pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser { src: text, bytes: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.pos >= p.bytes.len() {
        return Err(p.error("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.error(&format!("unexpected character '{}'", p.peek_char())));
    }
    Ok(e)
}

/// `order`-th derivative of `ast`, simplified.
pub fn differentiate(ast: &Expr, order: usize) -> Expr {
    ast.derivative(order)
}

pub fn evaluate(ast: &Expr, x: f64) -> Result<f64> {
    ast.eval(x)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Syntax { offset: self.pos, message: message.to_string(), text: self.src.to_string() }
    }

    fn peek_char(&self) -> char {
        self.src[self.pos..].chars().next().unwrap_or('\0')
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.pos < self.bytes.len() && self.bytes[self.pos] == c {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Add(Arc::new(lhs), Arc::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Sub(Arc::new(lhs), Arc::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Mul(Arc::new(lhs), Arc::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Div(Arc::new(lhs), Arc::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Arc::new(self.unary()?)))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.primary()?;
        while self.eat(b'^') {
            let n = self.exponent()?;
            base = Expr::Pow(Arc::new(base), n);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32> {
        self.skip_ws();
        if self.eat(b'(') {
            let n = self.exponent()?;
            self.expect(b')')?;
            return Ok(n);
        }
        let negative = if self.eat(b'-') {
            true
        } else {
            self.eat(b'+');
            false
        };
        self.skip_ws();
        let start = self.pos;
        let literal = self.number_literal()?;
        let value: f64 = literal
            .parse()
            .map_err(|_| Error::Syntax { offset: start, message: "bad number".into(), text: self.src.into() })?;
        if value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
            return Err(Error::NonIntegerExponent { offset: start, literal: literal.to_string() });
        }
        let n = value as i32;
        Ok(if negative { -n } else { n })
    }

    fn number_literal(&mut self) -> Result<&'a str> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("expected a number"));
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let src: &'a str = self.src;
        Ok(&src[start..self.pos])
    }

    fn primary(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Err(self.error("unexpected end of input"));
        }
        let c = self.bytes[self.pos];
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            let literal = self.number_literal()?;
            let value: f64 = literal.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("invalid number '{literal}'"),
                text: self.src.to_string(),
            })?;
            return Ok(Expr::Const(value));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < self.bytes.len()
                && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = &self.src[start..self.pos];
            if name == "x" {
                return Ok(Expr::Var);
            }
            if name == "i" || name == "I" || name == "j" {
                return Err(Error::ComplexConstant { offset: start });
            }
            if let Some(func) = Func::from_name(name) {
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                return Ok(Expr::Call(func, Arc::new(arg)));
            }
            return Err(Error::UnknownIdentifier { offset: start, name: name.to_string() });
        }
        Err(self.error(&format!("unexpected character '{}'", self.peek_char())))
    }
}
