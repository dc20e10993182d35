//! Small arithmetic expression grammar for custom closed-form potentials.
//!
//! Supported: `+ - * /`, `^` (also `pow(a, b)`), `exp`, `sin`, `cos`,
//! `sqrt`, numeric literals, and variables `x1..x3`. Expressions are
//! parsed once at startup and evaluated per point; derivatives are taken
//! symbolically so that corrected potentials never fall back to numerical
//! differencing of the phase.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("parse error at offset {0}: {1}")]
    Parse(usize, String),
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize), // 0-based axis
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        Parser::new(src).parse_all()
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Ln(a) => a.eval(x).ln(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Symbolic partial derivative with respect to axis `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(var), (**b).clone()),
                    mul((**a).clone(), b.derivative(var)),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Pow(a, b) => {
                // d(a^b): constant exponent gets the power rule, the
                // general case goes through a^b (b' ln a + b a'/a).
                if let Num(c) = **b {
                    mul(
                        mul(Num(c), Pow(a.clone(), Box::new(Num(c - 1.0)))),
                        a.derivative(var),
                    )
                } else {
                    // general case: a^b * (b' ln a + b a'/a), valid for a > 0
                    let da = a.derivative(var);
                    let db = b.derivative(var);
                    mul(
                        Pow(a.clone(), b.clone()),
                        add(
                            mul(db, Ln(a.clone())),
                            div(mul((**b).clone(), da), (**a).clone()),
                        ),
                    )
                }
            }
            Neg(a) => neg(a.derivative(var)),
            Exp(a) => mul(Exp(a.clone()), a.derivative(var)),
            Ln(a) => div(a.derivative(var), (**a).clone()),
            Sin(a) => mul(Cos(a.clone()), a.derivative(var)),
            Cos(a) => neg(mul(Sin(a.clone()), a.derivative(var))),
            Sqrt(a) => div(
                a.derivative(var),
                mul(Num(2.0), Sqrt(a.clone())),
            ),
        }
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (Expr::Num(z), _) if *z == 0.0 => b,
        (_, Expr::Num(z)) if *z == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (_, Expr::Num(z)) if *z == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(z), _) | (_, Expr::Num(z)) if *z == 0.0 => Expr::Num(0.0),
        (Expr::Num(o), _) if *o == 1.0 => b,
        (_, Expr::Num(o)) if *o == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(z), _) if *z == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(o)) if *o == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => Expr::Num(-x),
        other => Expr::Neg(Box::new(other)),
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn parse_all(&mut self) -> Result<Expr, ExprError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(ExprError::Parse(self.pos, "trailing input".into()));
        }
        Ok(e)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            _ => {
                let base = self.atom()?;
                if self.peek() == Some(b'^') {
                    self.pos += 1;
                    let exp = self.factor()?; // right associative
                    Ok(Expr::Pow(Box::new(base), Box::new(exp)))
                } else {
                    Ok(base)
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Parse(self.pos, "expected `)`".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(ExprError::Parse(self.pos, "expected atom".into())),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit()
                || self.src[self.pos] == b'.'
                || self.src[self.pos] == b'e'
                || self.src[self.pos] == b'E'
                || ((self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
                    && self.pos > start
                    && (self.src[self.pos - 1] == b'e' || self.src[self.pos - 1] == b'E')))
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|e| ExprError::Parse(start, e.to_string()))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "x1" => Ok(Expr::Var(0)),
            "x2" => Ok(Expr::Var(1)),
            "x3" => Ok(Expr::Var(2)),
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "exp" | "sin" | "cos" | "sqrt" | "pow" | "ln" => {
                if self.peek() != Some(b'(') {
                    return Err(ExprError::Parse(self.pos, format!("{name} needs `(`")));
                }
                self.pos += 1;
                let arg = self.expr()?;
                let out = match name {
                    "exp" => Expr::Exp(Box::new(arg)),
                    "sin" => Expr::Sin(Box::new(arg)),
                    "cos" => Expr::Cos(Box::new(arg)),
                    "sqrt" => Expr::Sqrt(Box::new(arg)),
                    "ln" => Expr::Ln(Box::new(arg)),
                    "pow" => {
                        if self.peek() != Some(b',') {
                            return Err(ExprError::Parse(self.pos, "pow needs two args".into()));
                        }
                        self.pos += 1;
                        let b = self.expr()?;
                        Expr::Pow(Box::new(arg), Box::new(b))
                    }
                    _ => unreachable!(),
                };
                if self.peek() != Some(b')') {
                    return Err(ExprError::Parse(self.pos, "expected `)`".into()));
                }
                self.pos += 1;
                Ok(out)
            }
            other => Err(ExprError::UnknownIdent(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: [f64; 3]) -> f64 {
        Expr::parse(src).unwrap().eval(&x)
    }

    #[test]
    fn parses_arithmetic() {
        assert_eq!(ev("1 + 2 * 3", [0.0; 3]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", [0.0; 3]), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", [0.0; 3]), 512.0); // right assoc
        assert_eq!(ev("-x1 + x2 / 2", [3.0, 4.0, 0.0]), -1.0);
        assert!((ev("exp(0) + sin(0) + cos(0)", [0.0; 3]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("pow(x1, 2) - x1^2", [5.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("x4").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("sin 3").is_err());
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cases = [
            "x1^2 * x2 + sin(x1 * x2)",
            "exp(-(x1^2 + x2^2))",
            "x1 / (1 + x2^2)",
            "sqrt(1 + x1^2)",
            "cos(x1) * x1^3",
        ];
        let x = [0.7, -0.4, 0.0];
        let eps = 1e-6;
        for src in cases {
            let e = Expr::parse(src).unwrap();
            for var in 0..2 {
                let d = e.derivative(var);
                let mut xp = x;
                let mut xm = x;
                xp[var] += eps;
                xm[var] -= eps;
                let fd = (e.eval(&xp) - e.eval(&xm)) / (2.0 * eps);
                let an = d.eval(&x);
                assert!(
                    (fd - an).abs() < 1e-8 * (1.0 + an.abs()),
                    "{src} d/dx{var}: fd={fd} analytic={an}"
                );
            }
        }
    }
}
