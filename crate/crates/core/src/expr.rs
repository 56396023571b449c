//! Small arithmetic expression language used by system-definition files.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 't' | 'x<i>' | constant | func '(' expr ')' | 'pow' '(' expr ',' expr ')' | '(' expr ')'
//! ```
//!
//! Coordinates are 1-based (`x1`, `x2`, ...). Named constants are substituted
//! at parse time, so the tree only ever holds numbers, `t` and coordinates.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    /// 0-based coordinate index.
    Coord(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Differentiation variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    Coord(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

impl Expr {
    pub fn parse(src: &str, constants: &BTreeMap<String, f64>) -> Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            constants,
        };
        let e = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(ParseError {
                column: tok.col,
                message: format!("unexpected `{}`", tok.kind),
            });
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Coord(i) => x[*i],
            Expr::Neg(a) => -a.eval(x, t),
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, b) => {
                let base = a.eval(x, t);
                match **b {
                    Expr::Num(n) if n == n.trunc() && n.abs() <= 64.0 => base.powi(n as i32),
                    _ => base.powf(b.eval(x, t)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(x, t)),
        }
    }

    /// Largest coordinate index referenced plus one.
    pub fn coord_arity(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Time => 0,
            Expr::Coord(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.coord_arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.coord_arity().max(b.coord_arity())
            }
        }
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::Coord(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_time(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on_time() || b.depends_on_time()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    /// Symbolic derivative with light constant folding.
    pub fn derivative(&self, var: Var) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Time => Num(if var == Var::Time { 1.0 } else { 0.0 }),
            Coord(i) => Num(if var == Var::Coord(*i) { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
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
                pow((**b).clone(), Num(2.0)),
            ),
            Pow(a, b) => {
                let da = a.derivative(var);
                if let Num(n) = **b {
                    // d(a^n) = n a^(n-1) da
                    return mul(mul(Num(n), pow((**a).clone(), Num(n - 1.0))), da);
                }
                // d(a^b) = a^b (db ln a + b da / a)
                let db = b.derivative(var);
                mul(
                    self.clone(),
                    add(
                        mul(db, Call(Func::Ln, a.clone())),
                        div(mul((**b).clone(), da), (**a).clone()),
                    ),
                )
            }
            Call(f, a) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    return Num(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Call(Func::Cos, Box::new(inner)),
                    Func::Cos => neg(Call(Func::Sin, Box::new(inner))),
                    Func::Tan => div(Num(1.0), pow(Call(Func::Cos, Box::new(inner)), Num(2.0))),
                    Func::Exp => Call(Func::Exp, Box::new(inner)),
                    Func::Ln => div(Num(1.0), inner),
                    Func::Sqrt => div(Num(0.5), Call(Func::Sqrt, Box::new(inner))),
                };
                mul(outer, da)
            }
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        (Expr::Num(v), _) if *v == 1.0 => b,
        (_, Expr::Num(v)) if *v == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => Expr::Num(0.0),
        (_, Expr::Num(v)) if *v == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Num(v)) if *v == 1.0 => a,
        (_, Expr::Num(v)) if *v == 0.0 => Expr::Num(1.0),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` prints the shortest representation that parses back to the same bits.
            Expr::Num(v) if *v < 0.0 => write!(f, "({v:?})"),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Time => write!(f, "t"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => write!(f, "{s}"),
            TokKind::Op(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    col: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ParseError {
                column: col,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                col,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                kind: TokKind::Op(c),
                col,
            });
            i += 1;
        } else {
            return Err(ParseError {
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    constants: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token {
                kind: TokKind::Op(c), ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn col(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.col)
            .or_else(|| self.tokens.last().map(|t| t.col + 1))
            .unwrap_or(1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.col(),
            message: message.into(),
        })
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{op}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return self.err("unexpected end of expression");
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            TokKind::Op(c) => Err(ParseError {
                column: tok.col,
                message: format!("unexpected `{c}`"),
            }),
            TokKind::Ident(name) => {
                if self.peek_op() == Some('(') {
                    self.pos += 1;
                    if name == "pow" {
                        let a = self.expr()?;
                        self.expect(',')?;
                        let b = self.expr()?;
                        self.expect(')')?;
                        return Ok(Expr::Pow(Box::new(a), Box::new(b)));
                    }
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError {
                            column: tok.col,
                            message: format!("unknown function `{name}`"),
                        });
                    };
                    let a = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(func, Box::new(a)));
                }
                if name == "t" {
                    return Ok(Expr::Time);
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if idx == 0 {
                        return Err(ParseError {
                            column: tok.col,
                            message: "coordinates are 1-based (x1, x2, ...)".into(),
                        });
                    }
                    return Ok(Expr::Coord(idx - 1));
                }
                if let Some(v) = self.constants.get(&name) {
                    return Ok(Expr::Num(*v));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(ParseError {
                        column: tok.col,
                        message: format!("unknown identifier `{name}`"),
                    }),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(src: &str) -> Expr {
        Expr::parse(src, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("1 + 2 * 3").eval(&[], 0.0), 7.0);
        assert_eq!(p("2 ^ 3 ^ 2").eval(&[], 0.0), 512.0);
        assert_eq!(p("-2 ^ 2").eval(&[], 0.0), -4.0);
        assert_eq!(p("(1 - 2) - 3").eval(&[], 0.0), -4.0);
        assert_eq!(p("8 / 4 / 2").eval(&[], 0.0), 1.0);
        assert_eq!(p("pow(x1, 2) + t").eval(&[3.0], 1.0), 10.0);
    }

    #[test]
    fn constants_are_substituted() {
        let mut c = BTreeMap::new();
        c.insert("R".to_string(), 1.0);
        c.insert("r".to_string(), 0.5);
        let e = Expr::parse("(R + r*cos(x1))^2", &c).unwrap();
        assert!((e.eval(&[0.0], 0.0) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_columns() {
        let err = Expr::parse("1 + foo", &BTreeMap::new()).unwrap_err();
        assert_eq!(err.column, 5);
        let err = Expr::parse("sin(x1", &BTreeMap::new()).unwrap_err();
        assert!(err.message.contains(')'));
        assert!(Expr::parse("x0", &BTreeMap::new()).is_err());
        assert!(Expr::parse("1 $ 2", &BTreeMap::new()).is_err());
        assert!(Expr::parse("1 2", &BTreeMap::new()).is_err());
    }

    #[test]
    fn derivative_matches_known_forms() {
        let e = p("sin(t)^2");
        let d = e.derivative(Var::Time);
        for &t in &[0.0, 0.3, 1.7] {
            assert!((d.eval(&[], t) - 2.0 * t.sin() * t.cos()).abs() < 1e-14);
        }
        let e = p("(1 + 0.5*cos(x1))^2");
        let d = e.derivative(Var::Coord(0));
        for &x in &[0.0f64, 0.4, 2.0] {
            let want = -2.0 * (1.0 + 0.5 * x.cos()) * 0.5 * x.sin();
            assert!((d.eval(&[x], 0.0) - want).abs() < 1e-14);
        }
        assert!(p("x2 * t").derivative(Var::Coord(0)).is_zero());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3.0f64..3.0).prop_map(Expr::Num),
            Just(Expr::Time),
            (0usize..2).prop_map(Expr::Coord),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                inner.prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip_is_bit_exact(e in arb_expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, t in 0.0f64..7.0) {
            let back = Expr::parse(&e.to_string(), &BTreeMap::new()).unwrap();
            let a = e.eval(&[x1, x2], t);
            let b = back.eval(&[x1, x2], t);
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }

        #[test]
        fn symbolic_derivative_matches_central_difference(e in arb_expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
            let h = 1e-5;
            let d = e.derivative(Var::Coord(0)).eval(&[x1, x2], 0.5);
            let fd = (e.eval(&[x1 + h, x2], 0.5) - e.eval(&[x1 - h, x2], 0.5)) / (2.0 * h);
            prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{} vs {}", d, fd);
        }
    }
}
