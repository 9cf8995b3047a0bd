//! Arithmetic expressions over named coordinates.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numeric literals,
//! coordinate names and the functions `exp`, `log`, `sin`, `cos`. `^` binds
//! tighter than unary minus and associates to the right.

use std::fmt;

use timekeeper::geometry::ScalarField;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Zero-based character offset.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position + 1, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

use Expr::*;

fn num(v: f64) -> Expr {
    Num(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Num(x), Num(y)) => Num(x + y),
        (Num(z), e) | (e, Num(z)) if z == 0.0 => e,
        (a, b) => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Num(x), Num(y)) => Num(x - y),
        (e, Num(z)) if z == 0.0 => e,
        (Num(z), e) if z == 0.0 => neg(e),
        (a, b) => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Num(x), Num(y)) => Num(x * y),
        (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
        (Num(o), e) | (e, Num(o)) if o == 1.0 => e,
        (a, b) => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Num(z), _) if z == 0.0 => Num(0.0),
        (e, Num(o)) if o == 1.0 => e,
        (a, b) => Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Num(x) => Num(-x),
        Neg(e) => *e,
        e => Neg(Box::new(e)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (_, Num(z)) if z == 0.0 => Num(1.0),
        (e, Num(o)) if o == 1.0 => e,
        (a, b) => Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Call(f, Box::new(a))
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Num(v) => *v,
            Var(i) => x[*i],
            Neg(a) => -a.eval(x),
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Pow(a, b) => {
                let (base, e) = (a.eval(x), b.eval(x));
                if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Call(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        match self {
            Num(_) => num(0.0),
            Var(j) => num(if *j == i { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(i)),
            Add(a, b) => add(a.diff(i), b.diff(i)),
            Sub(a, b) => sub(a.diff(i), b.diff(i)),
            Mul(a, b) => add(mul(a.diff(i), (**b).clone()), mul((**a).clone(), b.diff(i))),
            Div(a, b) => div(
                sub(mul(a.diff(i), (**b).clone()), mul((**a).clone(), b.diff(i))),
                pow((**b).clone(), num(2.0)),
            ),
            Pow(a, b) => {
                let (a, b) = (&**a, &**b);
                if b.is_constant() {
                    let e = b.eval(&[]);
                    mul(mul(num(e), pow(a.clone(), num(e - 1.0))), a.diff(i))
                } else {
                    // d(a^b) = a^b (b' log a + b a'/a)
                    mul(
                        self.clone(),
                        add(
                            mul(b.diff(i), call(Func::Log, a.clone())),
                            div(mul(b.clone(), a.diff(i)), a.clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let inner = a.diff(i);
                let outer = match f {
                    Func::Exp => call(Func::Exp, (**a).clone()),
                    Func::Log => div(num(1.0), (**a).clone()),
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                };
                mul(outer, inner)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Num(_) => true,
            Var(_) => false,
            Neg(a) | Call(_, a) => a.is_constant(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn display<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        Shown { expr: self, names }
    }
}

struct Shown<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl<'a> Shown<'a> {
    fn child(&self, expr: &'a Expr) -> Shown<'a> {
        Shown { expr, names: self.names }
    }
}

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |e| self.child(e);
        match self.expr {
            Num(v) => write!(f, "{v}"),
            Var(i) => write!(f, "{}", self.names[*i]),
            Neg(a) => write!(f, "(-{})", s(a)),
            Add(a, b) => write!(f, "({} + {})", s(a), s(b)),
            Sub(a, b) => write!(f, "({} - {})", s(a), s(b)),
            Mul(a, b) => write!(f, "({} * {})", s(a), s(b)),
            Div(a, b) => write!(f, "({} / {})", s(a), s(b)),
            Pow(a, b) => write!(f, "({} ^ {})", s(a), s(b)),
            Call(func, a) => write!(f, "{}({})", func.name(), s(a)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
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
            let v = text
                .parse::<f64>()
                .map_err(|_| ParseError { position: start, message: format!("malformed number '{text}'") })?;
            out.push((start, Token::Num(v)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Token::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^".contains(c) {
            out.push((i, Token::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Token::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Token::RParen));
            i += 1;
        } else {
            return Err(ParseError { position: i, message: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.1)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.here(), message: message.into() })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let c = *c;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' { Add(Box::new(lhs), Box::new(rhs)) } else { Sub(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let c = *c;
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' { Mul(Box::new(lhs), Box::new(rhs)) } else { Div(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Num(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if let Some(Token::LParen) = self.peek() {
                    let f = Func::from_name(&name).ok_or(ParseError {
                        position: at,
                        message: format!("unknown function '{name}'"),
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_close()?;
                    return Ok(Call(f, Box::new(arg)));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Var(i)),
                    None if Func::from_name(&name).is_some() => {
                        self.error(format!("function '{name}' needs a parenthesized argument"))
                    }
                    None => Err(ParseError { position: at, message: format!("unknown variable '{name}'") }),
                }
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_close()?;
                Ok(e)
            }
            Some(Token::RParen) => self.error("unexpected ')'"),
            Some(Token::Op(c)) => self.error(format!("unexpected operator '{c}'")),
            None => self.error("unexpected end of expression"),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.error("expected ')'"),
        }
    }
}

pub fn parse(src: &str, vars: &[String]) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, end: src.chars().count(), vars };
    let e = p.expr()?;
    if p.pos < p.tokens.len() {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

/// A scalar field with symbolic gradient.
pub fn scalar_field(src: &str, vars: &[String]) -> Result<ScalarField, ParseError> {
    let e = parse(src, vars)?;
    let grads: Vec<Expr> = (0..vars.len()).map(|i| e.diff(i)).collect();
    Ok(ScalarField::with_gradient(src.trim(), move |x| e.eval(x), move |x| grads.iter().map(|g| g.eval(x)).collect()))
}
