//! A small expression language for smooth periodic coefficient functions.
//!
//! Expressions are built from real literals, coordinates `x1..xn`, named
//! parameters, the operators `+ - * / ^` and the functions `sin`, `cos` and
//! `exp`. Precedence from tightest to loosest is `^`, unary minus, `* /`,
//! `+ -`; `^` groups to the right, everything else to the left, so
//! `-2^2 == -4` and `2^3^2 == 512`.
//!
//! ```
//! use detour::exprlang::{parse, Params};
//!
//! let e = parse("a*cos(x2)").unwrap();
//! let mut params = Params::new();
//! params.insert("a".into(), 2.0);
//! assert_eq!(e.eval(&[0.0, 0.0], &params).unwrap(), 2.0);
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{ChartGrid, ScalarField};

pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression syntax tree. Coordinates are stored zero-based (`x1` is `Coord(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Coord(usize),
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Parse an expression, treating every identifier that is neither a
/// coordinate nor a function as a named parameter.
pub fn parse(src: &str) -> Result<Expr> {
    Parser::new(src, None).parse_all()
}

/// Parse an expression, rejecting identifiers outside `params`.
pub fn parse_with_params(src: &str, params: &[&str]) -> Result<Expr> {
    let known: BTreeSet<String> = params.iter().map(|s| s.to_string()).collect();
    Parser::new(src, Some(known)).parse_all()
}

impl Expr {
    pub fn eval(&self, point: &[f64], params: &Params) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => *point.get(*i).ok_or(Error::CoordinateOutOfRange {
                index: i + 1,
                dim: point.len(),
            })?,
            Expr::Param(name) => *params
                .get(name)
                .ok_or_else(|| Error::UnboundName(name.clone()))?,
            Expr::Neg(e) => -e.eval(point, params)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(point, params)?;
                let b = r.eval(point, params)?;
                binary(*op, a, b)?
            }
            Expr::Call(f, arg) => f.apply(arg.eval(point, params)?),
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("`{self}`")));
        }
        Ok(v)
    }

    /// Largest coordinate index used (one-based), or 0.
    pub fn max_coordinate(&self) -> usize {
        match self {
            Expr::Coord(i) => i + 1,
            Expr::Num(_) | Expr::Param(_) => 0,
            Expr::Neg(e) | Expr::Call(_, e) => e.max_coordinate(),
            Expr::Binary(_, l, r) => l.max_coordinate().max(r.max_coordinate()),
        }
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Param(p) => {
                out.insert(p.clone());
            }
            Expr::Num(_) | Expr::Coord(_) => {}
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_params(out),
            Expr::Binary(_, l, r) => {
                l.collect_params(out);
                r.collect_params(out);
            }
        }
    }

    /// Substitute parameter values, producing an expression that only
    /// depends on coordinates. Fails on the first unbound parameter.
    pub fn bind(&self, params: &Params) -> Result<Expr> {
        Ok(match self {
            Expr::Param(name) => Expr::Num(
                *params
                    .get(name)
                    .ok_or_else(|| Error::UnboundName(name.clone()))?,
            ),
            Expr::Num(_) | Expr::Coord(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.bind(params)?)),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.bind(params)?)),
            Expr::Binary(op, l, r) => {
                Expr::Binary(*op, Box::new(l.bind(params)?), Box::new(r.bind(params)?))
            }
        })
    }

    /// Evaluate at every point of `grid`.
    pub fn sample(&self, grid: &Arc<ChartGrid>, params: &Params) -> Result<ScalarField> {
        if self.max_coordinate() > grid.dim() {
            return Err(Error::CoordinateOutOfRange {
                index: self.max_coordinate(),
                dim: grid.dim(),
            });
        }
        let bound = self.bind(params)?;
        let empty = Params::new();
        let mut x = vec![0.0; grid.dim()];
        let mut values = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            grid.coords_into(p, &mut x);
            values.push(bound.eval(&x, &empty)?);
        }
        ScalarField::from_values(grid, values)
    }
}

fn binary(op: BinOp, a: f64, b: f64) -> Result<f64> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(Error::DivisionByZero);
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Param(p) => write!(f, "{p}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    known: Option<BTreeSet<String>>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, known: Option<BTreeSet<String>>) -> Self {
        Parser {
            src,
            toks: Vec::new(),
            pos: 0,
            known,
        }
    }

    fn lex(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || c == '.' {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &self.src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                self.toks.push((Tok::Num(v), start));
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                self.toks
                    .push((Tok::Ident(self.src[start..i].to_string()), start));
                continue;
            }
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(Error::Syntax {
                        offset: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            self.toks.push((tok, start));
            i += c.len_utf8();
        }
        self.toks.push((Tok::End, self.src.len()));
        Ok(())
    }

    fn parse_all(mut self) -> Result<Expr> {
        self.lex()?;
        let e = self.expr()?;
        match self.peek() {
            Tok::End => Ok(e),
            t => Err(self.syntax(format!("unexpected {t:?} after expression"))),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, message: String) -> Error {
        Error::Syntax {
            offset: self.offset(),
            message,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Tok::Op('-') = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                match self.bump() {
                    Tok::RParen => Ok(e),
                    _ => Err(Error::Syntax {
                        offset: self.toks[self.pos.saturating_sub(1)].1,
                        message: "expected `)`".into(),
                    }),
                }
            }
            Tok::Ident(name) => {
                if let Tok::LParen = self.peek() {
                    return self.call(name, offset);
                }
                if let Some(index) = coordinate_index(&name) {
                    return Ok(Expr::Coord(index));
                }
                if Func::from_name(&name).is_some() {
                    return Err(Error::Syntax {
                        offset,
                        message: format!("function `{name}` used without arguments"),
                    });
                }
                if let Some(known) = &self.known {
                    if !known.contains(&name) {
                        return Err(Error::UnknownIdentifier { name, offset });
                    }
                }
                Ok(Expr::Param(name))
            }
            t => Err(Error::Syntax {
                offset,
                message: format!("unexpected {t:?}"),
            }),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr> {
        let func = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier {
            name: name.clone(),
            offset,
        })?;
        self.bump(); // (
        let mut args = Vec::new();
        if !matches!(self.peek(), Tok::RParen) {
            args.push(self.expr()?);
            while let Tok::Comma = self.peek() {
                self.bump();
                args.push(self.expr()?);
            }
        }
        match self.bump() {
            Tok::RParen => {}
            _ => {
                return Err(Error::Syntax {
                    offset: self.toks[self.pos.saturating_sub(1)].1,
                    message: "expected `)`".into(),
                })
            }
        }
        if args.len() != 1 {
            return Err(Error::Arity {
                name,
                expected: 1,
                found: args.len(),
                offset,
            });
        }
        Ok(Expr::Call(func, Box::new(args.pop().unwrap())))
    }
}

fn coordinate_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let i: usize = digits.parse().ok()?;
    (i >= 1).then(|| i - 1)
}
