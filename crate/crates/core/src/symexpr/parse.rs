//! Text grammar for expressions and evaluation-only test functions.
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' '-'? integer)?
//! primary := number | name | name '(' sum ')' | '(' sum ')'
//! ```
//!
//! Symbolic expressions accept `sin`/`cos` of a bare coordinate and division by
//! numbers or parameters only. Test functions ([`ScalarFn`]) additionally accept
//! `tanh`, `exp`, `abs` and `sqrt` with arbitrary arguments.

use std::fmt;

use thiserror::Error;

use super::{Atom, Expr, Symbols, Term};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnexpectedToken(String),
    UnknownIdentifier(String),
    UnknownFunction(String),
    /// Valid syntax outside the symbolic expression class.
    Unsupported(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            Self::UnexpectedEnd => write!(f, "unexpected end of input"),
            Self::UnexpectedToken(t) => write!(f, "unexpected token '{t}'"),
            Self::UnknownIdentifier(n) => write!(f, "unknown variable or parameter '{n}'"),
            Self::UnknownFunction(n) => write!(f, "unknown function '{n}'"),
            Self::Unsupported(what) => write!(f, "{what}"),
        }
    }
}

/// Parse failure with a 1-based column into the source string.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {kind}")]
pub struct ParseError {
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tanh" => Self::Tanh,
            "exp" => Self::Exp,
            "abs" => Self::Abs,
            "sqrt" => Self::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Tanh => v.tanh(),
            Self::Exp => v.exp(),
            Self::Abs => v.abs(),
            Self::Sqrt => v.sqrt(),
        }
    }
}

/// Syntax tree shared by both front ends. Each node remembers its source column.
#[derive(Clone, Debug, PartialEq)]
pub enum Ast {
    Num(f64),
    Var(usize),
    Param(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>, usize),
    Pow(Box<Ast>, i32),
    Call(Func, Box<Ast>, usize),
}

impl Ast {
    pub fn eval(&self, x: &[f64], params: &[f64]) -> f64 {
        match self {
            Ast::Num(c) => *c,
            Ast::Var(i) => x[*i],
            Ast::Param(j) => params[*j],
            Ast::Neg(a) => -a.eval(x, params),
            Ast::Add(a, b) => a.eval(x, params) + b.eval(x, params),
            Ast::Sub(a, b) => a.eval(x, params) - b.eval(x, params),
            Ast::Mul(a, b) => a.eval(x, params) * b.eval(x, params),
            Ast::Div(a, b, _) => a.eval(x, params) / b.eval(x, params),
            Ast::Pow(a, n) => a.eval(x, params).powi(*n),
            Ast::Call(f, a, _) => f.apply(a.eval(x, params)),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Ast::Num(_) | Ast::Param(_) => None,
            Ast::Var(i) => Some(*i),
            Ast::Neg(a) | Ast::Pow(a, _) | Ast::Call(_, a, _) => a.max_var(),
            Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b, _) => {
                a.max_var().max(b.max_var())
            }
        }
    }

    fn to_expr(&self) -> Result<Expr, ParseError> {
        Ok(match self {
            Ast::Num(c) => Expr::constant(*c),
            Ast::Var(i) => Expr::var(*i),
            Ast::Param(j) => Expr::param(*j),
            Ast::Neg(a) => -a.to_expr()?,
            Ast::Add(a, b) => a.to_expr()? + b.to_expr()?,
            Ast::Sub(a, b) => a.to_expr()? - b.to_expr()?,
            Ast::Mul(a, b) => a.to_expr()? * b.to_expr()?,
            Ast::Div(a, b, col) => {
                let num = a.to_expr()?;
                let den = b.to_expr()?;
                let single = den.term_count() == 1 && den.is_constant();
                if !single {
                    return Err(unsupported(
                        *col,
                        "division is only allowed by numbers or parameter monomials",
                    ));
                }
                num.div_exact(&den)
                    .ok_or_else(|| unsupported(*col, "division by zero"))?
            }
            Ast::Pow(a, n) => {
                let base = a.to_expr()?;
                if *n >= 0 {
                    base.pow(*n as u32)
                } else if base.term_count() == 1 && base.is_constant() {
                    let (t, c) = base.leading().map(|(t, c)| (t.clone(), c)).unwrap();
                    let mut inv = Term::one();
                    for (atom, p) in t.atoms() {
                        inv = inv.mul(&Term::atom(atom, -p));
                    }
                    Expr::from_term(inv, 1.0 / c).pow(n.unsigned_abs())
                } else {
                    return Err(unsupported(
                        0,
                        "negative powers are only allowed on parameters and numbers",
                    ));
                }
            }
            Ast::Call(f, a, col) => match (f, a.as_ref()) {
                (Func::Sin, Ast::Var(i)) => Expr::from_term(Term::atom(Atom::Sin(*i), 1), 1.0),
                (Func::Cos, Ast::Var(i)) => Expr::from_term(Term::atom(Atom::Cos(*i), 1), 1.0),
                (Func::Sin | Func::Cos, _) => {
                    return Err(unsupported(*col, "sin/cos take a single coordinate"))
                }
                _ => return Err(unsupported(*col, "function is evaluation-only")),
            },
        })
    }
}

fn unsupported(column: usize, what: &str) -> ParseError {
    ParseError {
        column,
        kind: ParseErrorKind::Unsupported(what.to_string()),
    }
}

/// An evaluation-only scalar function, e.g. a bounded test function `tanh(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFn {
    ast: Ast,
    params: Vec<f64>,
    dim: usize,
}

impl ScalarFn {
    pub fn new(ast: Ast, params: Vec<f64>) -> Self {
        let dim = ast.max_var().map_or(0, |i| i + 1);
        Self { ast, params, dim }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Ast::Num(c), Vec::new())
    }

    /// Smallest point dimension this function can be evaluated at.
    pub fn min_dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.ast.eval(x, &self.params)
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }
}

/// Parses a symbolic expression in the polynomial-trigonometric class.
pub fn parse_expr(text: &str, symbols: &Symbols) -> Result<Expr, ParseError> {
    let ast = Parser::new(text, symbols).parse()?;
    ast.to_expr().map_err(|mut e| {
        if e.column == 0 {
            e.column = 1;
        }
        e
    })
}

/// Parses an evaluation-only function and binds the parameter values.
pub fn parse_scalar_fn(
    text: &str,
    symbols: &Symbols,
    params: &[f64],
) -> Result<ScalarFn, ParseError> {
    let ast = Parser::new(text, symbols).parse()?;
    Ok(ScalarFn::new(ast, params.to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    symbols: &'a Symbols,
    lex_error: Option<ParseError>,
}

impl<'a> Parser<'a> {
    fn new(text: &str, symbols: &'a Symbols) -> Self {
        let mut toks = Vec::new();
        let mut lex_error = None;
        let chars: Vec<char> = text.chars().collect();
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
                let s: String = chars[start..i].iter().collect();
                match s.parse::<f64>() {
                    Ok(v) => toks.push((Tok::Num(v), col)),
                    Err(_) => {
                        lex_error.get_or_insert(ParseError {
                            column: col,
                            kind: ParseErrorKind::UnexpectedToken(s),
                        });
                    }
                }
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            } else if "+-*/^()".contains(c) {
                toks.push((Tok::Op(c), col));
                i += 1;
            } else {
                lex_error.get_or_insert(ParseError {
                    column: col,
                    kind: ParseErrorKind::UnexpectedChar(c),
                });
                i += 1;
            }
        }
        Self {
            toks,
            pos: 0,
            end_col: chars.len() + 1,
            symbols,
            lex_error,
        }
    }

    fn parse(mut self) -> Result<Ast, ParseError> {
        if let Some(e) = self.lex_error.take() {
            return Err(e);
        }
        let ast = self.sum()?;
        match self.toks.get(self.pos) {
            None => Ok(ast),
            Some((t, col)) => Err(ParseError {
                column: *col,
                kind: ParseErrorKind::UnexpectedToken(tok_text(t)),
            }),
        }
    }

    fn peek_op(&self) -> Option<char> {
        match self.toks.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn unexpected(&self) -> ParseError {
        match self.toks.get(self.pos) {
            None => ParseError {
                column: self.end_col,
                kind: ParseErrorKind::UnexpectedEnd,
            },
            Some((t, col)) => ParseError {
                column: *col,
                kind: ParseErrorKind::UnexpectedToken(tok_text(t)),
            },
        }
    }

    fn sum(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' {
                Ast::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Ast::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            let col = self.col();
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Ast::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Ast::Div(Box::new(lhs), Box::new(rhs), col)
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ParseError> {
        let base = self.primary()?;
        if self.peek_op() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek_op() == Some('-') {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.toks.get(self.pos) {
            Some((Tok::Num(v), _)) if v.fract() == 0.0 && *v <= 64.0 => {
                self.pos += 1;
                let n = *v as i32;
                Ok(Ast::Pow(Box::new(base), if negative { -n } else { n }))
            }
            Some((Tok::Num(_), col)) => Err(ParseError {
                column: *col,
                kind: ParseErrorKind::Unsupported("exponents must be integers up to 64".into()),
            }),
            _ => Err(self.unexpected()),
        }
    }

    fn primary(&mut self) -> Result<Ast, ParseError> {
        let Some((tok, col)) = self.toks.get(self.pos).cloned() else {
            return Err(self.unexpected());
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Ast::Num(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Op(_) => Err(self.unexpected()),
            Tok::Ident(name) => {
                self.pos += 1;
                if self.peek_op() == Some('(') {
                    let func = Func::from_name(&name).ok_or(ParseError {
                        column: col,
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                    })?;
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect(')')?;
                    return Ok(Ast::Call(func, Box::new(arg), col));
                }
                if let Some(i) = self.symbols.var_index(&name) {
                    Ok(Ast::Var(i))
                } else if let Some(j) = self.symbols.param_index(&name) {
                    Ok(Ast::Param(j))
                } else {
                    Err(ParseError {
                        column: col,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    })
                }
            }
        }
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Num(v) => v.to_string(),
        Tok::Ident(s) => s.clone(),
        Tok::Op(c) => c.to_string(),
    }
}
