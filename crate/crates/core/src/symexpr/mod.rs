//! Canonical symbolic scalar expressions on R^N.
//!
//! An [`Expr`] is a finite sum of `coefficient × term`, where a term is a product of
//! coordinate powers `x_i^p`, trigonometric atoms `sin(x_i)^p`, `cos(x_i)^p` and powers of
//! named positive parameters. Parameters may carry negative powers so that exact
//! division by a parameter stays inside the class; they are never differentiated.
//!
//! Terms are kept in a `BTreeMap` ordered by a graded lexicographic order, so two
//! expressions are structurally equal exactly when their canonical term maps agree.

mod compiled;
mod parse;

pub use compiled::{CompiledExpr, CompiledField, FieldBundle};
pub use parse::{parse_expr, parse_scalar_fn, Ast, Func, ParseError, ParseErrorKind, ScalarFn};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Coefficients whose magnitude falls below this are dropped while merging.
pub const COEFF_TOL: f64 = 1e-12;

const ZERO_SAMPLES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("variable index {index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("point has dimension {got} but the expression uses coordinate x{needed}")]
    DimensionMismatch { needed: usize, got: usize },
    #[error("parameter #{0} has no binding")]
    UnboundParameter(usize),
}

/// An indeterminate appearing in a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Var(usize),
    Sin(usize),
    Cos(usize),
    Param(usize),
}

impl Atom {
    fn is_state(self) -> bool {
        !matches!(self, Atom::Param(_))
    }
}

/// A product of atoms with nonzero integer exponents.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Term {
    atoms: BTreeMap<Atom, i32>,
}

impl Term {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn atom(atom: Atom, power: i32) -> Self {
        let mut t = Self::default();
        t.mul_atom(atom, power);
        t
    }

    pub fn atoms(&self) -> impl Iterator<Item = (Atom, i32)> + '_ {
        self.atoms.iter().map(|(a, p)| (*a, *p))
    }

    pub fn power(&self, atom: Atom) -> i32 {
        self.atoms.get(&atom).copied().unwrap_or(0)
    }

    fn mul_atom(&mut self, atom: Atom, power: i32) {
        if power == 0 {
            return;
        }
        let e = self.atoms.entry(atom).or_insert(0);
        *e += power;
        if *e == 0 {
            self.atoms.remove(&atom);
        }
    }

    pub fn mul(&self, other: &Term) -> Term {
        let mut out = self.clone();
        for (a, p) in other.atoms() {
            out.mul_atom(a, p);
        }
        out
    }

    /// `self / other`, provided no state atom ends up with a negative power.
    pub fn div(&self, other: &Term) -> Option<Term> {
        let mut out = self.clone();
        for (a, p) in other.atoms() {
            out.mul_atom(a, -p);
        }
        if out.atoms().any(|(a, p)| a.is_state() && p < 0) {
            None
        } else {
            Some(out)
        }
    }

    /// Total degree in the state atoms (coordinates and trig factors).
    pub fn state_degree(&self) -> i32 {
        self.atoms()
            .filter(|(a, _)| a.is_state())
            .map(|(_, p)| p)
            .sum()
    }

    /// Degree in the polynomial coordinates only.
    pub fn poly_degree(&self) -> i32 {
        self.atoms()
            .filter(|(a, _)| matches!(a, Atom::Var(_)))
            .map(|(_, p)| p)
            .sum()
    }

    pub fn has_state(&self) -> bool {
        self.atoms().any(|(a, _)| a.is_state())
    }

    pub fn is_one(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Splits into (state part, parameter part).
    pub fn split(&self) -> (Term, Term) {
        let mut state = Term::one();
        let mut params = Term::one();
        for (a, p) in self.atoms() {
            if a.is_state() {
                state.atoms.insert(a, p);
            } else {
                params.atoms.insert(a, p);
            }
        }
        (state, params)
    }

    fn param_value(&self, params: &[f64]) -> Result<f64, ExprError> {
        let mut v = 1.0;
        for (a, p) in self.atoms() {
            if let Atom::Param(j) = a {
                let b = *params.get(j).ok_or(ExprError::UnboundParameter(j))?;
                v *= b.powi(p);
            }
        }
        Ok(v)
    }

    fn max_var(&self) -> Option<usize> {
        self.atoms()
            .filter_map(|(a, _)| match a {
                Atom::Var(i) | Atom::Sin(i) | Atom::Cos(i) => Some(i),
                Atom::Param(_) => None,
            })
            .max()
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Term {
    /// Graded lexicographic: state degree first, then exponents atom by atom.
    fn cmp(&self, other: &Self) -> Ordering {
        match self.state_degree().cmp(&other.state_degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let mut a = self.atoms.iter().peekable();
        let mut b = other.atoms.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some((ka, pa)), Some((kb, pb))) => match ka.cmp(kb) {
                    Ordering::Equal => {
                        match pa.cmp(pb) {
                            Ordering::Equal => {}
                            ord => return ord,
                        }
                        a.next();
                        b.next();
                    }
                    Ordering::Less => return pa.cmp(&&0),
                    Ordering::Greater => return 0.cmp(*pb),
                },
                (Some((_, pa)), None) => return pa.cmp(&&0),
                (None, Some((_, pb))) => return 0.cmp(*pb),
            }
        }
    }
}

/// Where a sup-norm is taken.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Whole,
    /// Axis-aligned box, one `(lo, hi)` pair per coordinate.
    Box(Vec<(f64, f64)>),
}

/// Result of [`Expr::sup_norm`]: `exact == false` means `value` is an upper bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupNorm {
    pub value: f64,
    pub exact: bool,
}

/// Result of [`Expr::is_zero`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroCheck {
    /// The canonical form is empty.
    pub zero: bool,
    /// Structurally nonzero, yet every random sample vanished: a missed identity is likely.
    pub sampling_flag: bool,
}

/// Canonical symbolic expression. Immutable once built.
#[derive(Clone, Debug, Default)]
pub struct Expr {
    terms: BTreeMap<Term, f64>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.terms.len() == other.terms.len()
            && self
                .terms
                .iter()
                .zip(other.terms.iter())
                .all(|((ta, ca), (tb, cb))| ta == tb && (ca - cb).abs() <= COEFF_TOL)
    }
}

impl Expr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_term(Term::one(), c)
    }

    pub fn var(i: usize) -> Self {
        Self::from_term(Term::atom(Atom::Var(i), 1), 1.0)
    }

    pub fn sin(i: usize) -> Self {
        Self::from_term(Term::atom(Atom::Sin(i), 1), 1.0)
    }

    pub fn cos(i: usize) -> Self {
        Self::from_term(Term::atom(Atom::Cos(i), 1), 1.0)
    }

    pub fn param(j: usize) -> Self {
        Self::from_term(Term::atom(Atom::Param(j), 1), 1.0)
    }

    pub fn from_term(term: Term, coeff: f64) -> Self {
        let mut e = Self::zero();
        e.add_term(term, coeff);
        e
    }

    /// Builds an expression from arbitrary (term, coefficient) pairs, merging like terms.
    pub fn from_terms<I: IntoIterator<Item = (Term, f64)>>(terms: I) -> Self {
        let mut e = Self::zero();
        for (t, c) in terms {
            e.add_term(t, c);
        }
        e
    }

    fn add_term(&mut self, term: Term, coeff: f64) {
        let c = self.terms.entry(term.clone()).or_insert(0.0);
        *c += coeff;
        if c.abs() <= COEFF_TOL {
            self.terms.remove(&term);
        }
    }

    /// Re-merges terms and drops negligible coefficients. Idempotent.
    pub fn canonicalize(&self) -> Expr {
        Expr::from_terms(self.terms())
    }

    pub fn terms(&self) -> impl Iterator<Item = (Term, f64)> + '_ {
        self.terms.iter().map(|(t, c)| (t.clone(), *c))
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Leading term under the graded lexicographic order.
    pub fn leading(&self) -> Option<(&Term, f64)> {
        self.terms.iter().next_back().map(|(t, c)| (t, *c))
    }

    pub fn scale(&self, s: f64) -> Expr {
        Expr::from_terms(self.terms().map(|(t, c)| (t, c * s)))
    }

    pub fn mul_term(&self, term: &Term, coeff: f64) -> Expr {
        Expr::from_terms(self.terms().map(|(t, c)| (t.mul(term), c * coeff)))
    }

    pub fn pow(&self, n: u32) -> Expr {
        let mut out = Expr::constant(1.0);
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// No state atoms anywhere (numbers and parameters only).
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|t| !t.has_state())
    }

    /// Bounded on all of R^N: no term carries a coordinate power.
    pub fn is_bounded(&self) -> bool {
        self.terms.keys().all(|t| t.poly_degree() == 0)
    }

    pub fn uses_params(&self) -> bool {
        self.terms
            .keys()
            .any(|t| t.atoms().any(|(a, _)| !a.is_state()))
    }

    /// One past the largest coordinate index used, or 0.
    pub fn min_dim(&self) -> usize {
        self.terms
            .keys()
            .filter_map(Term::max_var)
            .max()
            .map_or(0, |i| i + 1)
    }

    /// Exact partial derivative in coordinate `i`, with no bound check on `i`.
    pub fn diff(&self, i: usize) -> Expr {
        let mut out = Expr::zero();
        for (term, c) in self.terms.iter() {
            for atom in [Atom::Var(i), Atom::Sin(i), Atom::Cos(i)] {
                let p = term.power(atom);
                if p == 0 {
                    continue;
                }
                let mut t = term.clone();
                t.mul_atom(atom, -1);
                let coeff = c * p as f64;
                match atom {
                    Atom::Var(_) => out.add_term(t, coeff),
                    Atom::Sin(_) => {
                        t.mul_atom(Atom::Cos(i), 1);
                        out.add_term(t, coeff);
                    }
                    Atom::Cos(_) => {
                        t.mul_atom(Atom::Sin(i), 1);
                        out.add_term(t, -coeff);
                    }
                    Atom::Param(_) => unreachable!(),
                }
            }
        }
        out
    }

    /// Partial derivative in coordinate `i` of an expression living on R^`dim`.
    pub fn differentiate(&self, i: usize, dim: usize) -> Result<Expr, ExprError> {
        if i >= dim {
            return Err(ExprError::VariableOutOfRange { index: i, dim });
        }
        Ok(self.diff(i))
    }

    pub fn eval(&self, point: &[f64], params: &[f64]) -> Result<f64, ExprError> {
        let dim = self.min_dim();
        if dim > point.len() {
            return Err(ExprError::DimensionMismatch {
                needed: dim,
                got: point.len(),
            });
        }
        let mut acc = 0.0;
        for (term, c) in self.terms.iter() {
            let mut v = *c;
            for (a, p) in term.atoms() {
                v *= match a {
                    Atom::Var(i) => point[i].powi(p),
                    Atom::Sin(i) => point[i].sin().powi(p),
                    Atom::Cos(i) => point[i].cos().powi(p),
                    Atom::Param(j) => params.get(j).ok_or(ExprError::UnboundParameter(j))?.powi(p),
                };
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Replaces every parameter by its numeric value.
    pub fn bind(&self, params: &[f64]) -> Result<Expr, ExprError> {
        let mut out = Expr::zero();
        for (term, c) in self.terms.iter() {
            let (state, _) = term.split();
            out.add_term(state, c * term.param_value(params)?);
        }
        Ok(out)
    }

    /// Numeric value of a constant expression.
    pub fn constant_value(&self, params: &[f64]) -> Result<Option<f64>, ExprError> {
        if !self.is_constant() {
            return Ok(None);
        }
        let mut v = 0.0;
        for (term, c) in self.terms.iter() {
            v += c * term.param_value(params)?;
        }
        Ok(Some(v))
    }

    /// Rewrites `cos(x_i)^2` as `1 - sin(x_i)^2` until no cosine power exceeds one.
    ///
    /// The result is a normal form modulo the Pythagorean identities.
    pub fn pythagorean_reduce(&self) -> Expr {
        let mut work: Vec<(Term, f64)> = self.terms().collect();
        let mut out = Expr::zero();
        while let Some((term, c)) = work.pop() {
            let high_cos = term.atoms().find_map(|(a, p)| match a {
                Atom::Cos(i) if p >= 2 => Some(i),
                _ => None,
            });
            match high_cos {
                None => out.add_term(term, c),
                Some(i) => {
                    let mut base = term.clone();
                    base.mul_atom(Atom::Cos(i), -2);
                    let mut with_sin = base.clone();
                    with_sin.mul_atom(Atom::Sin(i), 2);
                    work.push((base, c));
                    work.push((with_sin, -c));
                }
            }
        }
        out
    }

    /// Structural zero test, cross-checked by random sampling.
    pub fn is_zero(&self) -> ZeroCheck {
        if self.is_structurally_zero() {
            return ZeroCheck {
                zero: true,
                sampling_flag: false,
            };
        }
        let dim = self.min_dim();
        let nparams = self
            .terms
            .keys()
            .flat_map(|t| t.atoms())
            .filter_map(|(a, _)| match a {
                Atom::Param(j) => Some(j + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2e70);
        let all_vanish = (0..ZERO_SAMPLES).all(|_| {
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let q: Vec<f64> = (0..nparams).map(|_| rng.gen_range(0.5..2.0)).collect();
            self.eval(&p, &q).is_ok_and(|v| v.abs() < 1e-12)
        });
        ZeroCheck {
            zero: false,
            sampling_flag: all_vanish,
        }
    }

    /// Zero modulo the Pythagorean identities.
    pub fn is_zero_mod_trig(&self) -> bool {
        self.pythagorean_reduce().is_structurally_zero()
    }

    /// Sup of `|e|` over `domain`.
    ///
    /// Constants are exact. Bounded trig expressions on the whole space get the
    /// coefficient-sum bound. Any coordinate power on the whole space gives `+inf`.
    /// On a box the grid maximum is inflated by 10%.
    pub fn sup_norm(
        &self,
        domain: &Domain,
        resolution: usize,
        params: &[f64],
    ) -> Result<SupNorm, ExprError> {
        if let Some(c) = self.constant_value(params)? {
            return Ok(SupNorm {
                value: c.abs(),
                exact: true,
            });
        }
        match domain {
            Domain::Whole => {
                if !self.is_bounded() {
                    return Ok(SupNorm {
                        value: f64::INFINITY,
                        exact: true,
                    });
                }
                let bound = |e: &Expr| -> Result<f64, ExprError> {
                    let mut s = 0.0;
                    for (t, c) in e.terms.iter() {
                        s += (c * t.param_value(params)?).abs();
                    }
                    Ok(s)
                };
                let value = bound(self)?.min(bound(&self.pythagorean_reduce())?);
                Ok(SupNorm {
                    value,
                    exact: false,
                })
            }
            Domain::Box(bounds) => {
                let res = resolution.max(2);
                let n = bounds.len();
                let mut idx = vec![0usize; n];
                let mut point = vec![0.0; n];
                let mut best: f64 = 0.0;
                loop {
                    for k in 0..n {
                        let (lo, hi) = bounds[k];
                        point[k] = lo + (hi - lo) * idx[k] as f64 / (res - 1) as f64;
                    }
                    best = best.max(self.eval(&point, params)?.abs());
                    let mut k = 0;
                    while k < n {
                        idx[k] += 1;
                        if idx[k] < res {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == n {
                        break;
                    }
                }
                Ok(SupNorm {
                    value: best * 1.1,
                    exact: false,
                })
            }
        }
    }

    /// Upper bound on `sup_x e(x)` (signed) over the whole space.
    ///
    /// Constant part plus the absolute coefficients of the non-constant terms; `+inf`
    /// when a coordinate power is present.
    pub fn sup_value(&self, params: &[f64]) -> Result<f64, ExprError> {
        if let Some(c) = self.constant_value(params)? {
            return Ok(c);
        }
        if !self.is_bounded() {
            return Ok(f64::INFINITY);
        }
        let bound = |e: &Expr| -> Result<f64, ExprError> {
            let mut s = 0.0;
            for (t, c) in e.terms.iter() {
                let v = c * t.param_value(params)?;
                s += if t.has_state() { v.abs() } else { v };
            }
            Ok(s)
        };
        Ok(bound(self)?.min(bound(&self.pythagorean_reduce())?))
    }

    /// Exact quotient `self / divisor`, if one exists in the expression class.
    ///
    /// Single-term divisors divide termwise; otherwise graded long division is run
    /// and any nonzero remainder means "not divisible".
    pub fn div_exact(&self, divisor: &Expr) -> Option<Expr> {
        let (lead_t, lead_c) = divisor.leading()?;
        if divisor.term_count() == 1 {
            let mut out = Expr::zero();
            for (t, c) in self.terms.iter() {
                out.add_term(t.div(lead_t)?, c / lead_c);
            }
            return Some(out);
        }
        let mut rem = self.clone();
        let mut quot = Expr::zero();
        for _ in 0..10_000 {
            let Some((t, c)) = rem.leading().map(|(t, c)| (t.clone(), c)) else {
                return Some(quot);
            };
            let qt = t.div(lead_t)?;
            let qc = c / lead_c;
            rem = &rem - &divisor.mul_term(&qt, qc);
            quot.add_term(qt, qc);
        }
        None
    }

    pub fn compile(&self, params: &[f64]) -> Result<CompiledExpr, ExprError> {
        CompiledExpr::new(self, params)
    }

    pub fn display<'a>(&'a self, symbols: &'a Symbols) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            symbols,
        }
    }
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        for (t, c) in rhs.terms.iter() {
            out.add_term(t.clone(), *c);
        }
        out
    }
}

impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        for (t, c) in rhs.terms.iter() {
            out.add_term(t.clone(), -*c);
        }
        out
    }
}

impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (ta, ca) in self.terms.iter() {
            for (tb, cb) in rhs.terms.iter() {
                out.add_term(ta.mul(tb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

/// Names for coordinates and parameters, used by the parser and for display.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Symbols {
    pub vars: Vec<String>,
    pub params: Vec<String>,
}

impl Symbols {
    /// `x, y, z` for up to three coordinates, `x1..xN` otherwise.
    pub fn standard(dim: usize, params: &[&str]) -> Self {
        let vars = if dim <= 3 {
            ["x", "y", "z"][..dim]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            (1..=dim).map(|i| format!("x{i}")).collect()
        };
        Self {
            vars,
            params: params.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    /// Resolves a coordinate name: the declared name or the generic `x<i>` (1-based).
    pub fn var_index(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.vars.iter().position(|v| v == name) {
            return Some(i);
        }
        let rest = name.strip_prefix('x')?;
        let i: usize = rest.parse().ok()?;
        (1..=self.dim()).contains(&i).then(|| i - 1)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p == name)
    }

    fn var_name(&self, i: usize) -> String {
        self.vars
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("x{}", i + 1))
    }

    fn param_name(&self, j: usize) -> String {
        self.params
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("p{j}"))
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    symbols: &'a Symbols,
}

fn fmt_number(c: f64) -> String {
    if (c - c.round()).abs() < COEFF_TOL && c.abs() < 1e15 {
        format!("{}", c.round() as i64)
    } else {
        format!("{c}")
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.expr.is_structurally_zero() {
            return write!(f, "0");
        }
        // highest-degree terms first reads more naturally
        for (n, (term, c)) in self.expr.terms.iter().rev().enumerate() {
            let mut factors: Vec<String> = Vec::new();
            let mut denom: Vec<String> = Vec::new();
            for (a, p) in term.atoms() {
                let base = match a {
                    Atom::Var(i) => self.symbols.var_name(i),
                    Atom::Sin(i) => format!("sin({})", self.symbols.var_name(i)),
                    Atom::Cos(i) => format!("cos({})", self.symbols.var_name(i)),
                    Atom::Param(j) => self.symbols.param_name(j),
                };
                let target = if p < 0 { &mut denom } else { &mut factors };
                match p.abs() {
                    1 => target.push(base),
                    q => target.push(format!("{base}^{q}")),
                }
            }
            let mag = c.abs();
            let sign = if *c < 0.0 { "-" } else { "+" };
            if n == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let mut body = factors.join("*");
            if body.is_empty() {
                body = fmt_number(mag);
            } else if (mag - 1.0).abs() > COEFF_TOL {
                body = format!("{}*{}", fmt_number(mag), body);
            }
            write!(f, "{body}")?;
            for d in denom {
                write!(f, "/{d}")?;
            }
        }
        Ok(())
    }
}
