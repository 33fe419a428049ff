//! Flattened, parameter-bound expressions for tight numerical loops.

use super::{Atom, Expr, ExprError};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Var,
    Sin,
    Cos,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Factor {
    kind: Kind,
    var: usize,
    power: i32,
}

#[derive(Clone, Debug, PartialEq)]
struct Mono {
    coeff: f64,
    start: usize,
    end: usize,
}

/// An [`Expr`] with parameters folded into coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompiledExpr {
    monos: Vec<Mono>,
    factors: Vec<Factor>,
    dim: usize,
    trig: bool,
}

impl CompiledExpr {
    pub fn new(expr: &Expr, params: &[f64]) -> Result<Self, ExprError> {
        let bound = expr.bind(params)?;
        let mut out = CompiledExpr {
            dim: bound.min_dim(),
            ..Default::default()
        };
        for (term, coeff) in bound.terms() {
            let start = out.factors.len();
            for (atom, power) in term.atoms() {
                let (kind, var) = match atom {
                    Atom::Var(i) => (Kind::Var, i),
                    Atom::Sin(i) => (Kind::Sin, i),
                    Atom::Cos(i) => (Kind::Cos, i),
                    Atom::Param(_) => unreachable!("parameters were bound"),
                };
                out.trig |= kind != Kind::Var;
                out.factors.push(Factor { kind, var, power });
            }
            out.monos.push(Mono {
                coeff,
                start,
                end: out.factors.len(),
            });
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn min_dim(&self) -> usize {
        self.dim
    }

    pub fn needs_trig(&self) -> bool {
        self.trig
    }

    /// Evaluates given `x` and precomputed `sin(x)`, `cos(x)` slices.
    #[inline]
    pub fn eval_with(&self, x: &[f64], sin: &[f64], cos: &[f64]) -> f64 {
        let mut acc = 0.0;
        for m in &self.monos {
            let mut v = m.coeff;
            for f in &self.factors[m.start..m.end] {
                let base = match f.kind {
                    Kind::Var => x[f.var],
                    Kind::Sin => sin[f.var],
                    Kind::Cos => cos[f.var],
                };
                v *= ipow(base, f.power);
            }
            acc += v;
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let sin: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let cos: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        self.eval_with(x, &sin, &cos)
    }
}

/// A vector field with every component compiled; shares one trig cache per call.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledField {
    comps: Vec<CompiledExpr>,
    trig: bool,
    zero: bool,
}

impl CompiledField {
    pub fn new(components: &[Expr], params: &[f64]) -> Result<Self, ExprError> {
        let comps = components
            .iter()
            .map(|c| CompiledExpr::new(c, params))
            .collect::<Result<Vec<_>, _>>()?;
        let trig = comps.iter().any(CompiledExpr::needs_trig);
        let zero = comps.iter().all(CompiledExpr::is_zero);
        Ok(Self { comps, trig, zero })
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn needs_trig(&self) -> bool {
        self.trig
    }

    /// True when no component depends on the point.
    pub fn is_constant(&self) -> bool {
        self.comps.iter().all(|c| c.min_dim() == 0)
    }

    /// Writes the field value at `x` into `out`; `sin`/`cos` must be filled if trig is needed.
    #[inline]
    pub fn eval_with(&self, x: &[f64], sin: &[f64], cos: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval_with(x, sin, cos);
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let sin: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let cos: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        self.eval_with(x, &sin, &cos, out);
    }
}


/// Several fields flattened into one list of nonzero components, evaluated against a
/// packed atom buffer `[x | sin x | cos x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldBundle {
    dim: usize,
    trig: bool,
    entries: Vec<Entry>,
    monos: Vec<FlatMono>,
    factors: Vec<(u32, i32)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    field: u32,
    comp: u32,
    start: u32,
    end: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct FlatMono {
    coeff: f64,
    start: u32,
    end: u32,
}

impl FieldBundle {
    pub fn new(fields: &[CompiledField], dim: usize) -> Self {
        let mut out = FieldBundle {
            dim,
            trig: fields.iter().any(CompiledField::needs_trig),
            entries: Vec::new(),
            monos: Vec::new(),
            factors: Vec::new(),
        };
        for (fi, field) in fields.iter().enumerate() {
            for (ci, comp) in field.comps.iter().enumerate() {
                if comp.is_zero() {
                    continue;
                }
                let start = out.monos.len() as u32;
                for m in &comp.monos {
                    let fstart = out.factors.len() as u32;
                    for f in &comp.factors[m.start..m.end] {
                        let slot = match f.kind {
                            Kind::Var => 0,
                            Kind::Sin => dim,
                            Kind::Cos => 2 * dim,
                        } + f.var;
                        out.factors.push((slot as u32, f.power));
                    }
                    out.monos.push(FlatMono {
                        coeff: m.coeff,
                        start: fstart,
                        end: out.factors.len() as u32,
                    });
                }
                out.entries.push(Entry {
                    field: fi as u32,
                    comp: ci as u32,
                    start,
                    end: out.monos.len() as u32,
                });
            }
        }
        out
    }

    pub fn needs_trig(&self) -> bool {
        self.trig
    }

    /// Fills a lane-major atom buffer (`3 · dim` rows of `lanes`) from a lane-major state.
    #[inline]
    pub fn load(&self, x: &[f64], lanes: usize, atoms: &mut [f64]) {
        let n = self.dim * lanes;
        atoms[..n].copy_from_slice(&x[..n]);
        if self.trig {
            for i in 0..n {
                let (s, c) = x[i].sin_cos();
                atoms[n + i] = s;
                atoms[2 * n + i] = c;
            }
        }
    }

    /// `out = Σ_f weights[f] · V_f` per lane, for atoms filled by [`FieldBundle::load`].
    /// `weights` holds one row of `lanes` per field, `tmp` needs `2 · lanes` slots.
    #[inline]
    pub fn combine(
        &self,
        atoms: &[f64],
        weights: &[f64],
        lanes: usize,
        out: &mut [f64],
        tmp: &mut [f64],
    ) {
        let l = lanes;
        out[..self.dim * l].fill(0.0);
        let (acc, v) = tmp[..2 * l].split_at_mut(l);
        for e in &self.entries {
            acc.fill(0.0);
            for m in &self.monos[e.start as usize..e.end as usize] {
                v.fill(m.coeff);
                for &(slot, power) in &self.factors[m.start as usize..m.end as usize] {
                    let row = &atoms[slot as usize * l..(slot as usize + 1) * l];
                    for (vi, a) in v.iter_mut().zip(row) {
                        *vi *= ipow(*a, power);
                    }
                }
                for (ai, vi) in acc.iter_mut().zip(v.iter()) {
                    *ai += vi;
                }
            }
            let w = &weights[e.field as usize * l..(e.field as usize + 1) * l];
            let o = &mut out[e.comp as usize * l..(e.comp as usize + 1) * l];
            for ((oi, wi), ai) in o.iter_mut().zip(w).zip(acc.iter()) {
                *oi += wi * ai;
            }
        }
    }
}

/// Integer power by repeated multiplication; `powi` compiles to a libcall even for `p = 1`.
#[inline(always)]
fn ipow(base: f64, p: i32) -> f64 {
    match p {
        1 => return base,
        2 => return base * base,
        _ => {}
    }
    let mut acc = 1.0;
    for _ in 0..p.unsigned_abs() {
        acc *= base;
    }
    if p < 0 {
        1.0 / acc
    } else {
        acc
    }
}
