//! UFG certificates, the dilation condition and the V₀-condition.
//!
//! A certificate stores, for each overflowing bracket `V_[α]`, coefficients `φ_{α,b}`
//! over the hierarchy basis. Certificates can be checked symbolically or searched for
//! by matching canonical coefficients under a constant or trigonometric ansatz.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::liealg::{bracket, BracketHierarchy, Combination, LieError, MultiIndex, VectorField};
use crate::symexpr::{Atom, Domain, Expr, ExprError, Term};

const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UfgError {
    #[error("certificate has no row for {0}")]
    MissingRow(MultiIndex),
    #[error("residual of row {row} is nonzero in component {component}")]
    ResidualNonzero { row: MultiIndex, component: usize },
    #[error("phi[{row}, basis {basis}] is unbounded{}", if *.derivative { " after a V_j derivative" } else { "" })]
    UnboundedPhi {
        row: MultiIndex,
        basis: usize,
        derivative: bool,
    },
    #[error("certificate order {cert} does not match hierarchy order {hierarchy}")]
    OrderMismatch { cert: usize, hierarchy: usize },
    #[error(
        "no solution for row {row} under the {ansatz} ansatz (residual norm {residual_norm:.3e})"
    )]
    NoSolution {
        row: MultiIndex,
        ansatz: String,
        residual_norm: f64,
    },
    #[error("linear system for row {0} needs a non-monomial pivot")]
    NonMonomialPivot(MultiIndex),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Boundedness record for one certificate entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiBound {
    pub row: String,
    pub basis: usize,
    pub bounded: bool,
    /// `sup |φ|` (an upper bound unless `φ` is constant).
    pub sup: f64,
    /// `sup |V_j φ|` for `j = 1..d`.
    pub derivative_sups: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UfgCertificate {
    pub m: usize,
    rows: BTreeMap<MultiIndex, Combination>,
    pub verified: bool,
    pub boundedness: Vec<PhiBound>,
}

impl UfgCertificate {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            rows: BTreeMap::new(),
            verified: false,
            boundedness: Vec::new(),
        }
    }

    /// Sets `V_[α] = Σ_b φ_{α,b} V_b`. Invalidates any earlier verification.
    pub fn set_row(&mut self, alpha: MultiIndex, comb: Combination) {
        let comb = comb
            .into_iter()
            .filter(|(_, e)| !e.is_structurally_zero())
            .collect();
        self.rows.insert(alpha, comb);
        self.verified = false;
    }

    pub fn row(&self, alpha: &MultiIndex) -> Option<&Combination> {
        self.rows.get(alpha)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&MultiIndex, &Combination)> {
        self.rows.iter()
    }

    /// `φ_{α,b}`, zero when absent.
    pub fn phi(&self, alpha: &MultiIndex, b: usize) -> Option<Expr> {
        self.rows
            .get(alpha)
            .map(|r| r.get(&b).cloned().unwrap_or_default())
    }
}

/// Checks every overflow row (and any extended rows present) symbolically.
///
/// `params` binds the model parameters for the sup values in the boundedness report.
pub fn verify_certificate(
    h: &BracketHierarchy,
    cert: &UfgCertificate,
    params: &[f64],
) -> Result<UfgCertificate, UfgError> {
    if cert.m != h.m() {
        return Err(UfgError::OrderMismatch {
            cert: cert.m,
            hierarchy: h.m(),
        });
    }
    let mut required = h.overflow_rows();
    for row in &required {
        if cert.row(row).is_none() {
            return Err(UfgError::MissingRow(row.clone()));
        }
    }
    required.extend(
        h.extended_rows()
            .into_iter()
            .filter(|r| cert.row(r).is_some()),
    );
    let mut report = Vec::new();
    for row in &required {
        let comb = cert.row(row).expect("presence checked");
        let target = h
            .get(row)
            .ok_or_else(|| LieError::NotInHierarchy(row.clone()))?;
        for (&b, phi) in comb {
            let bound = phi_bound(h, row, b, phi, params)?;
            if !bound.bounded {
                let derivative = phi.is_bounded();
                return Err(UfgError::UnboundedPhi {
                    row: row.clone(),
                    basis: b,
                    derivative,
                });
            }
            report.push(bound);
        }
        let residual = target.sub(&crate::liealg::combination_field(h, comb));
        for (i, c) in residual.components().iter().enumerate() {
            if !c.is_zero_mod_trig() {
                return Err(UfgError::ResidualNonzero {
                    row: row.clone(),
                    component: i,
                });
            }
        }
    }
    let mut out = cert.clone();
    out.verified = true;
    out.boundedness = report;
    Ok(out)
}

fn phi_bound(
    h: &BracketHierarchy,
    row: &MultiIndex,
    b: usize,
    phi: &Expr,
    params: &[f64],
) -> Result<PhiBound, UfgError> {
    let derivs: Vec<Expr> = h.fields()[1..].iter().map(|v| v.apply(phi)).collect();
    let bounded = phi.is_bounded() && derivs.iter().all(Expr::is_bounded);
    let sup = phi.sup_norm(&Domain::Whole, 2, params)?.value;
    let derivative_sups = derivs
        .iter()
        .map(|e| e.sup_norm(&Domain::Whole, 2, params).map(|s| s.value))
        .collect::<Result<_, _>>()?;
    Ok(PhiBound {
        row: row.to_string(),
        basis: b,
        bounded,
        sup,
        derivative_sups,
    })
}

/// Function class searched for the `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ansatz {
    Constants,
    /// Products `Π sin(x_i)^a cos(x_i)^e` with `e ≤ 1` and total degree `≤ D`.
    Trig(u32),
}

impl Ansatz {
    fn name(self) -> String {
        match self {
            Ansatz::Constants => "constants".into(),
            Ansatz::Trig(d) => format!("trig-degree-{d}"),
        }
    }

    fn functions(self, vars: &[usize]) -> Vec<Expr> {
        let Ansatz::Trig(deg) = self else {
            return vec![Expr::constant(1.0)];
        };
        let mut terms = vec![(Term::one(), 0u32)];
        for &v in vars {
            let mut next = Vec::new();
            for (t, used) in &terms {
                for e in 0..=1u32 {
                    for a in 0..=deg {
                        if used + a + e > deg {
                            break;
                        }
                        let f = t
                            .mul(&Term::atom(Atom::Sin(v), a as i32))
                            .mul(&Term::atom(Atom::Cos(v), e as i32));
                        next.push((f, used + a + e));
                    }
                }
            }
            terms = next;
        }
        terms
            .into_iter()
            .map(|(t, _)| Expr::from_term(t, 1.0))
            .collect()
    }
}

/// Searches for certificate rows for all overflow rows, plus extended rows when solvable.
pub fn solve_certificate(
    h: &BracketHierarchy,
    ansatz: Ansatz,
    params: &[f64],
) -> Result<UfgCertificate, UfgError> {
    let vars = used_vars(h);
    let funcs = ansatz.functions(&vars);
    let basis: Vec<(usize, &VectorField)> = h
        .basis()
        .iter()
        .enumerate()
        .map(|(i, b)| (i, &b.field))
        .collect();
    let mut cert = UfgCertificate::new(h.m());
    for row in h.overflow_rows() {
        let target = h
            .get(&row)
            .ok_or_else(|| LieError::NotInHierarchy(row.clone()))?;
        match solve_combination(target, &basis, &funcs, params) {
            Ok(comb) => cert.set_row(row, comb),
            Err(Failure::Inconsistent { residual_norm, .. }) => {
                return Err(UfgError::NoSolution {
                    row,
                    ansatz: ansatz.name(),
                    residual_norm,
                })
            }
            Err(Failure::NonMonomial) => return Err(UfgError::NonMonomialPivot(row)),
        }
    }
    for row in h.extended_rows() {
        let Some(target) = h.get(&row) else { continue };
        if let Ok(comb) = solve_combination(target, &basis, &funcs, params) {
            cert.set_row(row, comb);
        }
    }
    verify_certificate(h, &cert, params)
}

fn used_vars(h: &BracketHierarchy) -> Vec<usize> {
    let mut used = vec![false; h.dim()];
    for f in h.fields() {
        for c in f.components() {
            for (t, _) in c.terms() {
                for (a, _) in t.atoms() {
                    if let Atom::Var(i) | Atom::Sin(i) | Atom::Cos(i) = a {
                        used[i] = true;
                    }
                }
            }
        }
    }
    (0..h.dim()).filter(|&i| used[i]).collect()
}

#[derive(Debug)]
pub(crate) enum Failure {
    Inconsistent {
        residual_norm: f64,
        components: Vec<usize>,
    },
    NonMonomial,
}

/// Solves `target = Σ_{b,k} c_{b,k} g_k V_b` by canonical coefficient matching.
///
/// Coefficients `c_{b,k}` may be Laurent monomials in the parameters; pivots must be
/// single-term. Free unknowns are set to zero.
pub(crate) fn solve_combination(
    target: &VectorField,
    basis: &[(usize, &VectorField)],
    funcs: &[Expr],
    params: &[f64],
) -> Result<Combination, Failure> {
    let unknowns: Vec<(usize, usize)> = basis
        .iter()
        .flat_map(|&(b, _)| (0..funcs.len()).map(move |k| (b, k)))
        .collect();
    let n = unknowns.len();
    let mut eqs: BTreeMap<(usize, Term), (Vec<Expr>, Expr)> = BTreeMap::new();
    let add = |eqs: &mut BTreeMap<(usize, Term), (Vec<Expr>, Expr)>,
               field: &VectorField,
               scale: &Expr,
               slot: Option<usize>| {
        for (i, c) in field.components().iter().enumerate() {
            for (t, coeff) in (c * scale).pythagorean_reduce().terms() {
                let (state, par) = t.split();
                let entry = eqs
                    .entry((i, state))
                    .or_insert_with(|| (vec![Expr::zero(); n], Expr::zero()));
                let v = Expr::from_term(par, coeff);
                match slot {
                    Some(u) => entry.0[u] = &entry.0[u] + &v,
                    None => entry.1 = &entry.1 + &v,
                }
            }
        }
    };
    let one = Expr::constant(1.0);
    add(&mut eqs, target, &one, None);
    let pos: BTreeMap<usize, &VectorField> = basis.iter().copied().collect();
    for (u, &(b, k)) in unknowns.iter().enumerate() {
        add(&mut eqs, pos[&b], &funcs[k], Some(u));
    }
    let mut rows: Vec<(usize, Vec<Expr>, Expr)> = eqs
        .into_iter()
        .map(|((i, _), (coeffs, rhs))| (i, coeffs, rhs))
        .collect();

    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        let pick = (rank..rows.len())
            .filter_map(|r| {
                let e = &rows[r].1[col];
                let (_, c) = e.leading()?;
                (e.term_count() == 1 && c.abs() > PIVOT_TOL).then_some((r, c.abs()))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((r, _)) = pick else { continue };
        rows.swap(rank, r);
        let piv = rows[rank].1[col].clone();
        let scaled = |e: &Expr| e.div_exact(&piv).expect("single-term divisor");
        rows[rank].1 = rows[rank].1.iter().map(scaled).collect();
        rows[rank].2 = scaled(&rows[rank].2);
        let (_, pc, pr) = rows[rank].clone();
        for (o, (_, coeffs, rhs)) in rows.iter_mut().enumerate() {
            if o == rank || coeffs[col].is_structurally_zero() {
                continue;
            }
            let f = coeffs[col].clone();
            for (x, p) in coeffs.iter_mut().zip(&pc) {
                *x = &*x - &(&f * p);
            }
            *rhs = &*rhs - &(&f * &pr);
        }
        pivots.push((rank, col));
        rank += 1;
    }
    let mut components = Vec::new();
    let mut residual = 0.0;
    for (i, coeffs, rhs) in rows.iter().skip(rank) {
        if coeffs.iter().any(|c| !c.is_structurally_zero()) {
            return Err(Failure::NonMonomial);
        }
        if !rhs.is_structurally_zero() {
            let v = rhs
                .constant_value(params)
                .ok()
                .flatten()
                .unwrap_or(f64::NAN);
            residual += v * v;
            components.push(*i);
        }
    }
    if !components.is_empty() {
        components.sort_unstable();
        components.dedup();
        return Err(Failure::Inconsistent {
            residual_norm: residual.sqrt(),
            components,
        });
    }
    let mut comb = Combination::new();
    for (r, col) in pivots {
        let (b, k) = unknowns[col];
        let term = &rows[r].2 * &funcs[k];
        let e = comb.entry(b).or_default();
        *e = &*e + &term;
    }
    comb.retain(|_, e| !e.is_structurally_zero());
    Ok(comb)
}

/// `[V_b, V_0] = c_b · V_b` for one basis element.
#[derive(Clone, Debug, PartialEq)]
pub struct DilationFactor {
    pub basis: usize,
    pub rep: MultiIndex,
    pub factor: Expr,
    /// Signed upper bound on `sup_x c_b(x)`.
    pub sup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DilationCertificate {
    pub factors: Vec<DilationFactor>,
    /// `min_b (−sup c_b)`.
    pub lambda0: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DilationError {
    #[error("[V_{0}, V_0] is not a scalar multiple of V_{0}")]
    NotProportional(MultiIndex),
    #[error("[V_{rep}, V_0] = c V_{rep} with sup c = {sup} >= 0")]
    NonNegativeFactor { rep: MultiIndex, sup: f64 },
    #[error("the Γ basis is empty")]
    EmptyBasis,
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Tests the proportional form of the dilation condition on every basis field.
pub fn check_dilation(
    h: &BracketHierarchy,
    params: &[f64],
) -> Result<DilationCertificate, DilationError> {
    if h.basis().is_empty() {
        return Err(DilationError::EmptyBasis);
    }
    let v0 = &h.fields()[0];
    let mut factors = Vec::new();
    for (b, elem) in h.basis().iter().enumerate() {
        let raw = bracket(&elem.field, v0)?;
        let factor = proportionality(&raw, &elem.field)
            .ok_or_else(|| DilationError::NotProportional(elem.rep.clone()))?;
        let sup = factor.sup_value(params)?;
        if !(sup < 0.0) {
            return Err(DilationError::NonNegativeFactor {
                rep: elem.rep.clone(),
                sup,
            });
        }
        factors.push(DilationFactor {
            basis: b,
            rep: elem.rep.clone(),
            factor,
            sup,
        });
    }
    let lambda0 = factors.iter().map(|f| -f.sup).fold(f64::INFINITY, f64::min);
    Ok(DilationCertificate { factors, lambda0 })
}

/// Finds `c` with `w = c · v`, trying the raw and the trig-reduced quotients.
fn proportionality(w: &VectorField, v: &VectorField) -> Option<Expr> {
    if w.is_zero() {
        return Some(Expr::zero());
    }
    let (i, vi) = v
        .components()
        .iter()
        .enumerate()
        .find(|(_, c)| !c.is_zero_mod_trig())?;
    let wi = &w.components()[i];
    let candidates = [
        wi.div_exact(vi),
        wi.pythagorean_reduce().div_exact(&vi.pythagorean_reduce()),
    ];
    candidates.into_iter().flatten().find_map(|c| {
        let c = c.pythagorean_reduce();
        w.sub(&v.scale(&c)).is_zero().then_some(c)
    })
}

/// `V_0 = Σ_b φ_b V_b` over basis fields of level ≤ 2.
#[derive(Clone, Debug, PartialEq)]
pub struct V0Decomposition {
    pub coefficients: Combination,
    pub ansatz: Ansatz,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum V0Failure {
    #[error("V_0 is not in the bounded span of the A_2 fields (components {components:?}, residual {residual_norm:.3e})")]
    NotInSpan {
        components: Vec<usize>,
        residual_norm: f64,
    },
    #[error("linear system needs a non-monomial pivot")]
    NonMonomialPivot,
}

/// Tries constants, then trigonometric coefficients up to degree 2.
pub fn check_v0_condition(
    h: &BracketHierarchy,
    params: &[f64],
) -> Result<V0Decomposition, V0Failure> {
    let basis: Vec<(usize, &VectorField)> = h
        .basis()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.rep.length() <= 2)
        .map(|(i, b)| (i, &b.field))
        .collect();
    let vars = used_vars(h);
    let mut last = None;
    for ansatz in [Ansatz::Constants, Ansatz::Trig(2)] {
        match solve_combination(&h.fields()[0], &basis, &ansatz.functions(&vars), params) {
            Ok(coefficients) => {
                return Ok(V0Decomposition {
                    coefficients,
                    ansatz,
                })
            }
            Err(Failure::NonMonomial) => return Err(V0Failure::NonMonomialPivot),
            Err(Failure::Inconsistent {
                residual_norm,
                components,
            }) => {
                last = Some(V0Failure::NotInSpan {
                    components,
                    residual_norm,
                })
            }
        }
    }
    Err(last.expect("at least one ansatz tried"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::build_hierarchy;
    use crate::symexpr::{parse_expr, Symbols};

    fn field(sym: &Symbols, comps: &[&str]) -> VectorField {
        VectorField::new(comps.iter().map(|c| parse_expr(c, sym).unwrap()).collect())
    }

    fn mi(v: &[u8]) -> MultiIndex {
        MultiIndex::new(v.to_vec(), 9).unwrap()
    }

    fn heisenberg() -> (Symbols, BracketHierarchy) {
        let s = Symbols::standard(3, &["k"]);
        let f = vec![
            field(&s, &["-k*x", "-k*y", "-2*k*z"]),
            field(&s, &["0", "0", "-y"]),
            field(&s, &["0", "1", "x"]),
        ];
        let h = build_hierarchy(&f, 2).unwrap();
        (s, h)
    }

    fn grusin() -> (Symbols, BracketHierarchy) {
        let s = Symbols::standard(2, &["k"]);
        let f = vec![field(&s, &["k*x", "0"]), field(&s, &["0", "x"])];
        (s.clone(), build_hierarchy(&f, 1).unwrap())
    }

    fn k() -> Expr {
        Expr::param(0)
    }

    fn hand_heisenberg(phi10: Expr) -> UfgCertificate {
        let mut c = UfgCertificate::new(2);
        let row = |b: usize, e: Expr| Combination::from([(b, e)]);
        c.set_row(mi(&[1, 0]), row(0, phi10));
        c.set_row(mi(&[2, 0]), row(1, -&k()));
        c.set_row(mi(&[1, 2, 0]), row(2, k().scale(-2.0)));
        c.set_row(mi(&[2, 1, 0]), row(2, k().scale(2.0)));
        for r in [[1, 1, 0], [2, 2, 0]] {
            c.set_row(mi(&r), Combination::new());
        }
        for a in [[1, 1], [1, 2], [2, 1], [2, 2]] {
            for i in 1..=2 {
                c.set_row(mi(&a).push(i), Combination::new());
            }
        }
        c
    }

    #[test]
    fn heisenberg_hand_certificate_verifies() {
        let (_, h) = heisenberg();
        let v = verify_certificate(&h, &hand_heisenberg(-&k()), &[1.0]).unwrap();
        assert!(v.verified);
        assert!(v.boundedness.iter().all(|b| b.bounded));
    }

    #[test]
    fn unbounded_phi_is_rejected() {
        let (_, h) = heisenberg();
        assert_eq!(
            verify_certificate(&h, &hand_heisenberg(Expr::var(0)), &[1.0]).unwrap_err(),
            UfgError::UnboundedPhi {
                row: mi(&[1, 0]),
                basis: 0,
                derivative: false
            }
        );
    }

    #[test]
    fn unbounded_derivative_is_rejected() {
        // φ = sin(x) is bounded but V_1 φ = x cos(x) is not
        let s = Symbols::standard(2, &[]);
        let f = vec![field(&s, &["0", "x*sin(x)"]), field(&s, &["x", "0"])];
        let h = build_hierarchy(&f, 1).unwrap();
        let mut c = UfgCertificate::new(1);
        c.set_row(mi(&[1, 0]), Combination::from([(0, Expr::sin(0))]));
        c.set_row(mi(&[1, 1]), Combination::new());
        assert_eq!(
            verify_certificate(&h, &c, &[]).unwrap_err(),
            UfgError::UnboundedPhi {
                row: mi(&[1, 0]),
                basis: 0,
                derivative: true
            }
        );
    }

    #[test]
    fn missing_row() {
        let (_, h) = grusin();
        let c = UfgCertificate::new(1);
        assert!(matches!(
            verify_certificate(&h, &c, &[1.0]),
            Err(UfgError::MissingRow(_))
        ));
    }

    #[test]
    fn wrong_coefficient_leaves_residual() {
        let (_, h) = grusin();
        let mut c = UfgCertificate::new(1);
        c.set_row(mi(&[1, 0]), Combination::from([(0, k())]));
        c.set_row(mi(&[1, 1]), Combination::new());
        assert_eq!(
            verify_certificate(&h, &c, &[1.0]).unwrap_err(),
            UfgError::ResidualNonzero {
                row: mi(&[1, 0]),
                component: 1
            }
        );
    }

    #[test]
    fn grusin_certificate() {
        let (_, h) = grusin();
        let mut c = UfgCertificate::new(1);
        c.set_row(mi(&[1, 0]), Combination::from([(0, -&k())]));
        c.set_row(mi(&[1, 1]), Combination::new());
        assert!(verify_certificate(&h, &c, &[1.0]).unwrap().verified);
        let solved = solve_certificate(&h, Ansatz::Constants, &[1.0]).unwrap();
        assert_eq!(
            solved.row(&mi(&[1, 0])).unwrap(),
            c.row(&mi(&[1, 0])).unwrap()
        );
    }

    #[test]
    fn heisenberg_solver_recovers_hand_table() {
        let (_, h) = heisenberg();
        let solved = solve_certificate(&h, Ansatz::Constants, &[1.0]).unwrap();
        let hand = hand_heisenberg(-&k());
        for row in h.overflow_rows() {
            assert_eq!(solved.row(&row), hand.row(&row), "row {row}");
        }
    }

    #[test]
    fn ou_solver() {
        let s = Symbols::standard(1, &["a"]);
        let f = vec![field(&s, &["a*x"]), field(&s, &["1"])];
        let h = build_hierarchy(&f, 1).unwrap();
        let c = solve_certificate(&h, Ansatz::Constants, &[0.5]).unwrap();
        assert_eq!(c.phi(&mi(&[1, 0]), 0).unwrap(), Expr::param(0));
    }

    #[test]
    fn example22_needs_more_than_m1() {
        let s = Symbols::standard(2, &[]);
        let f = vec![field(&s, &["0", "sin(x)"]), field(&s, &["sin(x)", "0"])];
        let h = build_hierarchy(&f, 1).unwrap();
        assert!(matches!(
            solve_certificate(&h, Ansatz::Constants, &[]),
            Err(UfgError::NoSolution { .. })
        ));
    }

    #[test]
    fn example22_variant_trig_certificate() {
        let s = Symbols::standard(2, &[]);
        let f = vec![field(&s, &["sin(x)", "0"]), field(&s, &["0", "sin(x)"])];
        let h = build_hierarchy(&f, 1).unwrap();
        assert!(solve_certificate(&h, Ansatz::Constants, &[]).is_err());
        let c = solve_certificate(&h, Ansatz::Trig(1), &[]).unwrap();
        assert_eq!(
            c.phi(&mi(&[1, 0]), 0).unwrap(),
            parse_expr("-cos(x)", &s).unwrap()
        );
        assert!(c.verified);
    }

    #[test]
    fn dilation_examples() {
        let (_, g) = grusin();
        assert_eq!(check_dilation(&g, &[1.5]).unwrap().lambda0, 1.5);
        let (_, h) = heisenberg();
        let dil = check_dilation(&h, &[1.0]).unwrap();
        assert_eq!(dil.lambda0, 1.0);
        let sups: Vec<f64> = dil.factors.iter().map(|f| f.sup).collect();
        assert_eq!(sups, [-1.0, -1.0, -2.0]);

        let s = Symbols::standard(1, &["a"]);
        let ou = build_hierarchy(&[field(&s, &["a*x"]), field(&s, &["1"])], 1).unwrap();
        assert!(matches!(
            check_dilation(&ou, &[0.5]),
            Err(DilationError::NonNegativeFactor { .. })
        ));
    }

    #[test]
    fn non_proportional_bracket() {
        let s = Symbols::standard(2, &[]);
        let f = vec![field(&s, &["y", "0"]), field(&s, &["0", "1"])];
        let h = build_hierarchy(&f, 1).unwrap();
        // [V_1, V_0] = ∂x, not a multiple of ∂y
        assert!(matches!(
            check_dilation(&h, &[]),
            Err(DilationError::NotProportional(_))
        ));
    }

    #[test]
    fn v0_condition() {
        let s = Symbols::standard(1, &[]);
        let v = field(&s, &["1"]);
        let h = build_hierarchy(&[v.clone(), v], 2).unwrap();
        let dec = check_v0_condition(&h, &[]).unwrap();
        assert_eq!(
            dec.coefficients,
            Combination::from([(0, Expr::constant(1.0))])
        );

        let (_, heis) = heisenberg();
        match check_v0_condition(&heis, &[1.0]) {
            Err(V0Failure::NotInSpan { components, .. }) => assert!(components.contains(&0)),
            other => panic!("unexpected {other:?}"),
        }
        let (_, g) = grusin();
        let g2 = build_hierarchy(g.fields(), 2).unwrap();
        assert!(check_v0_condition(&g2, &[1.0]).is_err());
    }
}
