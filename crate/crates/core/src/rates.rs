//! Decay-rate constants for the Γ form: sup-constants, the coefficient recursion,
//! `γ`, the `λ_0` threshold, the certified rate, and a tailored optimizer for `m ≤ 2`.
//!
//! Index sets are taken over the deduplicated hierarchy basis: "level `k`" means the
//! basis elements whose representative has length `k`, and `|A_m|` is the basis size.

use serde::Serialize;
use thiserror::Error;

use crate::liealg::{apply_lambda_j, BracketHierarchy, Combination, LieError, MultiIndex};
use crate::symexpr::{Domain, Expr, ExprError};
use crate::ufgcheck::{DilationCertificate, UfgCertificate};

const NONZERO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatesError {
    #[error("coefficients violate the recursion at basis {basis} (direction {j}): need {required} < a = {a}")]
    CoefficientsViolateRecursion {
        basis: usize,
        j: usize,
        a: f64,
        required: f64,
    },
    #[error("certificate entry for {row} is unbounded")]
    UnboundedPhi { row: MultiIndex },
    #[error("certificate has not been verified")]
    Unverified,
    #[error("the small-system optimizer needs m <= 2 (got {0})")]
    NotSmallSystem(usize),
    #[error("coefficient vector has {got} entries for a basis of {expected}")]
    CoefficientCount { expected: usize, got: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Per-basis sup constants, plus the signed diagonal functions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasisSups {
    pub rep: String,
    pub level: usize,
    /// `sup_{j,β} |φ_{γ∗j,β}|`.
    pub j_sup: f64,
    /// `sup_{j, β≠γ} |V_j φ_{γ∗j,β}|`.
    pub h_sup: f64,
    /// `sup_{j, β≠γ} |φ_{γ∗j∗j,β}|`.
    pub i_sup: f64,
    /// Signed sup of `Σ_j V_j φ_{γ∗j,γ}`.
    pub diag_first: f64,
    /// Signed sup of `Σ_j φ_{γ∗j∗j,γ}`.
    pub diag_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupConstants {
    pub m: usize,
    pub d: usize,
    pub per_basis: Vec<BasisSups>,
    /// Number of level-`m` basis elements with nonzero `J_γ`.
    pub j_aggregate: f64,
    /// `pred[c][j-1]`: basis elements `b` below level `m` with `V_[rep(b)∗j] = ±V_c`.
    #[serde(skip)]
    pred: Vec<Vec<Vec<usize>>>,
    /// `pred2[c]`: basis elements `b` with `V_[rep(b)∗j∗j] = ±V_c` in range, over all `j`.
    #[serde(skip)]
    pred2: Vec<Vec<usize>>,
}

impl SupConstants {
    pub fn levels(&self) -> Vec<usize> {
        self.per_basis.iter().map(|b| b.level).collect()
    }

    /// All-zero constants for a basis with the given levels (no predecessors).
    pub fn zeros(m: usize, d: usize, levels: &[usize]) -> Self {
        Self {
            m,
            d,
            per_basis: levels
                .iter()
                .map(|&level| BasisSups {
                    rep: String::new(),
                    level,
                    j_sup: 0.0,
                    h_sup: 0.0,
                    i_sup: 0.0,
                    diag_first: 0.0,
                    diag_second: 0.0,
                })
                .collect(),
            j_aggregate: 0.0,
            pred: vec![vec![Vec::new(); d]; levels.len()],
            pred2: vec![Vec::new(); levels.len()],
        }
    }

    fn refresh_aggregate(&mut self) {
        self.j_aggregate = self
            .per_basis
            .iter()
            .filter(|b| b.level == self.m && b.j_sup > NONZERO)
            .count() as f64;
    }

    /// Replaces the numeric sups (predecessor structure is kept).
    pub fn with_sups(mut self, sups: Vec<BasisSups>) -> Self {
        assert_eq!(sups.len(), self.per_basis.len());
        self.per_basis = sups;
        self.refresh_aggregate();
        self
    }
}

/// `V_[rep∗j∗j]` as a basis combination, from the hierarchy or the certificate.
fn second_row(
    h: &BracketHierarchy,
    cert: &UfgCertificate,
    rep: &MultiIndex,
    j: u8,
) -> Result<Combination, RatesError> {
    let target = rep.push(j).push(j);
    if target.length() <= h.m() {
        return Ok(h.express(&target)?);
    }
    cert.row(&target)
        .cloned()
        .ok_or(RatesError::Lie(LieError::MissingRow(target)))
}

fn sup_abs(e: &Expr, params: &[f64], row: &MultiIndex) -> Result<f64, RatesError> {
    let s = e.sup_norm(&Domain::Whole, 2, params)?.value;
    if s.is_finite() {
        Ok(s)
    } else {
        Err(RatesError::UnboundedPhi { row: row.clone() })
    }
}

fn sup_signed(e: &Expr, params: &[f64], row: &MultiIndex) -> Result<f64, RatesError> {
    let s = e.sup_value(params)?;
    if s.is_finite() {
        Ok(s)
    } else {
        Err(RatesError::UnboundedPhi { row: row.clone() })
    }
}

pub fn compute_sup_constants(
    h: &BracketHierarchy,
    cert: &UfgCertificate,
    params: &[f64],
) -> Result<SupConstants, RatesError> {
    if !cert.verified {
        return Err(RatesError::Unverified);
    }
    let d = h.d();
    let nb = h.basis().len();
    let levels: Vec<usize> = (0..nb).map(|b| h.basis_level(b)).collect();
    let mut out = SupConstants::zeros(h.m(), d, &levels);
    for (g, elem) in h.basis().iter().enumerate() {
        let rep = &elem.rep;
        let s = &mut out.per_basis[g];
        s.rep = rep.to_string();
        let mut diag_first = Expr::zero();
        let mut diag_second = Expr::zero();
        for j in 1..=d as u8 {
            let vj = &h.fields()[j as usize];
            let row = rep.push(j);
            let first = apply_lambda_j(h, cert, j, rep)?;
            for (&beta, phi) in &first {
                s.j_sup = s.j_sup.max(sup_abs(phi, params, &row)?);
                let dphi = vj.apply(phi);
                if beta == g {
                    diag_first = &diag_first + &dphi;
                } else {
                    s.h_sup = s.h_sup.max(sup_abs(&dphi, params, &row)?);
                }
            }
            let row2 = row.push(j);
            let second = second_row(h, cert, rep, j)?;
            for (&beta, phi) in &second {
                if beta == g {
                    diag_second = &diag_second + phi;
                } else {
                    s.i_sup = s.i_sup.max(sup_abs(phi, params, &row2)?);
                }
            }
            if row.length() <= h.m() {
                if let Some(r) = h.basis_ref(&row)? {
                    out.pred[r.index][j as usize - 1].push(g);
                }
            }
            if row2.length() <= h.m() {
                if let Some(r) = h.basis_ref(&row2)? {
                    out.pred2[r.index].push(g);
                }
            }
        }
        let s = &mut out.per_basis[g];
        s.diag_first = sup_signed(&diag_first, params, &rep.push(1))?;
        s.diag_second = sup_signed(&diag_second, params, &rep.push(1).push(1))?;
    }
    out.refresh_aggregate();
    Ok(out)
}

/// Positive Γ coefficients, one per basis element.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaCoefficients {
    pub a: Vec<f64>,
}

/// Level policy: `a_1 = max(1, J+1)`, `a_k = J + a_{k-1}^2 + 1`.
pub fn policy_levels(j_aggregate: f64, m: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(m);
    a.push((j_aggregate + 1.0).max(1.0));
    for k in 1..m {
        a.push(j_aggregate + a[k - 1] * a[k - 1] + 1.0);
    }
    a
}

pub fn choose_gamma_coefficients(s: &SupConstants) -> GammaCoefficients {
    let by_level = policy_levels(s.j_aggregate, s.m);
    GammaCoefficients {
        a: s.per_basis.iter().map(|b| by_level[b.level - 1]).collect(),
    }
}

/// Strict recursion: `a_c > max(0, J)` at level 1 and `a_c > J + Σ_{b→c} a_b²` per direction.
pub fn check_recursion(a: &GammaCoefficients, s: &SupConstants) -> Result<(), RatesError> {
    if a.a.len() != s.per_basis.len() {
        return Err(RatesError::CoefficientCount {
            expected: s.per_basis.len(),
            got: a.a.len(),
        });
    }
    for (c, &ac) in a.a.iter().enumerate() {
        let floor = s.j_aggregate.max(0.0);
        let mut worst = (floor, 0usize);
        for j in 0..s.d {
            let req = s.j_aggregate + s.pred[c][j].iter().map(|&b| a.a[b] * a.a[b]).sum::<f64>();
            if req > worst.0 {
                worst = (req, j + 1);
            }
        }
        if !(ac > worst.0) {
            return Err(RatesError::CoefficientsViolateRecursion {
                basis: c,
                j: worst.1,
                a: ac,
                required: worst.0,
            });
        }
    }
    Ok(())
}

fn indicator(v: f64) -> f64 {
    if v > NONZERO {
        1.0
    } else {
        0.0
    }
}

/// `γ = max_b c_b / a_b` (clamped at zero) and the per-basis `c_b`.
pub fn compute_gamma(
    a: &GammaCoefficients,
    s: &SupConstants,
) -> Result<(f64, Vec<f64>), RatesError> {
    check_recursion(a, s)?;
    let d = s.d as f64;
    let size = s.per_basis.len() as f64;
    let m = s.m;
    let top: Vec<usize> = (0..s.per_basis.len())
        .filter(|&b| s.per_basis[b].level == m)
        .collect();
    let h_count = |skip: Option<usize>| -> f64 {
        top.iter()
            .filter(|&&b| Some(b) != skip)
            .map(|&b| indicator(s.per_basis[b].h_sup))
            .sum()
    };
    let c: Vec<f64> = s
        .per_basis
        .iter()
        .enumerate()
        .map(|(b, sb)| {
            let ab = a.a[b];
            if sb.level == m {
                2.0 * ab * ab * sb.j_sup * sb.j_sup * d * size
                    + 4.0 * ab * sb.diag_first
                    + 2.0 * d * h_count(Some(b))
                    + 2.0 * d * ab * ab * sb.h_sup * sb.h_sup * (size - 1.0)
            } else {
                2.0 * d + 2.0 * d * h_count(None)
            }
        })
        .collect();
    let gamma = c
        .iter()
        .zip(&a.a)
        .map(|(c, a)| c / a)
        .fold(0.0f64, f64::max);
    Ok((gamma, c))
}

/// `max_b ℓ_b / a_b` (clamped at zero) and the per-basis `ℓ_b`.
pub fn compute_lambda0_threshold(
    a: &GammaCoefficients,
    s: &SupConstants,
) -> Result<(f64, Vec<f64>), RatesError> {
    check_recursion(a, s)?;
    let d = s.d as f64;
    let size = s.per_basis.len() as f64;
    let m = s.m;
    let count_i = |level: usize, skip: Option<usize>| -> f64 {
        if level == 0 {
            return 0.0;
        }
        s.per_basis
            .iter()
            .enumerate()
            .filter(|(b, sb)| sb.level == level && Some(*b) != skip)
            .map(|(_, sb)| indicator(sb.i_sup))
            .sum()
    };
    // a_{k-2}^2 contributions from α_k = α_{k-2} ∗ j ∗ j, summed over preimages
    let jj = |c: usize| -> f64 { s.pred2[c].iter().map(|&b| a.a[b] * a.a[b]).sum() };
    let ell: Vec<f64> = s
        .per_basis
        .iter()
        .enumerate()
        .map(|(b, sb)| {
            let ab = a.a[b];
            let i2 = ab * ab * sb.i_sup * sb.i_sup;
            let k = sb.level;
            if k == m {
                d * i2 * (size - 1.0)
                    + d * count_i(m, Some(b))
                    + 2.0 * ab * sb.diag_second
                    + d * count_i(m - 1, None)
                    + jj(b)
            } else if k + 1 == m {
                2.0 * ab * sb.diag_second
                    + d * i2 * (size - 1.0)
                    + jj(b)
                    + d * count_i(m, None)
                    + d * count_i(m - 1, None)
            } else {
                let own = if k > 2 { jj(b) } else { 0.0 };
                d + own + d * count_i(m, None) + d * count_i(m - 1, None)
            }
        })
        .collect();
    let threshold = ell
        .iter()
        .zip(&a.a)
        .map(|(l, a)| l / a)
        .fold(0.0f64, f64::max);
    Ok((threshold, ell))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasisDiagnostics {
    pub rep: String,
    pub level: usize,
    pub a: f64,
    pub c: f64,
    pub ell: f64,
    /// `−sup c_b` from the dilation certificate.
    pub lambda_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub gamma: f64,
    pub lambda0_required: f64,
    pub lambda0_available: f64,
    pub mu: f64,
    pub lambda: Option<f64>,
    pub diagnostics: Vec<BasisDiagnostics>,
}

/// `μ = 2λ_0 − threshold`; `λ = μ − γ` when positive.
pub fn certify_rate(
    dil: &DilationCertificate,
    a: &GammaCoefficients,
    s: &SupConstants,
) -> Result<RateReport, RatesError> {
    let (gamma, c) = compute_gamma(a, s)?;
    let (threshold, ell) = compute_lambda0_threshold(a, s)?;
    let mu = 2.0 * dil.lambda0 - threshold;
    let lambda = (mu > gamma).then_some(mu - gamma);
    let diagnostics = s
        .per_basis
        .iter()
        .enumerate()
        .map(|(b, sb)| BasisDiagnostics {
            rep: sb.rep.clone(),
            level: sb.level,
            a: a.a[b],
            c: c[b],
            ell: ell[b],
            lambda_b: dil
                .factors
                .iter()
                .find(|f| f.basis == b)
                .map_or(dil.lambda0, |f| -f.sup),
        })
        .collect();
    Ok(RateReport {
        gamma,
        lambda0_required: threshold,
        lambda0_available: dil.lambda0,
        mu,
        lambda,
        diagnostics,
    })
}

/// Share of each second-order absorber that cross terms may consume.
const ABSORB_SLACK: f64 = 1e-6;
const LOG_BOUND: f64 = 8.0;

/// Exact term-by-term bookkeeping of `(∂_t − L) Γ(f_t)` for a small hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallSystem {
    /// `λ_b = −sup c_b` per basis element.
    pub lambda_b: Vec<f64>,
    /// Signed diagonal first-order terms per unit `a_b`.
    pub diag: Vec<f64>,
    /// First-order cross terms `K0 · a_b · |V_b f| |V_β f|`, split with a free Young weight.
    pub first_cross: Vec<(usize, usize, f64)>,
    /// Second-order cross terms `4 a_b φ̄ |V_j V_β f| |V_b f|`, as `(b, β, φ̄, n_{j,β})`.
    pub second_cross: Vec<(usize, usize, f64, f64)>,
}

impl SmallSystem {
    pub fn build(
        h: &BracketHierarchy,
        cert: &UfgCertificate,
        dil: &DilationCertificate,
        params: &[f64],
    ) -> Result<Self, RatesError> {
        if h.m() > 2 {
            return Err(RatesError::NotSmallSystem(h.m()));
        }
        if !cert.verified {
            return Err(RatesError::Unverified);
        }
        let nb = h.basis().len();
        let d = h.d();
        let lambda_b: Vec<f64> = (0..nb)
            .map(|b| {
                dil.factors
                    .iter()
                    .find(|f| f.basis == b)
                    .map_or(dil.lambda0, |f| -f.sup)
            })
            .collect();
        let mut diag = vec![0.0; nb];
        let mut first: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        let mut second_raw: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (b, elem) in h.basis().iter().enumerate() {
            let rep = &elem.rep;
            let mut d1 = Expr::zero();
            let mut d2 = Expr::zero();
            for j in 1..=d as u8 {
                let vj = &h.fields()[j as usize];
                let row = rep.push(j);
                for (&beta, phi) in &apply_lambda_j(h, cert, j, rep)? {
                    let dphi = vj.apply(phi);
                    if beta == b {
                        d1 = &d1 + &dphi;
                    } else {
                        let k0 = 4.0 * sup_abs(&dphi, params, &row)?;
                        if k0 > NONZERO {
                            *first.entry((b, beta)).or_default() += k0;
                        }
                    }
                    let pb = sup_abs(phi, params, &row)?;
                    if pb > NONZERO {
                        second_raw.push((b, j as usize, beta, pb));
                    }
                }
                let row2 = row.push(j);
                for (&beta, psi) in &second_row(h, cert, rep, j)? {
                    if beta == b {
                        d2 = &d2 + psi;
                    } else {
                        let k0 = 2.0 * sup_abs(psi, params, &row2)?;
                        if k0 > NONZERO {
                            *first.entry((b, beta)).or_default() += k0;
                        }
                    }
                }
            }
            diag[b] = 4.0 * sup_signed(&d1, params, rep)? + 2.0 * sup_signed(&d2, params, rep)?;
        }
        let second_cross = second_raw
            .iter()
            .map(|&(b, j, beta, pb)| {
                let n = second_raw
                    .iter()
                    .filter(|&&(_, j2, beta2, _)| j2 == j && beta2 == beta)
                    .count() as f64;
                (b, beta, pb, n)
            })
            .collect();
        Ok(Self {
            lambda_b,
            diag,
            first_cross: first
                .into_iter()
                .map(|((b, beta), k)| (b, beta, k))
                .collect(),
            second_cross,
        })
    }

    pub fn basis_len(&self) -> usize {
        self.lambda_b.len()
    }

    /// Certified rate for coefficients `a` and Young weights `eta` (one per first-order cross term).
    pub fn rate(&self, a: &[f64], eta: &[f64]) -> f64 {
        let mut cost: Vec<f64> = self
            .diag
            .iter()
            .zip(&self.lambda_b)
            .zip(a)
            .map(|((dg, lb), ab)| ab * (dg - 2.0 * lb))
            .collect();
        for (&(b, beta, k0), &e) in self.first_cross.iter().zip(eta) {
            let k = a[b] * k0;
            cost[b] += k * e / 2.0;
            cost[beta] += k / (2.0 * e);
        }
        for &(b, beta, pb, n) in &self.second_cross {
            cost[b] += 2.0 * a[b] * a[b] * pb * pb * n / ((1.0 - ABSORB_SLACK) * a[beta]);
        }
        cost.iter()
            .zip(a)
            .map(|(c, ab)| -c / ab)
            .fold(f64::INFINITY, f64::min)
    }

    /// Young weight `ε` of each second-order cross term at its tightest admissible value.
    pub fn second_order_eps(&self, a: &[f64]) -> Vec<f64> {
        self.second_cross
            .iter()
            .map(|&(b, beta, pb, n)| a[b] * pb * n / ((1.0 - ABSORB_SLACK) * a[beta]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizedRate {
    pub lambda: f64,
    pub a: Vec<f64>,
    pub eta: Vec<f64>,
    pub evaluations: usize,
}

/// Coordinate search over `log a` and `log η`, then rescaling so the largest
/// second-order product `ε · a_b` equals one.
pub fn optimize_small_system(system: &SmallSystem, budget: usize) -> OptimizedRate {
    let nb = system.basis_len();
    let ne = system.first_cross.len();
    let mut theta = vec![0.0f64; nb + ne];
    let eval = |t: &[f64]| {
        let a: Vec<f64> = t[..nb].iter().map(|v| v.exp()).collect();
        let e: Vec<f64> = t[nb..].iter().map(|v| v.exp()).collect();
        system.rate(&a, &e)
    };
    let mut best = eval(&theta);
    let mut evaluations = 1;
    let mut step = std::f64::consts::LN_2;
    while evaluations < budget && step > 1e-9 {
        let mut improved = false;
        for i in 0..theta.len() {
            for dir in [1.0, -1.0] {
                if evaluations >= budget {
                    break;
                }
                let mut cand = theta.clone();
                cand[i] = (cand[i] + dir * step).clamp(-LOG_BOUND, LOG_BOUND);
                if cand[i] == theta[i] {
                    continue;
                }
                let v = eval(&cand);
                evaluations += 1;
                if v > best {
                    best = v;
                    theta = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    let mut a: Vec<f64> = theta[..nb].iter().map(|v| v.exp()).collect();
    let eta: Vec<f64> = theta[nb..].iter().map(|v| v.exp()).collect();
    let tau = system
        .second_order_eps(&a)
        .iter()
        .zip(&system.second_cross)
        .map(|(e, &(b, ..))| e * a[b])
        .fold(0.0f64, f64::max);
    if tau > 0.0 {
        // every cost scales linearly in a, so the rate is unchanged
        a.iter_mut().for_each(|v| *v /= tau);
    }
    let lambda = system.rate(&a, &eta);
    OptimizedRate {
        lambda,
        a,
        eta,
        evaluations,
    }
}
