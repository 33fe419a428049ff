//! Monte Carlo verification of decay: Stratonovich paths, flows along vector fields,
//! finite-difference directional derivatives with common random numbers, Γ evaluation,
//! log-linear decay fits and the reachability contraction check.

mod fit;
mod mc;

pub use fit::{fit_decay, DecayEstimate, FitError};
pub use mc::{mc_moments, McConfig, Moments};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::liealg::VectorField;
use crate::symexpr::{CompiledField, ExprError, FieldBundle, ScalarFn};

/// Coordinates beyond this magnitude abort a path.
pub const BLOWUP: f64 = 1e12;
const FLOW_SUBSTEP: f64 = 1e-2;
const FLOW_MAX_H: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{discarded} of {total} paths left the finite range")]
    NonFinite { discarded: usize, total: usize },
    #[error("flow left the finite range")]
    FlowNonFinite,
    #[error("flow time {0} exceeds the guard |h| <= 10")]
    FlowTooLong(f64),
    #[error("point has dimension {got}, model has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// `dX = V_0(X) dt + √2 Σ_i V_i(X) ∘ dW^i`, with parameters bound.
#[derive(Clone, Debug)]
pub struct SdeModel {
    dim: usize,
    noise: usize,
    bundle: FieldBundle,
}

impl SdeModel {
    /// `fields[0]` is the drift, the rest are diffusion fields.
    pub fn new(fields: &[VectorField], params: &[f64]) -> Result<Self, SimError> {
        let dim = fields.first().map_or(0, VectorField::dim);
        if let Some(f) = fields.iter().find(|f| f.dim() != dim) {
            return Err(SimError::Dimension {
                expected: dim,
                got: f.dim(),
            });
        }
        let compiled = fields
            .iter()
            .map(|f| CompiledField::new(f.components(), params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dim,
            noise: fields.len().saturating_sub(1),
            bundle: FieldBundle::new(&compiled, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of Brownian motions `d`.
    pub fn noise_count(&self) -> usize {
        self.noise
    }

    fn check_point(&self, x: &[f64]) -> Result<(), SimError> {
        if x.len() != self.dim {
            return Err(SimError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Buffers for advancing a block of paths in lock-step. Every array is lane-major:
/// row `c` holds coordinate `c` of all lanes.
pub(crate) struct Stepper<'a> {
    model: &'a SdeModel,
    lanes: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    inc: Vec<f64>,
    mid: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a SdeModel, lanes: usize) -> Self {
        let n = model.dim * lanes;
        Self {
            model,
            lanes,
            atoms: vec![0.0; 3 * n],
            weights: vec![0.0; (model.noise + 1) * lanes],
            inc: vec![0.0; n],
            mid: vec![0.0; n],
            tmp: vec![0.0; 2 * lanes],
        }
    }

    /// One predictor-corrector midpoint step:
    /// `inc(x) = V_0(x) h + √2 Σ V_i(x) dw_i`, then `x += inc(x + inc(x)/2)`.
    #[inline]
    pub(crate) fn step(&mut self, x: &mut [f64], dw: &[f64], h: f64) {
        let (b, l) = (&self.model.bundle, self.lanes);
        let (drift, noise) = self.weights.split_at_mut(l);
        drift.fill(h);
        for (w, d) in noise.iter_mut().zip(dw) {
            *w = std::f64::consts::SQRT_2 * d;
        }
        b.load(x, l, &mut self.atoms);
        b.combine(&self.atoms, &self.weights, l, &mut self.inc, &mut self.tmp);
        for ((m, xi), inc) in self.mid.iter_mut().zip(x.iter()).zip(&self.inc) {
            *m = xi + 0.5 * inc;
        }
        b.load(&self.mid, l, &mut self.atoms);
        b.combine(&self.atoms, &self.weights, l, &mut self.inc, &mut self.tmp);
        for (xi, inc) in x.iter_mut().zip(&self.inc) {
            *xi += inc;
        }
    }
}

pub(crate) fn out_of_range(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() <= BLOWUP))
}

/// Integrates one path to time `t` with steps of at most `dt`, drawing noise from `rng`.
pub fn integrate_path<R: Rng>(
    model: &SdeModel,
    x0: &[f64],
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    model.check_point(x0)?;
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(SimError::InvalidArgument(format!("dt = {dt}, T = {t}")));
    }
    let mut x = x0.to_vec();
    let n = steps_for(t, dt);
    if n == 0 {
        return Ok(x);
    }
    let h = t / n as f64;
    let sq = h.sqrt();
    let mut st = Stepper::new(model, 1);
    let mut dw = vec![0.0; model.noise_count()];
    for _ in 0..n {
        for w in dw.iter_mut() {
            *w = sq * rng.sample::<f64, _>(StandardNormal);
        }
        st.step(&mut x, &dw, h);
        if out_of_range(&x) {
            return Err(SimError::NonFinite {
                discarded: 1,
                total: 1,
            });
        }
    }
    Ok(x)
}

pub(crate) fn steps_for(span: f64, dt: f64) -> usize {
    if span <= 0.0 {
        0
    } else {
        (span / dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Mean with its standard error, reproducible from `(model, inputs, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// `(P_t f)(x) = E f(X_t)`.
pub fn estimate_semigroup(
    model: &SdeModel,
    f: &ScalarFn,
    x: &[f64],
    t: f64,
    cfg: &McConfig,
) -> Result<McEstimate, SimError> {
    let mom = mc_moments(model, f, &[x.to_vec()], &[t], cfg, 1, &|v, q| q[0] = v[0])?;
    Ok(mom.estimate(0, cfg.seed))
}

/// Integral curve of `field` through `x` at signed time `h`, by classical RK4.
pub fn flow(field: &CompiledField, x: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
    let n = steps_for(h.abs(), FLOW_SUBSTEP);
    flow_steps(field, x, h, n)
}

/// As [`flow`] with a caller-chosen substep.
pub fn flow_with_substep(
    field: &CompiledField,
    x: &[f64],
    h: f64,
    substep: f64,
) -> Result<Vec<f64>, SimError> {
    if !(substep > 0.0) {
        return Err(SimError::InvalidArgument(format!("substep = {substep}")));
    }
    flow_steps(field, x, h, steps_for(h.abs(), substep))
}

fn flow_steps(field: &CompiledField, x: &[f64], h: f64, n: usize) -> Result<Vec<f64>, SimError> {
    if h.abs() > FLOW_MAX_H {
        return Err(SimError::FlowTooLong(h));
    }
    if x.len() != field.dim() {
        return Err(SimError::Dimension {
            expected: field.dim(),
            got: x.len(),
        });
    }
    let mut y = x.to_vec();
    if n == 0 {
        return Ok(y);
    }
    if field.is_constant() {
        let mut v = vec![0.0; y.len()];
        field.eval(&y, &mut v);
        y.iter_mut().zip(&v).for_each(|(a, b)| *a += h * b);
        return Ok(y);
    }
    let s = h / n as f64;
    let dim = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    let mut tmp = vec![0.0; dim];
    for _ in 0..n {
        field.eval(&y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * s * k1[i];
        }
        field.eval(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * s * k2[i];
        }
        field.eval(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + s * k3[i];
        }
        field.eval(&tmp, &mut k4);
        for i in 0..dim {
            y[i] += s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if out_of_range(&y) {
            return Err(SimError::FlowNonFinite);
        }
    }
    Ok(y)
}

fn check_fd_step(h: f64) -> Result<(), SimError> {
    if !(1e-4..=1e-1).contains(&h) {
        return Err(SimError::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-4, 1e-1]"
        )));
    }
    Ok(())
}

/// `(W P_t f)(x)` on a time grid by central differences along the flow of `W`,
/// both endpoints driven by the same noise.
pub fn directional_derivative_series(
    model: &SdeModel,
    f: &ScalarFn,
    x: &[f64],
    times: &[f64],
    w: &CompiledField,
    h: f64,
    cfg: &McConfig,
) -> Result<Vec<McEstimate>, SimError> {
    check_fd_step(h)?;
    let starts = vec![flow(w, x, h)?, flow(w, x, -h)?];
    let nt = times.len();
    let inv = 1.0 / (2.0 * h);
    let mom = mc_moments(model, f, &starts, times, cfg, nt, &|v, q| {
        for t in 0..nt {
            q[t] = (v[2 * t] - v[2 * t + 1]) * inv;
        }
    })?;
    Ok((0..nt).map(|t| mom.estimate(t, cfg.seed)).collect())
}

pub fn directional_derivative(
    model: &SdeModel,
    f: &ScalarFn,
    x: &[f64],
    t: f64,
    w: &CompiledField,
    h: f64,
    cfg: &McConfig,
) -> Result<McEstimate, SimError> {
    Ok(directional_derivative_series(model, f, x, &[t], w, h, cfg)?.remove(0))
}

/// One point of a decay series, with a delta-method standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `|W P_t f(x)|²` on a grid.
pub fn squared_derivative_series(
    model: &SdeModel,
    f: &ScalarFn,
    x: &[f64],
    times: &[f64],
    w: &CompiledField,
    h: f64,
    cfg: &McConfig,
) -> Result<Vec<SeriesPoint>, SimError> {
    let est = directional_derivative_series(model, f, x, times, w, h, cfg)?;
    Ok(times
        .iter()
        .zip(est)
        .map(|(&t, e)| SeriesPoint {
            t,
            value: e.mean * e.mean,
            stderr: 2.0 * e.mean.abs() * e.stderr,
        })
        .collect())
}

/// Per-direction `|V_b P_t f(x)|²` series and their weighted sum `Γ(P_t f)(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaSeries {
    pub directions: Vec<Vec<SeriesPoint>>,
    pub gamma: Vec<SeriesPoint>,
}

/// `Γ(P_t f)(x) = Σ_b a_b |V_b P_t f(x)|²` on a grid, all directions sharing one noise stream.
#[allow(clippy::too_many_arguments)]
pub fn gamma_series(
    model: &SdeModel,
    a: &[f64],
    basis: &[CompiledField],
    f: &ScalarFn,
    x: &[f64],
    times: &[f64],
    h: f64,
    cfg: &McConfig,
) -> Result<GammaSeries, SimError> {
    check_fd_step(h)?;
    if basis.is_empty() || a.len() != basis.len() {
        return Err(SimError::InvalidArgument(format!(
            "{} coefficients for {} basis fields",
            a.len(),
            basis.len()
        )));
    }
    let nb = basis.len();
    let mut starts = Vec::with_capacity(2 * nb);
    for w in basis {
        starts.push(flow(w, x, h)?);
        starts.push(flow(w, x, -h)?);
    }
    let ns = starts.len();
    let nt = times.len();
    let inv = 1.0 / (2.0 * h);
    let mom = mc_moments(model, f, &starts, times, cfg, nt * nb, &|v, q| {
        for t in 0..nt {
            for b in 0..nb {
                q[t * nb + b] = (v[t * ns + 2 * b] - v[t * ns + 2 * b + 1]) * inv;
            }
        }
    })?;
    let n = mom.n as f64;
    let directions = (0..nb)
        .map(|b| {
            times
                .iter()
                .enumerate()
                .map(|(ti, &t)| {
                    let e = mom.estimate(ti * nb + b, cfg.seed);
                    SeriesPoint {
                        t,
                        value: e.mean * e.mean,
                        stderr: 2.0 * e.mean.abs() * e.stderr,
                    }
                })
                .collect()
        })
        .collect();
    let gamma = times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let idx = |b: usize| ti * nb + b;
            let value: f64 = (0..nb).map(|b| a[b] * mom.mean[idx(b)].powi(2)).sum();
            // delta method: gradient 2 a_b D_b against the path covariance of the D's
            let g: Vec<f64> = (0..nb).map(|b| 2.0 * a[b] * mom.mean[idx(b)]).collect();
            let mut var = 0.0;
            for b in 0..nb {
                for c in 0..nb {
                    var += g[b] * g[c] * mom.cov(idx(b), idx(c));
                }
            }
            SeriesPoint {
                t,
                value,
                stderr: (var.max(0.0) / n).sqrt(),
            }
        })
        .collect();
    Ok(GammaSeries { directions, gamma })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_gamma_series(
    model: &SdeModel,
    a: &[f64],
    basis: &[CompiledField],
    f: &ScalarFn,
    x: &[f64],
    times: &[f64],
    h: f64,
    cfg: &McConfig,
) -> Result<Vec<SeriesPoint>, SimError> {
    Ok(gamma_series(model, a, basis, f, x, times, h, cfg)?.gamma)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_gamma(
    model: &SdeModel,
    a: &[f64],
    basis: &[CompiledField],
    f: &ScalarFn,
    x: &[f64],
    t: f64,
    h: f64,
    cfg: &McConfig,
) -> Result<SeriesPoint, SimError> {
    Ok(evaluate_gamma_series(model, a, basis, f, x, &[t], h, cfg)?.remove(0))
}

/// Paired differences `|P_t f(x) − P_t f(y)|` with `y` reached from `x` along a flow chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionSeries {
    pub y: Vec<f64>,
    pub points: Vec<SeriesPoint>,
    /// Absent when fewer than four values are positive (e.g. `y = x`).
    pub fit: Option<DecayEstimate>,
}

pub fn check_reachability_contraction(
    model: &SdeModel,
    f: &ScalarFn,
    x: &[f64],
    chain: &[(CompiledField, f64)],
    times: &[f64],
    cfg: &McConfig,
) -> Result<ContractionSeries, SimError> {
    let mut y = x.to_vec();
    for (field, duration) in chain {
        y = flow(field, &y, *duration)?;
    }
    let nt = times.len();
    let mom = mc_moments(
        model,
        f,
        &[x.to_vec(), y.clone()],
        times,
        cfg,
        nt,
        &|v, q| {
            for t in 0..nt {
                q[t] = v[2 * t] - v[2 * t + 1];
            }
        },
    )?;
    let points: Vec<SeriesPoint> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let e = mom.estimate(i, cfg.seed);
            SeriesPoint {
                t,
                value: e.mean.abs(),
                stderr: e.stderr,
            }
        })
        .collect();
    let fit = fit_decay(
        &points.iter().map(|p| p.t).collect::<Vec<_>>(),
        &points.iter().map(|p| p.value).collect::<Vec<_>>(),
    )
    .ok();
    Ok(ContractionSeries { y, points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{parse_expr, parse_scalar_fn, Symbols};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(sym: &Symbols, comps: &[&str]) -> VectorField {
        VectorField::new(comps.iter().map(|c| parse_expr(c, sym).unwrap()).collect())
    }

    fn grusin() -> (Symbols, SdeModel) {
        let s = Symbols::standard(2, &["k"]);
        let m = SdeModel::new(&[field(&s, &["k*x", "0"]), field(&s, &["0", "x"])], &[1.0]).unwrap();
        (s, m)
    }

    fn cfg(n: usize) -> McConfig {
        McConfig {
            n_paths: n,
            dt: 1e-2,
            seed: 7,
            threads: Some(1),
        }
    }

    #[test]
    fn zero_fields_leave_the_point_fixed() {
        let m = SdeModel::new(&[VectorField::zero(2), VectorField::zero(2)], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            integrate_path(&m, &[0.3, -2.0], 1.0, 1e-3, &mut rng).unwrap(),
            [0.3, -2.0]
        );
    }

    #[test]
    fn grusin_drift_coordinate_is_exponential() {
        let (_, m) = grusin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = integrate_path(&m, &[1.0, 0.0], 1.0, 1e-3, &mut rng).unwrap();
        assert!((x[0] / 1f64.exp() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blowup_is_detected() {
        let s = Symbols::standard(1, &[]);
        let m = SdeModel::new(&[field(&s, &["x^2"]), field(&s, &["0"])], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            integrate_path(&m, &[2.0], 5.0, 1e-2, &mut rng),
            Err(SimError::NonFinite { .. })
        ));
    }

    #[test]
    fn constant_function_is_exact() {
        let (s, m) = grusin();
        let one = parse_scalar_fn("1", &s, &[]).unwrap();
        let e = estimate_semigroup(&m, &one, &[1.0, 0.0], 1.0, &cfg(3000)).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn time_zero_returns_f() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y) + x", &s, &[]).unwrap();
        let e = estimate_semigroup(&m, &f, &[0.5, 0.2], 0.0, &cfg(100)).unwrap();
        assert_eq!(e.mean, 0.5 + 0.2f64.tanh());
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn flows() {
        let s = Symbols::standard(3, &[]);
        let dz = CompiledField::new(field(&s, &["0", "0", "1"]).components(), &[]).unwrap();
        assert_eq!(flow(&dz, &[1.0, 2.0, 3.0], 0.7).unwrap(), [1.0, 2.0, 3.7]);
        assert_eq!(flow(&dz, &[1.0, 2.0, 3.0], 0.0).unwrap(), [1.0, 2.0, 3.0]);
        let lin = CompiledField::new(field(&s, &["-x", "0", "0"]).components(), &[]).unwrap();
        for h in [0.3, -1.2, 2.5] {
            let y = flow(&lin, &[2.0, 0.0, 0.0], h).unwrap();
            assert!((y[0] / (2.0 * (-h).exp()) - 1.0).abs() < 1e-8);
        }
        assert!(matches!(
            flow(&lin, &[1.0, 0.0, 0.0], 11.0),
            Err(SimError::FlowTooLong(_))
        ));
    }

    #[test]
    fn derivative_at_time_zero_matches_symbolic() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("sin(y)*x", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        let e = directional_derivative(&m, &f, &[1.5, 0.4], 0.0, &v1, 1e-2, &cfg(10)).unwrap();
        // V_1 f = x · x cos(y)
        let want = 1.5 * 1.5 * 0.4f64.cos();
        assert!((e.mean - want).abs() < 1e-4);
    }

    #[test]
    fn bad_fd_step_rejected() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("y", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        assert!(directional_derivative(&m, &f, &[1.0, 0.0], 1.0, &v1, 0.5, &cfg(10)).is_err());
    }

    #[test]
    fn empty_chain_gives_exact_zeros() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y)", &s, &[]).unwrap();
        let r = check_reachability_contraction(&m, &f, &[1.0, 0.0], &[], &[0.5, 1.0], &cfg(500))
            .unwrap();
        assert!(r.points.iter().all(|p| p.value == 0.0 && p.stderr == 0.0));
        assert!(r.fit.is_none());
    }

    /// `E g(y0 + σZ)` by composite Simpson on `[-12, 12]`.
    fn gaussian(g: impl Fn(f64) -> f64, y0: f64, sigma: f64) -> f64 {
        let n = 24_000;
        let h = 24.0 / n as f64;
        (0..=n)
            .map(|i| {
                let z = -12.0 + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * g(y0 + sigma * z) * (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * h
            / 3.0
            / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn ou_variance() {
        let s = Symbols::standard(1, &[]);
        let m = SdeModel::new(&[field(&s, &["-x"]), field(&s, &["1"])], &[]).unwrap();
        let f = parse_scalar_fn("x^2", &s, &[]).unwrap();
        let c = McConfig {
            n_paths: 20_000,
            dt: 1e-2,
            seed: 11,
            threads: None,
        };
        let e = estimate_semigroup(&m, &f, &[0.0], 1.0, &c).unwrap();
        let want = 1.0 - (-2.0f64).exp();
        assert!((e.mean - want).abs() < 3.0 * e.stderr, "{e:?} vs {want}");
    }

    #[test]
    fn grusin_semigroup_matches_gaussian_oracle() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y)", &s, &[]).unwrap();
        let x0 = [1.0, 0.3];
        let c = McConfig {
            n_paths: 20_000,
            dt: 1e-2,
            seed: 5,
            threads: None,
        };
        let e = estimate_semigroup(&m, &f, &x0, 1.0, &c).unwrap();
        let sigma = (1f64.exp().powi(2) - 1.0).sqrt();
        let want = gaussian(f64::tanh, 0.3, sigma);
        assert!((e.mean - want).abs() < 3.0 * e.stderr, "{e:?} vs {want}");
    }

    #[test]
    fn grusin_derivative_matches_oracle() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y)", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        let c = McConfig {
            n_paths: 20_000,
            dt: 1e-2,
            seed: 9,
            threads: None,
        };
        let e = directional_derivative(&m, &f, &[1.0, 0.0], 1.0, &v1, 1e-2, &c).unwrap();
        let sigma = (1f64.exp().powi(2) - 1.0).sqrt();
        let d = 1e-5;
        let want = (gaussian(f64::tanh, d, sigma) - gaussian(f64::tanh, -d, sigma)) / (2.0 * d);
        assert!(
            (e.mean - want).abs() < 3.0 * e.stderr + 1e-3,
            "{e:?} vs {want}"
        );
    }

    #[test]
    fn constant_function_has_zero_derivative_and_gamma() {
        let (s, m) = grusin();
        let one = parse_scalar_fn("2", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        let e = directional_derivative(&m, &one, &[1.0, 0.0], 0.5, &v1, 1e-2, &cfg(500)).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
        let g = evaluate_gamma(&m, &[1.0], &[v1], &one, &[1.0, 0.0], 0.5, 1e-2, &cfg(500)).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn single_direction_gamma_is_squared_derivative() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y)", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        let d = directional_derivative(&m, &f, &[1.0, 0.0], 0.5, &v1, 1e-2, &cfg(2000)).unwrap();
        let g = evaluate_gamma(&m, &[1.0], &[v1], &f, &[1.0, 0.0], 0.5, 1e-2, &cfg(2000)).unwrap();
        assert_eq!(g.value, d.mean * d.mean);
    }

    #[test]
    fn batched_engine_matches_single_paths() {
        let s = Symbols::standard(2, &[]);
        let m = SdeModel::new(
            &[
                field(&s, &["-x + sin(y)", "-y"]),
                field(&s, &["1", "x"]),
                field(&s, &["cos(x)", "0"]),
            ],
            &[],
        )
        .unwrap();
        let f = parse_scalar_fn("x + 2*y", &s, &[]).unwrap();
        let c = McConfig {
            n_paths: 70,
            dt: 0.05,
            seed: 17,
            threads: Some(1),
        };
        let e = estimate_semigroup(&m, &f, &[0.3, -0.4], 0.5, &c).unwrap();
        let manual: f64 = (0..70u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                rng.set_stream(i);
                let x = integrate_path(&m, &[0.3, -0.4], 0.5, 0.05, &mut rng).unwrap();
                x[0] + 2.0 * x[1]
            })
            .sum::<f64>()
            / 70.0;
        assert!((e.mean - manual).abs() < 1e-13, "{} vs {manual}", e.mean);
    }

    #[test]
    fn flow_is_fourth_order() {
        let s = Symbols::standard(1, &[]);
        let lin = CompiledField::new(field(&s, &["-x"]).components(), &[]).unwrap();
        let errs: Vec<f64> = [1e-1, 5e-2, 2.5e-2]
            .iter()
            .map(|&sub| {
                (flow_with_substep(&lin, &[1.0], 2.0, sub).unwrap()[0] - (-2f64).exp()).abs()
            })
            .collect();
        let slope = |a: f64, b: f64| (a / b).log2();
        for w in errs.windows(2) {
            let p = slope(w[0], w[1]);
            assert!((3.7..=4.3).contains(&p), "order {p}");
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let (s, m) = grusin();
        let f = parse_scalar_fn("tanh(y)", &s, &[]).unwrap();
        let v1 = CompiledField::new(field(&s, &["0", "x"]).components(), &[1.0]).unwrap();
        let run = |threads| {
            let c = McConfig {
                n_paths: 3000,
                dt: 2e-2,
                seed: 123,
                threads,
            };
            squared_derivative_series(&m, &f, &[1.0, 0.0], &[0.5, 1.0], &v1, 1e-2, &c).unwrap()
        };
        let base = run(Some(1));
        assert_eq!(base, run(Some(3)));
        assert_eq!(base, run(None));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn semigroup_is_a_contraction(seed in 0u64..1000, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let (s, m) = grusin();
            let f = parse_scalar_fn("sin(y)*cos(x)", &s, &[]).unwrap();
            let c = McConfig { n_paths: 200, dt: 5e-2, seed, threads: Some(1) };
            let e = estimate_semigroup(&m, &f, &[x, y], 0.5, &c).unwrap();
            proptest::prop_assert!(e.mean.abs() <= 1.0 + 3.0 * e.stderr);
            proptest::prop_assert!(e.stderr >= 0.0);
        }
    }
}
