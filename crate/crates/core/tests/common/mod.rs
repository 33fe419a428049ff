//! Shared models and closed-form oracles for the integration targets.
#![allow(dead_code)]

use ufgkit_core::liealg::VectorField;
use ufgkit_core::symexpr::{parse_expr, CompiledField, Symbols};

pub fn field(sym: &Symbols, comps: &[&str]) -> VectorField {
    VectorField::new(comps.iter().map(|c| parse_expr(c, sym).unwrap()).collect())
}

pub fn compiled(sym: &Symbols, comps: &[&str], params: &[f64]) -> CompiledField {
    CompiledField::new(field(sym, comps).components(), params).unwrap()
}

pub fn grusin() -> (Symbols, Vec<VectorField>) {
    let s = Symbols::standard(2, &["k"]);
    let f = vec![field(&s, &["k*x", "0"]), field(&s, &["0", "x"])];
    (s, f)
}

pub fn heisenberg() -> (Symbols, Vec<VectorField>) {
    let s = Symbols::standard(3, &["k"]);
    let f = vec![
        field(&s, &["-k*x", "-k*y", "-2*k*z"]),
        field(&s, &["0", "0", "-y"]),
        field(&s, &["0", "1", "x"]),
    ];
    (s, f)
}

pub fn ou_positive() -> (Symbols, Vec<VectorField>) {
    let s = Symbols::standard(1, &["a"]);
    let f = vec![field(&s, &["a*x"]), field(&s, &["1"])];
    (s, f)
}

/// `E g(y0 + σZ)` for standard normal `Z`.
///
/// Integrates in `u = y0 + σz` on `y0 ± 12σ` with composite Simpson, the step
/// resolving both the Gaussian width and unit-scale features of `g`. Gauss–Hermite
/// nodes are avoided: once `σ ≫ 1` they are far too sparse to see `sech²`.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, y0: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return g(y0);
    }
    let half = 12.0 * sigma;
    let h_target = sigma.min(1.0) / 64.0;
    let n = 2 * ((half / h_target).ceil() as usize).max(64);
    let h = 2.0 * half / n as f64;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let w = |u: f64| {
        let z = (u - y0) / sigma;
        g(u) * (-0.5 * z * z).exp()
    };
    let mut acc = w(y0 - half) + w(y0 + half);
    for i in 1..n {
        let u = y0 - half + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * w(u);
    }
    acc * h / 3.0 * norm
}

/// Grušin variance of `y_t` from `(x0, ·)`: `x0² (e^{2kt} − 1) / k`.
pub fn grusin_sigma(x0: f64, k: f64, t: f64) -> f64 {
    (x0 * x0 * ((2.0 * k * t).exp() - 1.0) / k).sqrt()
}

/// `(V_1 P_t tanh(y))(x0, y0)` for Grušin, by central difference of the oracle in `y0`.
pub fn grusin_v1_derivative(x0: f64, y0: f64, k: f64, t: f64) -> f64 {
    let s = grusin_sigma(x0, k, t);
    let h = 1e-5;
    x0 * (gaussian_expectation(f64::tanh, y0 + h, s) - gaussian_expectation(f64::tanh, y0 - h, s))
        / (2.0 * h)
}

/// OU with `V0 = a x ∂x`, `V1 = ∂x`: `X_t ~ N(x0 e^{at}, (e^{2at} − 1)/a)`,
/// and `∂x P_t tanh = e^{at} E sech²(X_t)`.
pub fn ou_dx(x0: f64, a: f64, t: f64) -> f64 {
    let m = x0 * (a * t).exp();
    let s = (((2.0 * a * t).exp() - 1.0) / a).sqrt();
    (a * t).exp() * gaussian_expectation(|u| 1.0 / u.cosh().powi(2), m, s)
}
