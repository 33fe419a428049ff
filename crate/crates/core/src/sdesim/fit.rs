use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 4 strictly positive values, got {0}")]
    InsufficientPositiveValues(usize),
    #[error("times must be strictly increasing")]
    UnorderedTimes,
    #[error("{times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
}

/// Least-squares fit of `log v = c − λ t` over the positive entries.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_exponent: f64,
    /// 95% confidence interval for the exponent.
    pub exponent_ci: (f64, f64),
    pub r_squared: f64,
    /// Points that entered the fit.
    pub used: usize,
}

pub fn fit_decay(times: &[f64], values: &[f64]) -> Result<DecayEstimate, FitError> {
    if times.len() != values.len() {
        return Err(FitError::LengthMismatch {
            times: times.len(),
            values: values.len(),
        });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FitError::UnorderedTimes);
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let n = pts.len();
    if n < 4 {
        return Err(FitError::InsufficientPositiveValues(n));
    }
    let nf = n as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, nf - 2.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(DecayEstimate {
        times: times.to_vec(),
        values: values.to_vec(),
        fitted_exponent: -slope,
        exponent_ci: (-slope - q * se, -slope + q * se),
        r_squared,
        used: n,
    })
}
