//! Golden bracket tables, certificate depth, and cross-checks between independent oracles.

mod common;

use common::*;
use ufgkit_core::liealg::{build_hierarchy, build_hierarchy_to, MultiIndex};
use ufgkit_core::rates::{choose_gamma_coefficients, compute_sup_constants};
use ufgkit_core::sdesim::{evaluate_gamma, fit_decay, McConfig, SdeModel};
use ufgkit_core::symexpr::{parse_expr, parse_scalar_fn, CompiledField, Symbols};
use ufgkit_core::ufgcheck::{solve_certificate, Ansatz, UfgError};

fn mi(e: &[u8], d: usize) -> MultiIndex {
    MultiIndex::new(e.to_vec(), d).unwrap()
}

#[test]
fn heisenberg_deep_table() {
    let (s, f) = heisenberg();
    let h = build_hierarchy_to(&f, 2, 6).unwrap();
    let k = parse_expr("k", &s).unwrap();
    let dz = field(&s, &["0", "0", "1"]);
    // V_[12 0 0] = 4k² ∂z, V_[1 0 0] = k² V_1
    assert_eq!(
        h.get(&mi(&[1, 2, 0, 0], 2)).unwrap(),
        &dz.scale(&k.pow(2).scale(4.0))
    );
    assert_eq!(h.get(&mi(&[1, 0, 0], 2)).unwrap(), &f[1].scale(&k.pow(2)));
    assert_eq!(
        h.get(&mi(&[2, 1], 2)).unwrap(),
        &dz.scale(&parse_expr("-1", &s).unwrap())
    );
    assert_eq!(h.basis().len(), 3);
}

#[test]
fn grusin_table() {
    let (s, f) = grusin();
    let h = build_hierarchy_to(&f, 1, 5).unwrap();
    assert_eq!(h.get(&mi(&[1, 0], 1)).unwrap(), &field(&s, &["0", "-k*x"]));
    assert_eq!(h.get(&mi(&[1, 1], 1)).unwrap(), &field(&s, &["0", "0"]));
    assert_eq!(
        h.get(&mi(&[1, 0, 0], 1)).unwrap(),
        &field(&s, &["0", "k^2*x"])
    );
}

#[test]
fn sin_fields_need_depth_four() {
    let s = Symbols::standard(2, &[]);
    let f = vec![field(&s, &["0", "sin(x)"]), field(&s, &["sin(x)", "0"])];
    for m in 1..=3 {
        let h = build_hierarchy(&f, m).unwrap();
        assert!(
            matches!(
                solve_certificate(&h, Ansatz::Trig(2), &[]),
                Err(UfgError::NoSolution { .. })
            ),
            "m = {m}"
        );
    }
    let h = build_hierarchy(&f, 4).unwrap();
    assert!(
        solve_certificate(&h, Ansatz::Trig(2), &[])
            .unwrap()
            .verified
    );
}

#[test]
fn grusin_oracle_routes_agree() {
    // Stein's identity: σ E sech²(y0 + σZ) = E[Z tanh(y0 + σZ)]
    for t in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let sigma = grusin_sigma(1.0, 1.0, t);
        let fd = grusin_v1_derivative(1.0, 0.0, 1.0, t);
        if sigma == 0.0 {
            assert!((fd - 1.0).abs() < 1e-9);
            continue;
        }
        let stein = gaussian_expectation(|u| (u / sigma) * u.tanh(), 0.0, sigma) / sigma;
        assert!(
            (fd - stein).abs() < 1e-6 * stein.abs().max(1e-3),
            "t={t}: {fd} vs {stein}"
        );
    }
    // small-variance Taylor limit: E sech²(σZ) = 1 − σ² + 2σ⁴ + O(σ⁶)
    let s = 0.01;
    let q = gaussian_expectation(|u| 1.0 / u.cosh().powi(2), 0.0, s);
    assert!((q - (1.0 - s * s + 2.0 * s.powi(4))).abs() < 1e-11);
}

#[test]
fn grusin_oracle_series_decays_at_two() {
    let grid = [1.0, 1.5, 2.0, 2.5, 3.0];
    let v: Vec<f64> = grid
        .iter()
        .map(|&t| grusin_v1_derivative(1.0, 0.0, 1.0, t).powi(2))
        .collect();
    let fit = fit_decay(&grid, &v).unwrap();
    assert!(
        (1.8..=2.2).contains(&fit.fitted_exponent),
        "{}",
        fit.fitted_exponent
    );
}

#[test]
fn ou_oracle_does_not_decay() {
    let grid = [1.0, 1.5, 2.0, 2.5, 3.0];
    let v: Vec<f64> = grid.iter().map(|&t| ou_dx(1.0, 0.5, t).powi(2)).collect();
    let fit = fit_decay(&grid, &v).unwrap();
    assert!(fit.fitted_exponent.abs() < 0.1, "{}", fit.fitted_exponent);
    // at t = 0 the derivative is sech²(1)
    assert!((ou_dx(1.0, 0.5, 0.0) - 1.0 / 1f64.cosh().powi(2)).abs() < 1e-12);
}

#[test]
fn heisenberg_gamma_regression() {
    let (s, fields) = heisenberg();
    let k = [1.0];
    let h = build_hierarchy(&fields, 2).unwrap();
    let cert = solve_certificate(&h, Ansatz::Constants, &k).unwrap();
    let a = choose_gamma_coefficients(&compute_sup_constants(&h, &cert, &k).unwrap());
    let basis: Vec<CompiledField> = h
        .basis_fields()
        .iter()
        .map(|b| CompiledField::new(b.components(), &k).unwrap())
        .collect();
    let model = SdeModel::new(&fields, &k).unwrap();
    let f = parse_scalar_fn("sin(z)", &s, &[]).unwrap();
    let cfg = McConfig {
        n_paths: 200_000,
        dt: 2e-3,
        seed: 42,
        threads: None,
    };
    let g = evaluate_gamma(&model, &a.a, &basis, &f, &[0.5, 0.5, 0.0], 0.5, 1e-2, &cfg).unwrap();
    // first run with this seed; Γ at t = 0 is 2.5 for comparison
    let golden = 2.462_027_194_480_15e-1;
    assert!(
        (g.value / golden - 1.0).abs() < 1e-10,
        "{:.15e} ± {:.3e}",
        g.value,
        g.stderr
    );
}
