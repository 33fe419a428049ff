//! Random expression strategies shared by the unit-level property tests.

use proptest::prelude::*;

use crate::symexpr::{Atom, Expr, Term};

/// Polynomial terms in `dim` variables with total degree at most `max_deg`.
pub fn poly(dim: usize, max_deg: u32, max_terms: usize) -> impl Strategy<Value = Expr> {
    prop::collection::vec(
        (-3i32..=3, prop::collection::vec(0u32..=max_deg, dim)),
        1..=max_terms,
    )
    .prop_map(move |raw| {
        Expr::from_terms(raw.into_iter().filter_map(|(c, pows)| {
            if pows.iter().sum::<u32>() > max_deg {
                return None;
            }
            let mut t = Term::one();
            for (i, p) in pows.into_iter().enumerate() {
                t = t.mul(&Term::atom(Atom::Var(i), p as i32));
            }
            Some((t, c as f64))
        }))
    })
}

/// Mixed polynomial-trigonometric terms.
pub fn mixed(dim: usize, max_terms: usize) -> impl Strategy<Value = Expr> {
    prop::collection::vec(
        (
            -3.0f64..3.0,
            prop::collection::vec((0i32..=2, 0i32..=2, 0i32..=2), dim),
        ),
        1..=max_terms,
    )
    .prop_map(|raw| {
        Expr::from_terms(raw.into_iter().map(|(c, pows)| {
            let mut t = Term::one();
            for (i, (pv, ps, pc)) in pows.into_iter().enumerate() {
                t = t
                    .mul(&Term::atom(Atom::Var(i), pv))
                    .mul(&Term::atom(Atom::Sin(i), ps))
                    .mul(&Term::atom(Atom::Cos(i), pc));
            }
            (t, c)
        }))
    })
}

/// Trigonometric-only terms (bounded on the whole space).
pub fn trig(dim: usize, max_terms: usize) -> impl Strategy<Value = Expr> {
    prop::collection::vec(
        (
            -3.0f64..3.0,
            prop::collection::vec((0i32..=2, 0i32..=2), dim),
        ),
        1..=max_terms,
    )
    .prop_map(|raw| {
        Expr::from_terms(raw.into_iter().map(|(c, pows)| {
            let mut t = Term::one();
            for (i, (ps, pc)) in pows.into_iter().enumerate() {
                t = t
                    .mul(&Term::atom(Atom::Sin(i), ps))
                    .mul(&Term::atom(Atom::Cos(i), pc));
            }
            (t, c)
        }))
    })
}

pub fn point(dim: usize, half_width: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-half_width..half_width, dim)
}
