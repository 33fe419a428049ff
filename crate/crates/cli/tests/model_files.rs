use std::path::Path;

use proptest::prelude::*;

use ufgkit::{parse_model, serialize_model, ModelError};

fn read(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)).unwrap()
}

#[test]
fn bundled_grusin_has_two_dimensions_and_one_noise() {
    let m = parse_model(&read("models/grusin.model")).unwrap();
    assert_eq!((m.dim, m.noise), (2, 1));
    assert_eq!(m.parameters["k"], 1.0);
}

#[test]
fn fixtures_fail_with_located_errors() {
    match parse_model(&read("tests/fixtures/three-components.model")) {
        Err(ModelError::DimensionMismatch {
            line: 6,
            expected: 2,
            got: 3,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    match parse_model(&read("tests/fixtures/unknown-variable.model")) {
        Err(ModelError::UnknownVariable {
            line: 4,
            column: 34,
            name,
        }) => assert_eq!(name, "w"),
        other => panic!("{other:?}"),
    }
    match parse_model(&read("tests/fixtures/unbound-parameter.model")) {
        Err(ModelError::UnboundParameter {
            line: 4,
            column: 16,
            name,
        }) => assert_eq!(name, "b"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bundled_models_round_trip() {
    for name in ["grusin", "heisenberg", "ou-positive", "example22"] {
        let a = parse_model(&read(&format!("models/{name}.model"))).unwrap();
        assert_eq!(parse_model(&serialize_model(&a)).unwrap(), a, "{name}");
    }
}

fn coefficient() -> impl Strategy<Value = String> {
    (
        -5i32..=5,
        prop::sample::select(vec!["x", "y", "k*x", "sin(y)", "cos(x)*y", "x^2"]),
    )
        .prop_map(|(c, t)| format!("{c}*{t}"))
}

proptest! {
    #[test]
    fn generated_models_round_trip(
        comps in prop::collection::vec(coefficient(), 4),
        k in 0.01f64..100.0,
        seed in any::<u64>(),
        paths in 2usize..1_000_000,
    ) {
        let text = format!(
            "name = \"gen\"\ndim = 2\nnoise = 1\nfields = [[\"{}\", \"{}\"], [\"{}\", \"{}\"]]\nf = \"tanh(x)\"\n\
             [parameters]\nk = {k:?}\n[run]\nseed = {seed}\npaths = {paths}\n",
            comps[0], comps[1], comps[2], comps[3]
        );
        let a = parse_model(&text).unwrap();
        let b = parse_model(&serialize_model(&a)).unwrap();
        prop_assert_eq!(a, b);
    }
}
