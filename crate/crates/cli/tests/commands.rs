use std::path::{Path, PathBuf};
use std::process::Command as Process;

use ufgkit::{execute, run, Command, RunArgs};

fn model_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("models")
        .join(format!("{name}.model"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(format!("{name}.model"))
}

fn run_text(cmd: Command) -> ufgkit::Outcome {
    let text = std::fs::read_to_string(&cmd.args().model).unwrap();
    execute(&cmd, &text, None).unwrap()
}

#[test]
fn rate_on_heisenberg_reaches_k() {
    let out = run_text(Command::Rate(RunArgs::new(model_path("heisenberg"))));
    let rate = out.report.rate.as_ref().unwrap();
    let opt = rate.optimizer.as_ref().expect("m = 2 runs the optimizer");
    assert!(opt.lambda >= 0.99, "{}", opt.lambda);
    assert!(rate.certified_lambda.unwrap() >= opt.lambda);
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn check_ufg_on_ou_positive_refuses_dilation() {
    let out = run_text(Command::CheckUfg(RunArgs::new(model_path("ou-positive"))));
    assert!(out.report.certificate.as_ref().unwrap().verified);
    let dil = out.report.dilation.as_ref().unwrap();
    assert!(!dil.ok);
    assert_eq!(dil.error_kind.as_deref(), Some("NonNegativeFactor"));
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn example22_certifies_only_at_order_four() {
    let out = run_text(Command::CheckUfg(RunArgs::new(model_path("example22"))));
    assert!(out.report.certificate.as_ref().unwrap().verified);
    let mut args = RunArgs::new(model_path("example22"));
    args.m = Some(1);
    let out = run_text(Command::CheckUfg(args));
    assert!(!out.report.certificate.as_ref().unwrap().verified);
    assert_eq!(out.exit_code(), 2);
}

#[test]
fn written_certificates_are_verified_not_solved() {
    let ok = run_text(Command::CheckUfg(RunArgs::new(fixture("certified"))));
    let cert = ok.report.certificate.as_ref().unwrap();
    assert_eq!((cert.source.as_str(), cert.verified), ("model", true));
    let bad = run_text(Command::CheckUfg(RunArgs::new(fixture(
        "wrong-certificate",
    ))));
    let cert = bad.report.certificate.as_ref().unwrap();
    assert!(!cert.verified);
    assert!(
        cert.error.as_ref().unwrap().contains("residual"),
        "{:?}",
        cert.error
    );
    assert_eq!(bad.exit_code(), 2);
}

#[test]
fn decay_on_grusin_passes_at_twice_k() {
    let out = run_text(Command::Decay(RunArgs::new(model_path("grusin"))));
    let decay = out.report.decay.as_ref().unwrap();
    let fit = decay.gamma.as_ref().unwrap().fit.as_ref().unwrap();
    assert!(
        (1.6..=2.4).contains(&fit.fitted_exponent),
        "{}",
        fit.fitted_exponent
    );
    assert!(out.report.pass, "{:?}", out.report.verdicts);
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut args = RunArgs::new(model_path("grusin"));
        args.paths = Some(4000);
        args.dt = Some(1e-2);
        args.out = d.path().to_path_buf();
        run(&Command::All(args)).unwrap();
    }
    for file in ["report.json", "decay_1.csv", "decay_gamma.csv"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert!(!a.is_empty() && a == b, "{file} differs");
    }
    let csv = std::fs::read_to_string(dirs[0].path().join("decay_1.csv")).unwrap();
    assert!(csv.starts_with("t,value,stderr\n"));
    assert_eq!(csv.lines().count(), 6);
}

fn exit_code(args: &[&str], out: &Path) -> i32 {
    let output = Process::new(env!("CARGO_BIN_EXE_ufgkit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    output.status.code().unwrap()
}

#[test]
fn exit_codes_cover_every_failure_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let m = |n: &str| model_path(n).to_string_lossy().into_owned();
    let f = |n: &str| fixture(n).to_string_lossy().into_owned();
    let cases: Vec<(Vec<String>, i32)> = vec![
        (vec!["check-ufg".into(), "--model".into(), m("grusin")], 0),
        (vec!["rate".into(), "--model".into(), m("heisenberg")], 0),
        // verification failures
        (vec!["rate".into(), "--model".into(), m("ou-positive")], 2),
        (
            vec![
                "check-ufg".into(),
                "--model".into(),
                m("example22"),
                "--m".into(),
                "1".into(),
            ],
            2,
        ),
        (
            vec!["check-ufg".into(), "--model".into(), f("wrong-certificate")],
            2,
        ),
        // errors
        (
            vec!["check-ufg".into(), "--model".into(), f("three-components")],
            1,
        ),
        (
            vec!["check-ufg".into(), "--model".into(), f("unknown-variable")],
            1,
        ),
        (
            vec!["check-ufg".into(), "--model".into(), f("unbound-parameter")],
            1,
        ),
        (
            vec!["decay".into(), "--model".into(), f("no-test-function")],
            1,
        ),
        (
            vec!["rate".into(), "--model".into(), "/nonexistent.model".into()],
            1,
        ),
        (
            vec![
                "rate".into(),
                "--model".into(),
                m("grusin"),
                "--t-grid".into(),
                "3,1,0.5".into(),
            ],
            1,
        ),
        (
            vec![
                "rate".into(),
                "--model".into(),
                m("grusin"),
                "--m".into(),
                "0".into(),
            ],
            1,
        ),
    ];
    for (args, want) in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(exit_code(&refs, out), want, "{args:?}");
    }
}
