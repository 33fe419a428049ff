//! Command pipelines: symbolic checks first, then the Monte Carlo runs that need them.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use thiserror::Error;

use ufgkit_core::liealg::{build_hierarchy, BracketHierarchy, LieError};
use ufgkit_core::rates::{
    certify_rate, choose_gamma_coefficients, compute_sup_constants, optimize_small_system,
    SmallSystem,
};
use ufgkit_core::sdesim::{
    check_reachability_contraction, fit_decay, gamma_series, McConfig, SdeModel, SeriesPoint,
    SimError,
};
use ufgkit_core::symexpr::{CompiledField, ExprError, ScalarFn};
use ufgkit_core::ufgcheck::{
    check_dilation, solve_certificate, verify_certificate, Ansatz, DilationCertificate,
    DilationError, UfgCertificate,
};

use crate::model::{build_model, parse_grid, resolve_field_name, FieldRef, Model, ModelError};
use crate::report::*;

pub const DEFAULT_GRID: &str = "1,3,0.5";
const DEFAULT_PATHS: usize = 100_000;
const DEFAULT_DT: f64 = 1e-3;
const DEFAULT_SEED: u64 = 42;
const DEFAULT_FD_STEP: f64 = 1e-2;
const DEFAULT_TRIG_DEGREE: u32 = 2;
const OPTIMIZER_BUDGET: usize = 4000;

#[derive(Subcommand, Clone, Debug)]
pub enum Command {
    /// Build the bracket hierarchy and verify or solve for a UFG certificate.
    CheckUfg(RunArgs),
    /// Dilation check and certified decay rate.
    Rate(RunArgs),
    /// Monte Carlo decay series of the Γ form, with fitted exponents.
    Decay(RunArgs),
    /// Contraction of |P_t f(x) - P_t f(y)| along a flow chain from x to y.
    Reach(RunArgs),
    /// Every check above.
    All(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckUfg(_) => "check-ufg",
            Command::Rate(_) => "rate",
            Command::Decay(_) => "decay",
            Command::Reach(_) => "reach",
            Command::All(_) => "all",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::CheckUfg(a)
            | Command::Rate(a)
            | Command::Decay(a)
            | Command::Reach(a)
            | Command::All(a) => a,
        }
    }

    fn stages(&self) -> (bool, bool, bool) {
        match self {
            Command::CheckUfg(_) => (false, false, false),
            Command::Rate(_) => (true, false, false),
            Command::Decay(_) => (true, true, false),
            Command::Reach(_) => (true, false, true),
            Command::All(_) => (true, true, true),
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `a,b,step`
    #[arg(long = "t-grid")]
    pub t_grid: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Allowed shortfall of a fitted exponent below the certified rate.
    #[arg(long, default_value_t = 0.4)]
    pub tol: f64,
}

impl RunArgs {
    pub fn new(model: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            m: None,
            paths: None,
            dt: None,
            seed: None,
            t_grid: None,
            out: PathBuf::from("out"),
            tol: 0.4,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("liealg: {0}")]
    Lie(#[from] LieError),
    #[error("symexpr: {0}")]
    Expr(#[from] ExprError),
    #[error("sdesim: {0}")]
    Sim(#[from] SimError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A finished run: the report and the series to write as CSV.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub series: Vec<(String, Vec<SeriesPoint>)>,
}

impl Outcome {
    /// 0 when every verdict passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            0
        } else {
            2
        }
    }
}

/// Reads the model, runs the command and writes `report.json` and the CSV series.
pub fn run(command: &Command) -> Result<Outcome, CliError> {
    let args = command.args();
    let text = std::fs::read_to_string(&args.model).map_err(|source| CliError::Io {
        path: args.model.clone(),
        source,
    })?;
    let outcome = execute(command, &text, threads_from_env()?)?;
    write_outputs(&outcome, &args.out)?;
    Ok(outcome)
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("UFGKIT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "UFGKIT_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let report = dir.join("report.json");
    std::fs::write(&report, outcome.report.to_json()).map_err(io(&report))?;
    for (label, series) in &outcome.series {
        let path = dir.join(format!("decay_{label}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        for p in series {
            w.serialize(p)?;
        }
        w.flush().map_err(io(&path))?;
    }
    Ok(())
}

/// Runs a command on model text without touching the filesystem.
pub fn execute(command: &Command, text: &str, threads: Option<usize>) -> Result<Outcome, CliError> {
    let args = command.args();
    let model = build_model(text)?;
    let settings = settings(&model, args)?;
    let mut report = Report {
        command: command.name().to_string(),
        model: model.file.clone(),
        settings,
        hierarchy: None,
        certificate: None,
        dilation: None,
        rate: None,
        decay: None,
        reach: None,
        verdicts: Vec::new(),
        pass: true,
    };
    let mut series = Vec::new();

    let h = build_hierarchy(&model.fields, report.settings.m)?;
    report.hierarchy = Some(hierarchy_table(&model, &h));
    let cert = certificate_stage(&model, &h, &mut report);
    let dil = dilation_stage(&model, &h, &mut report);
    let (with_rate, with_decay, with_reach) = command.stages();
    if !with_rate {
        let verified = cert.is_some();
        let detail = match &report.certificate {
            Some(c) if verified => format!("certificate verified ({})", c.source),
            Some(c) => c.error.clone().unwrap_or_default(),
            None => String::new(),
        };
        report.push_verdict("ufg", verified, detail);
        return Ok(Outcome { report, series });
    }

    let rate = rate_stage(&model, &h, cert.as_ref(), dil.as_ref());
    let lambda = rate.certified_lambda;
    report.push_verdict(
        "certified rate",
        lambda.is_some(),
        match lambda {
            Some(l) => format!("lambda = {l}"),
            None => rate
                .engine_error
                .clone()
                .unwrap_or_else(|| "no positive rate".to_string()),
        },
    );
    let coefficients = if rate.coefficients.is_empty() {
        vec![1.0; h.basis().len()]
    } else {
        rate.coefficients.clone()
    };
    report.rate = Some(rate);

    let cfg = McConfig {
        n_paths: report.settings.paths,
        dt: report.settings.dt,
        seed: report.settings.seed,
        threads,
    };
    if with_decay || with_reach {
        let f = model
            .f
            .as_ref()
            .ok_or_else(|| CliError::Usage("the model has no test function `f`".into()))?;
        let sde = SdeModel::new(&model.fields, &model.params)?;
        if with_decay {
            decay_stage(
                &model,
                &h,
                &sde,
                f,
                &coefficients,
                lambda,
                &cfg,
                &mut report,
                &mut series,
            )?;
        }
        if with_reach {
            reach_stage(&model, &h, &sde, f, lambda, &cfg, &mut report)?;
        }
    }
    Ok(Outcome { report, series })
}

fn settings(model: &Model, args: &RunArgs) -> Result<Settings, CliError> {
    let run = &model.file.run;
    let grid_text = args
        .t_grid
        .clone()
        .or_else(|| run.t_grid.clone())
        .unwrap_or_else(|| DEFAULT_GRID.to_string());
    let t_grid = parse_grid(&grid_text).map_err(|e| CliError::Usage(format!("--t-grid: {e}")))?;
    let m = args.m.or(run.m).unwrap_or(1);
    if m == 0 {
        return Err(CliError::Usage("--m must be at least 1".into()));
    }
    let tol = args.tol;
    if tol.is_nan() || tol < 0.0 {
        return Err(CliError::Usage("--tol must be non-negative".into()));
    }
    Ok(Settings {
        m,
        paths: args.paths.or(run.paths).unwrap_or(DEFAULT_PATHS),
        dt: args.dt.or(run.dt).unwrap_or(DEFAULT_DT),
        seed: args.seed.or(run.seed).unwrap_or(DEFAULT_SEED),
        t_grid,
        tol,
        fd_step: run.fd_step.unwrap_or(DEFAULT_FD_STEP),
        x0: run.x0.clone().unwrap_or_else(|| vec![1.0; model.file.dim]),
    })
}

fn hierarchy_table(model: &Model, h: &BracketHierarchy) -> HierarchyTable {
    let s = &model.symbols;
    let brackets = h
        .indices()
        .iter()
        .map(|alpha| BracketEntry {
            index: alpha.to_string(),
            length: alpha.length(),
            field: h
                .get(alpha)
                .map(|v| v.display(s).to_string())
                .unwrap_or_default(),
            basis: h.basis_ref(alpha).ok().flatten().map(|r| (r.index, r.sign)),
        })
        .collect();
    let basis = h
        .basis()
        .iter()
        .enumerate()
        .map(|(index, b)| BasisEntry {
            index,
            rep: b.rep.to_string(),
            field: b.field.display(s).to_string(),
        })
        .collect();
    HierarchyTable {
        depth: h.depth(),
        brackets,
        basis,
    }
}

/// Verifies rows written in the model, or searches constants then trig coefficients.
fn certificate_stage(
    model: &Model,
    h: &BracketHierarchy,
    report: &mut Report,
) -> Option<UfgCertificate> {
    let describe = |cert: &UfgCertificate| -> Vec<CertificateRow> {
        cert.rows()
            .map(|(row, comb)| CertificateRow {
                row: row.to_string(),
                terms: comb
                    .iter()
                    .map(|(&b, phi)| {
                        (
                            h.basis()[b].rep.to_string(),
                            phi.display(&model.symbols).to_string(),
                        )
                    })
                    .collect(),
            })
            .collect()
    };
    let (source, result) = if model.certificate.is_empty() {
        let degree = model.file.run.trig_degree.unwrap_or(DEFAULT_TRIG_DEGREE);
        let mut last = None;
        let mut found = None;
        for ansatz in std::iter::once(Ansatz::Constants).chain((1..=degree).map(Ansatz::Trig)) {
            match solve_certificate(h, ansatz, &model.params) {
                Ok(c) if c.verified => {
                    found = Some((ansatz, c));
                    break;
                }
                Ok(_) => last = Some("solved certificate did not verify".to_string()),
                Err(e) => last = Some(e.to_string()),
            }
        }
        match found {
            Some((ansatz, c)) => (ansatz_name(ansatz), Ok(c)),
            None => (
                "search".to_string(),
                Err((last.unwrap_or_default(), Vec::new())),
            ),
        }
    } else {
        let result = model
            .certificate_rows(h)
            .map_err(|e| (e, Vec::new()))
            .and_then(|rows| {
                let mut cert = UfgCertificate::new(h.m());
                for (row, comb) in rows {
                    cert.set_row(row, comb);
                }
                verify_certificate(h, &cert, &model.params)
                    .map_err(|e| (e.to_string(), describe(&cert)))
            });
        ("model".to_string(), result)
    };
    match result {
        Ok(cert) => {
            report.certificate = Some(CertificateStatus {
                source,
                verified: true,
                error: None,
                rows: describe(&cert),
                boundedness: cert.boundedness.clone(),
            });
            Some(cert)
        }
        Err((error, rows)) => {
            report.certificate = Some(CertificateStatus {
                source,
                verified: false,
                error: Some(error),
                rows,
                boundedness: Vec::new(),
            });
            None
        }
    }
}

fn ansatz_name(a: Ansatz) -> String {
    match a {
        Ansatz::Constants => "constants".into(),
        Ansatz::Trig(d) => format!("trig-degree-{d}"),
    }
}

fn dilation_stage(
    model: &Model,
    h: &BracketHierarchy,
    report: &mut Report,
) -> Option<DilationCertificate> {
    match check_dilation(h, &model.params) {
        Ok(d) => {
            report.dilation = Some(DilationStatus {
                ok: true,
                lambda0: Some(d.lambda0),
                factors: d
                    .factors
                    .iter()
                    .map(|f| DilationEntry {
                        rep: f.rep.to_string(),
                        factor: f.factor.display(&model.symbols).to_string(),
                        sup: f.sup,
                    })
                    .collect(),
                error_kind: None,
                error: None,
            });
            Some(d)
        }
        Err(e) => {
            report.dilation = Some(DilationStatus {
                ok: false,
                lambda0: None,
                factors: Vec::new(),
                error_kind: Some(dilation_kind(&e).to_string()),
                error: Some(e.to_string()),
            });
            None
        }
    }
}

fn dilation_kind(e: &DilationError) -> &'static str {
    match e {
        DilationError::NotProportional(_) => "NotProportional",
        DilationError::NonNegativeFactor { .. } => "NonNegativeFactor",
        DilationError::EmptyBasis => "EmptyBasis",
        DilationError::Lie(_) | DilationError::Expr(_) => "Symbolic",
    }
}

fn rate_stage(
    model: &Model,
    h: &BracketHierarchy,
    cert: Option<&UfgCertificate>,
    dil: Option<&DilationCertificate>,
) -> RateSection {
    let mut out = RateSection {
        engine: None,
        engine_error: None,
        optimizer: None,
        optimizer_error: None,
        certified_lambda: None,
        coefficients: Vec::new(),
    };
    let (cert, dil) = match (cert, dil) {
        (Some(c), Some(d)) => (c, d),
        (None, _) => {
            out.engine_error = Some("no verified UFG certificate".into());
            return out;
        }
        (_, None) => {
            out.engine_error = Some("dilation condition failed".into());
            return out;
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |lambda: f64, a: &[f64]| {
        if lambda > 0.0 && best.as_ref().is_none_or(|(l, _)| lambda > *l) {
            best = Some((lambda, a.to_vec()));
        }
    };
    match compute_sup_constants(h, cert, &model.params).and_then(|s| {
        let a = choose_gamma_coefficients(&s);
        certify_rate(dil, &a, &s).map(|r| (r, a))
    }) {
        Ok((r, a)) => {
            if let Some(l) = r.lambda {
                consider(l, &a.a);
            }
            out.engine = Some(r);
        }
        Err(e) => out.engine_error = Some(e.to_string()),
    }
    if h.m() <= 2 {
        match SmallSystem::build(h, cert, dil, &model.params) {
            Ok(sys) => {
                let opt = optimize_small_system(&sys, OPTIMIZER_BUDGET);
                consider(opt.lambda, &opt.a);
                out.optimizer = Some(opt);
            }
            Err(e) => out.optimizer_error = Some(e.to_string()),
        }
    }
    if let Some((l, a)) = best {
        out.certified_lambda = Some(l);
        out.coefficients = a;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn decay_stage(
    model: &Model,
    h: &BracketHierarchy,
    sde: &SdeModel,
    f: &ScalarFn,
    coefficients: &[f64],
    lambda: Option<f64>,
    cfg: &McConfig,
    report: &mut Report,
    series_out: &mut Vec<(String, Vec<SeriesPoint>)>,
) -> Result<(), CliError> {
    let s = &report.settings;
    let basis = h
        .basis_fields()
        .iter()
        .map(|b| CompiledField::new(b.components(), &model.params))
        .collect::<Result<Vec<_>, _>>()?;
    let g = gamma_series(
        sde,
        coefficients,
        &basis,
        f,
        &s.x0,
        &s.t_grid,
        s.fd_step,
        cfg,
    )?;
    let fitted = |label: String, series: Vec<SeriesPoint>| {
        let times: Vec<f64> = series.iter().map(|p| p.t).collect();
        let values: Vec<f64> = series.iter().map(|p| p.value).collect();
        let (fit, fit_error) = match fit_decay(&times, &values) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SeriesFit {
            label,
            series,
            fit,
            fit_error,
        }
    };
    let directions: Vec<SeriesFit> = h
        .basis()
        .iter()
        .zip(g.directions)
        .map(|(b, series)| fitted(b.rep.label(), series))
        .collect();
    let gamma = fitted("gamma".to_string(), g.gamma);

    let tol = s.tol;
    let verdicts: Vec<(String, bool, String)> = directions
        .iter()
        .chain(std::iter::once(&gamma))
        .map(|d| {
            let check = format!("decay {}", d.label);
            match (&d.fit, lambda) {
                (Some(fit), Some(l)) => (
                    check,
                    fit.fitted_exponent >= l - tol,
                    format!(
                        "fitted exponent {} vs certified {l} - {tol}",
                        fit.fitted_exponent
                    ),
                ),
                (Some(fit), None) => (
                    check,
                    false,
                    format!(
                        "fitted exponent {} but no certified rate",
                        fit.fitted_exponent
                    ),
                ),
                // a direction that vanishes on the whole grid decays at every rate
                (None, _) if d.series.iter().all(|p| p.value == 0.0) => {
                    (check, true, "identically zero on the grid".to_string())
                }
                (None, _) => (check, false, d.fit_error.clone().unwrap_or_default()),
            }
        })
        .collect();
    for (check, pass, detail) in verdicts {
        report.push_verdict(&check, pass, detail);
    }
    for d in directions.iter().chain(std::iter::once(&gamma)) {
        series_out.push((d.label.clone(), d.series.clone()));
    }
    report.decay = Some(DecaySection {
        x0: report.settings.x0.clone(),
        directions,
        gamma: Some(gamma),
    });
    Ok(())
}

/// The difference bound integrates `|V P_s f|`, which decays at half the Γ rate.
fn reach_stage(
    model: &Model,
    h: &BracketHierarchy,
    sde: &SdeModel,
    f: &ScalarFn,
    lambda: Option<f64>,
    cfg: &McConfig,
    report: &mut Report,
) -> Result<(), CliError> {
    let d = model.file.noise;
    let steps: Vec<(String, f64)> = if model.file.run.chain.is_empty() {
        vec![("V1".to_string(), 1.0)]
    } else {
        model
            .file
            .run
            .chain
            .iter()
            .map(|c| (c.field.clone(), c.duration))
            .collect()
    };
    let mut chain = Vec::with_capacity(steps.len());
    for (name, duration) in &steps {
        let field = match resolve_field_name(name, d).map_err(CliError::Usage)? {
            FieldRef::Driving(i) => &model.fields[i],
            FieldRef::Bracket(alpha) => h
                .get(&alpha)
                .ok_or_else(|| CliError::Lie(LieError::NotInHierarchy(alpha.clone())))?,
        };
        chain.push((
            CompiledField::new(field.components(), &model.params)?,
            *duration,
        ));
    }
    let s = &report.settings;
    let contraction = check_reachability_contraction(sde, f, &s.x0, &chain, &s.t_grid, cfg)?;
    let tol = s.tol;
    let (pass, detail) = match (&contraction.fit, lambda) {
        (Some(fit), Some(l)) => (
            fit.fitted_exponent >= l / 2.0 - tol,
            format!(
                "fitted exponent {} vs {} - {tol}",
                fit.fitted_exponent,
                l / 2.0
            ),
        ),
        (Some(fit), None) => (
            false,
            format!(
                "fitted exponent {} but no certified rate",
                fit.fitted_exponent
            ),
        ),
        (None, _) => (false, "too few positive differences to fit".to_string()),
    };
    report.push_verdict("reach", pass, detail);
    report.reach = Some(ReachSection {
        x0: report.settings.x0.clone(),
        chain: steps,
        contraction,
    });
    Ok(())
}
