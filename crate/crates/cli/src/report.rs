//! Report types written as `report.json`. Nothing here depends on wall-clock time,
//! so a rerun with the same model and seed produces identical bytes.

use serde::Serialize;

use ufgkit_core::rates::{OptimizedRate, RateReport};
use ufgkit_core::sdesim::{ContractionSeries, DecayEstimate, SeriesPoint};
use ufgkit_core::ufgcheck::PhiBound;

use crate::model::ModelFile;

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub model: ModelFile,
    pub settings: Settings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchyTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dilation: Option<DilationStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reach: Option<ReachSection>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// Effective run settings after flags, model `[run]` values and defaults.
#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub m: usize,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub tol: f64,
    pub fd_step: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HierarchyTable {
    pub depth: usize,
    pub brackets: Vec<BracketEntry>,
    pub basis: Vec<BasisEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketEntry {
    pub index: String,
    pub length: usize,
    pub field: String,
    /// `(basis index, sign)` when the field is a signed basis element.
    pub basis: Option<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BasisEntry {
    pub index: usize,
    pub rep: String,
    pub field: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateStatus {
    /// `"model"` for rows read from the file, otherwise the ansatz that solved them.
    pub source: String,
    pub verified: bool,
    pub error: Option<String>,
    pub rows: Vec<CertificateRow>,
    pub boundedness: Vec<PhiBound>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateRow {
    pub row: String,
    /// `(basis rep, φ)` pairs.
    pub terms: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DilationStatus {
    pub ok: bool,
    pub lambda0: Option<f64>,
    pub factors: Vec<DilationEntry>,
    /// Variant name of the failure, e.g. `NonNegativeFactor`.
    pub error_kind: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DilationEntry {
    pub rep: String,
    pub factor: String,
    pub sup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateSection {
    pub engine: Option<RateReport>,
    pub engine_error: Option<String>,
    pub optimizer: Option<OptimizedRate>,
    pub optimizer_error: Option<String>,
    /// Larger of the two certified rates.
    pub certified_lambda: Option<f64>,
    /// Γ coefficients belonging to `certified_lambda`.
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecaySection {
    pub x0: Vec<f64>,
    pub directions: Vec<SeriesFit>,
    pub gamma: Option<SeriesFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesFit {
    pub label: String,
    pub series: Vec<SeriesPoint>,
    pub fit: Option<DecayEstimate>,
    pub fit_error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReachSection {
    pub x0: Vec<f64>,
    pub chain: Vec<(String, f64)>,
    pub contraction: ContractionSeries,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

impl Report {
    pub fn push_verdict(&mut self, check: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict {
            check: check.to_string(),
            pass,
            detail,
        });
        self.pass = self.verdicts.iter().all(|v| v.pass);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
