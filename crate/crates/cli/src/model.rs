//! Model files: TOML text with expression strings, validated with line/column errors.
//!
//! ```toml
//! name = "grusin"
//! dim = 2
//! noise = 1
//! fields = [["k*x", "0"], ["0", "x"]]   # V0, V1, ...
//! f = "tanh(y)"
//!
//! [parameters]
//! k = 1.0
//!
//! [run]
//! m = 1
//! x0 = [1.0, 0.0]
//! t_grid = "1,3,0.5"
//! chain = [{ field = "V1", duration = 1.0 }]
//! ```

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use ufgkit_core::liealg::{Combination, LieError, MultiIndex, VectorField};
use ufgkit_core::symexpr::{
    parse_expr, parse_scalar_fn, Expr, ParseError, ParseErrorKind, ScalarFn, Symbols,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: unknown variable `{name}`")]
    UnknownVariable {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: parameter `{name}` is declared but has no value")]
    UnboundParameter {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: {what} has {got} entries, expected {expected}")]
    DimensionMismatch {
        line: usize,
        column: usize,
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{line}:{column}: {message}")]
    Invalid {
        line: usize,
        column: usize,
        message: String,
    },
}

/// A validated model, in the shape it is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub dim: usize,
    pub noise: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<String>,
    /// Declared parameter names; defaults to the keys of `parameters`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub fields: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    /// Row label (e.g. `"1,0"`) to basis label to coefficient expression.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub certificate: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub run: RunSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// `"a,b,step"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Finite-difference step along flows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    /// Largest trigonometric degree tried when solving for a certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trig_degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chain: Vec<ChainStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStep {
    /// `V<i>` or a bracket label such as `[1,2]`.
    pub field: String,
    pub duration: f64,
}

/// Mirror of [`ModelFile`] that keeps source spans for error reporting.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    name: String,
    dim: Spanned<usize>,
    noise: Spanned<usize>,
    #[serde(default)]
    variables: Option<Spanned<Vec<String>>>,
    #[serde(default)]
    params: Vec<Spanned<String>>,
    #[serde(default)]
    parameters: BTreeMap<String, Spanned<f64>>,
    fields: Spanned<Vec<Spanned<Vec<Spanned<String>>>>>,
    #[serde(default)]
    f: Option<Spanned<String>>,
    #[serde(default)]
    certificate: BTreeMap<Spanned<String>, BTreeMap<Spanned<String>, Spanned<String>>>,
    #[serde(default)]
    run: Option<Spanned<RunSettings>>,
}

/// A model with expressions parsed and parameters bound.
#[derive(Clone, Debug)]
pub struct Model {
    pub file: ModelFile,
    pub symbols: Symbols,
    pub params: Vec<f64>,
    /// `V_0, …, V_d`.
    pub fields: Vec<VectorField>,
    pub f: Option<ScalarFn>,
    /// Certificate rows as written: `(row, [(basis label, φ)])`.
    pub certificate: Vec<(MultiIndex, Vec<(MultiIndex, Expr)>)>,
}

struct Source<'a> {
    text: &'a str,
}

impl Source<'_> {
    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        (line, column)
    }

    fn invalid(&self, span: Range<usize>, message: impl Into<String>) -> ModelError {
        let (line, column) = self.line_col(span.start);
        ModelError::Invalid {
            line,
            column,
            message: message.into(),
        }
    }

    /// Maps an expression error inside a quoted string to file coordinates.
    fn expr_error(&self, span: Range<usize>, e: ParseError) -> ModelError {
        // the span includes the opening quote
        let (line, column) = self.line_col(span.start + 1);
        let column = column + e.column.saturating_sub(1);
        match e.kind {
            ParseErrorKind::UnknownIdentifier(name) => {
                ModelError::UnknownVariable { line, column, name }
            }
            kind => ModelError::Syntax {
                line,
                column,
                message: kind.to_string(),
            },
        }
    }
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<ModelFile, ModelError> {
    build_model(text).map(|m| m.file)
}

/// Parses, validates and builds a model in one pass.
pub fn build_model(text: &str) -> Result<Model, ModelError> {
    let src = Source { text };
    let raw: Raw = toml::from_str(text).map_err(|e| {
        let (line, column) = src.line_col(e.span().map_or(0, |s| s.start));
        ModelError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let dim = *raw.dim.get_ref();
    if dim == 0 {
        return Err(src.invalid(raw.dim.span(), "dim must be positive"));
    }
    let variables: Vec<String> = match &raw.variables {
        Some(v) if v.get_ref().len() != dim => {
            let (line, column) = src.line_col(v.span().start);
            return Err(ModelError::DimensionMismatch {
                line,
                column,
                what: "variables".into(),
                expected: dim,
                got: v.get_ref().len(),
            });
        }
        Some(v) => v.get_ref().clone(),
        None => Vec::new(),
    };

    let declared: Vec<Spanned<String>> = if raw.params.is_empty() {
        raw.parameters
            .iter()
            .map(|(k, v)| Spanned::new(v.span(), k.clone()))
            .collect()
    } else {
        raw.params.clone()
    };
    let mut params = Vec::with_capacity(declared.len());
    for name in &declared {
        let value = raw.parameters.get(name.get_ref()).ok_or_else(|| {
            let (line, column) = src.line_col(name.span().start);
            ModelError::UnboundParameter {
                line,
                column,
                name: name.get_ref().clone(),
            }
        })?;
        let v = *value.get_ref();
        if v.is_nan() || v <= 0.0 || v.is_infinite() {
            return Err(src.invalid(
                value.span(),
                format!("parameter `{}` must be a positive real", name.get_ref()),
            ));
        }
        params.push(v);
    }
    for (name, value) in &raw.parameters {
        if !declared.iter().any(|d| d.get_ref() == name) {
            return Err(src.invalid(
                value.span(),
                format!("value given for undeclared parameter `{name}`"),
            ));
        }
    }

    let mut symbols = Symbols::standard(
        dim,
        &declared
            .iter()
            .map(|d| d.get_ref().as_str())
            .collect::<Vec<_>>(),
    );
    if !variables.is_empty() {
        symbols.vars = variables.clone();
    }

    let noise = *raw.noise.get_ref();
    let field_list = raw.fields.get_ref();
    if field_list.len() != noise + 1 {
        let (line, column) = src.line_col(raw.fields.span().start);
        return Err(ModelError::DimensionMismatch {
            line,
            column,
            what: "fields (V0 plus one per noise)".into(),
            expected: noise + 1,
            got: field_list.len(),
        });
    }
    let mut fields = Vec::with_capacity(field_list.len());
    for (i, comps) in field_list.iter().enumerate() {
        if comps.get_ref().len() != dim {
            let (line, column) = src.line_col(comps.span().start);
            return Err(ModelError::DimensionMismatch {
                line,
                column,
                what: format!("V{i}"),
                expected: dim,
                got: comps.get_ref().len(),
            });
        }
        let exprs = comps
            .get_ref()
            .iter()
            .map(|c| parse_expr(c.get_ref(), &symbols).map_err(|e| src.expr_error(c.span(), e)))
            .collect::<Result<Vec<_>, _>>()?;
        fields.push(VectorField::new(exprs));
    }

    let f = match &raw.f {
        Some(text) => Some(
            parse_scalar_fn(text.get_ref(), &symbols, &params)
                .map_err(|e| src.expr_error(text.span(), e))?,
        ),
        None => None,
    };

    let mut certificate = Vec::new();
    for (row, comb) in &raw.certificate {
        let alpha = parse_label(row.get_ref(), noise)
            .map_err(|e| src.invalid(row.span(), format!("certificate row: {e}")))?;
        let mut entries = Vec::new();
        for (basis, coeff) in comb {
            let b = parse_label(basis.get_ref(), noise)
                .map_err(|e| src.invalid(basis.span(), format!("certificate basis: {e}")))?;
            let phi = parse_expr(coeff.get_ref(), &symbols)
                .map_err(|e| src.expr_error(coeff.span(), e))?;
            entries.push((b, phi));
        }
        certificate.push((alpha, entries));
    }

    let run = raw
        .run
        .as_ref()
        .map(|r| r.get_ref().clone())
        .unwrap_or_default();
    if let Some(r) = &raw.run {
        let span = r.span();
        if let Some(x0) = &run.x0 {
            if x0.len() != dim {
                let (line, column) = src.line_col(span.start);
                return Err(ModelError::DimensionMismatch {
                    line,
                    column,
                    what: "run.x0".into(),
                    expected: dim,
                    got: x0.len(),
                });
            }
        }
        if let Some(g) = &run.t_grid {
            parse_grid(g).map_err(|e| src.invalid(span.clone(), format!("run.t_grid: {e}")))?;
        }
        for step in &run.chain {
            resolve_field_name(&step.field, noise)
                .map_err(|e| src.invalid(span.clone(), format!("run.chain: {e}")))?;
        }
    }

    let file = ModelFile {
        name: raw.name,
        dim,
        noise,
        variables,
        params: raw.params.iter().map(|p| p.get_ref().clone()).collect(),
        parameters: raw
            .parameters
            .iter()
            .map(|(k, v)| (k.clone(), *v.get_ref()))
            .collect(),
        fields: field_list
            .iter()
            .map(|c| c.get_ref().iter().map(|e| e.get_ref().clone()).collect())
            .collect(),
        f: raw.f.map(|s| s.into_inner()),
        certificate: raw
            .certificate
            .into_iter()
            .map(|(k, v)| {
                (
                    k.into_inner(),
                    v.into_iter()
                        .map(|(b, e)| (b.into_inner(), e.into_inner()))
                        .collect(),
                )
            })
            .collect(),
        run,
    };
    Ok(Model {
        file,
        symbols,
        params,
        fields,
        f,
        certificate,
    })
}

/// Writes a model back to TOML; the output reparses to an equal [`ModelFile`].
pub fn serialize_model(model: &ModelFile) -> String {
    toml::to_string(model).expect("model files contain only TOML-representable values")
}

/// `"1,0"` or `"(1,0)"` as a multi-index over `d` diffusion fields.
pub fn parse_label(text: &str, d: usize) -> Result<MultiIndex, String> {
    let inner = text
        .trim()
        .trim_start_matches(['(', '['])
        .trim_end_matches([')', ']']);
    let entries = inner
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .map_err(|_| format!("bad multi-index `{text}`"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    MultiIndex::new(entries, d).map_err(|e: LieError| e.to_string())
}

/// A field named in a flow chain.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldRef {
    /// `V<i>`, including the drift `V0`.
    Driving(usize),
    /// A bracket such as `[1,2]`.
    Bracket(MultiIndex),
}

/// Resolves `V<i>` to a driving field, otherwise reads a bracket label.
pub fn resolve_field_name(name: &str, d: usize) -> Result<FieldRef, String> {
    if let Some(i) = name.strip_prefix('V').and_then(|r| r.parse::<usize>().ok()) {
        if i > d {
            return Err(format!("no field {name} with {d} noise fields"));
        }
        return Ok(FieldRef::Driving(i));
    }
    parse_label(name, d).map(FieldRef::Bracket)
}

/// `"a,b,step"` into the grid `a, a + step, …, b`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number in `{text}`"))
        })
        .collect::<Result<_, _>>()?;
    let [a, b, step] = parts[..] else {
        return Err(format!("expected `a,b,step`, got `{text}`"));
    };
    let ordered = step > 0.0 && b >= a && a >= 0.0 && b.is_finite();
    if !ordered {
        return Err(format!("need 0 <= a <= b and step > 0 in `{text}`"));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 10_000 {
        return Err(format!("grid `{text}` has too many points"));
    }
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

impl Model {
    /// Resolves written certificate rows to basis indices of `h`.
    pub fn certificate_rows(
        &self,
        h: &ufgkit_core::liealg::BracketHierarchy,
    ) -> Result<Vec<(MultiIndex, Combination)>, String> {
        let mut out = Vec::new();
        for (row, entries) in &self.certificate {
            let mut comb = Combination::new();
            for (label, phi) in entries {
                let r = h
                    .basis_ref(label)
                    .map_err(|e| e.to_string())?
                    .ok_or_else(|| format!("{label} is not a basis element"))?;
                let e = comb.entry(r.index).or_insert_with(Expr::zero);
                *e = &*e + &phi.scale(r.sign);
            }
            out.push((row.clone(), comb));
        }
        Ok(out)
    }
}
