//! Multi-indices, vector fields and the bracket hierarchy `α ↦ V_[α]`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::symexpr::{Expr, ExprError, Symbols};
use crate::ufgcheck::UfgCertificate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("vector fields have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid multi-index {0:?}: {1}")]
    InvalidMultiIndex(Vec<u8>, &'static str),
    #[error("at least one field V_0 is required")]
    NoFields,
    #[error("order m must be at least 1")]
    ZeroOrder,
    #[error("{0} is not in the hierarchy")]
    NotInHierarchy(MultiIndex),
    #[error("certificate has no row for {0}")]
    MissingRow(MultiIndex),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A word over `{0, …, d}` other than the bare `(0)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn new(entries: Vec<u8>, d: usize) -> Result<Self, LieError> {
        if entries.is_empty() {
            return Err(LieError::InvalidMultiIndex(entries, "empty"));
        }
        if entries == [0] {
            return Err(LieError::InvalidMultiIndex(entries, "(0) is excluded"));
        }
        if entries.iter().any(|&e| e as usize > d) {
            return Err(LieError::InvalidMultiIndex(entries, "entry exceeds d"));
        }
        Ok(Self(entries))
    }

    /// Single-letter index `(i)` for `i ≥ 1`.
    pub fn single(i: u8) -> Self {
        assert!(i >= 1, "(0) is not a multi-index");
        Self(vec![i])
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    /// Entry count plus one extra per zero entry.
    pub fn length(&self) -> usize {
        self.0.len() + self.0.iter().filter(|&&e| e == 0).count()
    }

    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        MultiIndex(v)
    }

    /// `α ∗ (i)`; always valid because the result has at least two entries.
    pub fn push(&self, i: u8) -> MultiIndex {
        let mut v = self.0.clone();
        v.push(i);
        MultiIndex(v)
    }

    /// Compact label usable in file names, e.g. `12` or `1_10`.
    pub fn label(&self) -> String {
        if self.0.iter().all(|&e| e < 10) {
            self.0.iter().map(|e| e.to_string()).collect()
        } else {
            self.0
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("_")
        }
    }

    /// All indices with `1 ≤ ‖α‖ ≤ max_len`, by length then lexicographically.
    pub fn enumerate(d: usize, max_len: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
        while let Some(w) = frontier.pop() {
            for e in 0..=d as u8 {
                let mut next = w.clone();
                next.push(e);
                let len = next.len() + next.iter().filter(|&&x| x == 0).count();
                if len > max_len {
                    continue;
                }
                if next != [0] {
                    out.push(MultiIndex(next.clone()));
                }
                frontier.push(next);
            }
        }
        out.sort_by(|a, b| a.length().cmp(&b.length()).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `V = Σ_j V^j ∂_j` with symbolic coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![Expr::zero(); dim])
    }

    /// The coordinate field `∂_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut f = Self::zero(dim);
        f.components[i] = Expr::constant(1.0);
        f
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// `V f = Σ_j V^j ∂_j f`.
    pub fn apply(&self, f: &Expr) -> Expr {
        self.components
            .iter()
            .enumerate()
            .fold(Expr::zero(), |acc, (j, vj)| &acc + &(vj * &f.diff(j)))
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.components.iter().all(Expr::is_structurally_zero)
    }

    /// Zero modulo the Pythagorean identities.
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero_mod_trig)
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> VectorField {
        Self::new(self.components.iter().map(f).collect())
    }

    pub fn scale(&self, c: &Expr) -> VectorField {
        self.map(|e| c * e)
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        Self::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        Self::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn pythagorean_reduce(&self) -> VectorField {
        self.map(Expr::pythagorean_reduce)
    }

    /// Flips the sign so that the leading term of the first nonzero component is positive.
    pub fn sign_normalized(&self) -> (VectorField, f64) {
        let sign = self
            .components
            .iter()
            .find_map(|c| c.leading().map(|(_, coeff)| coeff.signum()))
            .unwrap_or(1.0);
        if sign < 0.0 {
            (self.map(|e| -e), -1.0)
        } else {
            (self.clone(), 1.0)
        }
    }

    pub fn eval(&self, x: &[f64], params: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.components.iter().map(|c| c.eval(x, params)).collect()
    }

    pub fn display<'a>(&'a self, symbols: &'a Symbols) -> FieldDisplay<'a> {
        FieldDisplay {
            field: self,
            symbols,
        }
    }
}

pub struct FieldDisplay<'a> {
    field: &'a VectorField,
    symbols: &'a Symbols,
}

impl fmt::Display for FieldDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .field
            .components
            .iter()
            .map(|c| c.display(self.symbols).to_string())
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// `[V, W]^i = Σ_j (V^j ∂_j W^i − W^j ∂_j V^i)`.
pub fn bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, LieError> {
    if v.dim() != w.dim() {
        return Err(LieError::DimensionMismatch(v.dim(), w.dim()));
    }
    Ok(VectorField::new(
        (0..v.dim())
            .map(|i| &v.apply(&w.components[i]) - &w.apply(&v.components[i]))
            .collect(),
    ))
}

/// Position of `V_[α]` among the basis fields, up to sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisRef {
    pub index: usize,
    pub sign: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisElement {
    /// First index (in enumeration order) realizing this field.
    pub rep: MultiIndex,
    pub field: VectorField,
}

/// A formal combination `Σ_b coeff_b · basis_b`.
pub type Combination = BTreeMap<usize, Expr>;

/// The fields `V_[α]` for all `α` up to length `m + 2`, with the Γ basis drawn from `A_m`.
#[derive(Clone, Debug)]
pub struct BracketHierarchy {
    m: usize,
    depth: usize,
    fields: Vec<VectorField>,
    entries: BTreeMap<MultiIndex, VectorField>,
    order: Vec<MultiIndex>,
    basis: Vec<BasisElement>,
    basis_of: BTreeMap<MultiIndex, Option<BasisRef>>,
}

/// Builds `V_[α∗i] = [V_[α], V_i]` (with `V_[(0)] = V_0`) for every `‖α‖ ≤ m + 2`.
///
/// `fields[0]` is the drift `V_0`, `fields[1..]` the diffusion fields.
pub fn build_hierarchy(fields: &[VectorField], m: usize) -> Result<BracketHierarchy, LieError> {
    build_hierarchy_to(fields, m, m + 2)
}

/// As [`build_hierarchy`] with an explicit depth `≥ m`.
pub fn build_hierarchy_to(
    fields: &[VectorField],
    m: usize,
    depth: usize,
) -> Result<BracketHierarchy, LieError> {
    if fields.is_empty() {
        return Err(LieError::NoFields);
    }
    if m == 0 {
        return Err(LieError::ZeroOrder);
    }
    let dim = fields[0].dim();
    if let Some(f) = fields.iter().find(|f| f.dim() != dim) {
        return Err(LieError::DimensionMismatch(dim, f.dim()));
    }
    let depth = depth.max(m);
    let d = fields.len() - 1;
    let fields: Vec<VectorField> = fields.iter().map(VectorField::pythagorean_reduce).collect();
    let order = MultiIndex::enumerate(d, depth);
    let mut entries: BTreeMap<MultiIndex, VectorField> = BTreeMap::new();
    for alpha in &order {
        let e = alpha.entries();
        let field = if e.len() == 1 {
            fields[e[0] as usize].clone()
        } else {
            let prefix = &e[..e.len() - 1];
            let last = *e.last().unwrap() as usize;
            let base = if prefix == [0] {
                &fields[0]
            } else {
                &entries[&MultiIndex(prefix.to_vec())]
            };
            if base.is_structurally_zero() || fields[last].is_structurally_zero() {
                VectorField::zero(dim)
            } else {
                bracket(base, &fields[last])?.pythagorean_reduce()
            }
        };
        entries.insert(alpha.clone(), field);
    }

    let mut basis: Vec<BasisElement> = Vec::new();
    let mut basis_of = BTreeMap::new();
    for alpha in order.iter().filter(|a| a.length() <= m) {
        let field = &entries[alpha];
        if field.is_zero() {
            basis_of.insert(alpha.clone(), None);
            continue;
        }
        let (normal, sign) = field.sign_normalized();
        let found = basis.iter().position(|b| b.field == normal);
        let index = found.unwrap_or_else(|| {
            basis.push(BasisElement {
                rep: alpha.clone(),
                field: normal,
            });
            basis.len() - 1
        });
        // representatives are stored sign-normalized, so V_[α] = sign · basis
        basis_of.insert(alpha.clone(), Some(BasisRef { index, sign }));
    }
    // keep the representative's own orientation for readability
    for (bi, b) in basis.iter_mut().enumerate() {
        let raw = &entries[&b.rep];
        if raw != &b.field {
            b.field = raw.clone();
            for r in basis_of.values_mut().flatten() {
                if r.index == bi {
                    r.sign = -r.sign;
                }
            }
        }
    }
    Ok(BracketHierarchy {
        m,
        depth,
        fields,
        entries,
        order,
        basis,
        basis_of,
    })
}

impl BracketHierarchy {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of diffusion fields `d`.
    pub fn d(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    /// `V_0, …, V_d` as given (after trig normalization).
    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<&VectorField> {
        self.entries.get(alpha)
    }

    /// All indices in the map, by length then lexicographically.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.order
    }

    /// `A_m` in enumeration order.
    pub fn a_m(&self) -> impl Iterator<Item = &MultiIndex> {
        let m = self.m;
        self.order.iter().filter(move |a| a.length() <= m)
    }

    pub fn basis(&self) -> &[BasisElement] {
        &self.basis
    }

    pub fn basis_fields(&self) -> Vec<VectorField> {
        self.basis.iter().map(|b| b.field.clone()).collect()
    }

    /// `None` for zero fields; errors for indices outside `A_m`.
    pub fn basis_ref(&self, alpha: &MultiIndex) -> Result<Option<BasisRef>, LieError> {
        self.basis_of
            .get(alpha)
            .copied()
            .ok_or_else(|| LieError::NotInHierarchy(alpha.clone()))
    }

    /// `V_[α]` for `α ∈ A_m` as a basis combination.
    pub fn express(&self, alpha: &MultiIndex) -> Result<Combination, LieError> {
        Ok(self
            .basis_ref(alpha)?
            .map(|r| Combination::from([(r.index, Expr::constant(r.sign))]))
            .unwrap_or_default())
    }

    /// Indices `α'∗i` with `α' ∈ A_m`, `‖α'∗i‖ > m`: the rows a certificate must cover.
    pub fn overflow_rows(&self) -> Vec<MultiIndex> {
        let mut rows = Vec::new();
        for a in self.a_m() {
            for i in 0..=self.d() as u8 {
                let r = a.push(i);
                if r.length() > self.m {
                    rows.push(r);
                }
            }
        }
        sort_rows(&mut rows);
        rows
    }

    /// Second-order rows `α∗j∗j` (`j ≥ 1`) whose middle index `α∗j` already overflows.
    pub fn extended_rows(&self) -> Vec<MultiIndex> {
        let mut rows = Vec::new();
        for a in self.a_m() {
            for j in 1..=self.d() as u8 {
                if a.length() + 1 > self.m {
                    rows.push(a.push(j).push(j));
                }
            }
        }
        sort_rows(&mut rows);
        rows
    }

    /// Index ‖α‖ of basis element `b`'s representative.
    pub fn basis_level(&self, b: usize) -> usize {
        self.basis[b].rep.length()
    }
}

fn sort_rows(rows: &mut Vec<MultiIndex>) {
    rows.sort_by(|a, b| a.length().cmp(&b.length()).then_with(|| a.cmp(b)));
    rows.dedup();
}

/// `Λ_j V_[α]`: the bracket itself when `‖α∗j‖ ≤ m`, otherwise the certificate row.
pub fn apply_lambda_j(
    h: &BracketHierarchy,
    cert: &UfgCertificate,
    j: u8,
    alpha: &MultiIndex,
) -> Result<Combination, LieError> {
    let target = alpha.push(j);
    if h.get(alpha).is_some_and(VectorField::is_structurally_zero) {
        return Ok(Combination::new());
    }
    if target.length() <= h.m() {
        return h.express(&target);
    }
    cert.row(&target)
        .cloned()
        .ok_or(LieError::MissingRow(target))
}

/// Evaluates a combination as a vector field.
pub fn combination_field(h: &BracketHierarchy, comb: &Combination) -> VectorField {
    comb.iter().fold(VectorField::zero(h.dim()), |acc, (b, c)| {
        acc.add(&h.basis()[*b].field.scale(c))
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::testgen;
    use proptest::prelude::*;

    fn field(dim: usize) -> impl Strategy<Value = VectorField> {
        prop::collection::vec(testgen::poly(dim, 3, 3), dim).prop_map(VectorField::new)
    }

    fn triple() -> impl Strategy<Value = (VectorField, VectorField, VectorField)> {
        (1usize..=4).prop_flat_map(|n| (field(n), field(n), field(n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn antisymmetry_and_jacobi((u, v, w) in triple()) {
            let uv = bracket(&u, &v).unwrap();
            prop_assert!(uv.add(&bracket(&v, &u).unwrap()).is_structurally_zero());
            let j = bracket(&u, &bracket(&v, &w).unwrap()).unwrap()
                .add(&bracket(&v, &bracket(&w, &u).unwrap()).unwrap())
                .add(&bracket(&w, &uv).unwrap());
            prop_assert!(j.is_structurally_zero());
        }

        #[test]
        fn bracket_is_the_operator_commutator(
            (v, w) in (1usize..=3).prop_flat_map(|n| (field(n), field(n))),
            seed in 0u64..1000,
        ) {
            let n = v.dim();
            let f = testgen_fn(n, seed);
            let lhs = &v.apply(&w.apply(&f)) - &w.apply(&v.apply(&f));
            prop_assert_eq!(bracket(&v, &w).unwrap().apply(&f), lhs);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn leibniz_for_operator_commutators(
            (x, y, z) in (1usize..=3).prop_flat_map(|n| (field(n), field(n), field(n))),
            seed in 0u64..1000,
        ) {
            // [X, YZ] = [X, Y]Z + Y[X, Z] as operators on a polynomial f
            let f = testgen_fn(x.dim(), seed);
            let op = |a: &VectorField, g: &Expr| a.apply(g);
            let yz = |g: &Expr| op(&y, &op(&z, g));
            let lhs = &op(&x, &yz(&f)) - &yz(&op(&x, &f));
            let xy = bracket(&x, &y).unwrap();
            let xz = bracket(&x, &z).unwrap();
            let rhs = &xy.apply(&op(&z, &f)) + &op(&y, &xz.apply(&f));
            prop_assert_eq!(lhs, rhs);
        }
    }

    fn testgen_fn(n: usize, seed: u64) -> Expr {
        use proptest::strategy::ValueTree;
        use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&seed.to_le_bytes());
        let mut runner = TestRunner::new_with_rng(
            Config::default(),
            TestRng::from_seed(RngAlgorithm::ChaCha, &bytes),
        );
        testgen::poly(n, 3, 4)
            .new_tree(&mut runner)
            .unwrap()
            .current()
    }
}
