//! Domain types shared by every model family: datasets, utility
//! specifications, the beta layout and parameter containers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A wide, one-row-per-observation choice dataset.
///
/// Attributes are stored row-major (`n_obs × n_vars`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    attribute_names: Vec<String>,
    attributes: Vec<f64>,
    choices: Vec<usize>,
    alt_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        attribute_names: Vec<String>,
        attributes: Vec<f64>,
        choices: Vec<usize>,
        alt_names: Vec<String>,
    ) -> Result<Self> {
        let n_alts = alt_names.len();
        if n_alts < 2 {
            return Err(Error::InvalidDataset(format!(
                "a choice set needs at least 2 alternatives, got {n_alts}"
            )));
        }
        let k = attribute_names.len();
        if attributes.len() != choices.len() * k {
            return Err(Error::DimensionMismatch {
                what: "attribute matrix",
                expected: choices.len() * k,
                found: attributes.len(),
            });
        }
        if let Some(pos) = attributes.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite attribute `{}` at observation {}",
                attribute_names[pos % k],
                pos / k
            )));
        }
        if let Some((n, &c)) = choices.iter().enumerate().find(|(_, &c)| c >= n_alts) {
            return Err(Error::InvalidDataset(format!(
                "observation {n} chose alternative {c}, but only {n_alts} exist"
            )));
        }
        for (i, name) in attribute_names.iter().enumerate() {
            if attribute_names[..i].contains(name) {
                return Err(Error::InvalidDataset(format!("duplicate attribute `{name}`")));
            }
        }
        Ok(Self {
            attribute_names,
            attributes,
            choices,
            alt_names,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.choices.len()
    }

    pub fn n_alts(&self) -> usize {
        self.alt_names.len()
    }

    pub fn n_vars(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn alt_names(&self) -> &[String] {
        &self.alt_names
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn choice(&self, n: usize) -> usize {
        self.choices[n]
    }

    /// Attribute row of observation `n`.
    pub fn row(&self, n: usize) -> &[f64] {
        let k = self.n_vars();
        &self.attributes[n * k..(n + 1) * k]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|a| a == name)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        let k = self.n_vars();
        self.attributes.iter().skip(col).step_by(k).copied()
    }

    /// New dataset holding the given observations, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let k = self.n_vars();
        let mut attributes = Vec::with_capacity(indices.len() * k);
        let mut choices = Vec::with_capacity(indices.len());
        for &n in indices {
            attributes.extend_from_slice(self.row(n));
            choices.push(self.choices[n]);
        }
        Dataset {
            attribute_names: self.attribute_names.clone(),
            attributes,
            choices,
            alt_names: self.alt_names.clone(),
        }
    }

    /// Copy with one column transformed element-wise.
    pub fn map_column(&self, col: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let k = self.n_vars();
        let mut out = self.clone();
        for v in out.attributes.iter_mut().skip(col).step_by(k) {
            *v = f(*v);
        }
        out
    }

    /// True if every value of the column is exactly 0 or 1.
    pub fn is_dummy_column(&self, col: usize) -> bool {
        self.column(col).all(|v| v == 0.0 || v == 1.0)
    }
}

/// Which variables enter the utilities and how the alternatives are normalized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub variables: Vec<String>,
    /// Alternative whose coefficients and constant are fixed at zero.
    pub reference_alt: usize,
    pub include_asc: bool,
}

impl UtilitySpec {
    pub fn new(variables: Vec<String>, reference_alt: usize, include_asc: bool) -> Self {
        Self {
            variables,
            reference_alt,
            include_asc,
        }
    }

    /// Number of coefficient slots per non-reference alternative.
    pub fn n_slots(&self) -> usize {
        self.variables.len() + usize::from(self.include_asc)
    }

    pub fn beta_len(&self, n_alts: usize) -> usize {
        self.n_slots() * n_alts.saturating_sub(1)
    }
}

/// One coefficient slot: the constant or a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Asc,
    /// Position in [`UtilitySpec::variables`].
    Variable(usize),
}

/// Precomputed mapping between `(slot, alternative)` pairs and beta indices.
///
/// Layout is slot-major: the ASC slot first (when enabled), then the
/// variables in spec order; inside each slot the non-reference alternatives
/// in increasing index order. Reference-alternative coefficients have no
/// index and are implicitly zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignIndex {
    n_alts: usize,
    reference_alt: usize,
    include_asc: bool,
    variable_names: Vec<String>,
    /// Dataset column for each variable slot.
    columns: Vec<usize>,
}

/// Validates `spec` against `dataset` and precomputes the beta layout.
pub fn build_design(dataset: &Dataset, spec: &UtilitySpec) -> Result<DesignIndex> {
    let columns = spec
        .variables
        .iter()
        .map(|v| {
            dataset
                .column_index(v)
                .ok_or_else(|| Error::UnknownVariable(v.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    DesignIndex::new(dataset.n_alts(), spec, columns)
}

impl DesignIndex {
    pub fn new(n_alts: usize, spec: &UtilitySpec, columns: Vec<usize>) -> Result<Self> {
        if spec.reference_alt >= n_alts {
            return Err(Error::ReferenceOutOfRange {
                index: spec.reference_alt,
                n_alts,
            });
        }
        if columns.len() != spec.variables.len() {
            return Err(Error::DimensionMismatch {
                what: "design columns",
                expected: spec.variables.len(),
                found: columns.len(),
            });
        }
        Ok(Self {
            n_alts,
            reference_alt: spec.reference_alt,
            include_asc: spec.include_asc,
            variable_names: spec.variables.clone(),
            columns,
        })
    }

    pub fn n_alts(&self) -> usize {
        self.n_alts
    }

    pub fn reference_alt(&self) -> usize {
        self.reference_alt
    }

    pub fn include_asc(&self) -> bool {
        self.include_asc
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn n_slots(&self) -> usize {
        self.columns.len() + usize::from(self.include_asc)
    }

    pub fn beta_len(&self) -> usize {
        self.n_slots() * (self.n_alts - 1)
    }

    fn slot_offset(&self, slot: Slot) -> Option<usize> {
        match slot {
            Slot::Asc if self.include_asc => Some(0),
            Slot::Asc => None,
            Slot::Variable(v) if v < self.columns.len() => {
                Some(v + usize::from(self.include_asc))
            }
            Slot::Variable(_) => None,
        }
    }

    /// Beta index of `(slot, alt)`, or `None` for the reference alternative.
    pub fn index(&self, slot: Slot, alt: usize) -> Option<usize> {
        if alt >= self.n_alts || alt == self.reference_alt {
            return None;
        }
        let rank = if alt < self.reference_alt { alt } else { alt - 1 };
        self.slot_offset(slot)
            .map(|s| s * (self.n_alts - 1) + rank)
    }

    /// Inverse of [`DesignIndex::index`].
    pub fn pair(&self, index: usize) -> Option<(Slot, usize)> {
        if index >= self.beta_len() {
            return None;
        }
        let per = self.n_alts - 1;
        let (s, rank) = (index / per, index % per);
        let alt = if rank < self.reference_alt { rank } else { rank + 1 };
        let slot = if self.include_asc && s == 0 {
            Slot::Asc
        } else {
            Slot::Variable(s - usize::from(self.include_asc))
        };
        Some((slot, alt))
    }

    /// Human-readable name of a slot.
    pub fn slot_name(&self, slot: Slot) -> &str {
        match slot {
            Slot::Asc => "ASC",
            Slot::Variable(v) => &self.variable_names[v],
        }
    }
}

/// Model family and depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "depth", rename_all = "lowercase")]
pub enum ModelKind {
    Mnl,
    ResLogit(usize),
    Mlp(usize),
}

impl ModelKind {
    pub fn depth(&self) -> usize {
        match *self {
            ModelKind::Mnl => 0,
            ModelKind::ResLogit(m) | ModelKind::Mlp(m) => m,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mnl => "mnl",
            ModelKind::ResLogit(_) => "reslogit",
            ModelKind::Mlp(_) => "mlp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Mnl => write!(f, "MNL"),
            ModelKind::ResLogit(m) => write!(f, "RL-{m}"),
            ModelKind::Mlp(m) => write!(f, "MLP-{m}"),
        }
    }
}

/// Total number of estimated parameters: beta plus `M·J²` layer entries.
pub fn count_parameters(spec: &UtilitySpec, kind: ModelKind, n_alts: usize) -> usize {
    spec.beta_len(n_alts) + kind.depth() * n_alts * n_alts
}

/// Beta block plus one `J×J` matrix per layer.
///
/// For ResLogit the matrices are the residual matrices; for the MLP they are
/// the hidden-layer weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub beta: Vec<f64>,
    pub thetas: Vec<DMatrix<f64>>,
}

impl Parameters {
    pub fn new(beta: Vec<f64>, thetas: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = Self { beta, thetas };
        if let Some(n) = p.thetas.first().map(|t| t.nrows()) {
            p.check_layers(n)?;
        }
        Ok(p)
    }

    pub fn zeros(beta_len: usize, depth: usize, n_alts: usize) -> Self {
        Self {
            beta: vec![0.0; beta_len],
            thetas: vec![DMatrix::zeros(n_alts, n_alts); depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_values(&self) -> usize {
        self.beta.len() + self.thetas.iter().map(|t| t.len()).sum::<usize>()
    }

    fn check_layers(&self, n_alts: usize) -> Result<()> {
        for (m, t) in self.thetas.iter().enumerate() {
            if t.nrows() != n_alts || t.ncols() != n_alts {
                return Err(Error::DimensionMismatch {
                    what: "layer matrix",
                    expected: n_alts,
                    found: if t.nrows() != n_alts { t.nrows() } else { t.ncols() },
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "layer matrix",
                    layer: Some(m + 1),
                });
            }
        }
        Ok(())
    }

    /// Checks shapes against a design and model kind.
    pub fn validate(&self, design: &DesignIndex, kind: ModelKind) -> Result<()> {
        if self.beta.len() != design.beta_len() {
            return Err(Error::DimensionMismatch {
                what: "beta",
                expected: design.beta_len(),
                found: self.beta.len(),
            });
        }
        if self.thetas.len() != kind.depth() {
            return Err(Error::DimensionMismatch {
                what: "layer count",
                expected: kind.depth(),
                found: self.thetas.len(),
            });
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "beta",
                layer: None,
            });
        }
        self.check_layers(design.n_alts())
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.thetas.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// All values flattened: beta first, then each layer column-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.beta.clone();
        for t in &self.thetas {
            out.extend(t.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (b, mut rest) = flat.split_at(self.beta.len());
        self.beta.copy_from_slice(b);
        for t in &mut self.thetas {
            let (head, tail) = rest.split_at(t.len());
            t.as_mut_slice().copy_from_slice(head);
            rest = tail;
        }
    }
}

/// Per-variable z-score transform applied before training.
///
/// Without an ASC the attributes are only scaled, because a per-alternative
/// shift could not be absorbed back into the utilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Fits means and standard deviations of the design columns on `data`.
    pub fn fit(data: &Dataset, design: &DesignIndex) -> Self {
        let n = data.n_obs().max(1) as f64;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for &c in design.columns() {
            let mean = if design.include_asc() {
                data.column(c).sum::<f64>() / n
            } else {
                0.0
            };
            let var = data.column(c).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self {
            columns: design.columns().to_vec(),
            means,
            scales,
        }
    }

    pub fn identity(design: &DesignIndex) -> Self {
        Self {
            columns: design.columns().to_vec(),
            means: vec![0.0; design.columns().len()],
            scales: vec![1.0; design.columns().len()],
        }
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        let k = data.n_vars();
        for ((&c, &mean), &sd) in self.columns.iter().zip(&self.means).zip(&self.scales) {
            for v in out.attributes.iter_mut().skip(c).step_by(k) {
                *v = (*v - mean) / sd;
            }
        }
        out
    }

    /// Linear map `T` with `beta_raw = T · beta_standardized`.
    pub fn beta_map(&self, design: &DesignIndex) -> DMatrix<f64> {
        let k = design.beta_len();
        let mut t = DMatrix::identity(k, k);
        for alt in 0..design.n_alts() {
            for v in 0..self.columns.len() {
                let Some(b) = design.index(Slot::Variable(v), alt) else {
                    continue;
                };
                t[(b, b)] = 1.0 / self.scales[v];
                if let Some(a) = design.index(Slot::Asc, alt) {
                    t[(a, b)] = -self.means[v] / self.scales[v];
                }
            }
        }
        t
    }

    /// Expresses standardized-scale parameters in raw attribute units.
    pub fn destandardize(&self, params: &Parameters, design: &DesignIndex) -> Parameters {
        let t = self.beta_map(design);
        let beta = &t * nalgebra::DVector::from_column_slice(&params.beta);
        Parameters {
            beta: beta.iter().copied().collect(),
            thetas: params.thetas.clone(),
        }
    }
}
