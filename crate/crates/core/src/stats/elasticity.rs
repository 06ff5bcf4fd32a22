//! Point and arc elasticities of choice probabilities, and sensitivity
//! ratios for dummy variables.
//!
//! Derivatives are taken through the whole forward graph, layers included:
//! the adjoint `e_i - P` of `ln P_i` is carried back to `V` and contracted
//! with the variable's coefficients.

use crate::data::{Dataset, DesignIndex, ModelKind, Parameters, Slot};
use crate::error::{Error, Result};
use crate::grad::backprop_layers;
use crate::model::{self, Tape};
use crate::par;

/// How per-observation elasticities are combined into one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Sample mean.
    #[default]
    Mean,
    /// Weighted by each observation's probability of the alternative.
    ProbabilityWeighted,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "probability" | "probability_weighted" => Ok(Aggregation::ProbabilityWeighted),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::ProbabilityWeighted => "probability_weighted",
        }
    }
}

/// Design slot and dataset column of a continuous variable.
fn continuous_variable(data: &Dataset, design: &DesignIndex, variable: &str) -> Result<(usize, usize)> {
    let v = design
        .variable_names()
        .iter()
        .position(|n| n == variable)
        .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
    let col = design.columns()[v];
    if data.is_dummy_column(col) {
        return Err(Error::InvalidArgument(format!(
            "`{variable}` is a 0/1 dummy; its elasticity is undefined, use sensitivity ratios"
        )));
    }
    Ok((v, col))
}

fn underflow(n: usize, alt: usize) -> Error {
    Error::ProbabilityUnderflow {
        observation: n,
        alternative: alt,
    }
}

/// Probabilities and `∂ ln P_i / ∂x` for every observation and alternative.
fn log_derivatives(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    v: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    params.validate(design, kind)?;
    let j = design.n_alts();
    let coef: Vec<f64> = (0..j)
        .map(|alt| model::coefficient(params, design, Slot::Variable(v), alt))
        .collect();
    let parts = par::map_chunks(data.n_obs(), |range| {
        let mut tape = Tape::new(j, kind.depth());
        let mut adjoint = vec![0.0; j];
        range
            .map(|n| {
                tape.run(params, data.row(n), design, kind)?;
                let probs: Vec<f64> = tape.log_probs.iter().map(|l| l.exp()).collect();
                let mut d = vec![0.0; j];
                for (i, di) in d.iter_mut().enumerate() {
                    for (a, p) in adjoint.iter_mut().zip(&probs) {
                        *a = -p;
                    }
                    adjoint[i] += 1.0;
                    backprop_layers(&tape, &params.thetas, kind, &mut adjoint, None)?;
                    *di = adjoint.iter().zip(&coef).map(|(a, b)| a * b).sum();
                }
                Ok((probs, d))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.concat())
}

/// `∂P_i/∂x` for every observation (rows) and alternative (columns).
pub fn probability_derivatives(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
) -> Result<Vec<Vec<f64>>> {
    let v = design
        .variable_names()
        .iter()
        .position(|n| n == variable)
        .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
    Ok(log_derivatives(params, data, design, kind, v)?
        .into_iter()
        .map(|(p, d)| p.iter().zip(&d).map(|(p, d)| p * d).collect())
        .collect())
}

/// Per-observation point elasticities `∂P_i/∂x · x / P_i`.
pub fn point_elasticities(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
) -> Result<Vec<Vec<f64>>> {
    let (v, col) = continuous_variable(data, design, variable)?;
    let rows = log_derivatives(params, data, design, kind, v)?;
    rows.into_iter()
        .enumerate()
        .map(|(n, (p, d))| {
            if let Some(i) = p.iter().position(|&p| p == 0.0) {
                return Err(underflow(n, i));
            }
            let x = data.row(n)[col];
            Ok(d.iter().map(|d| d * x).collect())
        })
        .collect()
}

fn aggregate(values: &[f64], weights: &[f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::ProbabilityWeighted => {
            let total: f64 = weights.iter().sum();
            values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
        }
    }
}

/// Aggregate point elasticity of alternative `alternative`.
pub fn point_elasticity(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
    alternative: usize,
    how: Aggregation,
) -> Result<f64> {
    Ok(point_summary(params, data, design, kind, variable, how)?[check_alt(design, alternative)?])
}

fn check_alt(design: &DesignIndex, alternative: usize) -> Result<usize> {
    if alternative >= design.n_alts() {
        return Err(Error::InvalidArgument(format!(
            "alternative {alternative} out of range for {} alternatives",
            design.n_alts()
        )));
    }
    Ok(alternative)
}

fn point_summary(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
    how: Aggregation,
) -> Result<Vec<f64>> {
    if data.n_obs() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let (v, col) = continuous_variable(data, design, variable)?;
    let rows = log_derivatives(params, data, design, kind, v)?;
    let j = design.n_alts();
    let mut out = Vec::with_capacity(j);
    for i in 0..j {
        let mut e = Vec::with_capacity(rows.len());
        let mut w = Vec::with_capacity(rows.len());
        for (n, (p, d)) in rows.iter().enumerate() {
            if p[i] == 0.0 {
                return Err(underflow(n, i));
            }
            e.push(d[i] * data.row(n)[col]);
            w.push(p[i]);
        }
        out.push(aggregate(&e, &w, how));
    }
    Ok(out)
}

/// Arc elasticities `(P(x(1+δ)) - P(x)) / (δ·P(x))` of every alternative,
/// with `δ = delta_pct / 100`.
#[allow(clippy::too_many_arguments)]
fn arc_summary(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    col: usize,
    base: &[Vec<f64>],
    delta_pct: f64,
    how: Aggregation,
) -> Result<Vec<f64>> {
    if delta_pct == 0.0 || !delta_pct.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "arc change must be a non-zero percentage, got {delta_pct}"
        )));
    }
    let delta = delta_pct / 100.0;
    let moved = data.map_column(col, |x| x * (1.0 + delta));
    let after = model::predict(params, &moved, design, kind)?;
    let j = design.n_alts();
    let mut out = Vec::with_capacity(j);
    for i in 0..j {
        let mut e = Vec::with_capacity(base.len());
        let mut w = Vec::with_capacity(base.len());
        for (n, (p0, p1)) in base.iter().zip(&after).enumerate() {
            if p0[i] == 0.0 {
                return Err(underflow(n, i));
            }
            e.push((p1[i] - p0[i]) / (delta * p0[i]));
            w.push(p0[i]);
        }
        out.push(aggregate(&e, &w, how));
    }
    Ok(out)
}

/// Aggregate arc elasticity of `alternative` for a `delta_pct` percent change.
#[allow(clippy::too_many_arguments)]
pub fn arc_elasticity(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
    alternative: usize,
    delta_pct: f64,
    how: Aggregation,
) -> Result<f64> {
    let alternative = check_alt(design, alternative)?;
    let (_, col) = continuous_variable(data, design, variable)?;
    let base = model::predict(params, data, design, kind)?;
    Ok(arc_summary(params, data, design, kind, col, &base, delta_pct, how)?[alternative])
}

/// Symmetric default grid: ±10%, ±20%, … ±50%.
pub fn default_grid() -> Vec<f64> {
    vec![-50.0, -40.0, -30.0, -20.0, -10.0, 10.0, 20.0, 30.0, 40.0, 50.0]
}

/// Point and arc elasticities of one variable for every alternative.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticityReport {
    pub variable: String,
    pub alt_names: Vec<String>,
    pub aggregation: Aggregation,
    /// One entry per alternative.
    pub point: Vec<f64>,
    /// Percent changes, symmetric around 0.
    pub grid: Vec<f64>,
    /// `arc[g][j]`: alternative `j` at grid point `g`.
    pub arc: Vec<Vec<f64>>,
}

impl ElasticityReport {
    pub fn point_csv(&self) -> String {
        let mut out = String::from("variable,alternative,point_elasticity\n");
        for (name, e) in self.alt_names.iter().zip(&self.point) {
            out.push_str(&format!("{},{},{}\n", self.variable, name, e));
        }
        out
    }

    pub fn arc_csv(&self) -> String {
        let mut out = String::from("variable,alternative,delta_pct,arc_elasticity\n");
        for (d, row) in self.grid.iter().zip(&self.arc) {
            for (name, e) in self.alt_names.iter().zip(row) {
                out.push_str(&format!("{},{},{},{}\n", self.variable, name, d, e));
            }
        }
        out
    }
}

/// Builds an [`ElasticityReport`] over `grid`.
///
/// The grid must be symmetric around 0 and exclude 0.
pub fn elasticity_report(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    variable: &str,
    grid: &[f64],
    how: Aggregation,
) -> Result<ElasticityReport> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let symmetric = sorted
        .iter()
        .zip(sorted.iter().rev())
        .all(|(a, b)| a == &-b);
    if grid.is_empty() || !symmetric {
        return Err(Error::InvalidArgument(
            "elasticity grid must be non-empty and symmetric around 0".into(),
        ));
    }
    let point = point_summary(params, data, design, kind, variable, how)?;
    let (_, col) = continuous_variable(data, design, variable)?;
    let base = model::predict(params, data, design, kind)?;
    let arc = sorted
        .iter()
        .map(|&d| arc_summary(params, data, design, kind, col, &base, d, how))
        .collect::<Result<Vec<_>>>()?;
    Ok(ElasticityReport {
        variable: variable.to_string(),
        alt_names: data.alt_names().to_vec(),
        aggregation: how,
        point,
        grid: sorted,
        arc,
    })
}

/// Ratios `(β_a,j · mean x_a) / (β_d,j · mean x_d)` for each dummy `d` and
/// alternative `j`, with the population standard deviation across dummies.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTable {
    pub variable: String,
    pub dummies: Vec<String>,
    pub alt_names: Vec<String>,
    /// `ratios[d][j]`; `None` where the denominator is zero.
    pub ratios: Vec<Vec<Option<f64>>>,
    /// Per alternative, over the dummies with a defined ratio.
    pub std_dev: Vec<Option<f64>>,
}

impl SensitivityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dummy");
        for a in &self.alt_names {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        let cell = |v: &Option<f64>| v.map_or(String::from("NA"), |v| v.to_string());
        for (d, row) in self.dummies.iter().zip(&self.ratios) {
            out.push_str(d);
            for v in row {
                out.push(',');
                out.push_str(&cell(v));
            }
            out.push('\n');
        }
        out.push_str("std_dev");
        for v in &self.std_dev {
            out.push(',');
            out.push_str(&cell(v));
        }
        out.push('\n');
        out
    }
}

pub fn sensitivity_ratios(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    variable_a: &str,
    dummies: &[String],
) -> Result<SensitivityTable> {
    if data.n_obs() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let slot = |name: &str| {
        design
            .variable_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    };
    let mean = |col: usize| data.column(col).sum::<f64>() / data.n_obs() as f64;
    let a = slot(variable_a)?;
    let mean_a = mean(design.columns()[a]);
    let j = design.n_alts();
    let mut ratios = Vec::with_capacity(dummies.len());
    for d in dummies {
        let s = slot(d)?;
        let col = design.columns()[s];
        if !data.is_dummy_column(col) {
            return Err(Error::InvalidArgument(format!("`{d}` is not a 0/1 dummy")));
        }
        let mean_d = mean(col);
        let row = (0..j)
            .map(|alt| {
                let num = model::coefficient(params, design, Slot::Variable(a), alt) * mean_a;
                let den = model::coefficient(params, design, Slot::Variable(s), alt) * mean_d;
                (den != 0.0).then(|| num / den)
            })
            .collect();
        ratios.push(row);
    }
    let std_dev = (0..j)
        .map(|alt| {
            let vals: Vec<f64> = ratios.iter().filter_map(|r: &Vec<Option<f64>>| r[alt]).collect();
            if vals.is_empty() {
                return None;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            Some((vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt())
        })
        .collect();
    Ok(SensitivityTable {
        variable: variable_a.to_string(),
        dummies: dummies.to_vec(),
        alt_names: data.alt_names().to_vec(),
        ratios,
        std_dev,
    })
}
