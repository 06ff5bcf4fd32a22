//! Result artifacts: `report.txt`, `coefficients.csv`, `thetas.csv`,
//! `curve.csv` and the reloadable `model.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DesignIndex, ModelKind};
use crate::error::{Error, Result};
use crate::io::csv::CsvSchema;
use crate::io::write_atomic;
use crate::stats::FitResult;
use crate::train::TrainingCurve;

pub const COEFFICIENTS_HEADER: &str = "variable,alternative,beta,std_err,robust_std_err,significant";

/// How the standard errors in a report were computed.
pub const SE_CONVENTION: &str = "sqrt(diag((-H)^-1)) of the total training-sample log-likelihood Hessian \
     over beta with layer matrices fixed, not divided by N; robust = sandwich (-H)^-1 B (-H)^-1";

/// A fitted model together with the CSV layout it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: CsvSchema,
    pub fit: FitResult,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Beta layout of a fit, rebuilt without the dataset.
pub fn fit_design(fit: &FitResult) -> Result<DesignIndex> {
    DesignIndex::new(
        fit.alt_names.len(),
        &fit.spec,
        (0..fit.spec.variables.len()).collect(),
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn coefficients_csv(fit: &FitResult) -> Result<String> {
    let design = fit_design(fit)?;
    let mut out = String::from(COEFFICIENTS_HEADER);
    out.push('\n');
    for (b, &beta) in fit.params.beta.iter().enumerate() {
        let (slot, alt) = design.pair(b).expect("beta index within layout");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            design.slot_name(slot),
            fit.alt_names[alt],
            beta,
            opt(fit.std_err[b]),
            opt(fit.robust_std_err[b]),
            fit.significant[b]
        ));
    }
    Ok(out)
}

/// Layer matrices, one entry per line.
pub fn thetas_csv(fit: &FitResult) -> String {
    let mut out = String::from("layer,row,col,value\n");
    for (m, t) in fit.params.thetas.iter().enumerate() {
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                out.push_str(&format!("{},{},{},{}\n", m + 1, r, c, t[(r, c)]));
            }
        }
    }
    out
}

/// Line-oriented `key: value` summary followed by the configuration echo.
pub fn report_text(fit: &FitResult, echo: &[String]) -> String {
    let standardization = if fit.standardizer.scales.iter().all(|&s| s == 1.0)
        && fit.standardizer.means.iter().all(|&m| m == 0.0)
    {
        "none"
    } else if fit.spec.include_asc {
        "z-score on the training split; coefficients reported in raw units"
    } else {
        "scaled by training-split standard deviation; coefficients reported in raw units"
    };
    let mut lines = vec![
        format!("model: {}", fit.kind.name()),
        format!("depth: {}", fit.kind.depth()),
        format!("label: {}", fit.kind),
        format!("alternatives: {}", fit.alt_names.join(", ")),
        format!("n_parameters: {}", fit.n_parameters),
        format!("n_beta: {}", fit.params.beta.len()),
        format!("n_train: {}", fit.n_train),
        format!("n_validation: {}", fit.n_validation),
        format!("log_likelihood: {}", fit.final_ll),
        format!("validation_log_likelihood: {}", fit.validation_ll),
        format!("aic: {}", fit.aic),
        format!("validation_accuracy: {}", fit.validation_accuracy),
        format!("validation_error: {}", 1.0 - fit.validation_accuracy),
        format!("best_iteration: {}", fit.best_iteration),
        format!("iterations_run: {}", fit.iterations_run),
        format!("stop_reason: {}", fit.stop.as_str()),
        format!("standard_errors: {SE_CONVENTION}"),
        format!("standardization: {standardization}"),
        format!(
            "flagged_std_errors: {}",
            fit.std_err.iter().filter(|s| s.is_none()).count()
        ),
    ];
    if let ModelKind::ResLogit(_) = fit.kind {
        let drift: f64 = fit
            .params
            .thetas
            .iter()
            .map(|t| (t - nalgebra::DMatrix::<f64>::identity(t.nrows(), t.ncols())).norm())
            .sum();
        lines.push(format!("theta_drift_from_identity: {drift}"));
    }
    lines.extend(echo.iter().map(|l| format!("config: {l}")));
    lines.join("\n") + "\n"
}

/// Writes every training artifact into `dir` and returns the paths written.
pub fn write_training_outputs(
    dir: &Path,
    fit: &FitResult,
    curve: &TrainingCurve,
    schema: &CsvSchema,
    echo: &[String],
) -> Result<Vec<PathBuf>> {
    let model = ModelFile {
        schema: schema.clone(),
        fit: fit.clone(),
    };
    let mut files = vec![
        ("curve.csv", curve.to_csv()),
        ("coefficients.csv", coefficients_csv(fit)?),
        ("report.txt", report_text(fit, echo)),
        ("model.json", model.to_json()?),
    ];
    if fit.kind.depth() > 0 {
        files.push(("thetas.csv", thetas_csv(fit)));
    }
    let mut written = Vec::new();
    for (name, contents) in files {
        let p = dir.join(name);
        write_atomic(&p, &contents)?;
        written.push(p);
    }
    Ok(written)
}

/// Parses `key: value` lines of a report, skipping the configuration echo.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with("config: "))
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
