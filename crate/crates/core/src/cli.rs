//! Subcommand implementations behind the `reslogit` binary.
//!
//! Each command returns the text to print on stdout; artifacts are written
//! into the configured output directory.

use std::path::{Path, PathBuf};

use crate::data::{build_design, Dataset, UtilitySpec};
use crate::error::{Error, Result};
use crate::io::config::{parse_config, RunConfig};
use crate::io::csv::load_csv;
use crate::io::report::{write_training_outputs, ModelFile};
use crate::io::write_atomic;
use crate::stats::elasticity::{elasticity_report, sensitivity_ratios};
use crate::{math, model, redbus, stats, train};

/// Reads a configuration and applies command-line overrides.
pub fn load_run_config(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = parse_config(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = std::path::absolute(o).map_err(|e| Error::io(o, e))?;
    }
    Ok(cfg)
}

/// Fits the configured model and writes `curve.csv`, `coefficients.csv`,
/// `report.txt`, `model.json` and, for layered models, `thetas.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let (data, schema) = load_csv(&cfg.dataset, &cfg.schema)?;
    let spec = UtilitySpec::new(
        schema.design_variables(cfg.include_asc),
        cfg.reference_index(data.alt_names())?,
        cfg.include_asc,
    );
    let out = train::train(&data, &spec, cfg.kind, &cfg.train)?;
    let written = write_training_outputs(&cfg.output_dir, &out.fit, &out.curve, &schema, &cfg.echo())?;
    let fit = &out.fit;
    Ok(format!(
        "model: {}\nlog_likelihood: {}\nvalidation_log_likelihood: {}\naic: {}\nvalidation_accuracy: {}\n{}",
        fit.kind,
        fit.final_ll,
        fit.validation_ll,
        fit.aic,
        fit.validation_accuracy,
        listing(&written)
    ))
}

fn listing(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| format!("wrote {}\n", p.display()))
        .collect()
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model_file
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("model.json"))
}

/// Loads the trained model and the dataset to score with it: the
/// evaluation dataset when configured, the training dataset otherwise.
fn model_and_data(cfg: &RunConfig) -> Result<(ModelFile, Dataset)> {
    let model = ModelFile::load(&model_path(cfg))?;
    let path = cfg.eval_dataset.as_ref().unwrap_or(&cfg.dataset);
    let (data, _) = load_csv(path, &model.schema)?;
    Ok((model, data))
}

/// Scores a dataset with a saved model; writes `evaluation.txt` and
/// `predictions.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<String> {
    let (m, data) = model_and_data(cfg)?;
    let fit = &m.fit;
    let design = build_design(&data, &fit.spec)?;
    let ll = model::log_likelihood(&fit.params, &data, &design, fit.kind)?;
    let acc = stats::accuracy(&fit.params, &data, &design, fit.kind)?;
    let probs = model::predict(&fit.params, &data, &design, fit.kind)?;

    let mut w = ::csv::Writer::from_writer(Vec::new());
    let mut header = vec!["observation".to_string(), "chosen".into(), "predicted".into()];
    header.extend(data.alt_names().iter().map(|a| format!("p_{a}")));
    let to_err = |e: ::csv::Error| Error::InvalidDataset(e.to_string());
    w.write_record(&header).map_err(to_err)?;
    for (n, p) in probs.iter().enumerate() {
        let mut rec = vec![
            n.to_string(),
            data.alt_names()[data.choice(n)].clone(),
            data.alt_names()[math::argmax(p)].clone(),
        ];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(to_err)?;
    }
    let predictions = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidDataset(e.to_string()))?)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;

    let summary = format!(
        "model: {}\nn_obs: {}\nlog_likelihood: {}\naccuracy: {}\nerror: {}\n",
        fit.kind.name(),
        data.n_obs(),
        ll,
        acc,
        1.0 - acc
    );
    let files = [
        (cfg.output_dir.join("evaluation.txt"), summary.clone()),
        (cfg.output_dir.join("predictions.csv"), predictions),
    ];
    for (p, text) in &files {
        write_atomic(p, text)?;
    }
    let paths: Vec<PathBuf> = files.into_iter().map(|(p, _)| p).collect();
    Ok(summary + &listing(&paths))
}

/// Point and arc elasticities of `elasticity_variable`, plus sensitivity
/// ratios when `sensitivity_variable` is set.
pub fn cmd_elasticity(cfg: &RunConfig) -> Result<String> {
    if cfg.elasticity_variable.is_none() && cfg.sensitivity_variable.is_none() {
        return Err(Error::config(
            "elasticity_variable",
            "set elasticity_variable or sensitivity_variable",
        ));
    }
    let (m, data) = model_and_data(cfg)?;
    let fit = &m.fit;
    let design = build_design(&data, &fit.spec)?;
    let mut files = Vec::new();
    let mut text = String::new();
    if let Some(var) = &cfg.elasticity_variable {
        let r = elasticity_report(
            &fit.params,
            &data,
            &design,
            fit.kind,
            var,
            &cfg.elasticity_grid,
            cfg.elasticity_weighting,
        )?;
        text.push_str(&r.point_csv());
        files.push((cfg.output_dir.join("elasticity_point.csv"), r.point_csv()));
        files.push((cfg.output_dir.join("elasticity_arc.csv"), r.arc_csv()));
    }
    if let Some(var) = &cfg.sensitivity_variable {
        let t = sensitivity_ratios(&fit.params, &data, &design, var, &cfg.sensitivity_dummies)?;
        text.push_str(&t.to_csv());
        files.push((cfg.output_dir.join("sensitivity.csv"), t.to_csv()));
    }
    for (p, contents) in &files {
        write_atomic(p, contents)?;
    }
    let paths: Vec<PathBuf> = files.into_iter().map(|(p, _)| p).collect();
    Ok(text + &listing(&paths))
}

/// Prints the red/blue bus table; fails if it drifts from the published one.
pub fn cmd_demo_redbus() -> Result<String> {
    redbus::run()
}
