//! Browser bindings for three interactive views of the residual logit model.
//!
//! Every export returns a flat `Float64Array`; the page in `www/` unpacks it.

use reslogit::data::{build_design, Dataset, DesignIndex, ModelKind, Parameters, UtilitySpec};
use reslogit::grad::{grad_loglik, mlp_grad};
use reslogit::model::{residual_forward, MlpParams};
use reslogit::nalgebra::DMatrix;
use reslogit::stats::elasticity::{arc_elasticity, Aggregation};
use wasm_bindgen::prelude::*;

fn js(e: reslogit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One residual layer on utilities `v` with row-major `theta` (`J×J`).
///
/// Returns `g` followed by the choice probabilities, `2J` values.
#[wasm_bindgen]
pub fn residual_layer(theta: &[f64], v: &[f64]) -> Result<Vec<f64>, JsError> {
    let j = v.len();
    if theta.len() != j * j {
        return Err(JsError::new(&format!("theta needs {} entries, got {}", j * j, theta.len())));
    }
    let t = residual_forward(&[DMatrix::from_row_slice(j, j, theta)], v).map_err(js)?;
    Ok(t.g.into_iter().chain(t.probs).collect())
}

const MODES: [&str; 3] = ["car", "red bus", "blue bus"];
const SAMPLE: usize = 200;

/// Car, red bus and blue bus with one trip-time variable spread over
/// `[0.5, 3]`; the buses share a time coefficient.
fn bus_sample() -> (Dataset, DesignIndex) {
    let time = (0..SAMPLE).map(|n| 0.5 + 2.5 * n as f64 / (SAMPLE - 1) as f64).collect();
    let data = Dataset::new(
        vec!["time".into()],
        time,
        (0..SAMPLE).map(|n| n % 3).collect(),
        MODES.iter().map(|m| m.to_string()).collect(),
    )
    .expect("valid sample");
    let design = build_design(&data, &UtilitySpec::new(vec!["time".into()], 0, true)).expect("valid design");
    (data, design)
}

/// Bus parameters: ASCs, time coefficients, and one layer whose red/blue
/// entries are `cross`.
fn bus_model(beta_time: f64, cross: f64) -> Parameters {
    let theta = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, cross, 0.0, cross, 0.0]);
    Parameters::new(vec![0.5, 0.5, beta_time, beta_time], vec![theta]).expect("finite parameters")
}

/// Arc elasticities of each mode to a percentage change in trip time, over
/// `steps` changes evenly spaced on `[-max_pct, max_pct]` without zero.
///
/// Returns rows of `(delta_pct, car, red bus, blue bus)`.
#[wasm_bindgen]
pub fn arc_curve(beta_time: f64, cross: f64, max_pct: f64, steps: u32) -> Result<Vec<f64>, JsError> {
    if !(max_pct > 0.0) || steps < 2 {
        return Err(JsError::new("need max_pct > 0 and at least two steps"));
    }
    let (data, design) = bus_sample();
    let params = bus_model(beta_time, cross);
    let kind = ModelKind::ResLogit(1);
    let mut out = Vec::new();
    for s in 0..steps {
        let delta = -max_pct + 2.0 * max_pct * s as f64 / (steps - 1) as f64;
        if delta.abs() < 1e-9 {
            continue;
        }
        out.push(delta);
        for alt in 0..3 {
            out.push(arc_elasticity(&params, &data, &design, kind, "time", alt, delta, Aggregation::Mean).map_err(js)?);
        }
    }
    Ok(out)
}

/// Norm of the beta gradient at depth `m` relative to depth zero, for a
/// residual stack with identity layers and an MLP whose weights are all
/// `weight`.
///
/// Returns rows of `(depth, residual ratio, mlp ratio)` for `m = 0..=max_depth`.
#[wasm_bindgen]
pub fn gradient_depth_profile(max_depth: u32, weight: f64) -> Result<Vec<f64>, JsError> {
    let (data, design) = bus_sample();
    let beta = vec![0.5, -0.2, -0.8, 0.3];
    let base = Parameters::new(beta.clone(), vec![]).map_err(js)?;
    let (_, g0) = grad_loglik(&base, &data, &design, ModelKind::Mnl).map_err(js)?;
    let norm0 = g0.beta_norm();
    let mut out = Vec::new();
    for m in 0..=max_depth as usize {
        let deep = Parameters::new(beta.clone(), vec![DMatrix::identity(3, 3); m]).map_err(js)?;
        let (_, rl) = grad_loglik(&deep, &data, &design, ModelKind::ResLogit(m)).map_err(js)?;
        let mlp = MlpParams {
            weights: vec![DMatrix::from_element(3, 3, weight); m],
        };
        let (_, g) = mlp_grad(&mlp, &beta, &data, &design).map_err(js)?;
        out.extend([m as f64, rl.beta_norm() / norm0, g.beta_norm() / norm0]);
    }
    Ok(out)
}
