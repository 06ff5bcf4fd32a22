//! Post-estimation statistics: Hessian, classical and sandwich standard
//! errors, AIC and prediction accuracy.
//!
//! Standard errors cover the beta block only, with the layer matrices held
//! at their estimates. They are `sqrt(diag((-H)⁻¹))` of the total-sample
//! Hessian, with no division by the sample size.

pub mod elasticity;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{count_parameters, Dataset, DesignIndex, ModelKind, Parameters, Standardizer, UtilitySpec};
use crate::error::{Error, Result};
use crate::grad;
use crate::math;
use crate::model;
use crate::train::StopReason;

/// Two-sided 5% critical value of the standard normal.
pub const CRITICAL_Z: f64 = 1.959_963_984_540_054;

/// Central finite-difference step applied to the analytic gradient.
pub const HESSIAN_STEP: f64 = 1e-5;

/// Relative eigenvalue threshold below which `-H` is treated as singular.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

/// Everything reported about a fitted model.
///
/// `params` are in raw attribute units; `standardizer` records the scaling
/// used during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub spec: UtilitySpec,
    pub alt_names: Vec<String>,
    pub params: Parameters,
    pub standardizer: Standardizer,
    /// Training-set log-likelihood at the selected snapshot.
    pub final_ll: f64,
    pub validation_ll: f64,
    pub aic: f64,
    pub n_parameters: usize,
    /// `None` where `-H` is singular along that coordinate.
    pub std_err: Vec<Option<f64>>,
    pub robust_std_err: Vec<Option<f64>>,
    /// `|β / std_err| > 1.96`.
    pub significant: Vec<bool>,
    pub validation_accuracy: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub stop: StopReason,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Loop bookkeeping handed over by the trainer.
#[derive(Clone, Copy, Debug)]
pub struct FitProgress {
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub stop: StopReason,
}

/// Builds a [`FitResult`] from a standardized-scale snapshot.
#[allow(clippy::too_many_arguments)]
pub fn summarize_fit(
    params: &Parameters,
    train_set: &Dataset,
    valid_set: &Dataset,
    design: &DesignIndex,
    spec: &UtilitySpec,
    kind: ModelKind,
    standardizer: &Standardizer,
    progress: FitProgress,
) -> Result<FitResult> {
    let final_ll = model::log_likelihood(params, train_set, design, kind)?;
    let validation_ll = model::log_likelihood(params, valid_set, design, kind)?;
    let validation_accuracy = accuracy(params, valid_set, design, kind)?;

    let h = hessian(params, train_set, design, kind)?;
    let scores = grad::beta_scores(params, train_set, design, kind)?;
    let t = standardizer.beta_map(design);
    let classical = covariance(&h)?;
    let robust = sandwich(&classical, &scores)?;
    let std_err = classical.transform(&t).std_errors();
    let robust_std_err = robust.transform(&t).std_errors();

    let raw = standardizer.destandardize(params, design);
    let significant = raw
        .beta
        .iter()
        .zip(&std_err)
        .map(|(b, se)| se.is_some_and(|se| se > 0.0 && (b / se).abs() > CRITICAL_Z))
        .collect();
    let n_parameters = count_parameters(spec, kind, design.n_alts());
    Ok(FitResult {
        kind,
        spec: spec.clone(),
        alt_names: train_set.alt_names().to_vec(),
        params: raw,
        standardizer: standardizer.clone(),
        final_ll,
        validation_ll,
        aic: aic(n_parameters, final_ll),
        n_parameters,
        std_err,
        robust_std_err,
        significant,
        validation_accuracy,
        best_iteration: progress.best_iteration,
        iterations_run: progress.iterations_run,
        stop: progress.stop,
        n_train: train_set.n_obs(),
        n_validation: valid_set.n_obs(),
    })
}

/// Hessian of the log-likelihood over the beta block, by central
/// differences of the analytic gradient, symmetrized.
pub fn hessian(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<DMatrix<f64>> {
    let k = params.beta.len();
    let mut h = DMatrix::zeros(k, k);
    let mut work = params.clone();
    for i in 0..k {
        work.beta[i] = params.beta[i] + HESSIAN_STEP;
        let (_, up) = grad::grad_loglik(&work, data, design, kind)?;
        work.beta[i] = params.beta[i] - HESSIAN_STEP;
        let (_, down) = grad::grad_loglik(&work, data, design, kind)?;
        work.beta[i] = params.beta[i];
        for r in 0..k {
            h[(r, i)] = (up.d_beta[r] - down.d_beta[r]) / (2.0 * HESSIAN_STEP);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "hessian",
            layer: None,
        });
    }
    Ok(h)
}

/// Covariance estimate with a per-coordinate validity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    /// False where the information matrix is singular along the coordinate.
    pub valid: Vec<bool>,
    /// Pseudo-inverse of `-H`, kept for the sandwich.
    inverse: DMatrix<f64>,
}

impl Covariance {
    /// `T Σ Tᵀ`; a coordinate stays valid only if every coordinate it
    /// mixes is valid.
    pub fn transform(&self, t: &DMatrix<f64>) -> Covariance {
        let valid = (0..t.nrows())
            .map(|r| (0..t.ncols()).all(|c| t[(r, c)] == 0.0 || self.valid[c]))
            .collect();
        Covariance {
            matrix: t * &self.matrix * t.transpose(),
            valid,
            inverse: self.inverse.clone(),
        }
    }

    pub fn std_errors(&self) -> Vec<Option<f64>> {
        self.valid
            .iter()
            .enumerate()
            .map(|(i, &ok)| ok.then(|| self.matrix[(i, i)].max(0.0).sqrt()))
            .collect()
    }
}

/// `(-H)⁻¹`, computed through the eigen-decomposition of `-H`.
///
/// Eigenvalues at or below `1e-8·λ_max` are dropped; any coordinate with
/// non-negligible weight on a dropped eigenvector is flagged invalid.
pub fn covariance(h: &DMatrix<f64>) -> Result<Covariance> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            what: "hessian",
            expected: h.nrows(),
            found: h.ncols(),
        });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "hessian",
            layer: None,
        });
    }
    let k = h.nrows();
    let eig = SymmetricEigen::new(-h);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let good: Vec<bool> = eig
        .eigenvalues
        .iter()
        .map(|&l| max > 0.0 && l > EIGEN_TOLERANCE * max)
        .collect();
    let mut inverse = DMatrix::zeros(k, k);
    let mut bad_weight = vec![0.0; k];
    for (e, &ok) in good.iter().enumerate() {
        let v = eig.eigenvectors.column(e);
        if ok {
            inverse += (v * v.transpose()) / eig.eigenvalues[e];
        } else {
            for i in 0..k {
                bad_weight[i] += v[i] * v[i];
            }
        }
    }
    Ok(Covariance {
        matrix: inverse.clone(),
        valid: bad_weight.iter().map(|&w| w <= 1e-6).collect(),
        inverse,
    })
}

/// Classical standard errors `sqrt(diag((-H)⁻¹))`.
pub fn std_errors(h: &DMatrix<f64>) -> Result<Vec<Option<f64>>> {
    Ok(covariance(h)?.std_errors())
}

/// Sandwich `(-H)⁻¹ B (-H)⁻¹` with `B = Σ_n s_n s_nᵀ`.
pub fn sandwich(classical: &Covariance, scores: &[Vec<f64>]) -> Result<Covariance> {
    let k = classical.inverse.nrows();
    let mut b = DMatrix::zeros(k, k);
    for s in scores {
        if s.len() != k {
            return Err(Error::DimensionMismatch {
                what: "score vector",
                expected: k,
                found: s.len(),
            });
        }
        let s = nalgebra::DVector::from_column_slice(s);
        b += &s * s.transpose();
    }
    Ok(Covariance {
        matrix: &classical.inverse * b * &classical.inverse,
        valid: classical.valid.clone(),
        inverse: classical.inverse.clone(),
    })
}

/// Sandwich standard errors.
pub fn robust_std_errors(h: &DMatrix<f64>, scores: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    Ok(sandwich(&covariance(h)?, scores)?.std_errors())
}

/// Akaike information criterion `2k - 2·LL`.
pub fn aic(k: usize, ll: f64) -> f64 {
    2.0 * k as f64 - 2.0 * ll
}

/// Share of observations whose most probable alternative was chosen.
///
/// Ties go to the lowest alternative index. An empty dataset scores 0.
pub fn accuracy(params: &Parameters, data: &Dataset, design: &DesignIndex, kind: ModelKind) -> Result<f64> {
    if data.n_obs() == 0 {
        return Ok(0.0);
    }
    let probs = model::predict(params, data, design, kind)?;
    let hits = probs
        .iter()
        .zip(data.choices())
        .filter(|(p, &c)| math::argmax(p) == c)
        .count();
    Ok(hits as f64 / data.n_obs() as f64)
}
