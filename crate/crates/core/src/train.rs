//! Mini-batch RMSprop estimation with a held-out validation split.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, Dataset, DesignIndex, ModelKind, Parameters, Standardizer, UtilitySpec};
use crate::error::{Error, Result};
use crate::grad::{self, Gradient};
use crate::model::{self, Tape};
use crate::stats::{self, FitResult};

/// Optimizer and early-stopping settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Maximum number of epochs.
    pub max_iterations: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub split_fraction: f64,
    /// Z-score the design variables before fitting.
    pub standardize: bool,
    /// Half-width of the uniform MLP weight init; `None` means `1/√J`.
    pub mlp_init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            max_iterations: 200,
            patience: 20,
            seed: 0,
            split_fraction: 0.7,
            standardize: true,
            mlp_init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad(format!("rmsprop_decay must lie in (0, 1), got {}", self.rmsprop_decay));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad(format!("rmsprop_epsilon must be positive, got {}", self.rmsprop_epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if let Some(s) = self.mlp_init_scale {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("mlp_init_scale must be non-negative, got {s}"));
            }
        }
        Ok(())
    }
}

/// One validation checkpoint (taken after every epoch).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub train_ll: f64,
    pub valid_ll: f64,
    pub valid_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub records: Vec<Checkpoint>,
}

impl TrainingCurve {
    pub const HEADER: &'static str = "iteration,train_ll,valid_ll,valid_error";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.train_ll, r.valid_ll, r.valid_error
            ));
        }
        out
    }
}

/// Why the training loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

/// Seeded random partition into `floor(f·N)` training and `N - floor(f·N)`
/// validation observations.
pub fn split_dataset(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let (train_idx, valid_idx) = split_indices(data.n_obs(), fraction, seed)?;
    Ok((data.subset(&train_idx), data.subset(&valid_idx)))
}

pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} observations at {fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let valid = idx.split_off(n_train);
    Ok((idx, valid))
}

/// RMSprop running average of squared gradients, one entry per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState {
    pub r: Vec<f64>,
}

impl RmsPropState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            r: vec![0.0; params.n_values()],
        }
    }
}

/// One RMSprop step on a loss gradient:
/// `r ← ρ r + (1-ρ) g²`, `p ← p - η g / (√r + ε)`.
///
/// To maximize the log-likelihood pass the gradient of `-LL`.
pub fn rmsprop_step(
    params: &mut Parameters,
    loss_grad: &Gradient,
    state: &mut RmsPropState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = loss_grad.to_flat();
    if g.len() != state.r.len() || g.len() != params.n_values() {
        return Err(Error::DimensionMismatch {
            what: "optimizer state",
            expected: params.n_values(),
            found: g.len().min(state.r.len()),
        });
    }
    let rho = cfg.rmsprop_decay;
    let mut p = params.to_flat();
    let mut r = state.r.clone();
    for i in 0..p.len() {
        r[i] = rho * r[i] + (1.0 - rho) * g[i] * g[i];
        p[i] -= cfg.learning_rate * g[i] / (r[i].sqrt() + cfg.rmsprop_epsilon);
    }
    if let Some(i) = p.iter().chain(&r).position(|v| !v.is_finite()) {
        let i = i % p.len();
        return Err(Error::NonFinite {
            what: "parameter update",
            layer: layer_of(params, i),
        });
    }
    params.set_flat(&p);
    state.r = r;
    Ok(())
}

fn layer_of(params: &Parameters, flat: usize) -> Option<usize> {
    let mut offset = params.beta.len();
    if flat < offset {
        return None;
    }
    for (m, t) in params.thetas.iter().enumerate() {
        offset += t.len();
        if flat < offset {
            return Some(m + 1);
        }
    }
    None
}

/// Starting point: zero beta, identity residual matrices, seeded uniform MLP
/// weights in `±scale` (default `1/√J`).
pub fn init_parameters(
    spec: &UtilitySpec,
    kind: ModelKind,
    n_alts: usize,
    seed: u64,
    mlp_init_scale: Option<f64>,
) -> Parameters {
    let beta = vec![0.0; spec.beta_len(n_alts)];
    let thetas = match kind {
        ModelKind::Mnl => Vec::new(),
        ModelKind::ResLogit(m) => vec![DMatrix::identity(n_alts, n_alts); m],
        ModelKind::Mlp(m) => {
            let scale = mlp_init_scale.unwrap_or(1.0 / (n_alts as f64).sqrt());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            (0..m)
                .map(|_| {
                    DMatrix::from_fn(n_alts, n_alts, |_, _| {
                        if scale > 0.0 {
                            rng.random_range(-scale..scale)
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        }
    };
    Parameters { beta, thetas }
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub fit: FitResult,
    pub curve: TrainingCurve,
}

/// Fits `kind` on a seeded split of `data` and returns the snapshot with the
/// highest validation log-likelihood.
pub fn train(
    data: &Dataset,
    spec: &UtilitySpec,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let design = build_design(data, spec)?;
    let (train_raw, valid_raw) = split_dataset(data, cfg.split_fraction, cfg.seed)?;
    if cfg.batch_size > train_raw.n_obs() {
        return Err(Error::InvalidArgument(format!(
            "batch_size {} exceeds the {} training observations",
            cfg.batch_size,
            train_raw.n_obs()
        )));
    }
    let standardizer = if cfg.standardize {
        Standardizer::fit(&train_raw, &design)
    } else {
        Standardizer::identity(&design)
    };
    let train_set = standardizer.transform(&train_raw);
    let valid_set = standardizer.transform(&valid_raw);

    let mut params = init_parameters(spec, kind, data.n_alts(), cfg.seed, cfg.mlp_init_scale);
    let run = optimize(&mut params, &train_set, &valid_set, &design, kind, cfg);
    let (best, best_iteration, iterations_run, stop, curve) = match run {
        Ok(r) => r,
        Err(Failure { iteration, last }) => {
            return Err(Error::Diverged {
                iteration,
                last_finite: Box::new(standardizer.destandardize(&last, &design)),
            })
        }
    };

    let fit = stats::summarize_fit(
        &best,
        &train_set,
        &valid_set,
        &design,
        spec,
        kind,
        &standardizer,
        stats::FitProgress {
            best_iteration,
            iterations_run,
            stop,
        },
    )?;
    Ok(TrainOutput { fit, curve })
}

struct Failure {
    iteration: usize,
    last: Parameters,
}

type Optimized = (Parameters, usize, usize, StopReason, TrainingCurve);

fn optimize(
    params: &mut Parameters,
    train_set: &Dataset,
    valid_set: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> std::result::Result<Optimized, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = RmsPropState::new(params);
    let mut tape = Tape::new(design.n_alts(), kind.depth());
    let mut grad = Gradient::zeros_like(params);
    let mut order: Vec<usize> = (0..train_set.n_obs()).collect();
    let mut curve = TrainingCurve::default();
    let mut best = params.clone();
    let mut best_ll = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut since_best = 0;
    let mut last_finite = params.clone();

    for epoch in 1..=cfg.max_iterations {
        let fail = |last: &Parameters| Failure {
            iteration: epoch,
            last: last.clone(),
        };
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.scale(0.0);
            grad::grad_loglik_rows(params, train_set, batch, design, kind, &mut tape, &mut grad)
                .map_err(|_| fail(&last_finite))?;
            // mean gradient of -LL over the batch
            grad.scale(-1.0 / batch.len() as f64);
            rmsprop_step(params, &grad, &mut state, cfg).map_err(|_| fail(&last_finite))?;
        }
        let train_ll = model::log_likelihood(params, train_set, design, kind);
        let valid_ll = model::log_likelihood(params, valid_set, design, kind);
        let valid_acc = stats::accuracy(params, valid_set, design, kind);
        let (Ok(train_ll), Ok(valid_ll), Ok(valid_acc)) = (train_ll, valid_ll, valid_acc) else {
            return Err(fail(&last_finite));
        };
        if !train_ll.is_finite() || !valid_ll.is_finite() {
            return Err(fail(&last_finite));
        }
        last_finite.clone_from(params);
        curve.records.push(Checkpoint {
            iteration: epoch,
            train_ll,
            valid_ll,
            valid_error: 1.0 - valid_acc,
        });
        if valid_ll > best_ll {
            best_ll = valid_ll;
            best.clone_from(params);
            best_iteration = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                return Ok((best, best_iteration, epoch, StopReason::Patience, curve));
            }
        }
    }
    Ok((
        best,
        best_iteration,
        cfg.max_iterations,
        StopReason::MaxIterations,
        curve,
    ))
}
