//! Residual logit (ResLogit) discrete choice models.
//!
//! A ResLogit model adds a stack of residual layers
//! `h(m) = h(m-1) - softplus(θ(m) h(m-1))` on top of the linear utilities of
//! a multinomial logit, letting each alternative's utility depend on every
//! other alternative's. With all `θ = 0` it reduces to the MNL. An MLP
//! baseline without skip connections is provided for comparison.

pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod io;
pub mod math;
pub mod model;
mod par;
pub mod redbus;
pub mod stats;
pub mod synth;
pub mod train;

pub use data::{build_design, count_parameters, Dataset, DesignIndex, ModelKind, Parameters, Slot, Standardizer, UtilitySpec};
pub use error::{Error, Result};
pub use nalgebra;
pub use stats::FitResult;
pub use train::{train, TrainConfig, TrainOutput, TrainingCurve};
