//! Early-time linearization of two-layer networks.
//!
//! A two-layer network trained by gradient descent from a symmetric
//! initialization behaves, for an initial phase, like a linear model on
//! explicit features `ψ(x)` built from `x`, a constant, and a norm-dependent
//! term. This crate implements the network, the linear models, every kernel
//! that relates them, and a harness that trains both side by side and
//! measures how close they stay.
//!
//! ```
//! use earlylin::activations::{moments, Activation};
//!
//! let m = moments(Activation::Erf, 64).unwrap();
//! assert!(m.theta0.abs() < 1e-12);
//! ```
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod linmodel;
pub mod network;
pub mod rng;

mod par;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use activations::{Activation, Moments};
pub use datagen::{CovarianceSpec, DataSpec, Dataset};
pub use error::{Error, Result};
pub use kernels::{DecayFit, KernelMatrix};
pub use linmodel::{FeatureMap, LinearModel};
pub use network::{Cnn1D, TrainConfig, TwoLayerNet};

/// Which layers are trained, and hence which linear model is the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// First layer only (`η₂ = 0`).
    First,
    /// Second layer only (`η₁ = 0`).
    Second,
    /// Both layers with a shared learning rate.
    Both,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::First, Mode::Second, Mode::Both];

    /// `(η₁, η₂)` for a shared learning rate `eta`.
    pub fn learning_rates(self, eta: f64) -> (f64, f64) {
        match self {
            Mode::First => (eta, 0.0),
            Mode::Second => (0.0, eta),
            Mode::Both => (eta, eta),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::First => "first",
            Mode::Second => "second",
            Mode::Both => "both",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Mode::First),
            "second" => Ok(Mode::Second),
            "both" => Ok(Mode::Both),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected first, second or both)"
            ))),
        }
    }
}
