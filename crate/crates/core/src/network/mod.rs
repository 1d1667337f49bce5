//! The two-layer network and the 1-D CNN: forward passes, symmetric
//! initialization, Jacobian products, and full-batch gradient descent.
//!
//! The first-layer Jacobian (`n × md`) is never materialized; it is applied
//! through [`TwoLayerNet::jacobian_first_layer_apply`] and its transpose. The
//! second-layer Jacobian (`n × m`) is small enough to build.

mod cnn;
mod two_layer;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use cnn::{circular_conv, Cnn1D};
pub(crate) use two_layer::half_mse;
pub use two_layer::TwoLayerNet;

use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// Abort when the loss exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// `T = ⌊c·d·ln d / η⌋`.
pub fn horizon_steps(c: f64, d: usize, eta: f64) -> usize {
    if eta <= 0.0 || d < 2 {
        return 0;
    }
    let d = d as f64;
    (c * d * d.ln() / eta).floor() as usize
}

/// Learning rates and step count for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub steps: usize,
    /// Constant `c` when `steps` was derived from the horizon rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_c: Option<f64>,
}

impl TrainConfig {
    pub fn new(eta1: f64, eta2: f64, steps: usize) -> Self {
        TrainConfig {
            eta1,
            eta2,
            steps,
            horizon_c: None,
        }
    }

    /// Step count from the horizon rule, using the larger active learning rate.
    pub fn with_horizon(eta1: f64, eta2: f64, c: f64, d: usize) -> Self {
        let eta = eta1.max(eta2);
        TrainConfig {
            eta1,
            eta2,
            steps: horizon_steps(c, d, eta),
            horizon_c: Some(c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.eta1) || !ok(self.eta2) {
            return Err(Error::Config(format!(
                "learning rates must be finite and non-negative, got ({}, {})",
                self.eta1, self.eta2
            )));
        }
        if self.steps > 0 && self.eta1 == 0.0 && self.eta2 == 0.0 {
            return Err(Error::Config(
                "at least one learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What a recorder sees at each step `t = 0..=T`.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    /// `(1/2n) Σ (uᵢ − yᵢ)²`
    pub loss: f64,
    pub predictions: &'a DVector<f64>,
    pub w_move_fro: f64,
    pub v_move_l2: f64,
}

pub trait Recorder {
    fn record(&mut self, view: &StepView<'_>);
}

impl<F: FnMut(&StepView<'_>)> Recorder for F {
    fn record(&mut self, view: &StepView<'_>) {
        self(view)
    }
}

/// One row of a trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// `(1/n) Σ (uᵢ − yᵢ)²`
    pub train_mse: f64,
    /// Parameter movement of the first layer (or of β for linear models).
    pub w_move_fro: f64,
    pub v_move_l2: f64,
}

/// Collects [`TrajectoryPoint`]s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Recorder for Trajectory {
    fn record(&mut self, view: &StepView<'_>) {
        self.points.push(TrajectoryPoint {
            step: view.step,
            train_mse: 2.0 * view.loss,
            w_move_fro: view.w_move_fro,
            v_move_l2: view.v_move_l2,
        });
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Full-batch GD for `cfg.steps` steps. The recorder sees the state before
/// every step and the final state, so it receives `steps + 1` views.
pub fn train<R: Recorder + ?Sized>(
    net: &mut TwoLayerNet,
    data: &Dataset,
    cfg: &TrainConfig,
    recorder: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let (x, y) = (&data.x, &data.y);
    let w0 = net.w.clone();
    let v0 = net.v.clone();
    let mut initial = None;
    for step in 0..=cfg.steps {
        let w_move_fro = (&net.w - &w0).norm();
        let v_move_l2 = (&net.v - &v0).norm();
        // gd_step returns the predictions at the pre-update parameters.
        let u = if step < cfg.steps {
            net.gd_step(x, y, cfg.eta1, cfg.eta2)?
        } else {
            net.forward(x)?
        };
        let loss = half_mse(&u, y);
        let init = *initial.get_or_insert(loss);
        check_divergence(step, loss, init)?;
        recorder.record(&StepView {
            step,
            loss,
            predictions: &u,
            w_move_fro,
            v_move_l2,
        });
    }
    Ok(())
}

pub(crate) fn check_divergence(step: usize, loss: f64, initial: f64) -> Result<()> {
    if !loss.is_finite() || (initial > 0.0 && loss > DIVERGENCE_FACTOR * initial) {
        return Err(Error::Diverged {
            step,
            loss,
            initial,
        });
    }
    Ok(())
}
