use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activations::{self, Activation, Moments};
use crate::datagen::{self, DataSpec};
use crate::error::{Error, Result};
use crate::linmodel::{FeatureMap, LinearModel};
use crate::network::{self, check_divergence, TwoLayerNet};
use crate::rng;
use crate::Mode;

/// How training labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelSpec {
    /// `sign(f*(x))` for a Gaussian teacher network of the given width and
    /// the same activation as the student.
    TeacherSign { width: usize },
    /// `‖x‖/√d + ReLU(aᵀx)` with a random direction `a` of norm `a_norm`.
    NormDependent { a_norm: f64 },
    /// All zeros.
    Zero,
}

impl Default for LabelSpec {
    fn default() -> Self {
        LabelSpec::TeacherSign { width: 5 }
    }
}

/// A coupled network / linear-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRunConfig {
    pub mode: Mode,
    pub data: DataSpec,
    pub labels: LabelSpec,
    pub m: usize,
    pub act: Activation,
    pub net_seed: u64,
    /// Shared learning rate; `None` picks [`default_learning_rate`].
    pub eta: Option<f64>,
    /// Step count; `None` uses the horizon `⌊c·d·ln d/η⌋`.
    pub steps: Option<usize>,
    pub horizon_c: f64,
    pub n_test: usize,
    /// Record every `stride` steps (the last step is always recorded).
    pub stride: usize,
    /// Quadrature order for the moments; `None` uses the activation default.
    pub quad_order: Option<usize>,
}

impl CoupledRunConfig {
    /// Gaussian inputs, teacher-sign labels, erf, `c = 0.25`, 2000 test points.
    pub fn new(mode: Mode, n: usize, d: usize, m: usize, seed: u64) -> Self {
        CoupledRunConfig {
            mode,
            data: DataSpec::gaussian(n, d, seed),
            labels: LabelSpec::default(),
            m,
            act: Activation::Erf,
            net_seed: rng::derive_seed(seed, 1),
            eta: None,
            steps: None,
            horizon_c: 0.25,
            n_test: 2000,
            stride: 1,
            quad_order: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || !self.m.is_multiple_of(2) {
            return Err(Error::OddWidth(self.m));
        }
        if self.data.n == 0 || self.data.d() == 0 {
            return Err(Error::Config("n and d must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!(
                    "learning rate must be positive, got {eta}"
                )));
            }
        }
        if !(self.horizon_c > 0.0 && self.horizon_c.is_finite()) {
            return Err(Error::Config(format!(
                "horizon constant must be positive, got {}",
                self.horizon_c
            )));
        }
        if let LabelSpec::TeacherSign { width: 0 } = self.labels {
            return Err(Error::Config("teacher width must be positive".into()));
        }
        self.data
            .covariance
            .validate(datagen::DEFAULT_SPECTRUM_BOUND)
    }
}

/// Default shared learning rate: `0.1·d` when training the first layer only;
/// otherwise `0.1·d/ln n` if ϑ₀ = 0 and `0.1` if not.
pub fn default_learning_rate(mode: Mode, d: usize, n: usize, moments: &Moments) -> f64 {
    let d = d as f64;
    match mode {
        Mode::First => 0.1 * d,
        Mode::Second | Mode::Both => {
            if moments.theta0.abs() < 1e-12 {
                0.1 * d / (n.max(3) as f64).ln()
            } else {
                0.1
            }
        }
    }
}

/// Agreement between the network and the linear model at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub step: usize,
    pub train_mse_net: f64,
    pub train_mse_lin: f64,
    /// `(1/n) Σ (f_t(xᵢ) − f^lin_t(xᵢ))²` over training points.
    pub train_gap: f64,
    /// Mean of `min{(f_t − f^lin_t)², 1}` over the test set.
    pub test_gap_clipped: f64,
    pub w_move_fro: f64,
    pub v_move_l2: f64,
    pub beta_norm: f64,
}

/// Everything a coupled run needs, generated from the config.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub net: TwoLayerNet,
    pub moments: Moments,
    pub nu: f64,
    pub eta: f64,
    pub steps: usize,
    /// Labels outside [−1, 1] (only possible for norm-dependent labels).
    pub labels_out_of_range: usize,
}

impl RunSetup {
    pub fn new(cfg: &CoupledRunConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.data.d();
        let x = datagen::generate_inputs(&cfg.data);
        let test_spec = DataSpec {
            n: cfg.n_test,
            ..cfg.data.clone()
        };
        let x_test = datagen::generate_test_inputs(&test_spec);
        let (y, labels_out_of_range) = match cfg.labels {
            LabelSpec::TeacherSign { width } => {
                let teacher =
                    TwoLayerNet::gaussian(width, d, cfg.act, rng::derive_seed(cfg.data.seed, 2));
                (datagen::labels_teacher_sign(&x, &teacher)?, 0)
            }
            LabelSpec::NormDependent { a_norm } => {
                let a = datagen::random_direction(d, a_norm, cfg.data.seed);
                let l = datagen::labels_norm_dependent(&x, &a)?;
                (l.y, l.out_of_range)
            }
            LabelSpec::Zero => (DVector::zeros(cfg.data.n), 0),
        };
        let net = TwoLayerNet::symmetric_init(cfg.m, d, cfg.act, cfg.net_seed)?;
        let moments = activations::moments(
            cfg.act,
            cfg.quad_order.unwrap_or_else(|| cfg.act.default_order()),
        )?;
        let nu = activations::nu(&moments, &cfg.data.covariance);
        let eta = cfg
            .eta
            .unwrap_or_else(|| default_learning_rate(cfg.mode, d, cfg.data.n, &moments));
        let steps = cfg
            .steps
            .unwrap_or_else(|| network::horizon_steps(cfg.horizon_c, d, eta));
        Ok(RunSetup {
            x,
            y,
            x_test,
            net,
            moments,
            nu,
            eta,
            steps,
            labels_out_of_range,
        })
    }

    pub fn feature_map(&self, mode: Mode) -> FeatureMap {
        FeatureMap::new(mode, self.moments, self.nu, self.x.ncols())
    }
}

/// The records of a coupled run with the resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledRun {
    pub records: Vec<AgreementRecord>,
    pub eta: f64,
    pub steps: usize,
    pub moments: Moments,
    pub nu: f64,
    pub labels_out_of_range: usize,
}

/// State handed to an observer at every recorded step.
pub(crate) struct LockstepView<'a> {
    pub step: usize,
    pub net: &'a TwoLayerNet,
    pub net_train: &'a DVector<f64>,
    pub net_test: &'a DVector<f64>,
    pub lin_train: &'a [DVector<f64>],
    pub lin_test: &'a [DVector<f64>],
    pub lins: &'a [LinearModel],
    pub w_move_fro: f64,
    pub v_move_l2: f64,
}

/// Runs the network with rates `(η₁, η₂)` and one linear model per map with
/// rate `eta_lin`, all on the same data, calling `observe` at recorded steps
/// with the state before that step's update.
pub(crate) fn lockstep<F>(
    setup: &RunSetup,
    maps: &[FeatureMap],
    (eta1, eta2): (f64, f64),
    eta_lin: f64,
    stride: usize,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(&LockstepView<'_>) -> Result<()>,
{
    let (x, y, x_test) = (&setup.x, &setup.y, &setup.x_test);
    let steps = setup.steps;
    let mut net = setup.net.clone();
    let (w0, v0) = (net.w.clone(), net.v.clone());
    let psis: Vec<DMatrix<f64>> = maps
        .iter()
        .map(|m| m.feature_matrix(x))
        .collect::<Result<_>>()?;
    let psis_test: Vec<DMatrix<f64>> = maps
        .iter()
        .map(|m| m.feature_matrix(x_test))
        .collect::<Result<_>>()?;
    let mut lins: Vec<LinearModel> = maps.iter().map(|m| LinearModel::zeros(*m)).collect();
    let mut initial: Vec<Option<f64>> = vec![None; maps.len() + 1];
    let empty = DVector::zeros(0);

    for step in 0..=steps {
        let record = step % stride == 0 || step == steps;
        let w_move_fro = (&net.w - &w0).norm();
        let v_move_l2 = (&net.v - &v0).norm();
        let net_test = if record {
            net.forward(x_test)?
        } else {
            empty.clone()
        };
        let lin_test: Vec<DVector<f64>> = if record {
            psis_test
                .iter()
                .zip(&lins)
                .map(|(p, l)| p * &l.beta)
                .collect()
        } else {
            Vec::new()
        };
        let snapshot = record.then(|| (net.clone(), lins.clone()));
        let last = step == steps;
        let net_train = if last {
            net.forward(x)?
        } else {
            net.gd_step(x, y, eta1, eta2)?
        };
        let lin_train: Vec<DVector<f64>> = psis
            .iter()
            .zip(lins.iter_mut())
            .map(|(p, l)| {
                if last {
                    p * &l.beta
                } else {
                    l.gd_step(p, y, eta_lin)
                }
            })
            .collect();

        for (k, u) in std::iter::once(&net_train).chain(&lin_train).enumerate() {
            let loss = network::half_mse(u, y);
            let init = *initial[k].get_or_insert(loss);
            check_divergence(step, loss, init)?;
        }

        if let Some((net_before, lins_before)) = snapshot {
            observe(&LockstepView {
                step,
                net: &net_before,
                net_train: &net_train,
                net_test: &net_test,
                lin_train: &lin_train,
                lin_test: &lin_test,
                lins: &lins_before,
                w_move_fro,
                v_move_l2,
            })?;
        }
    }
    Ok(())
}

pub(crate) fn mean_sq_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).norm_squared() / a.len() as f64
}

pub(crate) fn mean_clipped_sq_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).powi(2).min(1.0))
        .sum::<f64>()
        / a.len() as f64
}

/// Trains the network (rates set by the mode) and the matching linear model
/// with the same learning rate, and records their agreement.
pub fn coupled_run(cfg: &CoupledRunConfig) -> Result<CoupledRun> {
    coupled_run_observed(cfg, |_, _| {})
}

/// [`coupled_run`] that also hands the network at every recorded step to
/// `observe`.
pub fn coupled_run_observed<F>(cfg: &CoupledRunConfig, mut observe: F) -> Result<CoupledRun>
where
    F: FnMut(usize, &TwoLayerNet),
{
    let setup = RunSetup::new(cfg)?;
    let map = setup.feature_map(cfg.mode);
    let mut records = Vec::new();
    lockstep(
        &setup,
        &[map],
        cfg.mode.learning_rates(setup.eta),
        setup.eta,
        cfg.stride,
        |v| {
            records.push(AgreementRecord {
                step: v.step,
                train_mse_net: mean_sq_diff(v.net_train, &setup.y),
                train_mse_lin: mean_sq_diff(&v.lin_train[0], &setup.y),
                train_gap: mean_sq_diff(v.net_train, &v.lin_train[0]),
                test_gap_clipped: mean_clipped_sq_diff(v.net_test, &v.lin_test[0]),
                w_move_fro: v.w_move_fro,
                v_move_l2: v.v_move_l2,
                beta_norm: v.lins[0].beta_norm(),
            });
            observe(v.step, v.net);
            Ok(())
        },
    )?;
    Ok(CoupledRun {
        records,
        eta: setup.eta,
        steps: setup.steps,
        moments: setup.moments,
        nu: setup.nu,
        labels_out_of_range: setup.labels_out_of_range,
    })
}
