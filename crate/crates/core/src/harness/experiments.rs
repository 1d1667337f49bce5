use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::coupled::{coupled_run, lockstep, mean_sq_diff, CoupledRunConfig, LabelSpec, RunSetup};
use crate::activations::{self, Activation};
use crate::datagen::{self, CovarianceSpec, DataSpec};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelMatrix, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::network::TwoLayerNet;
use crate::{rng, DecayFit, Mode};

/// Largest early-window training gap per seed at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionGap {
    pub d: usize,
    pub m: usize,
    pub max_gaps: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancySweep {
    pub points: Vec<DimensionGap>,
    /// Whether the medians strictly decrease along `ds`.
    pub strictly_decreasing: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => v[k / 2],
        k => 0.5 * (v[k / 2 - 1] + v[k / 2]),
    }
}

/// Width used at dimension `d` when widths scale as `m·(d/d₀)^p`, rounded to
/// the nearest even number (at least 2).
pub fn scaled_width(m: usize, d0: usize, d: usize, exponent: f64) -> usize {
    if exponent == 0.0 || d0 == 0 {
        return m;
    }
    let raw = m as f64 * (d as f64 / d0 as f64).powf(exponent);
    ((raw / 2.0).round() as usize).max(1) * 2
}

/// For each `d`, the maximum train gap over the run's horizon, for each seed.
/// `base` supplies everything but the dimension and seeds; inputs use an
/// identity covariance in every dimension. The width at dimension `d` is
/// [`scaled_width`]`(base.m, base.data.d(), d, width_exponent)`, so a positive
/// exponent keeps the run in the `m ≳ d^{1+α}` regime as `d` grows.
pub fn discrepancy_vs_dimension(
    ds: &[usize],
    base: &CoupledRunConfig,
    seeds: &[u64],
    width_exponent: f64,
) -> Result<DiscrepancySweep> {
    let d0 = base.data.d();
    let jobs: Vec<(usize, u64)> = ds
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    let gaps: Vec<Result<f64>> = crate::par::map_range(jobs.len(), |k| {
        let (d, seed) = jobs[k];
        let cfg = CoupledRunConfig {
            data: DataSpec {
                covariance: CovarianceSpec::identity(d),
                seed,
                ..base.data.clone()
            },
            net_seed: rng::derive_seed(seed, 1),
            m: scaled_width(base.m, d0, d, width_exponent),
            ..base.clone()
        };
        let run = coupled_run(&cfg)?;
        Ok(run.records.iter().map(|r| r.train_gap).fold(0.0, f64::max))
    });
    let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_>>()?;
    let points: Vec<DimensionGap> = ds
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let max_gaps = gaps[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
            DimensionGap {
                d,
                m: scaled_width(base.m, d0, d, width_exponent),
                median: median(&max_gaps),
                max_gaps,
            }
        })
        .collect();
    let strictly_decreasing = points.windows(2).all(|w| w[1].median < w[0].median);
    Ok(DiscrepancySweep {
        points,
        strictly_decreasing,
    })
}

/// `ε(t) = ‖J(θ(t))J(θ(0))ᵀ − K‖` at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbePoint {
    pub step: usize,
    pub eps: f64,
    /// `ε(t)/(n/d)`.
    pub eps_rel: f64,
}

// Cross-Gram J(a)J(b)ᵀ restricted to the layers trained in `mode`.
fn cross_gram(
    a: &TwoLayerNet,
    b: &TwoLayerNet,
    x: &DMatrix<f64>,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let m = a.width() as f64;
    let mut out = DMatrix::zeros(n, n);
    if mode != Mode::Second {
        let scaled_prime = |net: &TwoLayerNet| -> Result<DMatrix<f64>> {
            let mut z = net.preactivations(x)?;
            net.act.apply_prime_in_place(z.as_mut_slice());
            for (mut col, vr) in z.column_iter_mut().zip(net.v.iter()) {
                col *= *vr;
            }
            Ok(z)
        };
        let mut k = scaled_prime(a)? * scaled_prime(b)?.transpose() / m;
        k.component_mul_assign(&kernels::data_kernel(x));
        out += k;
    }
    if mode != Mode::First {
        out += a.jacobian_second_layer(x)? * b.jacobian_second_layer(x)?.transpose();
    }
    Ok(out)
}

/// Spectral deviation of the cross-Gram `J(θ(t))J(θ(0))ᵀ` from `k_lin` for
/// each snapshot `(t, θ(t))`, using the Jacobian blocks of the layers trained
/// in `mode`.
pub fn jacobian_deviation_probe(
    x: &DMatrix<f64>,
    net0: &TwoLayerNet,
    snapshots: &[(usize, TwoLayerNet)],
    k_lin: &KernelMatrix,
    mode: Mode,
) -> Result<Vec<ProbePoint>> {
    let (n, d) = x.shape();
    if k_lin.n() != n {
        return Err(Error::Shape(format!(
            "kernel is {}×{0}, data has n={n}",
            k_lin.n()
        )));
    }
    let scale = n as f64 / d as f64;
    snapshots
        .iter()
        .map(|(step, net)| {
            let diff = cross_gram(net, net0, x, mode)? - &k_lin.values;
            let eps = kernels::spectral_norm(&diff, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
            Ok(ProbePoint {
                step: *step,
                eps,
                eps_rel: eps / scale,
            })
        })
        .collect()
}

/// Split of `‖r‖²` between the column span of the test inputs and its
/// orthogonal complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubspaceEnergy {
    pub in_span: f64,
    pub complement: f64,
}

/// Projects `residual` onto the span of the columns of `x_test`, found from a
/// thin SVD with singular values below `1e−10·σ_max` dropped.
pub fn residual_subspace_decomposition(
    residual: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<SubspaceEnergy> {
    let (n, d) = x_test.shape();
    if residual.len() != n {
        return Err(Error::Shape(format!(
            "residual has {} entries, test inputs have n={n}",
            residual.len()
        )));
    }
    if n <= d {
        return Err(Error::EmptyComplement { n, d });
    }
    let svd = x_test.clone().svd(true, false);
    let u = svd
        .u
        .as_ref()
        .expect("left singular vectors were requested");
    let smax = svd.singular_values.max();
    let mut coords = u.transpose() * residual;
    for (c, s) in coords.iter_mut().zip(svd.singular_values.iter()) {
        if !(*s > 1e-10 * smax) {
            *c = 0.0;
        }
    }
    let projection = u * &coords;
    let complement = (residual - &projection).norm_squared();
    Ok(SubspaceEnergy {
        in_span: projection.norm_squared(),
        complement,
    })
}

/// Settings for the norm-feature ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub n_test: usize,
    pub act: Activation,
    /// Norm of the direction `a` in `y = ‖x‖/√d + ReLU(aᵀx)`.
    pub a_norm: f64,
    pub seed: u64,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub horizon_c: f64,
    pub stride: usize,
    /// Use all-zero labels instead of the norm-dependent target.
    pub zero_labels: bool,
}

impl AblationConfig {
    /// ReLU, ‖a‖ = 0.5, `c = 0.25`.
    pub fn new(n: usize, d: usize, m: usize, seed: u64) -> Self {
        AblationConfig {
            n,
            d,
            m,
            n_test: 1000,
            act: Activation::Relu,
            a_norm: 0.5,
            seed,
            eta: None,
            steps: None,
            horizon_c: 0.25,
            stride: 1,
            zero_labels: false,
        }
    }

    fn coupled(&self) -> CoupledRunConfig {
        CoupledRunConfig {
            act: self.act,
            labels: if self.zero_labels {
                LabelSpec::Zero
            } else {
                LabelSpec::NormDependent {
                    a_norm: self.a_norm,
                }
            },
            eta: self.eta,
            steps: self.steps,
            horizon_c: self.horizon_c,
            n_test: self.n_test,
            stride: self.stride,
            ..CoupledRunConfig::new(Mode::Both, self.n, self.d, self.m, self.seed)
        }
    }
}

/// Test-set mean squared discrepancy of each linear model to the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub step: usize,
    pub full_gap: f64,
    pub naive_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub points: Vec<AblationPoint>,
    /// Fraction of recorded steps `t ≥ 1` where the full model is strictly
    /// closer (both models are exactly zero at `t = 0`).
    pub fraction_full_better: f64,
    pub eta: f64,
    pub steps: usize,
    pub labels_out_of_range: usize,
}

/// Trains the network on both layers next to the full linear model and the
/// naive one whose norm feature keeps only ϑ₀.
pub fn norm_feature_ablation_experiment(cfg: &AblationConfig) -> Result<AblationReport> {
    let coupled = cfg.coupled();
    let setup = RunSetup::new(&coupled)?;
    let full = setup.feature_map(Mode::Both);
    let maps = [full, full.naive()];
    let mut points = Vec::new();
    lockstep(
        &setup,
        &maps,
        Mode::Both.learning_rates(setup.eta),
        setup.eta,
        coupled.stride,
        |v| {
            points.push(AblationPoint {
                step: v.step,
                full_gap: mean_sq_diff(v.net_test, &v.lin_test[0]),
                naive_gap: mean_sq_diff(v.net_test, &v.lin_test[1]),
            });
            Ok(())
        },
    )?;
    let later: Vec<&AblationPoint> = points.iter().filter(|p| p.step >= 1).collect();
    let fraction_full_better = if later.is_empty() {
        0.0
    } else {
        later.iter().filter(|p| p.full_gap < p.naive_gap).count() as f64 / later.len() as f64
    };
    Ok(AblationReport {
        points,
        fraction_full_better,
        eta: setup.eta,
        steps: setup.steps,
        labels_out_of_range: setup.labels_out_of_range,
    })
}

/// Mean norms of `Θ₁(W(0)) − Θ^lin1` at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub d: usize,
    pub spectral: Vec<f64>,
    pub frobenius: Vec<f64>,
    pub spectral_mean: f64,
    pub frobenius_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDecay {
    pub points: Vec<DecayPoint>,
    pub spectral_fit: DecayFit,
    pub frobenius_fit: DecayFit,
}

/// Spectral and Frobenius norms of `Θ₁(W(0)) − Θ^lin1` on Gaussian data at
/// fixed `n` and `m` across dimensions, with log-log fits of the seed means.
pub fn spectral_decay_experiment(
    ds: &[usize],
    n: usize,
    m: usize,
    act: Activation,
    seeds: &[u64],
    quad_order: Option<usize>,
) -> Result<SpectralDecay> {
    let mo = activations::moments(act, quad_order.unwrap_or_else(|| act.default_order()))?;
    let mut points = Vec::with_capacity(ds.len());
    for &d in ds {
        let sigma = CovarianceSpec::identity(d);
        let nu = activations::nu(&mo, &sigma);
        let mut spectral = Vec::with_capacity(seeds.len());
        let mut frobenius = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let x = datagen::generate_inputs(&DataSpec::gaussian(n, d, seed));
            let net = TwoLayerNet::symmetric_init(m, d, act, rng::derive_seed(seed, 1))?;
            let diff = kernels::ntk_first_layer(&net, &x)?.values
                - kernels::linear_kernel(&x, &mo, nu, Mode::First).values;
            spectral.push(kernels::spectral_norm(
                &diff,
                DEFAULT_TOL,
                DEFAULT_MAX_ITERS,
            )?);
            frobenius.push(kernels::frobenius_norm(&diff));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        points.push(DecayPoint {
            d,
            spectral_mean: mean(&spectral),
            frobenius_mean: mean(&frobenius),
            spectral,
            frobenius,
        });
    }
    if points
        .iter()
        .all(|p| p.spectral_mean == 0.0 && p.frobenius_mean == 0.0)
    {
        return Err(Error::DegenerateFit(
            "the kernel difference vanishes identically".into(),
        ));
    }
    let spectral_fit = kernels::decay_fit(
        ds,
        &points.iter().map(|p| p.spectral_mean).collect::<Vec<_>>(),
    )?;
    let frobenius_fit = kernels::decay_fit(
        ds,
        &points.iter().map(|p| p.frobenius_mean).collect::<Vec<_>>(),
    )?;
    Ok(SpectralDecay {
        points,
        spectral_fit,
        frobenius_fit,
    })
}

/// Infinite-width CNN kernel against its linear approximation `2ζ²XXᵀ/d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CnnComparison {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    /// `‖Θ_CNN − 2ζ²XXᵀ/d‖ / ‖2ζ²XXᵀ/d‖` in spectral norm.
    pub ratio: f64,
    #[serde(skip)]
    pub kernel: KernelMatrix,
}

/// Draws `n` hypercube points in dimension `d` and compares the CNN kernel
/// with filter size `q` to `2ζ²XXᵀ/d`.
pub fn cnn_linear_comparison(
    n: usize,
    d: usize,
    q: usize,
    act: Activation,
    seed: u64,
    quad_order: Option<usize>,
) -> Result<CnnComparison> {
    let order = quad_order.unwrap_or_else(|| act.default_order());
    let mo = activations::moments(act, order)?;
    let x = datagen::generate_hypercube(n, d, seed);
    let kernel = kernels::cnn_infinite_ntk(&x, q, act, order)?;
    let lin = kernels::data_kernel(&x) * (2.0 * mo.zeta * mo.zeta);
    let den = kernels::spectral_norm(&lin, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    if den == 0.0 {
        return Err(Error::DegenerateFit(
            "the linear approximation vanishes (ζ = 0)".into(),
        ));
    }
    let num = kernels::spectral_norm(&(&kernel.values - &lin), DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    Ok(CnnComparison {
        n,
        d,
        q,
        ratio: num / den,
        kernel,
    })
}
