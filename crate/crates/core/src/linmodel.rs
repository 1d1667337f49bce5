//! The linear models `f(x) = ⟨ψ(x), β⟩` that track the network early in
//! training, trained by GD from `β = 0`, plus their closed-form trajectory and
//! the minimum-norm limit.
//!
//! | mode   | ψ(x)                                              |
//! |--------|---------------------------------------------------|
//! | first  | `(1/√d)[ζx; ν]`                                   |
//! | second | `[(1/√d)ζx; ν/√(2d); q(x)]`                       |
//! | both   | `[√(2/d)ζx; √(3/(2d))ν; q(x)]`                    |
//!
//! with `q(x) = ϑ₀ + ϑ₁(‖x‖/√d − 1) + ϑ₂(‖x‖/√d − 1)²`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::activations::Moments;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelMatrix};
use crate::network::{check_divergence, Recorder, StepView};
use crate::Mode;

/// Above this size the closed-form path multiplies instead of diagonalizing.
pub const EIGEN_MAX_N: usize = 2000;
/// Singular values at or below this fraction of the largest are dropped.
pub const PINV_CUTOFF: f64 = 1e-10;

/// A feature map ψ for one of the three modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMap {
    pub mode: Mode,
    pub moments: Moments,
    pub nu: f64,
    pub d: usize,
    /// (ϑ₀, ϑ₁, ϑ₂) used in the norm-dependent coordinate.
    pub norm_coeffs: [f64; 3],
}

impl FeatureMap {
    pub fn new(mode: Mode, moments: Moments, nu: f64, d: usize) -> Self {
        FeatureMap {
            mode,
            moments,
            nu,
            d,
            norm_coeffs: moments.norm_coefficients(),
        }
    }

    /// The naive ablation: the norm-dependent coordinate keeps only ϑ₀.
    pub fn naive(&self) -> Self {
        FeatureMap {
            norm_coeffs: [self.norm_coeffs[0], 0.0, 0.0],
            ..*self
        }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::First => self.d + 1,
            Mode::Second | Mode::Both => self.d + 2,
        }
    }

    // (data scale, constant-feature scale)
    fn scales(&self) -> (f64, f64) {
        let d = self.d as f64;
        match self.mode {
            Mode::First => (1.0 / d.sqrt(), 1.0 / d.sqrt()),
            Mode::Second => (1.0 / d.sqrt(), (0.5 / d).sqrt()),
            Mode::Both => ((2.0 / d).sqrt(), (1.5 / d).sqrt()),
        }
    }

    /// ψ(x).
    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.d {
            return Err(Error::Shape(format!(
                "input has d={}, feature map expects d={}",
                x.len(),
                self.d
            )));
        }
        let mut out = DVector::zeros(self.dim());
        self.fill(x.iter().copied(), out.as_mut_slice());
        Ok(out)
    }

    /// Rows ψ(xᵢ)ᵀ, `n × dim()`.
    pub fn feature_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d {
            return Err(Error::Shape(format!(
                "inputs have d={}, feature map expects d={}",
                x.ncols(),
                self.d
            )));
        }
        let p = self.dim();
        let mut out = DMatrix::zeros(x.nrows(), p);
        let mut buf = vec![0.0; p];
        for i in 0..x.nrows() {
            self.fill(x.row(i).iter().copied(), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        Ok(out)
    }

    fn fill(&self, x: impl Iterator<Item = f64> + Clone, out: &mut [f64]) {
        let (sx, sc) = self.scales();
        let d = self.d;
        let mut sq = 0.0;
        for (o, xi) in out[..d].iter_mut().zip(x) {
            *o = sx * self.moments.zeta * xi;
            sq += xi * xi;
        }
        out[d] = sc * self.nu;
        if self.mode != Mode::First {
            let r = (sq / d as f64).sqrt();
            out[d + 1] = kernels::norm_feature(r, self.norm_coeffs);
        }
    }

    /// The kernel `ΨΨᵀ` in closed form.
    pub fn kernel(&self, x: &DMatrix<f64>) -> KernelMatrix {
        kernels::linear_kernel_with(x, self.moments.zeta, self.nu, self.norm_coeffs, self.mode)
    }
}

/// A linear model with parameter β (called β, γ or δ depending on the mode).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub map: FeatureMap,
    pub beta: DVector<f64>,
}

impl LinearModel {
    pub fn zeros(map: FeatureMap) -> Self {
        LinearModel {
            beta: DVector::zeros(map.dim()),
            map,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.map.feature_matrix(x)? * &self.beta)
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta.norm()
    }

    /// One GD step `β ← β − (η/n)Ψᵀ(Ψβ − y)` on precomputed features.
    /// Returns the predictions before the update.
    pub fn gd_step(&mut self, psi: &DMatrix<f64>, y: &DVector<f64>, eta: f64) -> DVector<f64> {
        let u = psi * &self.beta;
        let g = psi.transpose() * (&u - y);
        self.beta.axpy(-eta / y.len().max(1) as f64, &g, 1.0);
        u
    }
}

/// GD from zero for `steps` steps. The recorder sees `steps + 1` states with
/// `w_move_fro = ‖β(t)‖` and `v_move_l2 = 0`, matching the network's
/// trajectory layout.
pub fn lin_gd_train<R: Recorder + ?Sized>(
    map: FeatureMap,
    data: &Dataset,
    eta: f64,
    steps: usize,
    recorder: &mut R,
) -> Result<LinearModel> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    let psi = map.feature_matrix(&data.x)?;
    let mut model = LinearModel::zeros(map);
    let mut initial = None;
    for step in 0..=steps {
        let beta_norm = model.beta_norm();
        let u = if step < steps {
            model.gd_step(&psi, &data.y, eta)
        } else {
            &psi * &model.beta
        };
        let loss = (&u - &data.y).norm_squared() / (2.0 * data.n().max(1) as f64);
        let init = *initial.get_or_insert(loss);
        check_divergence(step, loss, init)?;
        recorder.record(&StepView {
            step,
            loss,
            predictions: &u,
            w_move_fro: beta_norm,
            v_move_l2: 0.0,
        });
    }
    Ok(model)
}

/// `u(t) = y − (I − ηK/n)ᵗ y`, the trajectory of GD from zero on a linear
/// model with kernel `K`.
#[derive(Debug, Clone)]
pub struct ClosedFormDynamics {
    y: DVector<f64>,
    rate: f64,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Eigen {
        values: DVector<f64>,
        vectors: DMatrix<f64>,
        coords: DVector<f64>,
    },
    Dense(DMatrix<f64>),
}

impl ClosedFormDynamics {
    pub fn new(k: &KernelMatrix, y: &DVector<f64>, eta: f64) -> Result<Self> {
        let n = k.n();
        if y.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for an {n}×{n} kernel",
                y.len()
            )));
        }
        let rate = eta / n.max(1) as f64;
        let repr = if n <= EIGEN_MAX_N {
            let eig = SymmetricEigen::new(k.values.clone());
            let coords = eig.eigenvectors.transpose() * y;
            Repr::Eigen {
                values: eig.eigenvalues,
                vectors: eig.eigenvectors,
                coords,
            }
        } else {
            Repr::Dense(k.values.clone())
        };
        Ok(ClosedFormDynamics {
            y: y.clone(),
            rate,
            repr,
        })
    }

    /// Predictions after `t` steps.
    pub fn predictions(&self, t: usize) -> DVector<f64> {
        if t == 0 {
            return DVector::zeros(self.y.len());
        }
        let residual = match &self.repr {
            Repr::Eigen {
                values,
                vectors,
                coords,
            } => {
                let exponent = i32::try_from(t).unwrap_or(i32::MAX);
                let damped = DVector::from_fn(values.len(), |i, _| {
                    (1.0 - self.rate * values[i]).powi(exponent) * coords[i]
                });
                vectors * damped
            }
            Repr::Dense(k) => {
                let mut r = self.y.clone();
                for _ in 0..t {
                    let kr = k * &r;
                    r.axpy(-self.rate, &kr, 1.0);
                }
                r
            }
        };
        &self.y - residual
    }
}

/// One-shot form of [`ClosedFormDynamics::predictions`].
pub fn closed_form_predictions(
    k: &KernelMatrix,
    y: &DVector<f64>,
    eta: f64,
    t: usize,
) -> Result<DVector<f64>> {
    Ok(ClosedFormDynamics::new(k, y, eta)?.predictions(t))
}

/// Minimum-norm least-squares parameter `β* = Ψ†y`, the limit of GD from zero.
pub fn min_norm_solution(map: FeatureMap, data: &Dataset) -> Result<LinearModel> {
    let psi = map.feature_matrix(&data.x)?;
    let svd = psi.svd(true, true);
    let smax = svd.singular_values.max();
    let beta = if smax > 0.0 {
        svd.solve(&data.y, PINV_CUTOFF * smax)
            .map_err(|e| Error::DegenerateFit(e.to_string()))?
    } else {
        DVector::zeros(map.dim())
    };
    Ok(LinearModel { map, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{moments, nu, Activation};
    use crate::datagen::{generate_inputs, CovarianceSpec, DataSpec};
    use crate::network::Trajectory;
    use crate::rng::{self, Domain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn map(mode: Mode, act: Activation, d: usize) -> FeatureMap {
        let mo = moments(act, 128).unwrap();
        FeatureMap::new(mode, mo, nu(&mo, &CovarianceSpec::identity(d)), d)
    }

    fn dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let x = generate_inputs(&DataSpec::gaussian(n, d, seed));
        let mut r = rng::stream(seed, Domain::Probe, 5);
        let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal).tanh());
        Dataset::new(x, y, "test").unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(map(Mode::First, Activation::Erf, 7).dim(), 8);
        assert_eq!(map(Mode::Second, Activation::Erf, 7).dim(), 9);
        assert_eq!(map(Mode::Both, Activation::Erf, 7).dim(), 9);
    }

    #[test]
    fn both_inner_product_is_sum_of_layers() {
        let data = dataset(6, 5, 1);
        let [m1, m2, m] =
            [Mode::First, Mode::Second, Mode::Both].map(|md| map(md, Activation::Softplus, 5));
        for i in 0..6 {
            for j in 0..6 {
                let xi: Vec<f64> = data.x.row(i).iter().copied().collect();
                let xj: Vec<f64> = data.x.row(j).iter().copied().collect();
                let ip =
                    |fm: &FeatureMap| fm.features(&xi).unwrap().dot(&fm.features(&xj).unwrap());
                assert!((ip(&m) - ip(&m1) - ip(&m2)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn erf_norm_coordinate_vanishes_at_unit_norm() {
        let fm = map(Mode::Second, Activation::Erf, 4);
        let psi = fm.features(&[1.0, -1.0, 1.0, 1.0]).unwrap();
        assert!(psi[5].abs() < 1e-12);
    }

    #[test]
    fn feature_gram_matches_kernel() {
        let data = dataset(30, 6, 2);
        for act in [Activation::Relu, Activation::Softplus] {
            for mode in Mode::ALL {
                let fm = map(mode, act, 6);
                let psi = fm.feature_matrix(&data.x).unwrap();
                let diff = &psi * psi.transpose() - fm.kernel(&data.x).values;
                assert!(diff.amax() < 1e-12, "{act} {mode}: {}", diff.amax());
            }
        }
    }

    #[test]
    fn naive_ablation_is_structural() {
        let fm = map(Mode::Second, Activation::Relu, 5);
        let naive = fm.naive();
        assert_eq!(naive.norm_coeffs, [fm.moments.theta0, 0.0, 0.0]);
        assert_eq!(naive.nu, fm.nu);
        let psi = naive.features(&[3.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(psi[6], fm.moments.theta0);
    }

    #[test]
    fn zero_steps_and_zero_labels() {
        let mut data = dataset(20, 4, 3);
        let fm = map(Mode::Both, Activation::Relu, 4);
        let mut traj = Trajectory::default();
        let m = lin_gd_train(fm, &data, 0.5, 0, &mut traj).unwrap();
        assert_eq!(m.beta_norm(), 0.0);
        assert_eq!(traj.points[0].train_mse, data.y.norm_squared() / 20.0);
        data.y.fill(0.0);
        let m = lin_gd_train(fm, &data, 0.5, 50, &mut |_: &StepView<'_>| {}).unwrap();
        assert_eq!(m.beta_norm(), 0.0);
    }

    #[test]
    fn iterative_matches_closed_form() {
        for (seed, mode) in [(4, Mode::First), (5, Mode::Second), (6, Mode::Both)] {
            let data = dataset(40, 5, seed);
            let fm = map(mode, Activation::Erf, 5);
            let k = fm.kernel(&data.x);
            let eta = 1.0;
            let dynamics = ClosedFormDynamics::new(&k, &data.y, eta).unwrap();
            let mut worst: f64 = 0.0;
            lin_gd_train(fm, &data, eta, 300, &mut |v: &StepView<'_>| {
                worst = worst.max((v.predictions - dynamics.predictions(v.step)).amax());
            })
            .unwrap();
            assert!(worst < 1e-8, "{mode}: {worst}");
        }
    }

    #[test]
    fn dense_path_matches_eigen_path() {
        let data = dataset(30, 4, 7);
        let k = map(Mode::Both, Activation::Tanh, 4).kernel(&data.x);
        let a = ClosedFormDynamics::new(&k, &data.y, 0.8).unwrap();
        let b = ClosedFormDynamics {
            repr: Repr::Dense(k.values.clone()),
            ..a.clone()
        };
        for t in [1, 7, 120] {
            assert!((a.predictions(t) - b.predictions(t)).amax() < 1e-10);
        }
    }

    #[test]
    fn closed_form_edge_cases() {
        let n = 5;
        let eta = 0.5;
        let y = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0, 2.0]);
        let k = KernelMatrix::new(
            DMatrix::identity(n, n) * (n as f64 / eta),
            kernels::Provenance::Lin1,
        );
        assert_eq!(
            closed_form_predictions(&k, &y, eta, 0).unwrap(),
            DVector::zeros(n)
        );
        assert!((closed_form_predictions(&k, &y, eta, 1).unwrap() - &y).amax() < 1e-14);
    }

    #[test]
    fn residual_never_grows_under_stable_rate() {
        for seed in 0..5 {
            let mut r = rng::stream(seed, Domain::Probe, 8);
            let g = DMatrix::from_fn(20, 12, |_, _| r.sample::<f64, _>(StandardNormal));
            let k = KernelMatrix::new(&g * g.transpose(), kernels::Provenance::Lin1);
            let y = DVector::from_fn(20, |_, _| r.sample::<f64, _>(StandardNormal));
            let eta = 2.0 * 20.0 / kernels::spectral_norm_default(&k.values).unwrap();
            let dyn_ = ClosedFormDynamics::new(&k, &y, eta).unwrap();
            for t in 0..=500 {
                assert!((dyn_.predictions(t) - &y).norm() <= y.norm() * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn min_norm_edge_cases() {
        // Consistent system: zero residual.
        let data = dataset(6, 8, 9);
        let fm = map(Mode::First, Activation::Tanh, 8);
        let m = min_norm_solution(fm, &data).unwrap();
        assert!((m.predict(&data.x).unwrap() - &data.y).amax() < 1e-9);
        // Labels orthogonal to every feature column.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, -1.0, 1.0]);
        let fm = FeatureMap::new(Mode::First, moments(Activation::Erf, 64).unwrap(), 0.3, 2);
        let m = min_norm_solution(fm, &Dataset::new(x, y, "xor").unwrap()).unwrap();
        assert!(m.beta.amax() < 1e-12);
    }

    #[test]
    fn gd_converges_to_min_norm() {
        let (n, d) = (200, 10);
        let data = dataset(n, d, 10);
        let fm = map(Mode::First, Activation::Erf, d);
        let eta = 1.0;
        let steps = (50.0 * d as f64 * (d as f64).ln() / eta * 10.0) as usize;
        let m = lin_gd_train(fm, &data, eta, steps, &mut |_: &StepView<'_>| {}).unwrap();
        let star = min_norm_solution(fm, &data).unwrap();
        let gap = (m.predict(&data.x).unwrap() - star.predict(&data.x).unwrap()).norm();
        assert!(gap <= 1e-4 * (n as f64).sqrt(), "{gap}");
    }

    #[test]
    fn beta_norm_is_nondecreasing() {
        for seed in 0..20 {
            let data = dataset(30, 6, 100 + seed);
            let fm = map(Mode::Both, Activation::Softplus, 6);
            let eta = 20.0 / kernels::spectral_norm_default(&fm.kernel(&data.x).values).unwrap();
            let mut last = 0.0;
            lin_gd_train(fm, &data, eta, 200, &mut |v: &StepView<'_>| {
                assert!(v.w_move_fro >= last - 1e-12, "seed {seed} step {}", v.step);
                last = v.w_move_fro;
            })
            .unwrap();
        }
    }
}
