//! Kernel matrices: empirical NTKs of a [`TwoLayerNet`], their
//! infinite-width expectations, the linear-model kernels, the CNN kernel, and
//! the norms used to compare them.

mod cnn;
mod expected;
mod spectral;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cnn::cnn_infinite_ntk;
pub use expected::{
    expected_ntk_first, expected_ntk_second, EXPECTED_NTK_MAX_N, MIN_EXPECTED_ORDER,
};
pub use spectral::{
    decay_fit, frobenius_norm, spectral_norm, spectral_norm_default, DecayFit, DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
};

use crate::activations::Moments;
use crate::error::Result;
use crate::network::TwoLayerNet;
use crate::Mode;

/// Which construction produced a [`KernelMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Ntk1,
    Ntk2,
    NtkFull,
    ExpectedNtk1,
    ExpectedNtk2,
    Lin1,
    Lin2,
    LinFull,
    CnnInf,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Ntk1 => "ntk1",
            Provenance::Ntk2 => "ntk2",
            Provenance::NtkFull => "ntk-full",
            Provenance::ExpectedNtk1 => "expected-ntk1",
            Provenance::ExpectedNtk2 => "expected-ntk2",
            Provenance::Lin1 => "lin1",
            Provenance::Lin2 => "lin2",
            Provenance::LinFull => "lin-full",
            Provenance::CnnInf => "cnn-inf",
        };
        f.write_str(s)
    }
}

/// A symmetric `n × n` kernel matrix tagged with its construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub provenance: Provenance,
}

impl KernelMatrix {
    /// Wraps `values`, averaging with the transpose so the result is exactly
    /// symmetric.
    pub fn new(mut values: DMatrix<f64>, provenance: Provenance) -> Self {
        symmetrize(&mut values);
        KernelMatrix { values, provenance }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `XXᵀ/d`.
pub fn data_kernel(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = x * x.transpose();
    k /= x.ncols().max(1) as f64;
    k
}

/// First-layer NTK `Θ₁ = J₁J₁ᵀ = (1/m) Σᵣ vᵣ² φ′(Xwᵣ/√d)φ′(Xwᵣ/√d)ᵀ ⊙ XXᵀ/d`.
pub fn ntk_first_layer(net: &TwoLayerNet, x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let mut a = net.preactivations(x)?;
    net.act.apply_prime_in_place(a.as_mut_slice());
    for (mut col, vr) in a.column_iter_mut().zip(net.v.iter()) {
        col *= *vr;
    }
    let mut k = &a * a.transpose();
    k /= net.width() as f64;
    k.component_mul_assign(&data_kernel(x));
    Ok(KernelMatrix::new(k, Provenance::Ntk1))
}

/// Second-layer NTK `Θ₂ = J₂J₂ᵀ = φ(XWᵀ/√d)φ(XWᵀ/√d)ᵀ/m`.
pub fn ntk_second_layer(net: &TwoLayerNet, x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let j2 = net.jacobian_second_layer(x)?;
    Ok(KernelMatrix::new(&j2 * j2.transpose(), Provenance::Ntk2))
}

/// `Θ = Θ₁ + Θ₂`.
pub fn ntk_full(net: &TwoLayerNet, x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let k1 = ntk_first_layer(net, x)?;
    let k2 = ntk_second_layer(net, x)?;
    Ok(KernelMatrix::new(
        k1.values + k2.values,
        Provenance::NtkFull,
    ))
}

/// The norm-dependent feature `qᵢ = ϑ₀ + ϑ₁(‖xᵢ‖/√d − 1) + ϑ₂(‖xᵢ‖/√d − 1)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector {
    pub q: DVector<f64>,
}

impl QVector {
    pub fn new(x: &DMatrix<f64>, coeffs: [f64; 3]) -> Self {
        let sqrt_d = (x.ncols().max(1) as f64).sqrt();
        let q = DVector::from_fn(x.nrows(), |i, _| {
            norm_feature(x.row(i).norm() / sqrt_d, coeffs)
        });
        QVector { q }
    }
}

/// `ϑ₀ + ϑ₁(r − 1) + ϑ₂(r − 1)²` at the normalized norm `r = ‖x‖/√d`.
pub fn norm_feature(r: f64, [t0, t1, t2]: [f64; 3]) -> f64 {
    let e = r - 1.0;
    t0 + t1 * e + t2 * e * e
}

/// Linear-model kernel for `mode` using the moments' norm coefficients.
///
/// * first: `(ζ²XXᵀ + ν²11ᵀ)/d`
/// * second: `(ζ²XXᵀ + ½ν²11ᵀ)/d + qqᵀ`
/// * both: `(2ζ²XXᵀ + (3/2)ν²11ᵀ)/d + qqᵀ`
pub fn linear_kernel(x: &DMatrix<f64>, moments: &Moments, nu: f64, mode: Mode) -> KernelMatrix {
    linear_kernel_with(x, moments.zeta, nu, moments.norm_coefficients(), mode)
}

/// [`linear_kernel`] with explicit norm-feature coefficients (ϑ₀, ϑ₁, ϑ₂).
pub fn linear_kernel_with(
    x: &DMatrix<f64>,
    zeta: f64,
    nu: f64,
    coeffs: [f64; 3],
    mode: Mode,
) -> KernelMatrix {
    let d = x.ncols().max(1) as f64;
    let (data_w, const_w, with_q, provenance) = match mode {
        Mode::First => (1.0, 1.0, false, Provenance::Lin1),
        Mode::Second => (1.0, 0.5, true, Provenance::Lin2),
        Mode::Both => (2.0, 1.5, true, Provenance::LinFull),
    };
    let mut k = data_kernel(x) * (data_w * zeta * zeta);
    k.add_scalar_mut(const_w * nu * nu / d);
    if with_q {
        let q = QVector::new(x, coeffs).q;
        k.ger(1.0, &q, &q, 1.0);
    }
    KernelMatrix::new(k, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{moments, Activation};
    use crate::datagen::{generate_hypercube, generate_inputs, DataSpec};
    use nalgebra::SymmetricEigen;

    fn data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        generate_inputs(&DataSpec::gaussian(n, d, seed))
    }

    fn max_abs(a: &DMatrix<f64>) -> f64 {
        a.amax()
    }

    #[test]
    fn identity_activation_gives_data_kernel() {
        let x = data(12, 5, 1);
        let net = TwoLayerNet::symmetric_init(8, 5, Activation::Identity, 2).unwrap();
        let k = ntk_first_layer(&net, &x).unwrap();
        assert!(max_abs(&(k.values - data_kernel(&x))) < 1e-14);
    }

    #[test]
    fn single_point_first_layer() {
        let x = data(1, 6, 3);
        let net = TwoLayerNet::symmetric_init(10, 6, Activation::Tanh, 4).unwrap();
        let k = ntk_first_layer(&net, &x).unwrap();
        let z = net.preactivations(&x).unwrap();
        let avg: f64 = z
            .iter()
            .map(|&t| Activation::Tanh.phi_prime(t).powi(2))
            .sum::<f64>()
            / 10.0;
        let exact = x.row(0).norm_squared() / 6.0 * avg;
        assert!((k.values[(0, 0)] - exact).abs() < 1e-14 * exact.abs().max(1.0));
    }

    #[test]
    fn first_layer_matches_matrix_free_jacobian() {
        let (n, d, m) = (7, 4, 6);
        let x = data(n, d, 5);
        let net = TwoLayerNet::symmetric_init(m, d, Activation::Erf, 6).unwrap();
        let k = ntk_first_layer(&net, &x).unwrap();
        // Column i of J₁J₁ᵀ is J₁(J₁ᵀeᵢ).
        for i in 0..n {
            let e = DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
            let jt = net.jacobian_first_layer_transpose_apply(&x, &e).unwrap();
            let col = net.jacobian_first_layer_apply(&x, &jt).unwrap();
            for j in 0..n {
                assert!((col[j] - k.values[(j, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn second_layer_zero_inputs_erf() {
        let x = DMatrix::zeros(4, 3);
        let net = TwoLayerNet::symmetric_init(6, 3, Activation::Erf, 1).unwrap();
        assert_eq!(max_abs(&ntk_second_layer(&net, &x).unwrap().values), 0.0);
    }

    #[test]
    fn second_layer_fluctuations_shrink_with_width() {
        let x = data(3, 5, 9);
        let spread = |m: usize| {
            let vals: Vec<f64> = (0..200)
                .map(|s| {
                    ntk_second_layer(
                        &TwoLayerNet::symmetric_init(m, 5, Activation::Erf, 100 + s).unwrap(),
                        &x,
                    )
                    .unwrap()
                    .values[(0, 1)]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        let ratio = spread(64) / spread(256);
        assert!((1.6..2.5).contains(&ratio), "std ratio {ratio}");
    }

    #[test]
    fn full_is_sum_symmetric_and_psd() {
        let x = data(40, 8, 11);
        let net = TwoLayerNet::symmetric_init(32, 8, Activation::Softplus, 12).unwrap();
        let k1 = ntk_first_layer(&net, &x).unwrap();
        let k2 = ntk_second_layer(&net, &x).unwrap();
        let k = ntk_full(&net, &x).unwrap();
        assert!(max_abs(&(&k.values - &k1.values - &k2.values)) <= 1e-14 * max_abs(&k.values));
        assert!((k.trace() - k1.trace() - k2.trace()).abs() < 1e-12 * k.trace());
        for kern in [&k1, &k2, &k] {
            assert_eq!(kern.values, kern.values.transpose());
            let min = SymmetricEigen::new(kern.values.clone()).eigenvalues.min();
            assert!(min >= -1e-8 * spectral_norm_default(&kern.values).unwrap());
        }
    }

    #[test]
    fn q_vector_is_constant_on_hypercube() {
        let x = generate_hypercube(20, 9, 3);
        let q = QVector::new(&x, [0.3, 0.7, -1.1]);
        assert!(q.q.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn erf_hypercube_second_kernel_has_no_rank_one_term() {
        let x = generate_hypercube(15, 10, 4);
        let mo = moments(Activation::Erf, 64).unwrap();
        let nu = 0.37;
        let k = linear_kernel(&x, &mo, nu, Mode::Second);
        let mut expect = data_kernel(&x) * (mo.zeta * mo.zeta);
        expect.add_scalar_mut(0.5 * nu * nu / 10.0);
        assert!(max_abs(&(k.values - expect)) < 1e-14);
    }

    #[test]
    fn full_linear_kernel_is_sum() {
        let x = data(25, 6, 8);
        let mo = moments(Activation::Relu, 128).unwrap();
        let nu = 0.4;
        let k1 = linear_kernel(&x, &mo, nu, Mode::First);
        let k2 = linear_kernel(&x, &mo, nu, Mode::Second);
        let k = linear_kernel(&x, &mo, nu, Mode::Both);
        assert_eq!(k.provenance, Provenance::LinFull);
        assert!(
            max_abs(&(&k.values - &k1.values - &k2.values)) < 1e-14 * max_abs(&k.values).max(1.0)
        );
        let trace: f64 = (0..25)
            .map(|i| mo.zeta * mo.zeta * x.row(i).norm_squared() / 6.0 + nu * nu / 6.0)
            .sum();
        assert!((k1.trace() - trace).abs() < 1e-12 * trace);
    }

    #[test]
    fn single_point_identity_linear_kernel() {
        let mut x = DMatrix::from_element(1, 4, 1.0);
        x[(0, 2)] = -1.0;
        let mo = moments(Activation::Identity, 32).unwrap();
        let k = linear_kernel(&x, &mo, 0.0, Mode::First);
        assert!((k.values[(0, 0)] - 1.0).abs() < 1e-14);
    }
}
