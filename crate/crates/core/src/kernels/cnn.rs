use nalgebra::DMatrix;

use super::{KernelMatrix, Provenance};
use crate::activations::quadrature::{p_fn, q_fn};
use crate::activations::{gauss_hermite, Activation};
use crate::error::{Error, Result};

/// Infinite-width NTK of the circular 1-D CNN on hypercube inputs:
///
/// `Θ[i,j] = (1/d) Σₖ [P(ρᵢⱼₖ) + Q(ρᵢⱼₖ)·ρᵢⱼₖ]`,
///
/// where `ρᵢⱼₖ = ⟨xᵢ[k..k+q], xⱼ[k..k+q]⟩/q` over circular patches. The first
/// term comes from the output layer, the second from the filters. Since every
/// ρ is a multiple of 1/q, P and Q are tabulated once on that grid.
pub fn cnn_infinite_ntk(
    x: &DMatrix<f64>,
    q: usize,
    act: Activation,
    order: usize,
) -> Result<KernelMatrix> {
    let (n, d) = x.shape();
    if q == 0 || q > d {
        return Err(Error::FilterTooLarge { q, d });
    }
    let signs = hypercube_signs(x)?;
    let quad = gauss_hermite(order)?;
    // table[s + q] holds P(s/q) + Q(s/q)·s/q for patch sums s ∈ [−q, q].
    let table: Vec<f64> = (0..=2 * q)
        .map(|k| {
            let rho = (k as f64 - q as f64) / q as f64;
            Ok(p_fn(act, rho, &quad)? + q_fn(act, rho, &quad)? * rho)
        })
        .collect::<Result<_>>()?;

    let row = |i: usize| -> Vec<f64> {
        let mut prod = vec![0i32; d];
        (i..n)
            .map(|j| {
                for t in 0..d {
                    prod[t] = signs[i * d + t] as i32 * signs[j * d + t] as i32;
                }
                let mut s: i32 = prod[..q].iter().sum();
                let mut acc = 0.0;
                for k in 0..d {
                    acc += table[(s + q as i32) as usize];
                    s += prod[(k + q) % d] - prod[k];
                }
                acc / d as f64
            })
            .collect()
    };
    let rows = crate::par::map_range(n, row);
    let mut out = DMatrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        for (k, v) in r.into_iter().enumerate() {
            out[(i, i + k)] = v;
            out[(i + k, i)] = v;
        }
    }
    Ok(KernelMatrix::new(out, Provenance::CnnInf))
}

// Row-major ±1 signs; rejects anything that is not exactly ±1.
fn hypercube_signs(x: &DMatrix<f64>) -> Result<Vec<i8>> {
    let (n, d) = x.shape();
    let mut out = vec![0i8; n * d];
    for i in 0..n {
        for j in 0..d {
            let v = x[(i, j)];
            out[i * d + j] = if v == 1.0 {
                1
            } else if v == -1.0 {
                -1
            } else {
                return Err(Error::NotHypercube {
                    row: i,
                    col: j,
                    value: v,
                });
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{moments, quadrature::p_fn};
    use crate::datagen::generate_hypercube;

    #[test]
    fn diagonal_is_p1_plus_q1() {
        let x = generate_hypercube(6, 12, 1);
        let k = cnn_infinite_ntk(&x, 4, Activation::Tanh, 64).unwrap();
        let quad = gauss_hermite(64).unwrap();
        let exact = quad.expect(|g| Activation::Tanh.phi(g).powi(2))
            + quad.expect(|g| Activation::Tanh.phi_prime(g).powi(2));
        for i in 0..6 {
            assert!((k.values[(i, i)] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_patches_give_theta0_squared() {
        // Rows agree on even coordinates and disagree on odd ones, so every
        // length-2 patch has correlation zero.
        let d = 8;
        let a = DMatrix::from_element(1, d, 1.0);
        let b = DMatrix::from_fn(1, d, |_, j| if j % 2 == 0 { 1.0 } else { -1.0 });
        let x = DMatrix::from_rows(&[a.row(0).into_owned(), b.row(0).into_owned()]);
        for act in [Activation::Erf, Activation::Relu] {
            let k = cnn_infinite_ntk(&x, 2, act, 64).unwrap();
            let t0 = moments(act, 128).unwrap().theta0;
            assert!((k.values[(0, 1)] - t0 * t0).abs() < 1e-12, "{act}");
        }
    }

    #[test]
    fn matches_direct_patch_sum() {
        let x = generate_hypercube(5, 10, 7);
        let q = 3;
        let k = cnn_infinite_ntk(&x, q, Activation::Erf, 64).unwrap();
        let quad = gauss_hermite(64).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for s in 0..10 {
                    let rho: f64 = (0..q)
                        .map(|t| x[(i, (s + t) % 10)] * x[(j, (s + t) % 10)])
                        .sum::<f64>()
                        / q as f64;
                    acc += p_fn(Activation::Erf, rho, &quad).unwrap()
                        + q_fn(Activation::Erf, rho, &quad).unwrap() * rho;
                }
                assert!((k.values[(i, j)] - acc / 10.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut x = generate_hypercube(3, 6, 2);
        assert!(matches!(
            cnn_infinite_ntk(&x, 7, Activation::Erf, 32),
            Err(Error::FilterTooLarge { .. })
        ));
        x[(1, 4)] = 0.5;
        assert!(matches!(
            cnn_infinite_ntk(&x, 2, Activation::Erf, 32),
            Err(Error::NotHypercube { row: 1, col: 4, .. })
        ));
    }
}
