use nalgebra::DMatrix;

use super::{KernelMatrix, Provenance};
use crate::activations::quadrature::{gamma_fn, phi_fn};
use crate::activations::{gauss_hermite, Activation, Quadrature};
use crate::error::{Error, Result};

/// Largest `n` accepted by the entrywise expected-kernel builders.
pub const EXPECTED_NTK_MAX_N: usize = 1024;
/// Smallest quadrature order accepted by the expected-kernel builders.
pub const MIN_EXPECTED_ORDER: usize = 32;

/// Infinite-width first-layer NTK
/// `Θ₁*[i,j] = (xᵢᵀxⱼ/d)·Φ(‖xᵢ‖²/d, ‖xⱼ‖²/d, xᵢᵀxⱼ/d)`.
pub fn expected_ntk_first(x: &DMatrix<f64>, act: Activation, order: usize) -> Result<KernelMatrix> {
    let quad = setup(x, order)?;
    let values = entrywise(x, |a, b, c| Ok(c * phi_fn(act, a, b, c, &quad)?))?;
    Ok(KernelMatrix::new(values, Provenance::ExpectedNtk1))
}

/// Infinite-width second-layer NTK
/// `Θ₂*[i,j] = Γ(‖xᵢ‖/√d, ‖xⱼ‖/√d, xᵢᵀxⱼ/d)`.
pub fn expected_ntk_second(
    x: &DMatrix<f64>,
    act: Activation,
    order: usize,
) -> Result<KernelMatrix> {
    let quad = setup(x, order)?;
    let values = entrywise(x, |a, b, c| gamma_fn(act, a.sqrt(), b.sqrt(), c, &quad))?;
    Ok(KernelMatrix::new(values, Provenance::ExpectedNtk2))
}

fn setup(x: &DMatrix<f64>, order: usize) -> Result<Quadrature> {
    if x.nrows() > EXPECTED_NTK_MAX_N {
        return Err(Error::TooLarge {
            n: x.nrows(),
            cap: EXPECTED_NTK_MAX_N,
        });
    }
    if order < MIN_EXPECTED_ORDER {
        return Err(Error::Config(format!(
            "expected-kernel quadrature order must be >= {MIN_EXPECTED_ORDER}, got {order}"
        )));
    }
    gauss_hermite(order)
}

// Fills the upper triangle from f(‖xᵢ‖²/d, ‖xⱼ‖²/d, xᵢᵀxⱼ/d), rows in parallel.
fn entrywise<F>(x: &DMatrix<f64>, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(f64, f64, f64) -> Result<f64> + Sync,
{
    let n = x.nrows();
    let g = super::data_kernel(x);
    let row = |i: usize| -> Result<Vec<f64>> {
        (i..n)
            .map(|j| {
                // Clamp rounding so that |c| never exceeds √(ab).
                let bound = (g[(i, i)] * g[(j, j)]).sqrt();
                f(g[(i, i)], g[(j, j)], g[(i, j)].clamp(-bound, bound))
            })
            .collect()
    };
    let rows: Vec<Result<Vec<f64>>> = crate::par::map_range(n, row);
    let mut out = DMatrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        for (k, v) in r?.into_iter().enumerate() {
            out[(i, i + k)] = v;
            out[(i + k, i)] = v;
        }
    }
    Ok(out)
}
