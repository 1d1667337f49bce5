use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

const BLOCK: usize = 8;

/// Spectral norm ‖A‖ = √λ_max(AᵀA), by block power iteration on AᵀA with a
/// Rayleigh–Ritz step on the block. Works for indefinite and non-symmetric
/// matrices alike. The start block is drawn from a fixed stream, so results
/// are reproducible. `tol` is relative to the returned norm.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    let b = BLOCK.min(n);
    let mut start = rng::stream(0, Domain::Probe, 0);
    let mut v = DMatrix::from_fn(n, b, |_, _| start.sample::<f64, _>(StandardNormal));
    v = orthonormalize(v);
    let at = a.transpose();
    let mut prev = 0.0_f64;
    for _ in 0..max_iters {
        let av = a * &v;
        let w = &at * &av;
        // Ritz values of AᵀA on span(V): eigenvalues of (AV)ᵀ(AV).
        let h = av.transpose() * &av;
        let top = SymmetricEigen::new(h).eigenvalues.max().max(0.0);
        if top == 0.0 && w.norm() == 0.0 {
            return Ok(0.0);
        }
        if (top - prev).abs() <= 1e-3 * tol * top {
            return Ok(top.sqrt());
        }
        prev = top;
        v = orthonormalize(w);
    }
    Err(Error::NoConvergence(max_iters))
}

/// [`spectral_norm`] with the default tolerance and iteration cap.
pub fn spectral_norm_default(a: &DMatrix<f64>) -> Result<f64> {
    spectral_norm(a, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

fn orthonormalize(v: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = v.shape();
    let mut q = v.qr().q();
    if q.ncols() > cols {
        q = q.columns(0, cols).into_owned();
    }
    debug_assert_eq!(q.nrows(), rows);
    q
}

pub fn frobenius_norm(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// Least-squares fit of `log(norm) = intercept + slope·log(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn decay_fit(ds: &[usize], norms: &[f64]) -> Result<DecayFit> {
    if ds.len() != norms.len() {
        return Err(Error::Shape(format!(
            "{} dimensions but {} norms",
            ds.len(),
            norms.len()
        )));
    }
    if ds.len() < 3 {
        return Err(Error::TooFewPoints(ds.len()));
    }
    if let Some((i, &v)) = norms.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive(v, i));
    }
    if let Some(i) = ds.iter().position(|&d| d == 0) {
        return Err(Error::NonPositive(0.0, i));
    }
    let xs: Vec<f64> = ds.iter().map(|&d| (d as f64).ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all dimensions are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * k * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        slope,
        intercept,
        r_squared,
    })
}
