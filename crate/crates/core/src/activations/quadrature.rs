//! Gauss–Hermite quadrature under the standard normal measure, and bivariate
//! Gaussian expectations built on it.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use std::f64::consts::PI;

use super::Activation;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 256;

/// Nodes and weights integrating against the N(0, 1) density: weights sum to
/// one and the rule is exact for polynomials of degree `2·order − 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[f(g)] for g ~ N(0, 1).
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Build the `order`-point rule.
///
/// Nodes are seeded by Golub–Welsch (eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite polynomials), polished by Newton steps on the
/// orthonormal three-term recurrence, and symmetrized. Weights come from the
/// Christoffel–Darboux identity `w = 1 / (n·p̃ₙ₋₁(x)²)`.
pub fn gauss_hermite(order: usize) -> Result<Quadrature> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::QuadratureOrder(order));
    }
    let n = order;
    if n == 1 {
        return Ok(Quadrature {
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }

    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    seeds.sort_by(|a, b| a.total_cmp(b));

    // Only the non-negative half is computed; the rule is symmetric.
    let half = n / 2;
    let mut pos = Vec::with_capacity(half);
    for &seed in &seeds[n - half..] {
        let mut x = seed;
        for _ in 0..100 {
            let (pn, pn1) = orthonormal_hermite(n, x);
            let dx = pn / ((n as f64).sqrt() * pn1);
            x -= dx;
            if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, pn1) = orthonormal_hermite(n, x);
        pos.push((x, 1.0 / (n as f64 * pn1 * pn1)));
    }

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(x, w) in pos.iter().rev() {
        nodes.push(-x);
        weights.push(w);
    }
    if n % 2 == 1 {
        let (_, pn1) = orthonormal_hermite(n, 0.0);
        nodes.push(0.0);
        weights.push(1.0 / (n as f64 * pn1 * pn1));
    }
    for &(x, w) in &pos {
        nodes.push(x);
        weights.push(w);
    }
    Ok(Quadrature { nodes, weights })
}

/// (p̃ₙ(x), p̃ₙ₋₁(x)) for the Hermite polynomials orthonormal under N(0, 1).
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Which factor of the activation enters a bivariate expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActPart {
    /// φ
    Value,
    /// φ′
    Derivative,
}

/// A 2×2 covariance `[[var1, cov], [cov, var2]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
}

impl Cov2 {
    pub fn new(var1: f64, var2: f64, cov: f64) -> Self {
        Cov2 { var1, var2, cov }
    }

    /// Unit marginals with correlation `rho`.
    pub fn correlation(rho: f64) -> Self {
        Cov2::new(1.0, 1.0, rho)
    }
}

// |c| may exceed √(ab) by this relative slack before we call it indefinite.
const PSD_SLACK: f64 = 1e-10;
// Below this relative determinant the covariance is treated as rank one.
const DEGENERATE: f64 = 1e-14;

/// E[f₁(z₁)·f₂(z₂)] for (z₁, z₂) ~ N(0, Λ), where each fᵢ is φ or φ′ of `act`.
///
/// Uses the tensor-product rule after a Cholesky factorization of Λ. When Λ is
/// (numerically) rank one, i.e. |c| = √(ab), the integral collapses to a
/// univariate one along the shared direction; this is the case on kernel
/// diagonals.
pub fn bivariate_expectation(
    act: Activation,
    f1: ActPart,
    f2: ActPart,
    lambda: Cov2,
    quad: &Quadrature,
) -> Result<f64> {
    let Cov2 {
        var1: a,
        var2: b,
        cov: c,
    } = lambda;
    let bad = || Error::NotPsd { a, b, c };
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < 0.0 || b < 0.0 {
        return Err(bad());
    }
    let ab = a * b;
    if c * c > ab * (1.0 + PSD_SLACK) + f64::MIN_POSITIVE {
        return Err(bad());
    }

    if a == 0.0 || b == 0.0 {
        let (s1, s2) = (a.sqrt(), b.sqrt());
        return Ok(quad.expect(|g| act.eval(f1, s1 * g) * act.eval(f2, s2 * g)));
    }

    if let Some(slope) = act.slope() {
        if let Some(v) = piecewise_linear_expectation(slope, f1, f2, a, b, c) {
            return Ok(v);
        }
    }

    let det = ab - c * c;
    let s1 = a.sqrt();
    if det <= DEGENERATE * ab {
        let s2 = b.sqrt().copysign(c);
        return Ok(quad.expect(|g| act.eval(f1, s1 * g) * act.eval(f2, s2 * g)));
    }

    let l21 = c / s1;
    let l22 = (b - l21 * l21).max(0.0).sqrt();
    let nodes = quad.nodes();
    let weights = quad.weights();
    let mut total = 0.0;
    for (&g1, &w1) in nodes.iter().zip(weights) {
        let outer = act.eval(f1, s1 * g1);
        if outer == 0.0 {
            continue;
        }
        let shift = l21 * g1;
        let inner: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(&g2, &w2)| w2 * act.eval(f2, shift + l22 * g2))
            .sum();
        total += w1 * outer * inner;
    }
    Ok(total)
}

// Exact arc-cosine forms for φ(z) = max(z, 0) + slope·min(z, 0) with a, b > 0.
// The tensor-product rule converges only slowly across the kink, so these are
// used instead whenever both factors are φ or both are φ′.
fn piecewise_linear_expectation(
    slope: f64,
    f1: ActPart,
    f2: ActPart,
    a: f64,
    b: f64,
    c: f64,
) -> Option<f64> {
    let s = (a * b).sqrt();
    let rho = (c / s).clamp(-1.0, 1.0);
    let k = (1.0 - slope) * (1.0 - slope);
    match (f1, f2) {
        (ActPart::Value, ActPart::Value) => {
            let relu = s / (2.0 * PI) * ((1.0 - rho * rho).sqrt() + (PI - rho.acos()) * rho);
            Some(slope * c + k * relu)
        }
        (ActPart::Derivative, ActPart::Derivative) => {
            Some(slope + k * (0.25 + rho.asin() / (2.0 * PI)))
        }
        _ => None,
    }
}

/// Φ(a, b, c) = E[φ′(z₁)φ′(z₂)] with Λ = [[a, c], [c, b]] (a, b are variances).
pub fn phi_fn(act: Activation, a: f64, b: f64, c: f64, quad: &Quadrature) -> Result<f64> {
    bivariate_expectation(
        act,
        ActPart::Derivative,
        ActPart::Derivative,
        Cov2::new(a, b, c),
        quad,
    )
}

/// Γ(a, b, c) = E[φ(z₁)φ(z₂)] with Λ = [[a², c], [c, b²]] (a, b are standard
/// deviations).
pub fn gamma_fn(act: Activation, a: f64, b: f64, c: f64, quad: &Quadrature) -> Result<f64> {
    bivariate_expectation(
        act,
        ActPart::Value,
        ActPart::Value,
        Cov2::new(a * a, b * b, c),
        quad,
    )
}

/// P(ρ) = E[φ(z₁)φ(z₂)] at unit marginals and correlation ρ.
pub fn p_fn(act: Activation, rho: f64, quad: &Quadrature) -> Result<f64> {
    bivariate_expectation(
        act,
        ActPart::Value,
        ActPart::Value,
        Cov2::correlation(rho),
        quad,
    )
}

/// Q(ρ) = E[φ′(z₁)φ′(z₂)] at unit marginals and correlation ρ.
pub fn q_fn(act: Activation, rho: f64, quad: &Quadrature) -> Result<f64> {
    bivariate_expectation(
        act,
        ActPart::Derivative,
        ActPart::Derivative,
        Cov2::correlation(rho),
        quad,
    )
}
