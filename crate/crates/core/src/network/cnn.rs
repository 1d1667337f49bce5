use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// `(w * x)[i] = Σⱼ w[j]·x[i + j]` with circular indexing `x[i] = x[i + d]`.
pub fn circular_conv(w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let (q, d) = (w.len(), x.len());
    if q > d {
        return Err(Error::FilterTooLarge { q, d });
    }
    Ok((0..d)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(j, wj)| wj * x[(i + j) % d])
                .sum()
        })
        .collect())
}

/// One-layer circular 1-D CNN without pooling:
/// `f(x) = (1/√(md)) Σᵣ vᵣᵀ φ(wᵣ * x/√q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn1D {
    /// Filters, `m × q`.
    pub w: DMatrix<f64>,
    /// Second-layer weights, `m × d`.
    pub v: DMatrix<f64>,
    pub act: Activation,
}

impl Cnn1D {
    /// All weights i.i.d. N(0, 1).
    pub fn gaussian(m: usize, q: usize, d: usize, act: Activation, seed: u64) -> Result<Self> {
        if q > d {
            return Err(Error::FilterTooLarge { q, d });
        }
        let draw = |r: usize, len: usize, offset: usize| -> Vec<f64> {
            let mut rng = rng::stream(seed, Domain::CnnWeights, (2 * r + offset) as u64);
            (0..len).map(|_| rng.sample(StandardNormal)).collect()
        };
        let filters: Vec<Vec<f64>> = (0..m).map(|r| draw(r, q, 0)).collect();
        let second: Vec<Vec<f64>> = (0..m).map(|r| draw(r, d, 1)).collect();
        Ok(Cnn1D {
            w: DMatrix::from_fn(m, q, |r, j| filters[r][j]),
            v: DMatrix::from_fn(m, d, |r, k| second[r][k]),
            act,
        })
    }

    pub fn channels(&self) -> usize {
        self.w.nrows()
    }

    pub fn filter_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "inputs have d={}, CNN expects d={}",
                x.ncols(),
                self.dim()
            )));
        }
        if self.filter_size() > self.dim() {
            return Err(Error::FilterTooLarge {
                q: self.filter_size(),
                d: self.dim(),
            });
        }
        Ok(())
    }

    // Pre-activations (wᵣ * x)/√q for every channel of a single input.
    fn channel_preacts(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let sq = (self.filter_size() as f64).sqrt();
        (0..self.channels())
            .map(|r| {
                let w: Vec<f64> = self.w.row(r).iter().copied().collect();
                let mut c = circular_conv(&w, x).expect("checked filter size");
                c.iter_mut().for_each(|v| *v /= sq);
                c
            })
            .collect()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        let scale = 1.0 / ((self.channels() * self.dim()) as f64).sqrt();
        Ok(DVector::from_fn(x.nrows(), |i, _| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let pre = self.channel_preacts(&xi);
            let mut acc = 0.0;
            for (r, c) in pre.iter().enumerate() {
                for (k, z) in c.iter().enumerate() {
                    acc += self.v[(r, k)] * self.act.phi(*z);
                }
            }
            acc * scale
        }))
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(super::two_layer::half_mse(&self.forward(x)?, y))
    }

    /// Gradients `(∇_W L, ∇_V L)` of the halved mean-squared loss.
    pub fn loss_gradients(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check(x)?;
        let (m, q, d) = (self.channels(), self.filter_size(), self.dim());
        let n = x.nrows();
        let u = self.forward(x)?;
        let scale = 1.0 / ((m * d) as f64).sqrt();
        let sq = (q as f64).sqrt();
        let mut gw = DMatrix::zeros(m, q);
        let mut gv = DMatrix::zeros(m, d);
        for i in 0..n {
            let ri = (u[i] - y[i]) / n as f64;
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let pre = self.channel_preacts(&xi);
            for (r, c) in pre.iter().enumerate() {
                for (k, z) in c.iter().enumerate() {
                    gv[(r, k)] += ri * scale * self.act.phi(*z);
                    let coef = ri * scale * self.v[(r, k)] * self.act.phi_prime(*z) / sq;
                    for j in 0..q {
                        gw[(r, j)] += coef * xi[(k + j) % d];
                    }
                }
            }
        }
        Ok((gw, gv))
    }
}
