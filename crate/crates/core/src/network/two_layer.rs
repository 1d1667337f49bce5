use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// `f(x; W, v) = (1/√m) Σᵣ vᵣ φ(wᵣᵀx/√d)`, NTK parameterization, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// First layer, `m × d`.
    pub w: DMatrix<f64>,
    /// Second layer, length `m`.
    pub v: DVector<f64>,
    pub act: Activation,
}

impl TwoLayerNet {
    pub fn new(w: DMatrix<f64>, v: DVector<f64>, act: Activation) -> Result<Self> {
        if w.nrows() != v.len() {
            return Err(Error::Shape(format!(
                "W has {} rows, v has {} entries",
                w.nrows(),
                v.len()
            )));
        }
        Ok(TwoLayerNet { w, v, act })
    }

    /// Symmetric initialization: rows `0..m/2` of W are i.i.d. N(0, I), the
    /// second half mirrors them, and v's second half negates its first half of
    /// uniform ±1 signs. The network output is then zero for every input.
    pub fn symmetric_init(m: usize, d: usize, act: Activation, seed: u64) -> Result<Self> {
        if !m.is_multiple_of(2) || m == 0 {
            return Err(Error::OddWidth(m));
        }
        let half = m / 2;
        let rows: Vec<Vec<f64>> = (0..half)
            .map(|r| gaussian_row(seed, Domain::Weights, r, d))
            .collect();
        let w = DMatrix::from_fn(m, d, |r, j| rows[r % half][j]);
        let mut signs = rng::stream(seed, Domain::Signs, 0);
        let first: Vec<f64> = (0..half)
            .map(|_| if signs.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let v = DVector::from_fn(m, |r, _| if r < half { first[r] } else { -first[r - half] });
        Ok(TwoLayerNet { w, v, act })
    }

    /// Independent N(0, I) rows and ±1 signs, without mirroring. Used for
    /// teacher networks, whose width need not be even.
    pub fn gaussian(m: usize, d: usize, act: Activation, seed: u64) -> Self {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|r| gaussian_row(seed, Domain::Teacher, r, d))
            .collect();
        let w = DMatrix::from_fn(m, d, |r, j| rows[r][j]);
        let mut signs = rng::stream(seed, Domain::Signs, 1);
        let v = DVector::from_fn(m, |_, _| if signs.random::<bool>() { 1.0 } else { -1.0 });
        TwoLayerNet { w, v, act }
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "inputs have d={}, network expects d={}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations `XWᵀ/√d`, `n × m`.
    pub fn preactivations(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        let mut z = x * self.w.transpose();
        z /= (self.dim() as f64).sqrt();
        Ok(z)
    }

    /// Outputs on the rows of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let z = self.preactivations(x)?;
        Ok(self.output_from(&z))
    }

    // The two halves of the hidden layer are summed separately and then added,
    // so that mirrored neurons with opposite signs cancel exactly.
    fn output_from(&self, z: &DMatrix<f64>) -> DVector<f64> {
        let mut h = z.clone();
        self.act.apply_in_place(h.as_mut_slice());
        let m = self.width();
        let half = m / 2;
        let mut u = h.columns(0, half) * self.v.rows(0, half);
        u += h.columns(half, half) * self.v.rows(half, half);
        if m % 2 == 1 {
            u.axpy(self.v[m - 1], &h.column(m - 1), 1.0);
        }
        u /= (m as f64).sqrt();
        u
    }

    /// `J₁·vec(ΔW)` without materializing the `n × md` Jacobian:
    /// `(J₁ΔW)ᵢ = (1/√(md)) Σᵣ vᵣ φ′(wᵣᵀxᵢ/√d) ⟨Δwᵣ, xᵢ⟩`.
    pub fn jacobian_first_layer_apply(
        &self,
        x: &DMatrix<f64>,
        delta_w: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        if delta_w.shape() != self.w.shape() {
            return Err(Error::Shape(format!(
                "ΔW is {:?}, W is {:?}",
                delta_w.shape(),
                self.w.shape()
            )));
        }
        let mut dz = self.preactivations(x)?;
        self.act.apply_prime_in_place(dz.as_mut_slice());
        let proj = x * delta_w.transpose();
        let scale = 1.0 / ((self.width() * self.dim()) as f64).sqrt();
        let out = DVector::from_fn(x.nrows(), |i, _| {
            let mut acc = 0.0;
            for r in 0..self.width() {
                acc += self.v[r] * dz[(i, r)] * proj[(i, r)];
            }
            acc * scale
        });
        Ok(out)
    }

    /// `J₁ᵀr` as an `m × d` matrix.
    pub fn jacobian_first_layer_transpose_apply(
        &self,
        x: &DMatrix<f64>,
        r: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        if r.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "residual has {} entries, inputs have n={}",
                r.len(),
                x.nrows()
            )));
        }
        let mut dz = self.preactivations(x)?;
        self.act.apply_prime_in_place(dz.as_mut_slice());
        Ok(self.first_layer_grad_from(&dz, x, r))
    }

    // dz holds φ′(Z).
    fn first_layer_grad_from(
        &self,
        dz: &DMatrix<f64>,
        x: &DMatrix<f64>,
        r: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut b = dz.clone();
        for (mut col, vr) in b.column_iter_mut().zip(self.v.iter()) {
            col.component_mul_assign(r);
            col *= *vr;
        }
        let mut g = b.transpose() * x;
        g /= ((self.width() * self.dim()) as f64).sqrt();
        g
    }

    /// `J₂ = φ(XWᵀ/√d)/√m`, `n × m`.
    pub fn jacobian_second_layer(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut h = self.preactivations(x)?;
        self.act.apply_in_place(h.as_mut_slice());
        h /= (self.width() as f64).sqrt();
        Ok(h)
    }

    /// `L = (1/2n) Σ (f(xᵢ) − yᵢ)²`.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let u = self.forward(x)?;
        Ok(half_mse(&u, y))
    }

    /// Gradients `(∇_W L, ∇_v L)`.
    pub fn loss_gradients(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let z = self.preactivations(x)?;
        let u = self.output_from(&z);
        let r = (u - y) / x.nrows() as f64;
        let mut dz = z.clone();
        self.act.apply_prime_in_place(dz.as_mut_slice());
        let gw = self.first_layer_grad_from(&dz, x, &r);
        let mut h = z;
        self.act.apply_in_place(h.as_mut_slice());
        let mut gv = h.transpose() * r;
        gv /= (self.width() as f64).sqrt();
        Ok((gw, gv))
    }

    /// One full-batch GD step on the halved mean-squared loss:
    /// `W ← W − (η₁/n)·J₁ᵀ(u − y)`, `v ← v − (η₂/n)·J₂ᵀ(u − y)`.
    /// A layer with zero learning rate is left untouched. Returns the
    /// predictions `u` at the parameters before the update.
    pub fn gd_step(
        &mut self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        eta1: f64,
        eta2: f64,
    ) -> Result<DVector<f64>> {
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for n={}",
                y.len(),
                x.nrows()
            )));
        }
        let z = self.preactivations(x)?;
        let u = self.output_from(&z);
        let n = x.nrows() as f64;
        let r = &u - y;
        let grad_w = (eta1 != 0.0).then(|| {
            let mut dz = z.clone();
            self.act.apply_prime_in_place(dz.as_mut_slice());
            self.first_layer_grad_from(&dz, x, &r)
        });
        if eta2 != 0.0 {
            let mut h = z;
            self.act.apply_in_place(h.as_mut_slice());
            let g = h.transpose() * &r;
            let step = eta2 / (n * (self.width() as f64).sqrt());
            self.v.axpy(-step, &g, 1.0);
        }
        if let Some(g) = grad_w {
            self.w -= g * (eta1 / n);
        }
        Ok(u)
    }
}

pub(crate) fn half_mse(u: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (u - y).norm_squared() / (2.0 * y.len().max(1) as f64)
}

fn gaussian_row(seed: u64, domain: Domain, row: usize, d: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, domain, row as u64);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}
