//! Activation functions and their Gaussian moments.
//!
//! Two families are supported: smooth activations with bounded first and
//! second derivatives (erf, tanh, sigmoid, softplus, identity) and piecewise
//! linear ones `z ↦ z (z ≥ 0), a·z (z < 0)` (ReLU is `a = 0`). For the
//! piecewise-linear family the derivative at the kink is defined as 1.
//!
//! The linear surrogates are parameterized by a handful of expectations over
//! `g ~ N(0, 1)`, collected in [`Moments`]. They are evaluated with
//! Gauss–Hermite quadrature (see [`quadrature`]).

pub mod quadrature;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::CovarianceSpec;
use crate::error::{Error, Result};
pub use quadrature::{bivariate_expectation, gauss_hermite, ActPart, Cov2, Quadrature};

use std::f64::consts::FRAC_2_SQRT_PI as TWO_OVER_SQRT_PI;

/// Smoothness class of an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    Smooth,
    PiecewiseLinear,
}

/// Activation function descriptor.
///
/// Parses from and displays as `erf`, `tanh`, `sigmoid`, `softplus`, `relu`,
/// `identity` or `leaky-relu:<slope>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Erf,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    /// `z` for `z ≥ 0`, `slope·z` otherwise.
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub const ALL_SMOOTH: [Activation; 5] = [
        Activation::Erf,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Identity,
    ];

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Activation::Relu | Activation::LeakyRelu(_) => Smoothness::PiecewiseLinear,
            _ => Smoothness::Smooth,
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.smoothness() == Smoothness::Smooth
    }

    /// Default Gauss–Hermite order: 96 for smooth activations (tanh and
    /// sigmoid converge to ~1e−12 there), 128 for piecewise-linear ones.
    pub fn default_order(&self) -> usize {
        match self.smoothness() {
            Smoothness::Smooth => 96,
            Smoothness::PiecewiseLinear => 128,
        }
    }

    /// Negative-side slope of a piecewise-linear activation.
    fn slope(&self) -> Option<f64> {
        match *self {
            Activation::Relu => Some(0.0),
            Activation::LeakyRelu(a) => Some(a),
            Activation::Identity => Some(1.0),
            _ => None,
        }
    }

    /// φ(z).
    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        match *self {
            Activation::Erf => libm::erf(z),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Activation::Identity => z,
        }
    }

    /// φ′(z). For piecewise-linear activations φ′(0) = 1.
    #[inline]
    pub fn phi_prime(&self, z: f64) -> f64 {
        match *self {
            Activation::Erf => TWO_OVER_SQRT_PI * (-z * z).exp(),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(z),
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// φ″(z); zero away from the kink for piecewise-linear activations.
    pub fn phi_second(&self, z: f64) -> f64 {
        match *self {
            Activation::Erf => -2.0 * z * TWO_OVER_SQRT_PI * (-z * z).exp(),
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            _ => 0.0,
        }
    }

    /// Evaluate `part` of the activation at `z`.
    #[inline]
    pub fn eval(&self, part: ActPart, z: f64) -> f64 {
        match part {
            ActPart::Value => self.phi(z),
            ActPart::Derivative => self.phi_prime(z),
        }
    }

    /// Entrywise φ in place.
    pub fn apply_in_place(&self, values: &mut [f64]) {
        for v in values {
            *v = self.phi(*v);
        }
    }

    /// Entrywise φ′ in place.
    pub fn apply_prime_in_place(&self, values: &mut [f64]) {
        for v in values {
            *v = self.phi_prime(*v);
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Erf => f.write_str("erf"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Softplus => f.write_str("softplus"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(a) => write!(f, "leaky-relu:{a}"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let act = match s.as_str() {
            "erf" => Activation::Erf,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            "relu" => Activation::Relu,
            "identity" | "linear" => Activation::Identity,
            other => {
                let slope = other
                    .strip_prefix("leaky-relu")
                    .map(|rest| rest.trim_start_matches([':', '=']))
                    .ok_or_else(|| Error::Config(format!("unknown activation `{other}`")))?;
                let a = if slope.is_empty() {
                    0.01
                } else {
                    slope
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad leaky-relu slope `{slope}`")))?
                };
                if !a.is_finite() {
                    return Err(Error::Config(format!(
                        "leaky-relu slope must be finite, got {a}"
                    )));
                }
                Activation::LeakyRelu(a)
            }
        };
        Ok(act)
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

/// Gaussian expectation constants of an activation, `g ~ N(0, 1)`:
///
/// | field         | value                 |
/// |---------------|-----------------------|
/// | `zeta`        | E[φ′(g)]              |
/// | `g_phi_prime` | E[g·φ′(g)] (= ϑ₁)     |
/// | `theta0`      | E[φ(g)]               |
/// | `theta2`      | E[(g³/2 − g)·φ′(g)]   |
/// | `gamma`       | E[φ′(g)²]             |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub zeta: f64,
    pub g_phi_prime: f64,
    pub theta0: f64,
    pub theta2: f64,
    pub gamma: f64,
    pub quad_order: usize,
}

impl Moments {
    /// ϑ₁ = E[g·φ′(g)], the same quantity as `g_phi_prime`.
    #[inline]
    pub fn theta1(&self) -> f64 {
        self.g_phi_prime
    }

    /// Coefficients (ϑ₀, ϑ₁, ϑ₂) of the norm-dependent feature.
    pub fn norm_coefficients(&self) -> [f64; 3] {
        [self.theta0, self.theta1(), self.theta2]
    }
}

impl Serialize for Moments {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Moments", 7)?;
        st.serialize_field("zeta", &self.zeta)?;
        st.serialize_field("g_phi_prime", &self.g_phi_prime)?;
        st.serialize_field("theta0", &self.theta0)?;
        st.serialize_field("theta1", &self.theta1())?;
        st.serialize_field("theta2", &self.theta2)?;
        st.serialize_field("gamma", &self.gamma)?;
        st.serialize_field("quad_order", &self.quad_order)?;
        st.end()
    }
}

/// Gaussian moments of `act`.
///
/// Smooth activations use a Gauss–Hermite rule of the given order.
/// Piecewise-linear activations use their exact closed forms, since the
/// quadrature converges only at an algebraic rate across the kink; `order` is
/// still validated and recorded.
pub fn moments(act: Activation, order: usize) -> Result<Moments> {
    if let Some(m) = piecewise_linear_moments(act) {
        gauss_hermite(order)?;
        return Ok(Moments {
            quad_order: order,
            ..m
        });
    }
    let quad = gauss_hermite(order)?;
    Ok(moments_with(act, &quad))
}

/// Moments using an existing quadrature rule.
pub fn moments_with(act: Activation, quad: &Quadrature) -> Moments {
    let mut m = Moments {
        zeta: 0.0,
        g_phi_prime: 0.0,
        theta0: 0.0,
        theta2: 0.0,
        gamma: 0.0,
        quad_order: quad.order(),
    };
    for (&g, &w) in quad.nodes().iter().zip(quad.weights()) {
        let dp = act.phi_prime(g);
        m.zeta += w * dp;
        m.g_phi_prime += w * g * dp;
        m.theta0 += w * act.phi(g);
        m.theta2 += w * (0.5 * g * g * g - g) * dp;
        m.gamma += w * dp * dp;
    }
    m
}

/// Closed-form moments of a piecewise-linear activation with negative slope `a`.
///
/// E[φ′] = (1+a)/2, E[gφ′] = E[φ] = (1−a)/√(2π), ϑ₂ = 0, E[φ′²] = (1+a²)/2.
pub fn piecewise_linear_moments(act: Activation) -> Option<Moments> {
    let a = act.slope()?;
    let half_normal_mean = 1.0 / (2.0 * PI).sqrt();
    Some(Moments {
        zeta: 0.5 * (1.0 + a),
        g_phi_prime: (1.0 - a) * half_normal_mean,
        theta0: (1.0 - a) * half_normal_mean,
        theta2: 0.0,
        gamma: 0.5 * (1.0 + a * a),
        quad_order: 0,
    })
}

/// ν = E[g·φ′(g)]·√(Tr[Σ²]/d).
pub fn nu(moments: &Moments, sigma: &CovarianceSpec) -> f64 {
    moments.g_phi_prime * (sigma.trace_of_square() / sigma.dim() as f64).sqrt()
}
