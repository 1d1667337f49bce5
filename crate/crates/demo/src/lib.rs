//! WebAssembly bindings behind `www/index.html`. Every export returns a JSON
//! string; errors become JavaScript exceptions carrying the message.
//!
//! The plain functions (`*_json`) are ordinary Rust so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert the error type.

use earlylin::activations::{self, gauss_hermite, quadrature, Activation};
use earlylin::harness::{self, CoupledRunConfig};
use earlylin::Mode;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Size limits that keep a single call interactive in a browser tab.
pub const MAX_N: usize = 2000;
pub const MAX_D: usize = 128;
pub const MAX_M: usize = 2048;
pub const MAX_STEPS: usize = 2000;

fn parse_act(act: &str) -> Result<Activation, String> {
    act.parse().map_err(|e: earlylin::Error| e.to_string())
}

fn limit(name: &str, value: usize, max: usize) -> Result<(), String> {
    if value == 0 || value > max {
        Err(format!(
            "{name} must be in 1..={max} in the demo, got {value}"
        ))
    } else {
        Ok(())
    }
}

#[derive(Serialize)]
struct Profile {
    act: String,
    moments: activations::Moments,
    rho: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    /// Tangent of P at ρ = 0: `ϑ₀² + ζ²ρ`.
    p_tangent: Vec<f64>,
}

/// Moments of `act` and its dual functions P, Q sampled on `points` values of
/// ρ in [−1, 1].
pub fn activation_profile_json(act: &str, points: usize) -> Result<String, String> {
    let act = parse_act(act)?;
    limit("points", points.saturating_sub(1), 1000)?;
    let order = act.default_order();
    let mo = activations::moments(act, order).map_err(|e| e.to_string())?;
    let quad = gauss_hermite(order).map_err(|e| e.to_string())?;
    let rho: Vec<f64> = (0..points)
        .map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64)
        .collect();
    let eval = |f: fn(Activation, f64, &quadrature::Quadrature) -> earlylin::Result<f64>| {
        rho.iter()
            .map(|&r| f(act, r, &quad).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()
    };
    let profile = Profile {
        act: act.to_string(),
        moments: mo,
        p: eval(quadrature::p_fn)?,
        q: eval(quadrature::q_fn)?,
        p_tangent: rho
            .iter()
            .map(|r| mo.theta0 * mo.theta0 + mo.zeta * mo.zeta * r)
            .collect(),
        rho,
    };
    serde_json::to_string(&profile).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct AgreementOut {
    eta: f64,
    steps: usize,
    records: Vec<harness::AgreementRecord>,
}

/// Trains a network and its linear model side by side on Gaussian data with
/// teacher-sign labels. `steps = 0` uses the default horizon.
pub fn agreement_json(
    mode: &str,
    act: &str,
    n: usize,
    d: usize,
    m: usize,
    steps: usize,
    seed: u64,
) -> Result<String, String> {
    let mode: Mode = mode.parse().map_err(|e: earlylin::Error| e.to_string())?;
    limit("n", n, MAX_N)?;
    limit("d", d, MAX_D)?;
    limit("m", m, MAX_M)?;
    if steps > MAX_STEPS {
        return Err(format!("steps must be at most {MAX_STEPS} in the demo"));
    }
    let cfg = CoupledRunConfig {
        act: parse_act(act)?,
        steps: (steps > 0).then_some(steps),
        n_test: 500,
        ..CoupledRunConfig::new(mode, n, d, m, seed)
    };
    let setup_steps = harness::RunSetup::new(&cfg)
        .map_err(|e| e.to_string())?
        .steps;
    if setup_steps > MAX_STEPS {
        return Err(format!(
            "the default horizon is {setup_steps} steps; set steps ≤ {MAX_STEPS}"
        ));
    }
    let run = harness::coupled_run(&cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&AgreementOut {
        eta: run.eta,
        steps: run.steps,
        records: run.records,
    })
    .map_err(|e| e.to_string())
}

/// Norms of `Θ₁(W(0)) − Θ^lin1` across the comma-separated dimensions `ds`.
pub fn spectral_decay_json(
    act: &str,
    n: usize,
    m: usize,
    ds: &str,
    seeds: usize,
) -> Result<String, String> {
    let act = parse_act(act)?;
    limit("n", n, 600)?;
    limit("m", m, MAX_M)?;
    limit("seeds", seeds, 5)?;
    let ds: Vec<usize> = ds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad dimension '{}'", s.trim()))
        })
        .collect::<Result<_, _>>()?;
    for &d in &ds {
        limit("d", d, MAX_D)?;
    }
    let seeds: Vec<u64> = (1..=seeds as u64).collect();
    let res = harness::spectral_decay_experiment(&ds, n, m, act, &seeds, None)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&res).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn activation_profile(act: &str, points: usize) -> Result<String, JsError> {
    activation_profile_json(act, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn agreement(
    mode: &str,
    act: &str,
    n: usize,
    d: usize,
    m: usize,
    steps: usize,
    seed: u64,
) -> Result<String, JsError> {
    agreement_json(mode, act, n, d, m, steps, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn spectral_decay(
    act: &str,
    n: usize,
    m: usize,
    ds: &str,
    seeds: usize,
) -> Result<String, JsError> {
    spectral_decay_json(act, n, m, ds, seeds).map_err(|e| JsError::new(&e))
}
