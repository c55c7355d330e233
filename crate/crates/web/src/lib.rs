//! WebAssembly bindings for the browser demo. Each export returns a JSON
//! string; the plain functions underneath are usable (and tested) natively.

use heterotl::feature_map::{fit_sieve_map, impute, GammaChoice, SieveFitOptions};
use heterotl::sieve::{phi, unravel};
use heterotl::simulation::{run_replications, MethodSummary, Scenario, SimConfig};
use heterotl::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID: usize = 201;
const SUPPORT: f64 = 2.0;

#[derive(Debug, Serialize)]
pub struct Curves {
    pub x: Vec<f64>,
    /// One row per degree `q = 1..=degrees`.
    pub phi: Vec<Vec<f64>>,
}

/// Cosine basis functions `φ_1..φ_degrees` on `[−a, a]`.
pub fn basis_curves(degrees: u32, a: f64) -> heterotl::Result<Curves> {
    if degrees == 0 || degrees > 50 {
        return Err(heterotl::Error::Argument(format!("degrees must lie in 1..=50, got {degrees}")));
    }
    let x: Vec<f64> = (0..GRID).map(|i| -a + 2.0 * a * i as f64 / (GRID - 1) as f64).collect();
    let phi = (1..=degrees)
        .map(|q| x.iter().map(|&v| phi(q, v, a)).collect())
        .collect::<heterotl::Result<_>>()?;
    Ok(Curves { x, phi })
}

/// The nonlinear map used by the sieve demo.
pub fn demo_map(x: f64) -> f64 {
    (1.5 * x).sin() + 0.5 * (x - 0.5).abs()
}

#[derive(Debug, Serialize)]
pub struct SieveDemo {
    pub sample_x: Vec<f64>,
    pub sample_z: Vec<f64>,
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
    pub fitted: Vec<f64>,
    pub gamma: f64,
    pub nonzero: usize,
    pub terms: usize,
    pub rmse: f64,
}

/// Fits a one-dimensional sieve map to noisy draws of [`demo_map`] on
/// `[−2, 2]` and evaluates it on a grid.
pub fn sieve_demo(n: usize, terms: usize, noise_sd: f64, seed: u64) -> heterotl::Result<SieveDemo> {
    if !(10..=5000).contains(&n) {
        return Err(heterotl::Error::Argument(format!("n must lie in 10..=5000, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(heterotl::Error::Argument("noise sd must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_x: Vec<f64> = (0..n).map(|_| rng.random_range(-SUPPORT..SUPPORT)).collect();
    let sample_z: Vec<f64> = sample_x
        .iter()
        .map(|&x| {
            // Box-Muller
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let v: f64 = rng.random();
            demo_map(x) + noise_sd * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect();
    let basis = unravel(1, 1, terms)?.with_support(SUPPORT)?;
    let proxy = Dataset::new(
        DMatrix::from_column_slice(n, 1, &sample_x),
        Some(DMatrix::from_column_slice(n, 1, &sample_z)),
        DVector::zeros(n),
    )?;
    let options = SieveFitOptions {
        gamma: GammaChoice::Auto { c: 0.1 },
        ..SieveFitOptions::default()
    };
    let map = fit_sieve_map(&proxy, &basis, &options)?;
    let x: Vec<f64> = (0..GRID).map(|i| -SUPPORT + 2.0 * SUPPORT * i as f64 / (GRID - 1) as f64).collect();
    let fitted = impute(&map, &DMatrix::from_column_slice(GRID, 1, &x))?.as_slice().to_vec();
    let truth: Vec<f64> = x.iter().map(|&v| demo_map(v)).collect();
    let rmse = (fitted.iter().zip(&truth).map(|(f, t)| (f - t).powi(2)).sum::<f64>() / GRID as f64).sqrt();
    Ok(SieveDemo {
        sample_x,
        sample_z,
        x,
        truth,
        fitted,
        gamma: map.gamma.as_ref().map_or(0.0, |g| g[0]),
        nonzero: map.coefficient_matrix().iter().filter(|v| **v != 0.0).count(),
        terms,
        rmse,
    })
}

#[derive(Debug, Serialize)]
pub struct SimulationDemo {
    pub summary: Vec<MethodSummary>,
    pub failures: usize,
    pub htl_map: Vec<f64>,
    pub homogeneous_map: Vec<f64>,
    pub target_lasso_map: Vec<f64>,
}

/// A small Monte-Carlo run comparing HTL with the baselines.
pub fn simulation_demo(scenario: &str, n_t: usize, reps: usize, seed: u64) -> heterotl::Result<SimulationDemo> {
    if !(1..=50).contains(&reps) {
        return Err(heterotl::Error::Argument(format!("reps must lie in 1..=50, got {reps}")));
    }
    let scenario: Scenario = scenario.parse()?;
    let config = SimConfig {
        scenario,
        n_p: 500,
        n_t,
        n_test: 200,
        reps,
        seed,
        ..SimConfig::default()
    };
    let report = run_replications(&config)?;
    let values = |m| report.values(m, |r| r.map);
    Ok(SimulationDemo {
        htl_map: values(heterotl::Method::Htl),
        homogeneous_map: values(heterotl::Method::Homogeneous),
        target_lasso_map: values(heterotl::Method::TargetLasso),
        failures: report.failures.len(),
        summary: report.summary,
    })
}

fn to_js<T: Serialize>(value: heterotl::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = basisCurves)]
pub fn basis_curves_js(degrees: u32, a: f64) -> Result<String, JsError> {
    to_js(basis_curves(degrees, a))
}

#[wasm_bindgen(js_name = sieveDemo)]
pub fn sieve_demo_js(n: usize, terms: usize, noise_sd: f64, seed: u32) -> Result<String, JsError> {
    to_js(sieve_demo(n, terms, noise_sd, seed as u64))
}

#[wasm_bindgen(js_name = simulationDemo)]
pub fn simulation_demo_js(scenario: &str, n_t: usize, reps: usize, seed: u32) -> Result<String, JsError> {
    to_js(simulation_demo(scenario, n_t, reps, seed as u64))
}
