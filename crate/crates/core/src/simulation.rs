//! Synthetic scenarios with linear and nonlinear feature maps, and a
//! replication harness comparing HTL against the baselines.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{hstack, Dataset, Method};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_homogeneous, fit_htl, fit_target_lasso, oracle_predict, HtlConfig, LambdaChoice, MapSpec, Predict,
    RidgeChoice, SieveSpec, SupportChoice,
};
use crate::feature_map::GammaChoice;
use crate::metrics::{l1_estimation_error, mean_absolute_prediction_error, rmse};
use crate::penalized::{CvSpec, LassoSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scenario::Linear),
            "nonlinear" => Ok(Scenario::Nonlinear),
            other => Err(Error::Argument(format!("unknown scenario `{other}` (expected linear or nonlinear)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    Sparse,
    Dense,
    Zero,
}

/// Whether the sparse mask size `⌊√(p/2)⌋` uses each block's own width or
/// the total `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityScope {
    #[default]
    PerBlock,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    Fixed(f64),
    /// K-fold CV with folds seeded by the replication seed.
    Cv { folds: usize },
}

/// Reference predictor for the oracle arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleConvention {
    /// `[X | Z] β*` with the withheld test `Z`.
    #[default]
    Full,
    /// `X β₁*` only.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub k: usize,
    pub n_p: usize,
    pub n_t: usize,
    pub n_test: usize,
    pub p1: usize,
    pub p2: usize,
    pub delta: DeltaKind,
    pub sparsity_scope: SparsityScope,
    pub reps: usize,
    pub seed: u64,
    pub lambda_policy: LambdaPolicy,
    pub response_noise_sd: f64,
    pub map_noise_sd: f64,
    /// Perturb the proxy maps away from the target map.
    pub map_perturbation: bool,
    pub error_correlation: f64,
    pub oracle: OracleConvention,
    /// Feature map used by HTL; scenario default when absent.
    pub map: Option<MapSpec>,
    pub settings: LassoSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Linear,
            k: 2,
            n_p: 2000,
            n_t: 50,
            n_test: 200,
            p1: 20,
            p2: 20,
            delta: DeltaKind::Sparse,
            sparsity_scope: SparsityScope::PerBlock,
            reps: 50,
            seed: 0,
            lambda_policy: LambdaPolicy::Cv { folds: 5 },
            response_noise_sd: 1.0,
            map_noise_sd: 1.0,
            map_perturbation: true,
            error_correlation: 0.5,
            oracle: OracleConvention::Full,
            map: None,
            settings: LassoSettings::default(),
        }
    }
}

impl SimConfig {
    /// Named desk-scale designs: `fig1` (linear) and `fig5` (nonlinear).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fig1" | "custom" => Ok(Self::default()),
            "fig5" => Ok(Self {
                scenario: Scenario::Nonlinear,
                n_p: 3000,
                ..Self::default()
            }),
            other => Err(Error::Argument(format!("unknown preset `{other}` (expected fig1, fig5 or custom)"))),
        }
    }

    pub fn p(&self) -> usize {
        self.p1 + self.p2
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k", self.k),
            ("n_p", self.n_p),
            ("n_t", self.n_t),
            ("n_test", self.n_test),
            ("p1", self.p1),
            ("p2", self.p2),
            ("reps", self.reps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_t < 2 {
            return Err(Error::Config("n_t must be at least 2".into()));
        }
        if self.scenario == Scenario::Nonlinear && self.p1 < ACTIVE_SET {
            return Err(Error::Config(format!(
                "nonlinear scenario needs p1 >= {ACTIVE_SET}, got {}",
                self.p1
            )));
        }
        block_count(self.p(), self.scenario)?;
        for (name, v) in [
            ("response_noise_sd", self.response_noise_sd),
            ("map_noise_sd", self.map_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.error_correlation.abs() <= 1.0) {
            return Err(Error::Config("error_correlation must lie in [-1, 1]".into()));
        }
        match self.lambda_policy {
            LambdaPolicy::Fixed(l) if !(l >= 0.0) => {
                return Err(Error::Config("fixed lambda must be nonnegative".into()))
            }
            LambdaPolicy::Cv { folds } if folds < 2 || folds > self.n_t => {
                return Err(Error::Config(format!("cv folds must lie in 2..={}", self.n_t)))
            }
            _ => {}
        }
        self.settings.validate()
    }

    /// HTL configuration for one replication.
    pub fn htl_config(&self, rep_seed: u64) -> HtlConfig {
        let map = self.map.clone().unwrap_or_else(|| match self.scenario {
            Scenario::Linear => MapSpec::Linear {
                ridge: RidgeChoice::Fixed(0.0),
            },
            Scenario::Nonlinear => MapSpec::Sieve(SieveSpec {
                p1_prime: 1,
                truncation: None,
                budget: Some(8 * self.p1 + 1),
                support: SupportChoice::Fixed(NONLINEAR_HALF_WIDTH),
                gamma: GammaChoice::Auto { c: 1.0 },
                ..SieveSpec::default()
            }),
        });
        HtlConfig {
            map,
            lambda: self.lambda_choice(rep_seed),
            settings: self.settings,
            ..HtlConfig::default()
        }
    }

    fn lambda_choice(&self, rep_seed: u64) -> LambdaChoice {
        match self.lambda_policy {
            LambdaPolicy::Fixed(l) => LambdaChoice::Fixed(l),
            LambdaPolicy::Cv { folds } => LambdaChoice::Cv(CvSpec::new(folds, rep_seed)),
        }
    }
}

const ACTIVE_SET: usize = 5;
const NONLINEAR_HALF_WIDTH: f64 = 2.0;
const DELTA_SD: f64 = 0.25;

fn block_count(p: usize, scenario: Scenario) -> Result<usize> {
    let frac = match scenario {
        Scenario::Linear => 0.12,
        Scenario::Nonlinear => 0.15,
    };
    let m = (frac * p as f64).round() as usize;
    if m < 1 {
        return Err(Error::Config(format!(
            "p = {p} gives {m} coefficient blocks; need at least one"
        )));
    }
    Ok(m)
}

/// `m` blocks of the pattern `(1, 0, …, 0)` with block length `⌈p/m⌉`,
/// truncated to length `p`.
pub fn gen_beta_star(p: usize, scenario: Scenario) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Config("p must be at least 1".into()));
    }
    let m = block_count(p, scenario)?;
    let stride = p.div_ceil(m);
    Ok((0..p).map(|j| if j % stride == 0 { 1.0 } else { 0.0 }).collect())
}

/// Contrast vector for one block. Sparse vectors have exactly `⌊√(p/2)⌋`
/// nonzeros (or `⌊√(scope_p/2)⌋` when given) at uniformly chosen positions.
pub fn gen_delta_star<R: Rng + ?Sized>(p: usize, kind: DeltaKind, scope_p: Option<usize>, rng: &mut R) -> Vec<f64> {
    match kind {
        DeltaKind::Zero => vec![0.0; p],
        DeltaKind::Dense => (0..p).map(|_| DELTA_SD * rng.sample::<f64, _>(StandardNormal)).collect(),
        DeltaKind::Sparse => {
            let s0 = ((scope_p.unwrap_or(p) as f64 / 2.0).sqrt().floor() as usize).min(p);
            let mut out = vec![0.0; p];
            let mut positions = sample(rng, p, s0).into_vec();
            positions.sort_unstable();
            for j in positions {
                let mut v = 0.0;
                while v == 0.0 {
                    v = DELTA_SD * rng.sample::<f64, _>(StandardNormal);
                }
                out[j] = v;
            }
            out
        }
    }
}

/// Beta(a, b) through two gamma draws.
fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let ga = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let gb = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    ga / (ga + gb)
}

/// Target feature map of the nonlinear scenario (identical for every
/// column of `z`). Uses the first five coordinates of `x`.
pub fn h_target(x: &[f64]) -> f64 {
    x[..ACTIVE_SET]
        .iter()
        .enumerate()
        .map(|(k, &v)| if k % 2 == 0 { 0.5 - (v - 0.5).abs() } else { (-v).exp() })
        .sum()
}

/// Proxy feature map `h + sin h`.
pub fn h_proxy(x: &[f64]) -> f64 {
    let h = h_target(x);
    h + h.sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueMap {
    Linear {
        target: Vec<Vec<f64>>,
        proxies: Vec<Vec<Vec<f64>>>,
    },
    /// Target uses `h`; proxies use `h + sin h` when perturbed, else `h`.
    Nonlinear { proxies_perturbed: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub beta_star: Vec<f64>,
    pub delta_star_per_proxy: Vec<Vec<f64>>,
    pub sparsity_s_delta: Vec<usize>,
    pub true_map: TrueMap,
    /// Withheld mismatched covariates.
    pub z_target: DMatrix<f64>,
    pub z_test: DMatrix<f64>,
}

/// One replication's data. `target` and `test` carry no `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub proxies: Vec<Dataset>,
    pub target: Dataset,
    pub test: Dataset,
    pub truth: TruthRecord,
}

// Disjoint ChaCha streams per role, so e.g. n_test never perturbs training data.
const STREAM_TRUTH: u64 = 0;
const STREAM_TARGET: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_NOISE_A: u64 = 3;
const STREAM_NOISE_B: u64 = 4;
const STREAM_PROXY: u64 = 16;

fn stream(rep_seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    rng.set_stream(id);
    rng
}

fn normal_matrix(n: usize, p: usize, sd: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // row-major fill keeps earlier rows fixed when n grows
    DMatrix::from_row_iterator(n, p, (0..n * p).map(|_| sd * rng.sample::<f64, _>(StandardNormal)))
}

fn uniform_matrix(n: usize, p: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_row_iterator(n, p, (0..n * p).map(|_| rng.random_range(lo..hi)))
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

struct Truth {
    beta: DVector<f64>,
    deltas: Vec<Vec<f64>>,
}

fn draw_truth(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Truth> {
    let beta = DVector::from_vec(gen_beta_star(config.p(), config.scenario)?);
    let scope = |p_l: usize| match config.sparsity_scope {
        SparsityScope::PerBlock => p_l,
        SparsityScope::Total => config.p(),
    };
    let deltas = (0..config.k)
        .map(|_| {
            let mut d = gen_delta_star(config.p1, config.delta, Some(scope(config.p1)), rng);
            d.extend(gen_delta_star(config.p2, config.delta, Some(scope(config.p2)), rng));
            d
        })
        .collect();
    Ok(Truth { beta, deltas })
}

/// Target/test responses with errors correlated across the two sets at
/// matching row indices.
fn paired_noise(config: &SimConfig, rep_seed: u64) -> (DVector<f64>, DVector<f64>) {
    let len = config.n_t.max(config.n_test);
    let a = normal_vec(len, &mut stream(rep_seed, STREAM_NOISE_A));
    let b = normal_vec(config.n_test, &mut stream(rep_seed, STREAM_NOISE_B));
    let rho = config.error_correlation;
    let c = (1.0 - rho * rho).sqrt();
    let sd = config.response_noise_sd;
    let target = DVector::from_fn(config.n_t, |i, _| sd * a[i]);
    let test = DVector::from_fn(config.n_test, |i, _| sd * (rho * a[i] + c * b[i]));
    (target, test)
}

fn assemble(
    config: &SimConfig,
    rep_seed: u64,
    truth: Truth,
    true_map: TrueMap,
    proxies_xz: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    target_xz: (DMatrix<f64>, DMatrix<f64>),
    test_xz: (DMatrix<f64>, DMatrix<f64>),
) -> Result<SimScenario> {
    let mut proxies = Vec::with_capacity(config.k);
    for (k, (x, z)) in proxies_xz.into_iter().enumerate() {
        let mut rng = stream(rep_seed, STREAM_PROXY + 2 * k as u64 + 1);
        let coef = &truth.beta - DVector::from_column_slice(&truth.deltas[k]);
        let noise = DVector::from_vec(normal_vec(x.nrows(), &mut rng)) * config.response_noise_sd;
        let y = hstack(&x, &z) * coef + noise;
        proxies.push(Dataset::new(x, Some(z), y)?);
    }
    let (eps_t, eps_test) = paired_noise(config, rep_seed);
    let (xt, zt) = target_xz;
    let yt = hstack(&xt, &zt) * &truth.beta + eps_t;
    let (xs, zs) = test_xz;
    let ys = hstack(&xs, &zs) * &truth.beta + eps_test;
    let sparsity = truth
        .deltas
        .iter()
        .map(|d| d.iter().filter(|v| **v != 0.0).count())
        .collect();
    Ok(SimScenario {
        proxies,
        target: Dataset::new(xt, None, yt)?,
        test: Dataset::new(xs, None, ys)?,
        truth: TruthRecord {
            beta_star: truth.beta.as_slice().to_vec(),
            delta_star_per_proxy: truth.deltas,
            sparsity_s_delta: sparsity,
            true_map,
            z_target: zt,
            z_test: zs,
        },
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Linear feature map scenario.
pub fn gen_linear_scenario(config: &SimConfig, rep_seed: u64) -> Result<SimScenario> {
    config.validate()?;
    let (p1, p2) = (config.p1, config.p2);
    let mut rng = stream(rep_seed, STREAM_TRUTH);
    let truth = draw_truth(config, &mut rng)?;
    let p_t = DMatrix::from_fn(p1, p2, |_, _| 10.0 * beta_draw(10.0, 10.0, &mut rng));
    let p_proxies: Vec<DMatrix<f64>> = (0..config.k)
        .map(|_| {
            if config.map_perturbation {
                p_t.map(|v| v + (beta_draw(4.0, 4.0, &mut rng) - 0.5) / 3.0)
            } else {
                p_t.clone()
            }
        })
        .collect();

    let sd = config.map_noise_sd;
    let proxies_xz = p_proxies
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = stream(rep_seed, STREAM_PROXY + 2 * k as u64);
            let x = normal_matrix(config.n_p, p1, 1.0, &mut rng);
            let z = &x * p + normal_matrix(config.n_p, p2, sd, &mut rng);
            (x, z)
        })
        .collect();
    let domain = |n: usize, id: u64| {
        let mut rng = stream(rep_seed, id);
        let x = uniform_matrix(n, p1, 0.0, 12f64.sqrt(), &mut rng);
        let z = &x * &p_t + normal_matrix(n, p2, sd, &mut rng);
        (x, z)
    };
    let true_map = TrueMap::Linear {
        target: rows(&p_t),
        proxies: p_proxies.iter().map(rows).collect(),
    };
    assemble(
        config,
        rep_seed,
        truth,
        true_map,
        proxies_xz,
        domain(config.n_t, STREAM_TARGET),
        domain(config.n_test, STREAM_TEST),
    )
}

/// Nonlinear feature map scenario; every domain draws `x` from
/// `Uniform(−2, 2)`.
pub fn gen_nonlinear_scenario(config: &SimConfig, rep_seed: u64) -> Result<SimScenario> {
    config.validate()?;
    let (p1, p2) = (config.p1, config.p2);
    let mut rng = stream(rep_seed, STREAM_TRUTH);
    let truth = draw_truth(config, &mut rng)?;
    let sd = config.map_noise_sd;
    let w = NONLINEAR_HALF_WIDTH;
    let draw = |n: usize, rng: &mut ChaCha8Rng, h: fn(&[f64]) -> f64| {
        let x = uniform_matrix(n, p1, -w, w, rng);
        let hx: Vec<f64> = x
            .row_iter()
            .map(|r| h(&r.iter().copied().collect::<Vec<_>>()))
            .collect();
        let z = DMatrix::from_fn(n, p2, |i, _| hx[i]) + normal_matrix(n, p2, sd, rng);
        (x, z)
    };
    let proxy_h: fn(&[f64]) -> f64 = if config.map_perturbation { h_proxy } else { h_target };
    let proxies_xz = (0..config.k)
        .map(|k| draw(config.n_p, &mut stream(rep_seed, STREAM_PROXY + 2 * k as u64), proxy_h))
        .collect();
    let target = draw(config.n_t, &mut stream(rep_seed, STREAM_TARGET), h_target);
    let test = draw(config.n_test, &mut stream(rep_seed, STREAM_TEST), h_target);
    let true_map = TrueMap::Nonlinear {
        proxies_perturbed: config.map_perturbation,
    };
    assemble(config, rep_seed, truth, true_map, proxies_xz, target, test)
}

pub fn gen_scenario(config: &SimConfig, rep_seed: u64) -> Result<SimScenario> {
    match config.scenario {
        Scenario::Linear => gen_linear_scenario(config, rep_seed),
        Scenario::Nonlinear => gen_nonlinear_scenario(config, rep_seed),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed ^ splitmix64(rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub rep: usize,
    pub method: Method,
    pub map: f64,
    pub rmse: f64,
    pub l1_err_beta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
}

impl Stats {
    /// Sample statistics; `sd` is 0 for fewer than two values.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, median, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    pub map: Stats,
    pub rmse: Stats,
    pub l1_err_beta1: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: SimConfig,
    pub oracle_convention: OracleConvention,
    pub records: Vec<MetricRecord>,
    pub failures: Vec<RepFailure>,
    pub summary: Vec<MethodSummary>,
}

impl MetricsReport {
    pub fn values(&self, method: Method, metric: fn(&MetricRecord) -> f64) -> Vec<f64> {
        self.records.iter().filter(|r| r.method == method).map(metric).collect()
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Tidy CSV: `rep,method,map,rmse,l1_err_beta1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn method_error(rep: usize, method: Method, e: Error) -> RepFailure {
    RepFailure {
        rep,
        method,
        message: e.to_string(),
    }
}

/// Fits every method on one scenario and scores it on the test set.
pub fn evaluate_scenario(config: &SimConfig, scenario: &SimScenario, rep: usize, seed: u64) -> std::result::Result<Vec<MetricRecord>, RepFailure> {
    let p1 = config.p1;
    let beta1 = &scenario.truth.beta_star[..p1];
    let test = &scenario.test;
    let y = test.y().as_slice();
    let score = |method: Method, yhat: DVector<f64>, beta_hat1: &[f64]| -> std::result::Result<MetricRecord, RepFailure> {
        let wrap = |e| method_error(rep, method, e);
        Ok(MetricRecord {
            rep,
            method,
            map: mean_absolute_prediction_error(y, yhat.as_slice()).map_err(wrap)?,
            rmse: rmse(y, yhat.as_slice()).map_err(wrap)?,
            l1_err_beta1: l1_estimation_error(beta_hat1, beta1).map_err(wrap)?,
        })
    };

    let htl_cfg = config.htl_config(seed);
    let htl = fit_htl(&scenario.proxies, &scenario.target, &htl_cfg).map_err(|e| method_error(rep, Method::Htl, e))?;
    let yhat = htl.predict(test.x()).map_err(|e| method_error(rep, Method::Htl, e))?;
    let mut out = vec![score(Method::Htl, yhat, &htl.fit.beta_hat[..p1])?];

    let proxies_x: Vec<Dataset> = scenario.proxies.iter().map(Dataset::without_z).collect();
    let lambda = config.lambda_choice(seed);
    let hm = fit_homogeneous(&proxies_x, &scenario.target, &lambda, &config.settings)
        .map_err(|e| method_error(rep, Method::Homogeneous, e))?;
    let yhat = hm.predict(test.x()).map_err(|e| method_error(rep, Method::Homogeneous, e))?;
    out.push(score(Method::Homogeneous, yhat, &hm.beta_hat)?);

    let tl = fit_target_lasso(&scenario.target, &lambda, &config.settings)
        .map_err(|e| method_error(rep, Method::TargetLasso, e))?;
    let yhat = tl.predict(test.x()).map_err(|e| method_error(rep, Method::TargetLasso, e))?;
    out.push(score(Method::TargetLasso, yhat, &tl.beta_hat)?);

    let z = match config.oracle {
        OracleConvention::Full => Some(&scenario.truth.z_test),
        OracleConvention::Matched => None,
    };
    let yhat = oracle_predict(test.x(), z, &scenario.truth.beta_star).map_err(|e| method_error(rep, Method::Oracle, e))?;
    out.push(score(Method::Oracle, yhat, beta1)?);
    Ok(out)
}

fn summarize(records: &[MetricRecord]) -> Vec<MethodSummary> {
    Method::ALL
        .iter()
        .filter_map(|&method| {
            let rs: Vec<&MetricRecord> = records.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&MetricRecord) -> f64| Stats::from_values(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(MethodSummary {
                method,
                reps: rs.len(),
                map: col(|r| r.map)?,
                rmse: col(|r| r.rmse)?,
                l1_err_beta1: col(|r| r.l1_err_beta1)?,
            })
        })
        .collect()
}

/// Runs `config.reps` independent replications. A replication in which any
/// method fails contributes no records and one entry in `failures`.
pub fn run_replications(config: &SimConfig) -> Result<MetricsReport> {
    config.validate()?;
    let outcomes = crate::par_map(config.reps, |rep| {
        let seed = rep_seed(config.seed, rep);
        let scenario = gen_scenario(config, seed).map_err(|e| RepFailure {
            rep,
            method: Method::Oracle,
            message: format!("scenario generation failed: {e}"),
        })?;
        evaluate_scenario(config, &scenario, rep, seed)
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rs) => records.extend(rs),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(&records);
    Ok(MetricsReport {
        config: config.clone(),
        oracle_convention: config.oracle,
        records,
        failures,
        summary,
    })
}
