//! End-to-end estimators: heterogeneous transfer (HTL), homogeneous transfer
//! on the matched covariates, target-only lasso and the oracle predictor.
//!
//! HTL runs in two stages. Pre-training uses only proxy data: a feature map
//! per proxy (averaged across proxies) and per-proxy OLS coefficients on
//! `[X | Z]` (also averaged). The target stage imputes `Ẑ_t` with the map and
//! fits a lasso on `[X_t | Ẑ_t]` that shrinks toward the proxy coefficients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{hstack, Centering, Dataset, Method, TlFit};
use crate::error::{Error, Result};
use crate::feature_map::{
    average_maps, fit_linear_map, fit_sieve_map, impute_clamped, running_mean, select_ridge_tau, FeatureMapModel,
    GammaChoice, MapKind, SieveFitOptions,
};
use crate::penalized::{
    cv_lambda, lasso_with_offset_weighted, ols, CvResult, CvSpec, LassoSettings, SolveDiagnostics,
};
use crate::sieve::{default_truncation, support_half_widths, unravel_with_cap, DEFAULT_DEGREE_CAP};

/// How the target-stage penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Cv(CvSpec),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Cv(CvSpec::new(5, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeChoice {
    Fixed(f64),
    Cv { grid: Vec<f64>, folds: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportChoice {
    /// Inputs already lie in `[−a, a]`.
    Fixed(f64),
    /// Per-coordinate widths from the pooled proxy `X`, mapped onto `[−1, 1]`.
    Rescale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub p1_prime: usize,
    /// Basis size `M`; per-proxy default from [`default_truncation`] when absent.
    pub truncation: Option<usize>,
    /// Upper bound passed to [`default_truncation`] (defaults to `n_p / 2`).
    pub budget: Option<usize>,
    pub degree_cap: u32,
    pub support: SupportChoice,
    pub gamma: GammaChoice,
}

impl Default for SieveSpec {
    fn default() -> Self {
        Self {
            p1_prime: 1,
            truncation: None,
            budget: None,
            degree_cap: DEFAULT_DEGREE_CAP,
            support: SupportChoice::Rescale,
            gamma: GammaChoice::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSpec {
    Linear { ridge: RidgeChoice },
    Sieve(SieveSpec),
}

impl MapSpec {
    pub fn kind(&self) -> MapKind {
        match self {
            MapSpec::Linear { .. } => MapKind::Linear,
            MapSpec::Sieve(_) => MapKind::Sieve,
        }
    }
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec::Linear {
            ridge: RidgeChoice::Fixed(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtlConfig {
    pub map: MapSpec,
    pub lambda: LambdaChoice,
    pub settings: LassoSettings,
    /// Penalty multipliers for the matched and mismatched coefficient blocks.
    pub block_weights: Option<[f64; 2]>,
    /// Allowed relative overshoot of the sieve support at impute time; inputs
    /// within it are clamped, beyond it rejected.
    pub clamp_tolerance: f64,
    /// Center every domain's columns with its own means before fitting.
    pub center: bool,
}

impl Default for HtlConfig {
    fn default() -> Self {
        Self {
            map: MapSpec::default(),
            lambda: LambdaChoice::default(),
            settings: LassoSettings::default(),
            block_weights: None,
            clamp_tolerance: 0.0,
            center: false,
        }
    }
}

/// Proxy-stage output: averaged feature map and averaged proxy coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub map: FeatureMapModel,
    pub omega: DVector<f64>,
    pub map_kind: MapKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtlModel {
    pub fit: TlFit,
    pub map: FeatureMapModel,
    pub map_kind: MapKind,
    pub centering: Option<Centering>,
    pub clamp_tolerance: f64,
    pub diagnostics: SolveDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvResult>,
}

pub trait Predict {
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>>;
}

fn check_proxies(proxies: &[Dataset]) -> Result<(usize, usize)> {
    let first = proxies
        .first()
        .ok_or_else(|| Error::Argument("at least one proxy dataset is required".into()))?;
    let (p1, p2) = (first.p1(), first.p2());
    for (k, d) in proxies.iter().enumerate() {
        if d.p1() != p1 || d.p2() != p2 {
            return Err(Error::Incompatible(format!(
                "proxy {k} has (p1, p2) = ({}, {}), proxy 0 has ({p1}, {p2})",
                d.p1(),
                d.p2()
            )));
        }
    }
    Ok((p1, p2))
}

fn center_all(proxies: &[Dataset], center: bool) -> Result<Vec<Dataset>> {
    proxies
        .iter()
        .map(|d| {
            if center {
                Centering::from_dataset(d).apply(d)
            } else {
                Ok(d.clone())
            }
        })
        .collect()
}

fn average_ols(proxies: &[Dataset], matched_only: bool) -> Result<DVector<f64>> {
    let fits = crate::par_map(proxies.len(), |k| {
        let d = &proxies[k];
        let design = if matched_only { d.x().clone() } else { d.design() };
        ols(&design, d.y()).map(|f| f.coefficients)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mats: Vec<DMatrix<f64>> = fits
        .into_iter()
        .map(|c| DMatrix::from_column_slice(c.len(), 1, c.as_slice()))
        .collect();
    Ok(running_mean(&mats).column(0).into_owned())
}

/// Mean of per-proxy OLS coefficients on `[X | Z]`.
pub fn fit_proxy_coefficients(proxies: &[Dataset]) -> Result<DVector<f64>> {
    check_proxies(proxies)?;
    average_ols(proxies, false)
}

/// Mean of per-proxy OLS coefficients on `X` alone.
pub fn fit_proxy_matched_coefficients(proxies: &[Dataset]) -> Result<DVector<f64>> {
    check_proxies(proxies)?;
    average_ols(proxies, true)
}

fn fit_one_map(proxy: &Dataset, spec: &MapSpec, widths: Option<&[f64]>, settings: &LassoSettings) -> Result<FeatureMapModel> {
    match spec {
        MapSpec::Linear { ridge } => {
            let tau = match ridge {
                RidgeChoice::Fixed(t) => *t,
                RidgeChoice::Cv { grid, folds, seed } => select_ridge_tau(proxy, grid, *folds, *seed)?,
            };
            fit_linear_map(proxy, tau)
        }
        MapSpec::Sieve(s) => {
            let p = proxy.p1() + proxy.p2();
            let m = match s.truncation {
                Some(m) => m,
                None => default_truncation(p, proxy.n(), s.budget, proxy.p1(), s.p1_prime),
            };
            let a = match s.support {
                SupportChoice::Fixed(a) => a,
                SupportChoice::Rescale => 1.0,
            };
            let basis = unravel_with_cap(proxy.p1(), s.p1_prime, m, s.degree_cap)?.with_support(a)?;
            let options = SieveFitOptions {
                gamma: s.gamma.clone(),
                settings: *settings,
                input_scale: widths.map(|w| w.to_vec()),
            };
            fit_sieve_map(proxy, &basis, &options)
        }
    }
}

/// Proxy stage: per-proxy feature maps (averaged) and proxy coefficients.
pub fn pretrain(proxies: &[Dataset], config: &HtlConfig) -> Result<Pretrained> {
    let (p1, p2) = check_proxies(proxies)?;
    let proxies = center_all(proxies, config.center)?;
    let map = if p2 == 0 {
        // nothing to impute: HTL reduces to transfer on X alone
        FeatureMapModel::linear(DMatrix::zeros(p1, 0))
    } else {
        let widths = match &config.map {
            MapSpec::Sieve(SieveSpec {
                support: SupportChoice::Rescale,
                ..
            }) => {
                let pooled = proxies.iter().skip(1).fold(proxies[0].x().clone(), |acc, d| {
                    let mut out = DMatrix::zeros(acc.nrows() + d.n(), p1);
                    out.rows_mut(0, acc.nrows()).copy_from(&acc);
                    out.rows_mut(acc.nrows(), d.n()).copy_from(d.x());
                    out
                });
                Some(support_half_widths(&pooled))
            }
            _ => None,
        };
        let maps = crate::par_map(proxies.len(), |k| {
            fit_one_map(&proxies[k], &config.map, widths.as_deref(), &config.settings)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        average_maps(&maps)?
    };
    let omega = average_ols(&proxies, false)?;
    Ok(Pretrained {
        map,
        omega,
        map_kind: config.map.kind(),
    })
}

fn block_weight_vector(weights: Option<[f64; 2]>, p1: usize, p2: usize) -> Option<Vec<f64>> {
    weights.map(|[w1, w2]| {
        std::iter::repeat_n(w1, p1)
            .chain(std::iter::repeat_n(w2, p2))
            .collect()
    })
}

fn choose_lambda(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    omega: &DVector<f64>,
    choice: &LambdaChoice,
    weights: Option<&[f64]>,
    settings: &LassoSettings,
) -> Result<(f64, Option<CvResult>)> {
    match choice {
        LambdaChoice::Fixed(l) => Ok((*l, None)),
        LambdaChoice::Cv(spec) => {
            let res = cv_lambda(d, y, omega, spec, weights, settings)?;
            Ok((res.best_lambda, Some(res)))
        }
    }
}

fn require_converged(diag: &SolveDiagnostics, what: &str) -> Result<()> {
    if diag.converged {
        Ok(())
    } else {
        Err(Error::NotConverged {
            context: what.to_string(),
            iterations: diag.iterations,
        })
    }
}

/// Target stage of HTL on top of a [`Pretrained`] proxy stage.
pub fn fit_target_stage(pre: &Pretrained, target: &Dataset, config: &HtlConfig) -> Result<HtlModel> {
    let p1 = pre.map.p1();
    let p2 = pre.map.p2();
    if target.p1() != p1 {
        return Err(Error::Dimension(format!(
            "target has {} matched covariates, proxies have {p1}",
            target.p1()
        )));
    }
    let centering = config.center.then(|| Centering::from_dataset(target));
    let target = match &centering {
        Some(c) => c.apply(&target.without_z())?,
        None => target.without_z(),
    };
    let (z_hat, _) = impute_clamped(&pre.map, target.x(), config.clamp_tolerance)?;
    let d = hstack(target.x(), &z_hat);
    let weights = block_weight_vector(config.block_weights, p1, p2);
    let (lambda, cv) = choose_lambda(&d, target.y(), &pre.omega, &config.lambda, weights.as_deref(), &config.settings)?;
    let fit = lasso_with_offset_weighted(&d, target.y(), &pre.omega, lambda, weights.as_deref(), &config.settings)?;
    require_converged(&fit.diagnostics, "target-stage lasso")?;
    Ok(HtlModel {
        fit: TlFit::new(
            pre.omega.as_slice().to_vec(),
            fit.delta.as_slice().to_vec(),
            lambda,
            Method::Htl,
        )?,
        map: pre.map.clone(),
        map_kind: pre.map_kind,
        centering,
        clamp_tolerance: config.clamp_tolerance,
        diagnostics: fit.diagnostics,
        cv,
    })
}

/// Two-stage heterogeneous transfer estimator.
pub fn fit_htl(proxies: &[Dataset], target: &Dataset, config: &HtlConfig) -> Result<HtlModel> {
    let pre = pretrain(proxies, config)?;
    fit_target_stage(&pre, target, config)
}

/// Homogeneous transfer on the matched covariates: proxy OLS on `X` alone,
/// then the offset lasso on the target's `X`.
pub fn fit_homogeneous(proxies: &[Dataset], target: &Dataset, lambda: &LambdaChoice, settings: &LassoSettings) -> Result<TlFit> {
    let (p1, _) = check_proxies(proxies)?;
    if target.p1() != p1 {
        return Err(Error::Dimension(format!(
            "target has {} matched covariates, proxies have {p1}",
            target.p1()
        )));
    }
    let omega = average_ols(proxies, true)?;
    fit_matched_offset(target, &omega, lambda, settings, Method::Homogeneous)
}

fn fit_matched_offset(
    target: &Dataset,
    omega: &DVector<f64>,
    lambda: &LambdaChoice,
    settings: &LassoSettings,
    method: Method,
) -> Result<TlFit> {
    let (lam, _) = choose_lambda(target.x(), target.y(), omega, lambda, None, settings)?;
    let fit = lasso_with_offset_weighted(target.x(), target.y(), omega, lam, None, settings)?;
    require_converged(&fit.diagnostics, "matched-covariate lasso")?;
    TlFit::new(omega.as_slice().to_vec(), fit.delta.as_slice().to_vec(), lam, method)
}

/// Plain lasso on the target's matched covariates.
pub fn fit_target_lasso(target: &Dataset, lambda: &LambdaChoice, settings: &LassoSettings) -> Result<TlFit> {
    if target.n() < 2 {
        return Err(Error::Argument("target lasso needs at least two observations".into()));
    }
    let zero = DVector::zeros(target.p1());
    fit_matched_offset(target, &zero, lambda, settings, Method::TargetLasso)
}

impl Predict for HtlModel {
    /// `[X | Ẑ(X)] · β̂`, with the fitted centering undone.
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let x = match &self.centering {
            Some(c) => c.center_x(x)?,
            None => x.clone(),
        };
        let (z_hat, _) = impute_clamped(&self.map, &x, self.clamp_tolerance)?;
        let d = hstack(&x, &z_hat);
        if d.ncols() != self.fit.len() {
            return Err(Error::Dimension(format!(
                "design has {} columns but the model has {} coefficients",
                d.ncols(),
                self.fit.len()
            )));
        }
        let mut out = d * DVector::from_column_slice(&self.fit.beta_hat);
        if let Some(c) = &self.centering {
            out.add_scalar_mut(c.y_mean);
        }
        Ok(out)
    }
}

impl Predict for TlFit {
    /// `X · β̂₁`; the fit must have exactly `X.ncols()` coefficients.
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.len() {
            return Err(Error::Dimension(format!(
                "data has {} columns but the fit has {} coefficients",
                x.ncols(),
                self.len()
            )));
        }
        self.predict_matched(x)
    }
}

/// Linear predictor with the true coefficients: `[X | Z]β*` when `Z` is
/// supplied, otherwise `X β₁*` using the first `X.ncols()` entries.
pub fn oracle_predict(x: &DMatrix<f64>, z: Option<&DMatrix<f64>>, beta_star: &[f64]) -> Result<DVector<f64>> {
    let d = match z {
        Some(z) => {
            if z.nrows() != x.nrows() {
                return Err(Error::Dimension("x and z row counts differ".into()));
            }
            hstack(x, z)
        }
        None => x.clone(),
    };
    let needed = d.ncols();
    if (z.is_some() && beta_star.len() != needed) || beta_star.len() < needed {
        return Err(Error::Dimension(format!(
            "oracle needs {needed} coefficients, got {}",
            beta_star.len()
        )));
    }
    Ok(d * DVector::from_column_slice(&beta_star[..needed]))
}

/// `draws` bootstrap index sets of size `n`, sampled with replacement.
pub fn resample_indices(n: usize, draws: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}

/// Refits the target stage on each resample of the target rows while the
/// proxy stage stays fixed. Returns `β̂` per draw.
pub fn bootstrap_htl(pre: &Pretrained, target: &Dataset, config: &HtlConfig, resamples: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    crate::par_map(resamples.len(), |b| {
        let sample = target.select_rows(&resamples[b])?;
        fit_target_stage(pre, &sample, config).map(|m| m.fit.beta_hat)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalized::null_threshold;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    struct World {
        proxies: Vec<Dataset>,
        target: Dataset,
        p: DMatrix<f64>,
        beta: DVector<f64>,
    }

    // Shared coefficients across domains and no response noise; `z` carries
    // its own noise so that `[X | Z]` has full column rank.
    fn noiseless_world(k: usize, n_t: usize, seed: u64) -> World {
        let (p1, p2) = (4, 3);
        let p = gaussian(p1, p2, seed);
        let beta = DVector::from_vec(vec![1.0, 0.0, -0.5, 0.0, 0.5, 0.0, 1.0]);
        let make = |n: usize, s: u64, keep_z: bool| {
            let x = gaussian(n, p1, s);
            let z = &x * &p + gaussian(n, p2, s + 1000) * 0.5;
            let y = hstack(&x, &z) * &beta;
            Dataset::new(x, keep_z.then_some(z), y).unwrap()
        };
        World {
            proxies: (0..k).map(|i| make(200, seed + 10 + i as u64, true)).collect(),
            target: make(n_t, seed + 99, false),
            p,
            beta,
        }
    }

    fn fixed(lambda: f64) -> HtlConfig {
        HtlConfig {
            lambda: LambdaChoice::Fixed(lambda),
            ..Default::default()
        }
    }

    #[test]
    fn proxy_coefficients_cases() {
        let w = noiseless_world(3, 20, 1);
        let single = fit_proxy_coefficients(&w.proxies[..1]).unwrap();
        assert_eq!(single, ols(&w.proxies[0].design(), w.proxies[0].y()).unwrap().coefficients);

        let twice = fit_proxy_coefficients(&[w.proxies[0].clone(), w.proxies[0].clone()]).unwrap();
        assert_eq!(twice, single);

        let all = fit_proxy_coefficients(&w.proxies).unwrap();
        assert!((all - &w.beta).amax() <= 1e-8);

        let other = Dataset::new(gaussian(5, 2, 1), None, DVector::zeros(5)).unwrap();
        assert!(matches!(
            fit_proxy_coefficients(&[w.proxies[0].clone(), other]),
            Err(Error::Incompatible(_))
        ));
        assert!(fit_proxy_coefficients(&[]).is_err());
    }

    #[test]
    fn htl_noiseless_full_shrinkage_recovers_truth() {
        let w = noiseless_world(2, 15, 2);
        let model = fit_htl(&w.proxies, &w.target, &fixed(1e6)).unwrap();
        assert_eq!(model.fit.beta_hat, model.fit.omega_hat);
        for (b, t) in model.fit.beta_hat.iter().zip(w.beta.iter()) {
            assert!((b - t).abs() <= 1e-8);
        }
        assert!((model.map.coefficient_matrix() - &w.p).amax() <= 0.2);
    }

    #[test]
    fn htl_unpenalized_is_ols_on_imputed_design() {
        let mut w = noiseless_world(2, 40, 3);
        // perturb the target response so the contrast is nonzero
        let noise = gaussian(40, 1, 77).column(0).into_owned();
        w.target = Dataset::new(w.target.x().clone(), None, w.target.y() + noise).unwrap();
        let mut cfg = fixed(0.0);
        cfg.settings.tol = 1e-13;
        cfg.settings.max_iters = 200_000;
        let model = fit_htl(&w.proxies, &w.target, &cfg).unwrap();
        // the imputed design has rank p1 only, so compare fitted values
        let z_hat = impute_clamped(&model.map, w.target.x(), 0.0).unwrap().0;
        let d = hstack(w.target.x(), &z_hat);
        let ls = ols(&d, w.target.y()).unwrap();
        let fitted = &d * DVector::from_column_slice(&model.fit.beta_hat);
        assert!((fitted - &d * ls.coefficients).amax() <= 1e-7);
    }

    #[test]
    fn htl_full_rank_unpenalized_matches_ols() {
        // nonlinear target z gives an imputed design of full column rank only
        // when z_hat is not a linear function of x; use a sieve map for that
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let make = |n: usize, rng: &mut ChaCha8Rng| {
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let z = DMatrix::from_fn(n, 1, |i, _| (3.0f64 * x[(i, 0)]).cos() + rng.sample::<f64, _>(StandardNormal) * 0.1);
            let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 1)] + 2.0 * z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
            (x, z, y)
        };
        let (x, z, y) = make(500, &mut rng);
        let proxy = Dataset::new(x, Some(z), y).unwrap();
        let (xt, _, yt) = make(60, &mut rng);
        let target = Dataset::new(xt, None, yt).unwrap();
        let cfg = HtlConfig {
            map: MapSpec::Sieve(SieveSpec {
                truncation: Some(9),
                support: SupportChoice::Fixed(1.0),
                gamma: GammaChoice::Fixed(0.0),
                ..Default::default()
            }),
            lambda: LambdaChoice::Fixed(0.0),
            settings: LassoSettings {
                tol: 1e-13,
                max_iters: 500_000,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = fit_htl(&[proxy], &target, &cfg).unwrap();
        let z_hat = impute_clamped(&model.map, target.x(), 0.0).unwrap().0;
        let ls = ols(&hstack(target.x(), &z_hat), target.y()).unwrap();
        assert!(!ls.rank_deficient);
        let beta = DVector::from_column_slice(&model.fit.beta_hat);
        assert!((beta - ls.coefficients).amax() <= 1e-7);
    }

    #[test]
    fn identical_proxies_match_single_proxy() {
        let w = noiseless_world(1, 25, 4);
        let noisy = Dataset::new(
            w.proxies[0].x().clone(),
            w.proxies[0].z().map(|z| z + gaussian(200, 3, 8) * 0.3),
            w.proxies[0].y() + gaussian(200, 1, 9).column(0) * 0.5,
        )
        .unwrap();
        let cfg = fixed(0.05);
        let one = fit_htl(std::slice::from_ref(&noisy), &w.target, &cfg).unwrap();
        let three = fit_htl(&[noisy.clone(), noisy.clone(), noisy], &w.target, &cfg).unwrap();
        assert_eq!(one.fit, three.fit);
        assert_eq!(one.map.coefficient_matrix(), three.map.coefficient_matrix());
    }

    #[test]
    fn homogeneous_equals_htl_without_mismatched_covariates() {
        let w = noiseless_world(2, 30, 5);
        let strip = |d: &Dataset| {
            let y = d.y() + gaussian(d.n(), 1, d.n() as u64).column(0);
            Dataset::new(d.x().clone(), None, y).unwrap()
        };
        let proxies: Vec<Dataset> = w.proxies.iter().map(strip).collect();
        let target = strip(&w.target);
        for choice in [LambdaChoice::Fixed(0.1), LambdaChoice::Cv(CvSpec::new(5, 3))] {
            let cfg = HtlConfig {
                lambda: choice.clone(),
                ..Default::default()
            };
            let htl = fit_htl(&proxies, &target, &cfg).unwrap();
            let hm = fit_homogeneous(&proxies, &target, &choice, &cfg.settings).unwrap();
            assert_eq!(htl.fit.beta_hat, hm.beta_hat);
            assert_eq!(htl.fit.lambda, hm.lambda);
        }
    }

    #[test]
    fn homogeneous_full_shrinkage() {
        let w = noiseless_world(2, 30, 6);
        let omega1 = fit_proxy_matched_coefficients(&w.proxies).unwrap();
        let fit = fit_homogeneous(&w.proxies, &w.target, &LambdaChoice::Fixed(1e9), &LassoSettings::default()).unwrap();
        assert_eq!(fit.beta_hat, omega1.as_slice());
        assert_eq!(fit.method, Method::Homogeneous);
    }

    #[test]
    fn target_lasso_limits() {
        let w = noiseless_world(1, 30, 7);
        let lmax = null_threshold(w.target.x(), w.target.y(), None);
        let fit = fit_target_lasso(&w.target, &LambdaChoice::Fixed(lmax), &LassoSettings::default()).unwrap();
        assert!(fit.beta_hat.iter().all(|v| *v == 0.0));

        let fit = fit_target_lasso(&w.target, &LambdaChoice::Fixed(0.0), &LassoSettings::default()).unwrap();
        let ls = ols(w.target.x(), w.target.y()).unwrap();
        assert!((DVector::from_column_slice(&fit.beta_hat) - ls.coefficients).amax() <= 1e-7);

        let tiny = Dataset::new(gaussian(1, 2, 1), None, DVector::zeros(1)).unwrap();
        assert!(fit_target_lasso(&tiny, &LambdaChoice::Fixed(0.1), &LassoSettings::default()).is_err());
    }

    #[test]
    fn predictions() {
        let w = noiseless_world(2, 15, 8);
        let mut model = fit_htl(&w.proxies, &w.target, &fixed(1e6)).unwrap();
        let x_new = gaussian(6, 4, 50);

        // true map and true β: predictions equal X β₁* + X P β₂*
        let mut exact = model.clone();
        exact.map = FeatureMapModel::linear(w.p.clone());
        exact.fit = TlFit::new(w.beta.as_slice().to_vec(), vec![0.0; 7], 0.0, Method::Htl).unwrap();
        let truth = oracle_predict(&x_new, Some(&(&x_new * &w.p)), w.beta.as_slice()).unwrap();
        assert!((exact.predict(&x_new).unwrap() - truth).amax() <= 1e-12);

        // hand-computed single row
        let row = x_new.rows(0, 1).into_owned();
        let z_hat = &row * model.map.coefficient_matrix();
        let mut expected = 0.0;
        for j in 0..4 {
            expected += row[(0, j)] * model.fit.beta_hat[j];
        }
        for j in 0..3 {
            expected += z_hat[(0, j)] * model.fit.beta_hat[4 + j];
        }
        assert!((model.predict(&row).unwrap()[0] - expected).abs() <= 1e-12);

        model.fit = TlFit::new(vec![0.0; 7], vec![0.0; 7], 0.0, Method::Htl).unwrap();
        assert!(model.predict(&x_new).unwrap().iter().all(|v| *v == 0.0));
        assert!(model.predict(&gaussian(2, 3, 1)).is_err());
    }

    #[test]
    fn oracle_predict_cases() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let z = DMatrix::from_row_slice(3, 1, &[4.0, -2.0, 1.0]);
        let beta = [0.5, -1.0, 2.0];
        assert!(oracle_predict(&x, Some(&z), &[0.0; 3]).unwrap().iter().all(|v| *v == 0.0));
        let matched = oracle_predict(&x, None, &beta).unwrap();
        assert_eq!(matched.as_slice(), &[-1.5, -1.0, -3.0]);
        let full = oracle_predict(&x, Some(&z), &beta).unwrap();
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..2 {
                want += x[(i, j)] * beta[j];
            }
            want += z[(i, 0)] * beta[2];
            assert!((full[i] - want).abs() <= 1e-12);
        }
        assert!(oracle_predict(&x, Some(&z), &beta[..2]).is_err());
    }

    #[test]
    fn centering_round_trips_offsets() {
        let w = noiseless_world(2, 30, 9);
        let shift = |d: &Dataset, s: f64| {
            Dataset::new(d.x().add_scalar(s), d.z().map(|z| z.add_scalar(2.0 * s)), d.y().add_scalar(3.0)).unwrap()
        };
        let proxies: Vec<Dataset> = w.proxies.iter().map(|d| shift(d, 0.0)).collect();
        let target = shift(&w.target, 5.0);
        let cfg = HtlConfig {
            center: true,
            ..fixed(1e6)
        };
        let model = fit_htl(&proxies, &target, &cfg).unwrap();
        let c = model.centering.as_ref().unwrap();
        assert!((c.x_means[0] - (w.target.x().column(0).mean() + 5.0)).abs() < 1e-12);
        let pred = model.predict(target.x()).unwrap();
        assert!(pred.iter().all(|v| v.is_finite()));
        // mean prediction on the training rows equals the response mean
        assert!((pred.mean() - target.y().mean()).abs() < 1e-8);
    }

    #[test]
    fn bootstrap_identity_resample_equals_fit() {
        let w = noiseless_world(2, 25, 10);
        let cfg = HtlConfig {
            lambda: LambdaChoice::Cv(CvSpec::new(5, 1)),
            ..Default::default()
        };
        let pre = pretrain(&w.proxies, &cfg).unwrap();
        let identity: Vec<usize> = (0..25).collect();
        let draws = bootstrap_htl(&pre, &w.target, &cfg, &[identity]).unwrap();
        let plain = fit_htl(&w.proxies, &w.target, &cfg).unwrap();
        assert_eq!(draws, vec![plain.fit.beta_hat]);

        let idx = resample_indices(25, 3, 4);
        assert_eq!(idx.len(), 3);
        assert!(idx.iter().all(|r| r.len() == 25 && r.iter().all(|&i| i < 25)));
        assert_eq!(idx, resample_indices(25, 3, 4));
    }

    #[test]
    fn model_json_round_trip() {
        let w = noiseless_world(2, 25, 11);
        let model = fit_htl(&w.proxies, &w.target, &HtlConfig::default()).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: HtlModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
