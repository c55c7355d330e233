//! Least squares, lasso by cyclic coordinate descent, the offset lasso and
//! cross-validated penalty selection.
//!
//! Every lasso in this crate minimizes
//!
//! ```text
//! (1/n)‖r − Dδ‖² + λ Σ_j w_j |δ_j|
//! ```
//!
//! with unit weights unless stated otherwise. Under this convention the
//! smallest penalty with an all-zero solution is `(2/n)‖Dᵀr‖_∞`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::metrics::mean_absolute_prediction_error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    pub max_iters: usize,
    /// Stop once the largest coefficient change in a sweep falls below this.
    pub tol: f64,
    /// Solve on columns scaled to unit mean square, then map back.
    pub standardize: bool,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-9,
            standardize: false,
        }
    }
}

impl LassoSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("lasso tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("lasso max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub max_kkt_violation: f64,
    pub objective: f64,
    /// Columns with zero mean square; their coefficients are pinned at zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_variance_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub rank: usize,
    /// Set when the Gram matrix was singular and the minimum-norm solution was returned.
    pub rank_deficient: bool,
}

fn check_rows(d: &DMatrix<f64>, len: usize, what: &str) -> Result<()> {
    if d.nrows() != len {
        return Err(Error::Dimension(format!(
            "design has {} rows but {what} has length {len}",
            d.nrows()
        )));
    }
    Ok(())
}

/// Solves `min ‖B − D·W‖_F² / n + τ‖W‖_F²` for every column of `B` at once.
///
/// With `τ = 0` this is a single SVD of `D` shared across right-hand sides,
/// returning the minimum-norm solution when `D` is rank deficient. With
/// `τ > 0` it solves `(DᵀD + nτI) W = DᵀB` by Cholesky.
pub fn least_squares(d: &DMatrix<f64>, b: &DMatrix<f64>, ridge_tau: f64) -> Result<(DMatrix<f64>, usize, bool)> {
    if d.nrows() == 0 || d.ncols() == 0 {
        return Err(Error::Dimension("least squares needs a nonempty design".into()));
    }
    if b.nrows() != d.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows, right-hand side has {}",
            d.nrows(),
            b.nrows()
        )));
    }
    ensure_finite("design", d.as_slice())?;
    ensure_finite("response", b.as_slice())?;
    if !(ridge_tau >= 0.0) || !ridge_tau.is_finite() {
        return Err(Error::InvalidValue(format!("ridge shift must be nonnegative, got {ridge_tau}")));
    }
    let p = d.ncols();

    if ridge_tau > 0.0 {
        let n = d.nrows() as f64;
        let mut gram = d.tr_mul(d);
        for j in 0..p {
            gram[(j, j)] += n * ridge_tau;
        }
        let rhs = d.tr_mul(b);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidValue("ridge Gram matrix is not positive definite".into()))?;
        return Ok((chol.solve(&rhs), p, false));
    }

    let svd = d.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * d.nrows().max(p) as f64 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let solution = svd
        .solve(b, eps)
        .map_err(|e| Error::InvalidValue(format!("least squares solve failed: {e}")))?;
    Ok((solution, rank, rank < p))
}

/// Ordinary least squares; minimum-norm solution when `DᵀD` is singular.
pub fn ols(d: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    check_rows(d, y.len(), "response")?;
    let b = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let (w, rank, rank_deficient) = least_squares(d, &b, 0.0)?;
    Ok(OlsFit {
        coefficients: w.column(0).into_owned(),
        rank,
        rank_deficient,
    })
}

/// `sign(v) · max(|v| − t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn weight(weights: Option<&[f64]>, j: usize) -> f64 {
    weights.map_or(1.0, |w| w[j])
}

/// `(1/n)‖r − Dδ‖² + λ Σ w_j|δ_j|`.
pub fn lasso_objective(d: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, weights: Option<&[f64]>, delta: &DVector<f64>) -> f64 {
    let resid = r - d * delta;
    let penalty: f64 = delta
        .iter()
        .enumerate()
        .map(|(j, v)| weight(weights, j) * v.abs())
        .sum();
    resid.norm_squared() / d.nrows() as f64 + lambda * penalty
}

/// Smallest `λ` for which the all-zero vector solves the weighted lasso.
pub fn null_threshold(d: &DMatrix<f64>, r: &DVector<f64>, weights: Option<&[f64]>) -> f64 {
    let n = d.nrows() as f64;
    let g = d.tr_mul(r);
    g.iter()
        .enumerate()
        .map(|(j, v)| {
            let w = weight(weights, j);
            let s = 2.0 * v.abs() / n;
            if w > 0.0 {
                s / w
            } else if s > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the lasso optimality conditions at `delta`.
///
/// With `g = (2/n)Dᵀ(Dδ − r)`, nonzero coordinates must satisfy
/// `g_j = −λ sign(δ_j)` and zero coordinates `|g_j| ≤ λ`.
pub fn kkt_check(d: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, delta: &DVector<f64>) -> f64 {
    kkt_check_weighted(d, r, lambda, None, delta)
}

pub fn kkt_check_weighted(
    d: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: f64,
    weights: Option<&[f64]>,
    delta: &DVector<f64>,
) -> f64 {
    let n = d.nrows() as f64;
    let g = d.tr_mul(&(d * delta - r)) * (2.0 / n);
    g.iter()
        .zip(delta.iter())
        .enumerate()
        .map(|(j, (&gj, &dj))| {
            let lam = lambda * weight(weights, j);
            if dj != 0.0 {
                (gj + lam * dj.signum()).abs()
            } else {
                (gj.abs() - lam).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// A design with its Gram matrix `DᵀD/n` precomputed, so that many lasso
/// problems sharing `D` (response columns, penalty paths) reuse it.
#[derive(Debug, Clone)]
pub struct LassoDesign<'a> {
    d: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl<'a> LassoDesign<'a> {
    pub fn new(d: &'a DMatrix<f64>) -> Result<Self> {
        if d.nrows() == 0 || d.ncols() == 0 {
            return Err(Error::Dimension("lasso needs a nonempty design".into()));
        }
        ensure_finite("design", d.as_slice())?;
        let gram = d.tr_mul(d) / d.nrows() as f64;
        Ok(Self { d, gram })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.d
    }

    /// Cyclic coordinate descent from `warm_start` (zeros if absent).
    pub fn solve(
        &self,
        r: &DVector<f64>,
        lambda: f64,
        weights: Option<&[f64]>,
        warm_start: Option<&DVector<f64>>,
        settings: &LassoSettings,
    ) -> Result<(DVector<f64>, SolveDiagnostics)> {
        let d = self.d;
        let (n, p) = (d.nrows(), d.ncols());
        check_rows(d, r.len(), "response")?;
        ensure_finite("response", r.as_slice())?;
        settings.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidValue(format!("lambda must be nonnegative and finite, got {lambda}")));
        }
        if let Some(w) = weights {
            if w.len() != p || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidValue("penalty weights must be p nonnegative finite values".into()));
            }
        }

        if settings.standardize {
            return self.solve_standardized(r, lambda, weights, warm_start, settings);
        }

        let gram = &self.gram;
        let corr = d.tr_mul(r) / n as f64;
        let mut delta = match warm_start {
            Some(w) if w.len() == p => w.clone(),
            Some(w) => {
                return Err(Error::Dimension(format!("warm start has length {}, expected {p}", w.len())));
            }
            None => DVector::zeros(p),
        };
        let zero_variance: Vec<usize> = (0..p).filter(|&j| gram[(j, j)] <= 0.0).collect();
        for &j in &zero_variance {
            delta[j] = 0.0;
        }
        let mut gd = gram * &delta;

        let quad_objective = |delta: &DVector<f64>, gd: &DVector<f64>| {
            let pen: f64 = delta.iter().enumerate().map(|(j, v)| weight(weights, j) * v.abs()).sum();
            -2.0 * corr.dot(delta) + delta.dot(gd) + lambda * pen
        };
        let mut last = quad_objective(&delta, &gd);

        let mut iterations = 0;
        let mut converged = false;
        let mut signs = sign_pattern(&delta);
        let mut stable_sweeps = 0;
        while iterations < settings.max_iters {
            iterations += 1;
            let mut max_change = 0.0f64;
            for j in 0..p {
                let gjj = gram[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let old = delta[j];
                let rho = corr[j] - (gd[j] - gjj * old);
                let new = soft_threshold(rho, 0.5 * lambda * weight(weights, j)) / gjj;
                let step = new - old;
                if step != 0.0 {
                    gd.axpy(step, &gram.column(j), 1.0);
                    delta[j] = new;
                    max_change = max_change.max(step.abs());
                }
            }
            if cfg!(debug_assertions) {
                let now = quad_objective(&delta, &gd);
                debug_assert!(
                    now <= last + 1e-10 * (1.0 + last.abs()),
                    "coordinate descent objective increased: {last} -> {now}"
                );
                last = now;
            }
            if max_change < settings.tol {
                converged = true;
                break;
            }
            let now_signs = sign_pattern(&delta);
            if now_signs == signs {
                stable_sweeps += 1;
            } else {
                signs = now_signs;
                stable_sweeps = 0;
            }
            if stable_sweeps >= POLISH_AFTER {
                stable_sweeps = 0;
                if let Some(next) = polish_active_set(gram, &corr, &delta, lambda, weights) {
                    let next_gd = gram * &next;
                    if quad_objective(&next, &next_gd) <= quad_objective(&delta, &gd) {
                        delta = next;
                        gd = next_gd;
                        signs = sign_pattern(&delta);
                    }
                }
                last = quad_objective(&delta, &gd);
            }
        }
        let _ = last;

        let diagnostics = SolveDiagnostics {
            iterations,
            converged,
            max_kkt_violation: kkt_check_weighted(d, r, lambda, weights, &delta),
            objective: lasso_objective(d, r, lambda, weights, &delta),
            zero_variance_columns: zero_variance,
        };
        Ok((delta, diagnostics))
    }

    fn solve_standardized(
        &self,
        r: &DVector<f64>,
        lambda: f64,
        weights: Option<&[f64]>,
        warm_start: Option<&DVector<f64>>,
        settings: &LassoSettings,
    ) -> Result<(DVector<f64>, SolveDiagnostics)> {
        let p = self.d.ncols();
        let scale: Vec<f64> = (0..p)
            .map(|j| {
                let s = self.gram[(j, j)].sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut scaled = self.d.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(&scale) {
            col.unscale_mut(*s);
        }
        let inner = LassoDesign::new(&scaled)?;
        let warm = warm_start.map(|w| w.component_mul(&DVector::from_column_slice(&scale)));
        let plain = LassoSettings {
            standardize: false,
            ..*settings
        };
        let (theta, mut diag) = inner.solve(r, lambda, weights, warm.as_ref(), &plain)?;
        let delta = DVector::from_iterator(p, theta.iter().zip(&scale).map(|(t, s)| t / s));
        diag.objective = lasso_objective(self.d, r, lambda, weights, &delta);
        Ok((delta, diag))
    }
}

const POLISH_AFTER: usize = 2;

fn sign_pattern(delta: &DVector<f64>) -> Vec<i8> {
    delta
        .iter()
        .map(|v| if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 })
        .collect()
}

// Exact minimizer of the objective restricted to the current support and
// signs: G_AA δ_A = c_A − (λ/2) w_A s_A. While G_AA is singular the quadratic
// is flat along its null vectors, so the support is first shrunk by moving
// along one (downhill in the penalty) to the first zero crossing. A Newton
// step that would flip a sign stops at the first zero crossing, drops that
// coordinate and tries again on the smaller support.
fn polish_active_set(
    gram: &DMatrix<f64>,
    corr: &DVector<f64>,
    delta: &DVector<f64>,
    lambda: f64,
    weights: Option<&[f64]>,
) -> Option<DVector<f64>> {
    let mut out = delta.clone();
    loop {
        let active: Vec<usize> = (0..out.len()).filter(|&j| out[j] != 0.0).collect();
        if active.is_empty() {
            return Some(out);
        }
        let k = active.len();
        let g_aa = DMatrix::from_fn(k, k, |a, b| gram[(active[a], active[b])]);
        let eig = g_aa.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let (low, low_value) = eig.eigenvalues.argmin();
        if !(top > 0.0) {
            return None;
        }
        if low_value <= NULL_EIGEN_RATIO * top {
            let mut v = eig.eigenvectors.column(low).into_owned();
            let slope: f64 = active
                .iter()
                .enumerate()
                .map(|(a, &j)| weight(weights, j) * out[j].signum() * v[a])
                .sum();
            if slope > 0.0 {
                v.neg_mut();
            }
            let mut step = f64::INFINITY;
            let mut hit = None;
            for (a, &j) in active.iter().enumerate() {
                if v[a] * out[j] < 0.0 {
                    let tj = -out[j] / v[a];
                    if tj < step {
                        step = tj;
                        hit = Some(j);
                    }
                }
            }
            let hit = hit?;
            for (a, &j) in active.iter().enumerate() {
                out[j] += step * v[a];
            }
            out[hit] = 0.0;
            continue;
        }
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            corr[j] - 0.5 * lambda * weight(weights, j) * out[j].signum()
        });
        let target = g_aa.cholesky()?.solve(&rhs);
        if target.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut t = 1.0f64;
        let mut hit = None;
        for (a, &j) in active.iter().enumerate() {
            if target[a] * out[j] <= 0.0 {
                let tj = out[j] / (out[j] - target[a]);
                if tj < t {
                    t = tj;
                    hit = Some(j);
                }
            }
        }
        for (a, &j) in active.iter().enumerate() {
            out[j] += t * (target[a] - out[j]);
        }
        match hit {
            Some(j) => out[j] = 0.0,
            None => return Some(out),
        }
    }
}

const NULL_EIGEN_RATIO: f64 = 1e-11;

/// Lasso `(1/n)‖r − Dδ‖² + λ‖δ‖₁` by cyclic coordinate descent.
pub fn lasso(d: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, settings: &LassoSettings) -> Result<(DVector<f64>, SolveDiagnostics)> {
    LassoDesign::new(d)?.solve(r, lambda, None, None, settings)
}

/// Lasso with a per-coordinate penalty weight.
pub fn lasso_weighted(
    d: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: f64,
    weights: &[f64],
    settings: &LassoSettings,
) -> Result<(DVector<f64>, SolveDiagnostics)> {
    LassoDesign::new(d)?.solve(r, lambda, Some(weights), None, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetFit {
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Minimizes `(1/n)‖y − Dβ‖² + λ‖β − ω̂‖₁` by solving for `δ = β − ω̂` on the
/// residual `y − Dω̂`.
pub fn lasso_with_offset(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    omega_hat: &DVector<f64>,
    lambda: f64,
    settings: &LassoSettings,
) -> Result<OffsetFit> {
    lasso_with_offset_weighted(d, y, omega_hat, lambda, None, settings)
}

pub fn lasso_with_offset_weighted(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    omega_hat: &DVector<f64>,
    lambda: f64,
    weights: Option<&[f64]>,
    settings: &LassoSettings,
) -> Result<OffsetFit> {
    let design = LassoDesign::new(d)?;
    offset_solve(&design, y, omega_hat, lambda, weights, None, settings)
}

fn offset_residual(d: &DMatrix<f64>, y: &DVector<f64>, omega_hat: &DVector<f64>) -> Result<DVector<f64>> {
    check_rows(d, y.len(), "response")?;
    if omega_hat.len() != d.ncols() {
        return Err(Error::Dimension(format!(
            "offset has length {} but design has {} columns",
            omega_hat.len(),
            d.ncols()
        )));
    }
    ensure_finite("offset", omega_hat.as_slice())?;
    Ok(y - d * omega_hat)
}

fn offset_solve(
    design: &LassoDesign<'_>,
    y: &DVector<f64>,
    omega_hat: &DVector<f64>,
    lambda: f64,
    weights: Option<&[f64]>,
    warm_start: Option<&DVector<f64>>,
    settings: &LassoSettings,
) -> Result<OffsetFit> {
    let r = offset_residual(design.design(), y, omega_hat)?;
    let (delta, diagnostics) = design.solve(&r, lambda, weights, warm_start, settings)?;
    Ok(OffsetFit {
        beta: omega_hat + &delta,
        delta,
        diagnostics,
    })
}

/// Cross-validation setup for penalty selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub folds: usize,
    /// Candidate penalties; `None` uses 50 log-spaced values from the null
    /// threshold down to `1e-4` times it.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl CvSpec {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self { folds, grid: None, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// Candidate penalties in decreasing order.
    pub lambdas: Vec<f64>,
    /// Mean held-out MAP per candidate.
    pub mean_errors: Vec<f64>,
}

pub const DEFAULT_GRID_LEN: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 1e-4;

/// `len` values spaced evenly in log scale from `lambda_max` to `lambda_max · ratio`.
pub fn log_grid(lambda_max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if lambda_max <= 0.0 || len == 0 {
        return vec![0.0];
    }
    if len == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

/// Seeded fold assignment: shuffle the rows, then cut into contiguous blocks.
/// Returns the held-out rows of each fold.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Argument(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Argument(format!("{n} observations cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut block = order[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    Ok(out)
}

fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Argument("penalty grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Argument(format!("penalty grid value {bad} is not a nonnegative number")));
    }
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    Ok(g)
}

/// K-fold cross-validation of the offset lasso penalty, scored by held-out
/// MAP. Ties go to the larger penalty.
pub fn cv_lambda(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    omega_hat: &DVector<f64>,
    spec: &CvSpec,
    weights: Option<&[f64]>,
    settings: &LassoSettings,
) -> Result<CvResult> {
    let r_full = offset_residual(d, y, omega_hat)?;
    let lambdas = match &spec.grid {
        Some(g) => normalize_grid(g)?,
        None => normalize_grid(&log_grid(
            null_threshold(d, &r_full, weights),
            DEFAULT_GRID_RATIO,
            DEFAULT_GRID_LEN,
        ))?,
    };
    let folds = fold_assignment(d.nrows(), spec.folds, spec.seed)?;
    let n = d.nrows();
    let mut totals = vec![0.0; lambdas.len()];

    for held_out in &folds {
        let mut is_test = vec![false; n];
        for &i in held_out {
            is_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let d_train = d.select_rows(&train);
        let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let d_test = d.select_rows(held_out);
        let y_test: Vec<f64> = held_out.iter().map(|&i| y[i]).collect();

        let design = LassoDesign::new(&d_train)?;
        let mut warm: Option<DVector<f64>> = None;
        for (k, &lambda) in lambdas.iter().enumerate() {
            let fit = offset_solve(&design, &y_train, omega_hat, lambda, weights, warm.as_ref(), settings)?;
            let pred = &d_test * &fit.beta;
            totals[k] += mean_absolute_prediction_error(&y_test, pred.as_slice())?;
            warm = Some(fit.delta);
        }
    }

    let mean_errors: Vec<f64> = totals.iter().map(|t| t / folds.len() as f64).collect();
    let mut best = 0;
    for (k, e) in mean_errors.iter().enumerate() {
        if *e < mean_errors[best] {
            best = k;
        }
    }
    Ok(CvResult {
        best_lambda: lambdas[best],
        lambdas,
        mean_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    fn gaussian_vec(n: usize, seed: u64) -> DVector<f64> {
        gaussian(n, 1, seed).column(0).into_owned()
    }

    #[test]
    fn ols_orthonormal_columns() {
        let q = gaussian(30, 4, 1).qr().q();
        let y = gaussian_vec(30, 2);
        let fit = ols(&q, &y).unwrap();
        let expected = q.tr_mul(&y);
        assert!((fit.coefficients - expected).amax() < 1e-12);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn ols_noiseless_and_normal_equations() {
        let d = gaussian(200, 10, 3);
        let w = gaussian_vec(10, 4);
        let fit = ols(&d, &(&d * &w)).unwrap();
        assert!((fit.coefficients - &w).amax() < 1e-10);

        let y = gaussian_vec(200, 5);
        let fit = ols(&d, &y).unwrap();
        let resid = &y - &d * &fit.coefficients;
        assert!(d.tr_mul(&resid).amax() <= 1e-8);
    }

    #[test]
    fn ols_rank_deficient_min_norm() {
        let base = gaussian(50, 2, 6);
        let mut d = DMatrix::zeros(50, 3);
        d.column_mut(0).copy_from(&base.column(0));
        d.column_mut(1).copy_from(&base.column(1));
        d.column_mut(2).copy_from(&base.column(1));
        let y = base.column(0) * 2.0 + base.column(1) * 4.0;
        let fit = ols(&d, &y).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 2);
        // minimum norm splits the duplicated column's weight evenly
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-9);
        assert!((fit.coefficients[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ols_rejects_nan() {
        let mut d = gaussian(5, 2, 1);
        d[(0, 0)] = f64::NAN;
        assert!(matches!(ols(&d, &DVector::zeros(5)), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn ridge_shift_shrinks() {
        let d = gaussian(40, 3, 8);
        let y = gaussian(40, 1, 9);
        let (plain, _, _) = least_squares(&d, &y, 0.0).unwrap();
        let (ridge, _, _) = least_squares(&d, &y, 0.5).unwrap();
        assert!(ridge.norm() < plain.norm());
        // normal equations of the shifted problem
        let lhs = d.tr_mul(&d) * &ridge + &ridge * (40.0 * 0.5);
        assert!((lhs - d.tr_mul(&y)).amax() < 1e-9);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        for x in [-3.5, 0.0, 1e-300, 7.25] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn lasso_null_threshold_gives_zero() {
        let d = gaussian(30, 5, 10);
        let r = gaussian_vec(30, 11);
        let lmax = null_threshold(&d, &r, None);
        let (delta, diag) = lasso(&d, &r, lmax, &LassoSettings::default()).unwrap();
        assert!(delta.iter().all(|v| *v == 0.0));
        assert!(diag.converged);
        let (delta, _) = lasso(&d, &r, 0.95 * lmax, &LassoSettings::default()).unwrap();
        assert!(delta.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn lasso_unpenalized_matches_ols() {
        let d = gaussian(40, 6, 12);
        let r = gaussian_vec(40, 13);
        let (delta, diag) = lasso(&d, &r, 0.0, &LassoSettings::default()).unwrap();
        assert!(diag.converged);
        let fit = ols(&d, &r).unwrap();
        assert!((delta - fit.coefficients).amax() < 1e-7);
    }

    #[test]
    fn lasso_zero_column_pinned() {
        let mut d = gaussian(20, 3, 14);
        d.column_mut(1).fill(0.0);
        let r = gaussian_vec(20, 15);
        let (delta, diag) = lasso(&d, &r, 0.1, &LassoSettings::default()).unwrap();
        assert_eq!(delta[1], 0.0);
        assert_eq!(diag.zero_variance_columns, vec![1]);
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let d = gaussian(20, 6, 16);
        let r = gaussian_vec(20, 17);
        let settings = LassoSettings {
            max_iters: 1,
            tol: 1e-15,
            ..Default::default()
        };
        let (_, diag) = lasso(&d, &r, 0.01, &settings).unwrap();
        assert!(!diag.converged);
        assert_eq!(diag.iterations, 1);
    }

    #[test]
    fn lasso_collinear_design_converges() {
        // second block is an exact linear image of the first, scaled up
        let x = gaussian(30, 10, 20);
        let p = gaussian(10, 10, 21).map(|v| 5.0 + v);
        let mut d = DMatrix::zeros(30, 20);
        d.columns_mut(0, 10).copy_from(&x);
        d.columns_mut(10, 10).copy_from(&(&x * &p));
        let r = gaussian_vec(30, 22) * 50.0;
        let lmax = null_threshold(&d, &r, None);
        for ratio in [0.1, 1e-2, 1e-3, 1e-4] {
            let (delta, diag) = lasso(&d, &r, ratio * lmax, &LassoSettings::default()).unwrap();
            assert!(diag.converged, "ratio {ratio}: {} sweeps", diag.iterations);
            assert!(diag.iterations < 2000, "ratio {ratio}: {} sweeps", diag.iterations);
            assert!(diag.max_kkt_violation <= 1e-8 * lmax, "ratio {ratio}: kkt {}", diag.max_kkt_violation);
            assert!(delta.iter().filter(|v| **v != 0.0).count() <= 10 + 1);
        }
    }

    #[test]
    fn lasso_rejects_bad_lambda() {
        let d = gaussian(5, 2, 1);
        assert!(lasso(&d, &DVector::zeros(5), -1.0, &LassoSettings::default()).is_err());
        assert!(lasso(&d, &DVector::zeros(4), 1.0, &LassoSettings::default()).is_err());
    }

    #[test]
    fn standardized_solution_satisfies_weighted_kkt() {
        let mut d = gaussian(40, 4, 18);
        d.column_mut(2).scale_mut(10.0);
        let r = gaussian_vec(40, 19);
        let settings = LassoSettings {
            standardize: true,
            ..Default::default()
        };
        let (delta, diag) = lasso(&d, &r, 0.1, &settings).unwrap();
        assert!(diag.converged);
        // standardizing is a per-column penalty weight equal to the column RMS
        let rms: Vec<f64> = d.column_iter().map(|c| (c.norm_squared() / 40.0).sqrt()).collect();
        assert!(kkt_check_weighted(&d, &r, 0.1, Some(&rms), &delta) < 1e-7);
    }

    #[test]
    fn kkt_scalar_closed_form() {
        let d = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 1.5]);
        let r = DVector::from_vec(vec![2.0, -1.0, 0.0, 3.0]);
        let n = 4.0;
        let c = d.tr_mul(&r)[0] / n;
        let g = d.norm_squared() / n;
        let lambda = 0.3;
        let exact = soft_threshold(c, lambda / 2.0) / g;
        let v = kkt_check(&d, &r, lambda, &DVector::from_element(1, exact));
        assert!(v <= 1e-12, "violation {v}");

        let lmax = null_threshold(&d, &r, None);
        assert_eq!(kkt_check(&d, &r, lmax * 1.01, &DVector::zeros(1)), 0.0);
    }

    #[test]
    fn kkt_detects_perturbation() {
        let d = gaussian(20, 4, 20);
        let r = gaussian_vec(20, 21);
        let settings = LassoSettings {
            tol: 1e-13,
            ..Default::default()
        };
        let (mut delta, _) = lasso(&d, &r, 0.2, &settings).unwrap();
        let j = delta.iter().position(|v| *v != 0.0).expect("some active coordinate");
        delta[j] += 1e-3;
        assert!(kkt_check(&d, &r, 0.2, &delta) > 1e-4);
    }

    #[test]
    fn offset_full_shrinkage_and_reduction() {
        let d = gaussian(25, 5, 22);
        let y = gaussian_vec(25, 23);
        let omega = gaussian_vec(5, 24);
        let r = &y - &d * &omega;
        let lmax = null_threshold(&d, &r, None);
        let fit = lasso_with_offset(&d, &y, &omega, lmax, &LassoSettings::default()).unwrap();
        assert_eq!(fit.beta, omega);

        let zero = DVector::zeros(5);
        let fit = lasso_with_offset(&d, &y, &zero, 0.1, &LassoSettings::default()).unwrap();
        let (plain, _) = lasso(&d, &y, 0.1, &LassoSettings::default()).unwrap();
        assert_eq!(fit.beta, plain);
    }

    #[test]
    fn offset_objective_equivalence() {
        let d = gaussian(30, 6, 25);
        let y = gaussian_vec(30, 26);
        let omega = gaussian_vec(6, 27);
        let lambda = 0.15;
        let fit = lasso_with_offset(&d, &y, &omega, lambda, &LassoSettings::default()).unwrap();
        // objective in β: (1/n)‖y − Dβ‖² + λ‖β − ω̂‖₁, computed directly
        let n = 30.0;
        let direct = (&y - &d * &fit.beta).norm_squared() / n + lambda * (&fit.beta - &omega).lp_norm(1);
        let substituted = lasso_objective(&d, &(&y - &d * &omega), lambda, None, &fit.delta);
        assert!((direct - substituted).abs() <= 1e-10);
        let at_omega = (&y - &d * &omega).norm_squared() / n;
        assert!(direct <= at_omega);
    }

    #[test]
    fn cv_grid_handling() {
        let d = gaussian(30, 4, 28);
        let y = gaussian_vec(30, 29);
        let omega = DVector::zeros(4);
        let settings = LassoSettings::default();
        let mut spec = CvSpec::new(5, 1);
        spec.grid = Some(vec![0.3]);
        assert_eq!(cv_lambda(&d, &y, &omega, &spec, None, &settings).unwrap().best_lambda, 0.3);

        spec.grid = Some(vec![0.01, 0.1, 0.5]);
        let a = cv_lambda(&d, &y, &omega, &spec, None, &settings).unwrap();
        spec.grid = Some(vec![0.5, 0.01, 0.1, 0.1, 0.01]);
        let b = cv_lambda(&d, &y, &omega, &spec, None, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lambdas, vec![0.5, 0.1, 0.01]);

        spec.grid = Some(vec![]);
        assert!(matches!(cv_lambda(&d, &y, &omega, &spec, None, &settings), Err(Error::Argument(_))));
        spec.grid = None;
        spec.folds = 1;
        assert!(cv_lambda(&d, &y, &omega, &spec, None, &settings).is_err());
        spec.folds = 31;
        assert!(cv_lambda(&d, &y, &omega, &spec, None, &settings).is_err());
    }

    #[test]
    fn cv_default_grid_starts_at_null_threshold() {
        let d = gaussian(40, 5, 30);
        let y = gaussian_vec(40, 31);
        let omega = DVector::zeros(5);
        let res = cv_lambda(&d, &y, &omega, &CvSpec::new(5, 3), None, &LassoSettings::default()).unwrap();
        assert_eq!(res.lambdas.len(), DEFAULT_GRID_LEN);
        let lmax = null_threshold(&d, &y, None);
        assert!((res.lambdas[0] - lmax).abs() < 1e-15);
        assert!((res.lambdas[49] - lmax * 1e-4).abs() < 1e-12 * lmax);
        assert!(res.lambdas.contains(&res.best_lambda));
    }

    #[test]
    fn cv_ties_prefer_larger_lambda() {
        // zero residual: every penalty yields δ = 0 and the same error
        let d = gaussian(20, 3, 32);
        let omega = gaussian_vec(3, 33);
        let y = &d * &omega;
        let mut spec = CvSpec::new(4, 2);
        spec.grid = Some(vec![0.01, 1.0, 0.1]);
        let res = cv_lambda(&d, &y, &omega, &spec, None, &LassoSettings::default()).unwrap();
        assert_eq!(res.best_lambda, 1.0);
    }

    #[test]
    fn folds_partition_rows() {
        let f = fold_assignment(23, 5, 9).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|b| b.len() == 4 || b.len() == 5));
        assert_eq!(f, fold_assignment(23, 5, 9).unwrap());
        assert_ne!(f, fold_assignment(23, 5, 10).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn offset_fit_no_worse_than_offset(seed in 0u64..10_000, lambda in 0.0f64..2.0) {
            let d = gaussian(20, 5, seed);
            let y = gaussian_vec(20, seed + 1);
            let omega = gaussian_vec(5, seed + 2);
            let fit = lasso_with_offset(&d, &y, &omega, lambda, &LassoSettings::default()).unwrap();
            let obj = |b: &DVector<f64>| (&y - &d * b).norm_squared() / 20.0 + lambda * (b - &omega).lp_norm(1);
            prop_assert!(obj(&fit.beta) <= obj(&omega) + 1e-12);
            prop_assert!(fit.diagnostics.converged);
            prop_assert!(fit.diagnostics.max_kkt_violation <= 10.0 * LassoSettings::default().tol);
        }

        #[test]
        fn offset_lasso_is_homogeneous(seed in 0u64..10_000, c in 0.1f64..10.0) {
            let settings = LassoSettings { tol: 1e-14, max_iters: 100_000, ..Default::default() };
            let d = gaussian(20, 4, seed);
            let y = gaussian_vec(20, seed + 1);
            let omega = gaussian_vec(4, seed + 2);
            let lambda = 0.2;
            let base = lasso_with_offset(&d, &y, &omega, lambda, &settings).unwrap();
            let scaled = lasso_with_offset(&d, &(&y * c), &(&omega * c), lambda * c, &settings).unwrap();
            prop_assert!((scaled.delta - base.delta * c).amax() <= 1e-10 * c.max(1.0));
        }
    }
}
