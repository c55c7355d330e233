//! Estimation of the matched → mismatched feature map on proxy data.
//!
//! Two model classes: a linear map `z ≈ Pᵀx` fitted by (optionally ridge
//! shifted) least squares, and a cosine-sieve map `z ≈ ψ_M(x)ᵀΘ` fitted by a
//! lasso per column of `Z`. Maps from several proxies are averaged before
//! imputing the target's missing covariates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::penalized::{cv_lambda, fold_assignment, least_squares, CvSpec, LassoDesign, LassoSettings};
use crate::sieve::{expand_clamped, rescale, BasisIndexSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Linear,
    Sieve,
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MapKind::Linear),
            "sieve" => Ok(MapKind::Sieve),
            other => Err(Error::Argument(format!("unknown map kind '{other}', expected linear or sieve"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapCoefficients {
    /// `p1 × p2` matrix `P` with `ẑ = Pᵀx`.
    Linear { p: DMatrix<f64> },
    /// `M × p2` matrix `Θ` with `ẑ = ψ_M(x)ᵀΘ`. When `input_scale` is set,
    /// coordinate `k` is mapped by `x ↦ a·x / input_scale[k]` before expansion.
    Sieve {
        basis: BasisIndexSet,
        theta: DMatrix<f64>,
        input_scale: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapJson", into = "FeatureMapJson")]
pub struct FeatureMapModel {
    pub coefficients: MapCoefficients,
    /// Number of proxy fits averaged into this model.
    pub fitted_on: usize,
    pub ridge_tau: f64,
    pub rank_deficient: bool,
    /// Per-column sieve penalty actually used.
    pub gamma: Option<Vec<f64>>,
}

impl FeatureMapModel {
    pub fn linear(p: DMatrix<f64>) -> Self {
        Self {
            coefficients: MapCoefficients::Linear { p },
            fitted_on: 1,
            ridge_tau: 0.0,
            rank_deficient: false,
            gamma: None,
        }
    }

    pub fn sieve(basis: BasisIndexSet, theta: DMatrix<f64>, input_scale: Option<Vec<f64>>) -> Result<Self> {
        let model = Self {
            coefficients: MapCoefficients::Sieve {
                basis,
                theta,
                input_scale,
            },
            fitted_on: 1,
            ridge_tau: 0.0,
            rank_deficient: false,
            gamma: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn kind(&self) -> MapKind {
        match self.coefficients {
            MapCoefficients::Linear { .. } => MapKind::Linear,
            MapCoefficients::Sieve { .. } => MapKind::Sieve,
        }
    }

    pub fn p1(&self) -> usize {
        match &self.coefficients {
            MapCoefficients::Linear { p } => p.nrows(),
            MapCoefficients::Sieve { basis, .. } => basis.p1,
        }
    }

    pub fn p2(&self) -> usize {
        self.coefficient_matrix().ncols()
    }

    /// `P` for linear maps, `Θ` for sieve maps.
    pub fn coefficient_matrix(&self) -> &DMatrix<f64> {
        match &self.coefficients {
            MapCoefficients::Linear { p } => p,
            MapCoefficients::Sieve { theta, .. } => theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mat = self.coefficient_matrix();
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("feature map has non-finite coefficients".into()));
        }
        if let MapCoefficients::Sieve {
            basis,
            theta,
            input_scale,
        } = &self.coefficients
        {
            basis.validate()?;
            if theta.nrows() != basis.len() {
                return Err(Error::Dimension(format!(
                    "sieve map has {} coefficient rows for {} basis functions",
                    theta.nrows(),
                    basis.len()
                )));
            }
            if let Some(s) = input_scale {
                if s.len() != basis.p1 || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidValue("input scale must hold p1 positive widths".into()));
                }
            }
        }
        if self.fitted_on == 0 {
            return Err(Error::InvalidValue("fitted_on must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fits `P̂ = argmin (1/n)‖Z − XP‖_F² + τ‖P‖_F²` on one proxy.
///
/// With `τ = 0` and a rank-deficient `X` the minimum-norm solution is
/// returned and `rank_deficient` is set.
pub fn fit_linear_map(proxy: &Dataset, ridge_tau: f64) -> Result<FeatureMapModel> {
    let z = proxy.require_z("fitting a feature map")?;
    let (p, _rank, rank_deficient) = least_squares(proxy.x(), z, ridge_tau)?;
    Ok(FeatureMapModel {
        coefficients: MapCoefficients::Linear { p },
        fitted_on: 1,
        ridge_tau,
        rank_deficient,
        gamma: None,
    })
}

/// Picks the ridge shift for [`fit_linear_map`] by K-fold CV on the proxy,
/// scoring held-out mean squared imputation error. Ties go to the larger shift.
pub fn select_ridge_tau(proxy: &Dataset, grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    let z = proxy.require_z("ridge selection")?;
    if grid.is_empty() {
        return Err(Error::Argument("ridge grid is empty".into()));
    }
    let mut taus = grid.to_vec();
    taus.sort_by(|a, b| b.total_cmp(a));
    taus.dedup();
    let blocks = fold_assignment(proxy.n(), folds, seed)?;
    let n = proxy.n();
    let mut scores = vec![0.0; taus.len()];
    for held_out in &blocks {
        let mut is_test = vec![false; n];
        for &i in held_out {
            is_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let x_train = proxy.x().select_rows(&train);
        let z_train = z.select_rows(&train);
        let x_test = proxy.x().select_rows(held_out);
        let z_test = z.select_rows(held_out);
        for (k, &tau) in taus.iter().enumerate() {
            let (p, _, _) = least_squares(&x_train, &z_train, tau)?;
            let err = (&z_test - &x_test * p).norm_squared() / z_test.len() as f64;
            scores[k] += err;
        }
    }
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = k;
        }
    }
    Ok(taus[best])
}

/// Penalty for the per-column sieve lasso.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Fixed(f64),
    /// `γ = c · √(ln M / n)`.
    Auto { c: f64 },
    /// Per-column K-fold CV over the default penalty path.
    Cv { folds: usize, seed: u64 },
}

impl Default for GammaChoice {
    fn default() -> Self {
        GammaChoice::Auto { c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SieveFitOptions {
    pub gamma: GammaChoice,
    pub settings: LassoSettings,
    /// Rescaling applied to `x` before expansion; see [`MapCoefficients::Sieve`].
    pub input_scale: Option<Vec<f64>>,
}

fn sieve_inputs(x: &DMatrix<f64>, basis: &BasisIndexSet, input_scale: Option<&[f64]>) -> Result<DMatrix<f64>> {
    match input_scale {
        Some(s) => rescale(x, s, basis.a),
        None => Ok(x.clone()),
    }
}

/// Fits `Θ̂` column by column: `θ̂_j = argmin (1/n)‖Z_j − Ψθ‖² + γ_j‖θ‖₁`.
pub fn fit_sieve_map(proxy: &Dataset, basis: &BasisIndexSet, options: &SieveFitOptions) -> Result<FeatureMapModel> {
    let z = proxy.require_z("fitting a feature map")?;
    basis.validate()?;
    let x = sieve_inputs(proxy.x(), basis, options.input_scale.as_deref())?;
    let (psi, _) = expand_clamped(&x, basis, 0.0)?;
    let n = psi.nrows();
    let m = psi.ncols();
    let design = LassoDesign::new(&psi)?;

    let solve_column = |j: usize| -> Result<(DVector<f64>, f64)> {
        let zj = z.column(j).into_owned();
        let gamma = match &options.gamma {
            GammaChoice::Fixed(g) => *g,
            GammaChoice::Auto { c } => c * ((m as f64).ln() / n as f64).sqrt(),
            GammaChoice::Cv { folds, seed } => {
                let spec = CvSpec::new(*folds, seed.wrapping_add(j as u64));
                cv_lambda(&psi, &zj, &DVector::zeros(m), &spec, None, &options.settings)?.best_lambda
            }
        };
        let (theta, diag) = design.solve(&zj, gamma, None, None, &options.settings)?;
        if !diag.converged {
            return Err(Error::NotConverged {
                context: format!("sieve map column {j}"),
                iterations: diag.iterations,
            });
        }
        Ok((theta, gamma))
    };
    let columns = crate::par_map(z.ncols(), solve_column)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut theta = DMatrix::zeros(m, z.ncols());
    let mut gammas = Vec::with_capacity(z.ncols());
    for (j, (col, g)) in columns.into_iter().enumerate() {
        theta.set_column(j, &col);
        gammas.push(g);
    }
    Ok(FeatureMapModel {
        coefficients: MapCoefficients::Sieve {
            basis: basis.clone(),
            theta,
            input_scale: options.input_scale.clone(),
        },
        fitted_on: 1,
        ridge_tau: 0.0,
        rank_deficient: false,
        gamma: Some(gammas),
    })
}

fn pad_rows(m: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

/// Longest basis among sieve maps, after checking they share one ordering.
fn shared_basis<'a>(maps: &[&'a FeatureMapModel]) -> Result<(&'a BasisIndexSet, Option<&'a Vec<f64>>)> {
    let mut longest: Option<(&BasisIndexSet, Option<&Vec<f64>>)> = None;
    for map in maps {
        let MapCoefficients::Sieve {
            basis, input_scale, ..
        } = &map.coefficients
        else {
            return Err(Error::Incompatible("cannot combine linear and sieve maps".into()));
        };
        if let Some((b, s)) = longest {
            if s != input_scale.as_ref() {
                return Err(Error::Incompatible("sieve maps use different input scaling".into()));
            }
            let compatible = if basis.len() >= b.len() {
                b.is_prefix_of(basis)
            } else {
                basis.is_prefix_of(b)
            };
            if !compatible {
                return Err(Error::Incompatible(format!(
                    "sieve bases differ: (p1={}, p1'={}, a={}) vs (p1={}, p1'={}, a={})",
                    b.p1, b.p1_prime, b.a, basis.p1, basis.p1_prime, basis.a
                )));
            }
            if basis.len() > b.len() {
                longest = Some((basis, input_scale.as_ref()));
            }
        } else {
            longest = Some((basis, input_scale.as_ref()));
        }
    }
    longest.ok_or_else(|| Error::Argument("no maps given".into()))
}

/// Left-to-right running mean; returns the input exactly when all entries agree.
pub(crate) fn running_mean(items: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut mean = items[0].clone();
    for (k, item) in items.iter().enumerate().skip(1) {
        mean += (item - &mean) / (k + 1) as f64;
    }
    mean
}

/// Entrywise mean of the maps' coefficient matrices.
///
/// Sieve maps with different truncation orders are zero-padded to the
/// largest `M`; the shared deterministic ordering makes row `m` the same
/// basis function in every map. Averaging runs left to right.
pub fn average_maps(maps: &[FeatureMapModel]) -> Result<FeatureMapModel> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("average_maps needs at least one map".into()))?;
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let p1 = first.p1();
    let p2 = first.p2();
    for m in maps {
        if m.kind() != first.kind() {
            return Err(Error::Incompatible("cannot average linear and sieve maps".into()));
        }
        if m.p1() != p1 || m.p2() != p2 {
            return Err(Error::Incompatible(format!(
                "map dimensions differ: {}x{} vs {}x{}",
                p1,
                p2,
                m.p1(),
                m.p2()
            )));
        }
    }
    let k = maps.len() as f64;
    let coefficients = match first.kind() {
        MapKind::Linear => {
            let mats: Vec<DMatrix<f64>> = maps.iter().map(|m| m.coefficient_matrix().clone()).collect();
            MapCoefficients::Linear { p: running_mean(&mats) }
        }
        MapKind::Sieve => {
            let refs: Vec<&FeatureMapModel> = maps.iter().collect();
            let (basis, scale) = shared_basis(&refs)?;
            let rows = basis.len();
            let mats: Vec<DMatrix<f64>> = maps.iter().map(|m| pad_rows(m.coefficient_matrix(), rows)).collect();
            MapCoefficients::Sieve {
                basis: basis.clone(),
                theta: running_mean(&mats),
                input_scale: scale.cloned(),
            }
        }
    };
    let gamma = maps
        .iter()
        .map(|m| m.gamma.clone())
        .collect::<Option<Vec<Vec<f64>>>>()
        .map(|all| {
            (0..p2)
                .map(|j| all.iter().map(|g| g[j]).sum::<f64>() / k)
                .collect()
        });
    Ok(FeatureMapModel {
        coefficients,
        fitted_on: maps.iter().map(|m| m.fitted_on).sum(),
        ridge_tau: first.ridge_tau,
        rank_deficient: maps.iter().any(|m| m.rank_deficient),
        gamma,
    })
}

/// Imputed mismatched covariates `Ẑ` for new matched covariates `X`.
pub fn impute(map: &FeatureMapModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    impute_clamped(map, x, 0.0).map(|(z, _)| z)
}

/// Like [`impute`], but sieve inputs overshooting the support by at most
/// `tolerance · a` are clamped. Returns the number of clamped entries.
pub fn impute_clamped(map: &FeatureMapModel, x: &DMatrix<f64>, tolerance: f64) -> Result<(DMatrix<f64>, usize)> {
    if x.ncols() != map.p1() {
        return Err(Error::Dimension(format!(
            "feature map expects {} matched covariates, data has {}",
            map.p1(),
            x.ncols()
        )));
    }
    match &map.coefficients {
        MapCoefficients::Linear { p } => Ok((x * p, 0)),
        MapCoefficients::Sieve {
            basis,
            theta,
            input_scale,
        } => {
            let xs = sieve_inputs(x, basis, input_scale.as_deref())?;
            let (psi, clamped) = expand_clamped(&xs, basis, tolerance)?;
            Ok((psi * theta, clamped))
        }
    }
}

/// Spectral norm of the difference of two maps' coefficient matrices
/// (sieve maps zero-padded to a common `M`).
pub fn map_discrepancy(a: &FeatureMapModel, b: &FeatureMapModel) -> Result<f64> {
    if a.kind() != b.kind() {
        return Err(Error::Incompatible("cannot compare linear and sieve maps".into()));
    }
    if a.p1() != b.p1() || a.p2() != b.p2() {
        return Err(Error::Incompatible("map dimensions differ".into()));
    }
    let diff = match a.kind() {
        MapKind::Linear => a.coefficient_matrix() - b.coefficient_matrix(),
        MapKind::Sieve => {
            let (basis, _) = shared_basis(&[a, b])?;
            let rows = basis.len();
            pad_rows(a.coefficient_matrix(), rows) - pad_rows(b.coefficient_matrix(), rows)
        }
    };
    Ok(spectral_norm(&diff, 1e-10, 10_000))
}

/// Largest singular value by power iteration on `AᵀA`.
///
/// Stops when the eigen-residual `‖AᵀAv − σ²v‖` drops below `tol · σ²`.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64, max_iters: usize) -> f64 {
    if a.is_empty() || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let n = a.ncols();
    // deterministic start with no special alignment to any axis
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut v = DVector::from_fn(n, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 + 0.5
    });
    v.normalize_mut();
    let mut sigma2 = 0.0;
    for _ in 0..max_iters {
        let u = a * &v;
        sigma2 = u.norm_squared();
        let w = a.tr_mul(&u);
        let residual = (&w - &v * sigma2).norm();
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if residual <= tol * sigma2 {
            sigma2 = (a * &v).norm_squared();
            break;
        }
    }
    sigma2.sqrt()
}

// JSON layout: {variant, p1, p2, P | {basis, Theta}, fitted_on, ridge_tau, ...}.
// Matrices are written as lists of rows.
#[derive(Serialize, Deserialize)]
struct FeatureMapJson {
    variant: MapKind,
    p1: usize,
    p2: usize,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis: Option<BasisIndexSet>,
    #[serde(rename = "Theta", default, skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_scale: Option<Vec<f64>>,
    fitted_on: usize,
    ridge_tau: f64,
    #[serde(default)]
    rank_deficient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{what} row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<FeatureMapModel> for FeatureMapJson {
    fn from(m: FeatureMapModel) -> Self {
        let (p1, p2) = (m.p1(), m.p2());
        let mut out = FeatureMapJson {
            variant: m.kind(),
            p1,
            p2,
            p: None,
            basis: None,
            theta: None,
            input_scale: None,
            fitted_on: m.fitted_on,
            ridge_tau: m.ridge_tau,
            rank_deficient: m.rank_deficient,
            gamma: m.gamma,
        };
        match m.coefficients {
            MapCoefficients::Linear { p } => out.p = Some(matrix_to_rows(&p)),
            MapCoefficients::Sieve {
                basis,
                theta,
                input_scale,
            } => {
                out.basis = Some(basis);
                out.theta = Some(matrix_to_rows(&theta));
                out.input_scale = input_scale;
            }
        }
        out
    }
}

impl TryFrom<FeatureMapJson> for FeatureMapModel {
    type Error = Error;

    fn try_from(j: FeatureMapJson) -> Result<Self> {
        let coefficients = match j.variant {
            MapKind::Linear => {
                let rows = j.p.ok_or_else(|| Error::InvalidValue("linear map is missing P".into()))?;
                if rows.len() != j.p1 {
                    return Err(Error::Dimension(format!("P has {} rows, expected p1 = {}", rows.len(), j.p1)));
                }
                MapCoefficients::Linear {
                    p: rows_to_matrix(&rows, j.p2, "P")?,
                }
            }
            MapKind::Sieve => {
                let basis = j.basis.ok_or_else(|| Error::InvalidValue("sieve map is missing basis".into()))?;
                let rows = j.theta.ok_or_else(|| Error::InvalidValue("sieve map is missing Theta".into()))?;
                if basis.p1 != j.p1 {
                    return Err(Error::Dimension("basis p1 disagrees with map p1".into()));
                }
                MapCoefficients::Sieve {
                    theta: rows_to_matrix(&rows, j.p2, "Theta")?,
                    basis,
                    input_scale: j.input_scale,
                }
            }
        };
        let model = FeatureMapModel {
            coefficients,
            fitted_on: j.fitted_on,
            ridge_tau: j.ridge_tau,
            rank_deficient: j.rank_deficient,
            gamma: j.gamma,
        };
        model.validate()?;
        Ok(model)
    }
}
