//! Observations for one domain and the fitted transfer model record.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// One domain's observations.
///
/// `x` holds the matched covariates shared by every domain, `z` the
/// mismatched covariates (present for proxy domains, absent for the target)
/// and `y` the response. Rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, z: Option<DMatrix<f64>>, y: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if x.ncols() == 0 {
            return Err(Error::Dimension("dataset needs at least one matched covariate".into()));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!(
                "x has {n} rows but y has length {}",
                y.len()
            )));
        }
        ensure_finite("x", x.as_slice())?;
        ensure_finite("y", y.as_slice())?;
        if let Some(z) = &z {
            if z.nrows() != n {
                return Err(Error::Dimension(format!(
                    "x has {n} rows but z has {}",
                    z.nrows()
                )));
            }
            if z.ncols() == 0 {
                return Err(Error::Dimension(
                    "z is present but has no columns".into(),
                ));
            }
            ensure_finite("z", z.as_slice())?;
        }
        Ok(Self { x, z, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p1(&self) -> usize {
        self.x.ncols()
    }

    /// Number of mismatched covariates, zero when `z` is absent.
    pub fn p2(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub(crate) fn require_z(&self, what: &str) -> Result<&DMatrix<f64>> {
        self.z
            .as_ref()
            .ok_or_else(|| Error::Argument(format!("{what} requires mismatched covariates z")))
    }

    /// A copy with the mismatched covariates removed.
    pub fn without_z(&self) -> Self {
        Self {
            x: self.x.clone(),
            z: None,
            y: self.y.clone(),
        }
    }

    /// `[X | Z]`, or just `X` when `z` is absent.
    pub fn design(&self) -> DMatrix<f64> {
        match &self.z {
            Some(z) => hstack(&self.x, z),
            None => self.x.clone(),
        }
    }

    /// Rows picked by index, repeats allowed (bootstrap resampling).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for {} rows",
                self.n()
            )));
        }
        Ok(Self {
            x: self.x.select_rows(rows),
            z: self.z.as_ref().map(|z| z.select_rows(rows)),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
        })
    }
}

pub(crate) fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Which estimator produced a [`TlFit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Htl,
    Homogeneous,
    TargetLasso,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Htl,
        Method::Homogeneous,
        Method::TargetLasso,
        Method::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Htl => "htl",
            Method::Homogeneous => "homogeneous",
            Method::TargetLasso => "target_lasso",
            Method::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fitted transfer model: proxy coefficients, target contrast and their sum.
///
/// `beta_hat` is always built as `omega_hat + delta_hat`, so the identity
/// holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlFit {
    pub omega_hat: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub method: Method,
}

impl TlFit {
    pub fn new(omega_hat: Vec<f64>, delta_hat: Vec<f64>, lambda: f64, method: Method) -> Result<Self> {
        if omega_hat.len() != delta_hat.len() {
            return Err(Error::Dimension(format!(
                "omega_hat has length {} but delta_hat has length {}",
                omega_hat.len(),
                delta_hat.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidValue(format!("lambda must be nonnegative, got {lambda}")));
        }
        let beta_hat = omega_hat.iter().zip(&delta_hat).map(|(o, d)| o + d).collect();
        Ok(Self {
            omega_hat,
            delta_hat,
            beta_hat,
            lambda,
            method,
        })
    }

    pub fn len(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_hat.is_empty()
    }

    /// `X · β̂₁` using the first `X.ncols()` coefficients.
    pub fn predict_matched(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() > self.beta_hat.len() {
            return Err(Error::Dimension(format!(
                "data has {} columns but the fit has {} coefficients",
                x.ncols(),
                self.beta_hat.len()
            )));
        }
        let beta = DVector::from_column_slice(&self.beta_hat[..x.ncols()]);
        Ok(x * beta)
    }
}

/// Column means removed before fitting and restored at predict time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub x_means: Vec<f64>,
    pub y_mean: f64,
}

impl Centering {
    pub fn from_dataset(data: &Dataset) -> Self {
        let x_means = data.x().column_iter().map(|c| c.mean()).collect();
        Self {
            x_means,
            y_mean: data.y().mean(),
        }
    }

    pub fn center_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.x_means.len() {
            return Err(Error::Dimension(format!(
                "centering expects {} columns, data has {}",
                self.x_means.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (mut col, m) in out.column_iter_mut().zip(&self.x_means) {
            col.add_scalar_mut(-m);
        }
        Ok(out)
    }

    /// Centers `x` and `y`; `z` (if any) is centered with its own means.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let x = self.center_x(data.x())?;
        let z = data.z().map(|z| {
            let mut z = z.clone();
            for mut col in z.column_iter_mut() {
                let m = col.mean();
                col.add_scalar_mut(-m);
            }
            z
        });
        let y = data.y().add_scalar(-self.y_mean);
        Dataset::new(x, z, y)
    }
}
