//! Heterogeneous transfer learning for high-dimensional linear regression.
//!
//! A target domain observes only the matched covariates `x`; one or more
//! proxy domains also observe the mismatched covariates `z`. The estimator
//! learns a feature map `x ↦ E[z | x]` on proxy data, imputes `z` on the
//! target, pre-trains coefficients on the proxies and then fits a lasso on
//! the target that shrinks toward the proxy coefficients.

// `!(x >= 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod penalized;
pub mod sieve;
pub mod simulation;

pub use dataset::{Centering, Dataset, Method, TlFit};
pub use error::{Error, Result};

pub mod estimators;
pub mod feature_map;

pub use estimators::{fit_htl, HtlConfig, HtlModel, Predict};
pub use feature_map::{FeatureMapModel, MapKind};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
