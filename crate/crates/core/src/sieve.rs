//! Cosine tensor-product sieve basis.
//!
//! The univariate functions are
//!
//! ```text
//! φ_1(x) = 1,   φ_q(x) = √2 · cos((q − 1) π (x + a) / (2a))   for q ≥ 2,
//! ```
//!
//! orthonormal on `[−a, a]` under the uniform density. Multivariate basis
//! functions are products `ψ_q(x) = Π_k φ_{q_k}(x_k)` indexed by a
//! multi-index `q ∈ ℕ^{p1}`, and a [`BasisIndexSet`] fixes which `M` of
//! them are used and in what order.
//!
//! Ordering: admissible multi-indices (at most `p1_prime` coordinates above
//! one, every coordinate at most the degree cap) are sorted by the product
//! `Π_k q_k`, then by `Σ_k q_k`, then colexicographically (last coordinate
//! most significant). The first `M` entries are kept, so a smaller basis is
//! always a prefix of a larger one built with the same parameters.

use std::cmp::Ordering;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE_CAP: u32 = 64;

#[inline]
pub(crate) fn phi_unchecked(q: u32, x: f64, a: f64) -> f64 {
    if q == 1 {
        1.0
    } else {
        SQRT_2 * ((q - 1) as f64 * PI * (x + a) / (2.0 * a)).cos()
    }
}

/// Univariate cosine basis function `φ_q(x)` on `[−a, a]`.
pub fn phi(q: u32, x: f64, a: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::Argument("basis degree q starts at 1".into()));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Argument(format!("support half-width must be positive, got {a}")));
    }
    if !(x.abs() <= a) {
        return Err(Error::Domain {
            row: 0,
            col: 0,
            value: x,
            a,
        });
    }
    Ok(phi_unchecked(q, x, a))
}

/// An ordered, truncated set of tensor-product multi-indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisIndexSet {
    pub p1: usize,
    pub p1_prime: usize,
    pub a: f64,
    #[serde(default = "default_cap")]
    pub degree_cap: u32,
    pub indices: Vec<Vec<u32>>,
}

fn default_cap() -> u32 {
    DEFAULT_DEGREE_CAP
}

/// `Σ_{j ≤ p1'} C(p1, j)·(cap − 1)^j`, saturating.
pub fn admissible_count(p1: usize, p1_prime: usize, degree_cap: u32) -> u128 {
    let free = u128::from(degree_cap.saturating_sub(1));
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    let mut power: u128 = 1;
    for j in 0..=p1_prime.min(p1) {
        if j > 0 {
            binom = binom.saturating_mul((p1 - j + 1) as u128) / j as u128;
            power = power.saturating_mul(free);
        }
        total = total.saturating_add(binom.saturating_mul(power));
    }
    total
}

fn enumerate_up_to(p1: usize, p1_prime: usize, cap: u32, max_product: u64) -> Vec<Vec<u32>> {
    fn rec(
        k: usize,
        current: &mut Vec<u32>,
        product: u64,
        free_left: usize,
        cap: u32,
        max_product: u64,
        out: &mut Vec<Vec<u32>>,
    ) {
        if k == current.len() {
            out.push(current.clone());
            return;
        }
        current[k] = 1;
        rec(k + 1, current, product, free_left, cap, max_product, out);
        if free_left > 0 {
            let mut q = 2u32;
            while q <= cap && product.saturating_mul(u64::from(q)) <= max_product {
                current[k] = q;
                rec(k + 1, current, product * u64::from(q), free_left - 1, cap, max_product, out);
                q += 1;
            }
            current[k] = 1;
        }
    }
    let mut out = Vec::new();
    let mut current = vec![1u32; p1];
    rec(0, &mut current, 1, p1_prime, cap, max_product, &mut out);
    out
}

fn index_order(a: &[u32], b: &[u32]) -> Ordering {
    let prod = |q: &[u32]| q.iter().map(|&v| u64::from(v)).product::<u64>();
    let sum = |q: &[u32]| q.iter().map(|&v| u64::from(v)).sum::<u64>();
    prod(a)
        .cmp(&prod(b))
        .then_with(|| sum(a).cmp(&sum(b)))
        .then_with(|| a.iter().rev().cmp(b.iter().rev()))
}

/// First `m` multi-indices for input dimension `p1` and interaction cap
/// `p1_prime`, with the default degree cap and support `[−1, 1]`.
pub fn unravel(p1: usize, p1_prime: usize, m: usize) -> Result<BasisIndexSet> {
    unravel_with_cap(p1, p1_prime, m, DEFAULT_DEGREE_CAP)
}

pub fn unravel_with_cap(p1: usize, p1_prime: usize, m: usize, degree_cap: u32) -> Result<BasisIndexSet> {
    if p1 == 0 {
        return Err(Error::Argument("p1 must be at least 1".into()));
    }
    if p1_prime == 0 || p1_prime > p1 {
        return Err(Error::Argument(format!(
            "p1_prime must lie in 1..={p1}, got {p1_prime}"
        )));
    }
    if m == 0 {
        return Err(Error::Argument("basis size M must be at least 1".into()));
    }
    if degree_cap < 1 {
        return Err(Error::Argument("degree cap must be at least 1".into()));
    }
    let available = admissible_count(p1, p1_prime, degree_cap);
    if (m as u128) > available {
        return Err(Error::Capacity {
            requested: m,
            available: usize::try_from(available).unwrap_or(usize::MAX),
            degree_cap,
        });
    }

    // Grow the product bound until it covers m indices; everything with a
    // smaller product sorts first, so the first m of the sorted list are final.
    let mut bound: u64 = 1;
    let mut indices = loop {
        let found = enumerate_up_to(p1, p1_prime, degree_cap, bound);
        if found.len() >= m {
            break found;
        }
        bound = bound.saturating_mul(2);
    };
    indices.sort_by(|a, b| index_order(a, b));
    indices.truncate(m);

    Ok(BasisIndexSet {
        p1,
        p1_prime,
        a: 1.0,
        degree_cap,
        indices,
    })
}

impl BasisIndexSet {
    pub fn with_support(mut self, a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Argument(format!("support half-width must be positive, got {a}")));
        }
        self.a = a;
        Ok(self)
    }

    /// Number of basis functions `M`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Same `(p1, p1_prime, a)` and `self`'s indices are a prefix of `other`'s.
    pub fn is_prefix_of(&self, other: &Self) -> bool {
        self.p1 == other.p1
            && self.p1_prime == other.p1_prime
            && self.a == other.a
            && self.indices.len() <= other.indices.len()
            && self.indices[..] == other.indices[..self.indices.len()]
    }

    /// Checks the structural invariants, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::InvalidValue("basis has no indices".into()));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidValue(format!("support half-width {} is not positive", self.a)));
        }
        if self.indices[0].iter().any(|&q| q != 1) {
            return Err(Error::InvalidValue("first basis index must be the constant (1,…,1)".into()));
        }
        for q in &self.indices {
            if q.len() != self.p1 || q.contains(&0) {
                return Err(Error::InvalidValue(format!("malformed multi-index {q:?}")));
            }
            if q.iter().filter(|&&v| v > 1).count() > self.p1_prime {
                return Err(Error::InvalidValue(format!(
                    "multi-index {q:?} has more than {} non-constant factors",
                    self.p1_prime
                )));
            }
        }
        let mut sorted = self.indices.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.indices.len() {
            return Err(Error::InvalidValue("basis contains duplicate multi-indices".into()));
        }
        Ok(())
    }

    fn sparse_factors(&self) -> Vec<Vec<(usize, u32)>> {
        self.indices
            .iter()
            .map(|q| {
                q.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 1)
                    .map(|(k, &v)| (k, v))
                    .collect()
            })
            .collect()
    }
}

/// Design matrix `Ψ_M(X)`: entry `(i, m)` is `Π_k φ_{q_mk}(X_ik)`.
pub fn expand(x: &DMatrix<f64>, basis: &BasisIndexSet) -> Result<DMatrix<f64>> {
    expand_clamped(x, basis, 0.0).map(|(psi, _)| psi)
}

/// Like [`expand`], but entries overshooting the support by at most
/// `tolerance · a` are clamped to `±a`. Returns the number of clamped entries.
pub fn expand_clamped(x: &DMatrix<f64>, basis: &BasisIndexSet, tolerance: f64) -> Result<(DMatrix<f64>, usize)> {
    if x.ncols() != basis.p1 {
        return Err(Error::Dimension(format!(
            "basis expects {} columns, data has {}",
            basis.p1,
            x.ncols()
        )));
    }
    let a = basis.a;
    let limit = a * (1.0 + tolerance.max(0.0));
    let mut clamped = 0usize;
    let mut xs = x.clone();
    for col in 0..x.ncols() {
        for row in 0..x.nrows() {
            let v = x[(row, col)];
            if !(v.abs() <= a) {
                if v.abs() <= limit {
                    xs[(row, col)] = v.clamp(-a, a);
                    clamped += 1;
                } else {
                    return Err(Error::Domain { row, col, value: v, a });
                }
            }
        }
    }

    let factors = basis.sparse_factors();
    let n = x.nrows();
    let mut psi = DMatrix::zeros(n, factors.len());
    for (m, fac) in factors.iter().enumerate() {
        let mut column = psi.column_mut(m);
        for i in 0..n {
            column[i] = fac
                .iter()
                .map(|&(k, q)| phi_unchecked(q, xs[(i, k)], a))
                .product();
        }
    }
    Ok((psi, clamped))
}

/// Per-coordinate half-widths `max(|min|, |max|) · 1.001` for rescaling data onto a
/// common support.
pub fn support_half_widths(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter()
        .map(|c| {
            let w = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * 1.001;
            if w > 0.0 {
                w
            } else {
                1.0
            }
        })
        .collect()
}

/// Maps column `k` of `x` by `x ↦ a · x / widths[k]`.
pub fn rescale(x: &DMatrix<f64>, widths: &[f64], a: f64) -> Result<DMatrix<f64>> {
    if widths.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{} scale widths for {} columns",
            widths.len(),
            x.ncols()
        )));
    }
    let mut out = x.clone();
    for (mut col, w) in out.column_iter_mut().zip(widths) {
        col.scale_mut(a / w);
    }
    Ok(out)
}

/// Truncation order `min(p³, budget, admissible count)`, with `budget`
/// defaulting to `n_p / 2`.
pub fn default_truncation(p: usize, n_p: usize, budget: Option<usize>, p1: usize, p1_prime: usize) -> usize {
    let cube = (p as u128).saturating_pow(3);
    let budget = budget.unwrap_or(n_p / 2).max(1) as u128;
    let admissible = admissible_count(p1, p1_prime, DEFAULT_DEGREE_CAP);
    cube.min(budget).min(admissible).max(1) as usize
}
