//! Closed-form product densities of the log-Gaussian Cox process.
//!
//! For `n` distinct points,
//!
//! ```text
//! log ρ⁽ⁿ⁾ = n log ρ + ½ Σ_{i≠j} Σ_q b_q(t_i - t_j) P_q(cos d(z_i, z_j)),
//! ```
//!
//! with `ρ = exp(r_0(1)/2)`. The sum runs over ordered pairs of distinct
//! indices, which is the lognormal moment `E[Π_i e^{X_i}]`. Every term
//! factorizes over Legendre scales, giving the per-scale densities
//! `ρ_q⁽ⁿ⁾` with `ρ_q = exp(b_q(0)/2)`.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::manifold::{legendre_unchecked, SpherePoint};

/// Argument tuple `(t_1, …, t_n, z_1, …, z_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    times: Vec<f64>,
    locations: Vec<SpherePoint>,
}

impl Configuration {
    pub fn new(times: Vec<f64>, locations: Vec<SpherePoint>) -> Result<Self> {
        if times.len() != locations.len() || times.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "configuration needs equal, nonzero numbers of times and locations (got {} and {})",
                times.len(),
                locations.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("configuration time {t}")));
        }
        Ok(Self { times, locations })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn locations(&self) -> &[SpherePoint] {
        &self.locations
    }

    /// Unordered pairs `(τ_ij, cos d_ij)` with `i < j`.
    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| {
            (i + 1..n).map(move |j| {
                (self.times[i] - self.times[j], self.locations[i].cos_distance(&self.locations[j]))
            })
        })
    }
}

/// `ρ = exp(r_0(1)/2)`.
pub fn intensity(model: &CovarianceModel) -> f64 {
    (model.spacetime_kernel(0.0, 1.0) / 2.0).exp()
}

/// `ρ_q = exp(b_q(0)/2)`.
pub fn scale_intensity(model: &CovarianceModel, q: usize) -> Result<f64> {
    Ok((model.scale_coefficient(q, 0.0)? / 2.0).exp())
}

pub fn log_product_density(model: &CovarianceModel, c: &Configuration) -> f64 {
    let n = c.len() as f64;
    let half_r0 = model.spacetime_kernel(0.0, 1.0) / 2.0;
    // ½ Σ_{i≠j} = Σ_{i<j} by symmetry.
    n * half_r0 + c.pairs().map(|(tau, u)| model.spacetime_kernel(tau, u)).sum::<f64>()
}

pub fn product_density(model: &CovarianceModel, c: &Configuration) -> f64 {
    log_product_density(model, c).exp()
}

pub fn log_per_scale_density(model: &CovarianceModel, q: usize, c: &Configuration) -> Result<f64> {
    let b0 = model.scale_coefficient(q, 0.0)?;
    let s: f64 =
        c.pairs().map(|(tau, u)| model.scale_coefficient_unchecked(q, tau) * legendre_unchecked(q, u)).sum();
    Ok(c.len() as f64 * b0 / 2.0 + s)
}

/// `ρ_q⁽ⁿ⁾`; fails for `q` above the truncation.
pub fn per_scale_density(model: &CovarianceModel, q: usize, c: &Configuration) -> Result<f64> {
    Ok(log_per_scale_density(model, q, c)?.exp())
}

/// `g_τ(u) = exp(r_τ(u))`.
pub fn pair_correlation(model: &CovarianceModel, tau: f64, u: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&u) {
        return Err(Error::InvalidParameter(format!("cosine {u} outside [-1, 1]")));
    }
    Ok(model.spacetime_kernel(tau, u).exp())
}

/// Per-scale factor `exp(b_q(τ) P_q(u))` of the pair correlation.
pub fn scale_pair_correlation(model: &CovarianceModel, q: usize, tau: f64, u: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&u) {
        return Err(Error::InvalidParameter(format!("cosine {u} outside [-1, 1]")));
    }
    Ok((model.scale_coefficient(q, tau)? * legendre_unchecked(q, u)).exp())
}
