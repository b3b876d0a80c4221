//! Parametric temporal covariance of the Legendre coefficient processes.
//!
//! Degree `l` carries
//!
//! ```text
//! B_l(τ) = s · ½ (l+1)^(-2-|τ|) / (1 + τ²)^(θ β(l)),    β(l) = 0.8 (l+1) / √((l+1)² + 1)
//! ```
//!
//! with `s` the variance scale. The per-scale coefficient entering the product
//! densities, distances and K-functions is `b_q(τ) = B_q(τ) (2q+1)/(4π)` under
//! the default [`BqConvention::Weighted`], so that
//! `r_τ(u) = Σ_l b_l(τ) P_l(u)` is the space-time covariance of the log-intensity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::MAX_DEGREE;

/// How `b_q` is derived from `B_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BqConvention {
    /// `b_q = B_q (2q+1)/(4π)`.
    #[default]
    Weighted,
    /// `b_q = B_q`.
    Raw,
}

impl std::str::FromStr for BqConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "raw" => Ok(Self::Raw),
            other => Err(Error::InvalidParameter(format!("unknown bq convention {other:?}"))),
        }
    }
}

/// The covariance family plus truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    theta: f64,
    truncation: usize,
    #[serde(default = "default_variance_scale")]
    variance_scale: f64,
    #[serde(default)]
    bq_convention: BqConvention,
}

fn default_variance_scale() -> f64 {
    1.0
}

/// `β(l) = 0.8 (l+1) / √((l+1)² + 1)`.
pub fn beta_of_l(l: usize) -> f64 {
    let lp = l as f64 + 1.0;
    0.8 * lp / (lp * lp + 1.0).sqrt()
}

impl CovarianceModel {
    pub fn new(theta: f64, truncation: usize) -> Result<Self> {
        Self::with_options(theta, truncation, 1.0, BqConvention::Weighted)
    }

    pub fn with_options(
        theta: f64,
        truncation: usize,
        variance_scale: f64,
        bq_convention: BqConvention,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be positive and finite, got {theta}")));
        }
        if truncation > MAX_DEGREE {
            return Err(Error::DegreeOverflow { degree: truncation, max: MAX_DEGREE });
        }
        // variance_scale = 0 is the degenerate (Poisson) model and is allowed.
        if !(variance_scale >= 0.0 && variance_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance_scale must be non-negative, got {variance_scale}"
            )));
        }
        Ok(Self { theta, truncation, variance_scale, bq_convention })
    }

    /// Re-validates a deserialized model.
    pub fn validated(self) -> Result<Self> {
        Self::with_options(self.theta, self.truncation, self.variance_scale, self.bq_convention)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }

    pub fn bq_convention(&self) -> BqConvention {
        self.bq_convention
    }

    /// Same parameters with truncation raised to `max_degree`; the family is
    /// defined for every degree, so per-scale quantities beyond the simulated
    /// truncation can be evaluated.
    pub fn extended_to(&self, max_degree: usize) -> Result<Self> {
        Self::with_options(
            self.theta,
            self.truncation.max(max_degree),
            self.variance_scale,
            self.bq_convention,
        )
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::with_options(theta, self.truncation, self.variance_scale, self.bq_convention)
    }

    pub fn with_variance_scale(&self, variance_scale: f64) -> Result<Self> {
        Self::with_options(self.theta, self.truncation, variance_scale, self.bq_convention)
    }

    fn check(&self, l: usize) -> Result<()> {
        if l > self.truncation {
            return Err(Error::DegreeAboveTruncation { degree: l, truncation: self.truncation });
        }
        Ok(())
    }

    /// `B_l(τ)`.
    pub fn coef_cov(&self, l: usize, tau: f64) -> Result<f64> {
        self.check(l)?;
        Ok(self.coef_cov_unchecked(l, tau))
    }

    #[inline]
    pub(crate) fn coef_cov_unchecked(&self, l: usize, tau: f64) -> f64 {
        let lp = l as f64 + 1.0;
        let a = tau.abs();
        self.variance_scale * 0.5 * lp.powf(-2.0 - a) / (1.0 + tau * tau).powf(self.theta * beta_of_l(l))
    }

    #[inline]
    fn weight(&self, q: usize) -> f64 {
        match self.bq_convention {
            BqConvention::Weighted => (2.0 * q as f64 + 1.0) / (4.0 * PI),
            BqConvention::Raw => 1.0,
        }
    }

    /// `b_q(τ)`, the per-scale coefficient.
    pub fn scale_coefficient(&self, q: usize, tau: f64) -> Result<f64> {
        self.check(q)?;
        Ok(self.scale_coefficient_unchecked(q, tau))
    }

    #[inline]
    pub(crate) fn scale_coefficient_unchecked(&self, q: usize, tau: f64) -> f64 {
        self.coef_cov_unchecked(q, tau) * self.weight(q)
    }

    /// Converts a per-scale coefficient back to the `B_q` scale.
    pub fn scale_to_coef(&self, q: usize, bq: f64) -> f64 {
        bq / self.weight(q)
    }

    /// Temporal covariance of the series coefficient `V_l` in
    /// `log X_t(z) = Σ_l V_l(t) P_l(cos d(z, U))`. The uniform pole contributes
    /// `E[P_l(x·U) P_l(y·U)] = P_l(x·y)/(2l+1)`, so `V_l` must carry
    /// `(2l+1) b_l(τ)` for the field to have covariance [`Self::spacetime_kernel`].
    pub fn series_coefficient_cov(&self, l: usize, tau: f64) -> Result<f64> {
        self.check(l)?;
        Ok((2.0 * l as f64 + 1.0) * self.scale_coefficient_unchecked(l, tau))
    }

    /// `r_τ(u) = Σ_{l ≤ M} b_l(τ) P_l(u)`.
    pub fn spacetime_kernel(&self, tau: f64, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        let (mut p0, mut p1) = (1.0, u);
        let mut acc = self.scale_coefficient_unchecked(0, tau);
        for l in 1..=self.truncation {
            let p = if l == 1 {
                u
            } else {
                let nf = l as f64;
                let p2 = ((2.0 * nf - 1.0) * u * p1 - (nf - 1.0) * p0) / nf;
                p0 = p1;
                p1 = p2;
                p2
            };
            acc += self.scale_coefficient_unchecked(l, tau) * p;
        }
        acc
    }

    /// Gram matrix `[cov(V_l(t_i), V_l(t_j))]`, row-major.
    pub fn series_gram(&self, l: usize, times: &[f64]) -> Result<Vec<f64>> {
        self.check(l)?;
        let n = times.len();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = (2.0 * l as f64 + 1.0) * self.scale_coefficient_unchecked(l, times[i] - times[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(theta: f64) -> CovarianceModel {
        CovarianceModel::new(theta, 5).unwrap()
    }

    #[test]
    fn beta_values() {
        assert!((beta_of_l(0) - 0.8 / 2f64.sqrt()).abs() < 1e-15);
        assert!((beta_of_l(0) - 0.565685).abs() < 1e-6);
        assert!((beta_of_l(1) - 1.6 / 5f64.sqrt()).abs() < 1e-15);
        assert!((beta_of_l(1) - 0.715542).abs() < 1e-6);
        assert!((beta_of_l(1_000_000) - 0.8).abs() < 1e-5);
    }

    #[test]
    fn coef_cov_values() {
        for th in [0.01, 1.0, 100.0] {
            assert_eq!(model(th).coef_cov(0, 0.0).unwrap(), 0.5);
            assert_eq!(model(th).coef_cov(1, 0.0).unwrap(), 0.125);
        }
        let expected = 0.5 / 2f64.powf(0.8 / 2f64.sqrt());
        let got = model(1.0).coef_cov(0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.337817).abs() < 1e-6);
        assert!(matches!(model(1.0).coef_cov(6, 0.0), Err(Error::DegreeAboveTruncation { .. })));
    }

    #[test]
    fn scale_coefficient_values() {
        let m = model(1.0);
        let b0 = m.scale_coefficient(0, 0.0).unwrap();
        assert!((b0 - 0.5 / (4.0 * PI)).abs() < 1e-15);
        assert!((b0 - 0.0397887).abs() < 1e-7);
        let b1 = m.scale_coefficient(1, 0.0).unwrap();
        assert!((b1 - 0.0298416).abs() < 1e-7);
        let b4 = m.scale_coefficient(4, 0.0).unwrap();
        assert!((b4 - 0.5 / 25.0 * 9.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((b4 - 0.0143239).abs() < 1e-7);
        assert!(m.scale_coefficient(6, 0.0).is_err());
    }

    #[test]
    fn raw_convention_drops_weight() {
        let m = CovarianceModel::with_options(1.0, 5, 1.0, BqConvention::Raw).unwrap();
        assert_eq!(m.scale_coefficient(1, 0.0).unwrap(), 0.125);
    }

    #[test]
    fn kernel_examples() {
        let m = model(1.0);
        let oracle: f64 = (0..=5).map(|l| m.scale_coefficient(l, 0.0).unwrap()).sum();
        assert!((m.spacetime_kernel(0.0, 1.0) - oracle).abs() < 1e-15);
        assert!((oracle - 0.1356243).abs() < 1e-7);
        let m0 = CovarianceModel::new(1.0, 0).unwrap();
        for u in [-1.0, -0.2, 0.5, 1.0] {
            assert_eq!(m0.spacetime_kernel(0.0, u), m0.scale_coefficient(0, 0.0).unwrap());
        }
        for (tau, u) in [(0.3, 0.1), (2.5, -0.7), (7.0, 0.99)] {
            assert_eq!(m.spacetime_kernel(tau, u), m.spacetime_kernel(-tau, u));
        }
    }

    #[test]
    fn scale_decay_and_theta_ordering() {
        let m = model(1.0).extended_to(30).unwrap();
        for q in 0..30 {
            assert!(m.scale_coefficient(q + 1, 0.0).unwrap() < m.scale_coefficient(q, 0.0).unwrap());
        }
        for l in 0..=5 {
            for tau in [0.1, 1.0, 4.0] {
                let lrd = model(0.01).coef_cov(l, tau).unwrap();
                let mid = model(1.0).coef_cov(l, tau).unwrap();
                let srd = model(100.0).coef_cov(l, tau).unwrap();
                assert!(lrd > mid && mid > srd, "l={l} tau={tau}");
            }
        }
    }

    #[test]
    fn invalid_models() {
        assert!(CovarianceModel::new(0.0, 5).is_err());
        assert!(CovarianceModel::new(-1.0, 5).is_err());
        assert!(CovarianceModel::new(1.0, 65).is_err());
        assert!(CovarianceModel::with_options(1.0, 5, -0.1, BqConvention::Weighted).is_err());
    }
}
