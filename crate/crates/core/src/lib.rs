//! Temporal log-Gaussian Cox processes on the sphere.
//!
//! The log-intensity is a truncated Legendre series whose coefficient
//! processes follow a parametric temporal covariance family. The crate
//! simulates fields and point patterns, evaluates the closed-form product
//! densities, and summarizes departures from complete randomness per
//! Legendre scale through entropy distances and K-functions.

pub mod covariance;
pub mod cox;
pub mod distances;
pub mod error;
pub mod field;
pub mod fit;
pub mod manifold;
pub mod moments;
pub mod rng;
pub mod summaries;

pub use covariance::{BqConvention, CovarianceModel};
pub use cox::{Event, PointPattern, Window};
pub use distances::{Classification, DistanceTable, Estimate, IntegrationMethod, IntegrationSpec};
pub use error::{Error, Result};
pub use field::{FieldRealization, FieldSampler, TimeGrid};
pub use fit::{CoefCovTable, FitOptions, GriddedField, SphereLattice, ThetaFit};
pub use manifold::{jacobi, legendre, JacobiParams, SpherePoint};
pub use moments::Configuration;
pub use summaries::{Baseline, IntensityNorm, KEstimator, KGrid};
