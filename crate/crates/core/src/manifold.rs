//! Geometry of the unit sphere S² and the zonal polynomial basis.
//!
//! Points are unit vectors in R³ and the metric is the great-circle distance
//! `d(x, y) = arccos(xᵀy)`. Legendre polynomials (and, for evaluation only,
//! general Jacobi polynomials) are computed with their three-term recurrences.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial degree accepted by [`legendre`] and [`jacobi`].
pub const MAX_DEGREE: usize = 64;

const NORM_TOLERANCE: f64 = 1e-12;

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SpherePoint {
    x: f64,
    y: f64,
    z: f64,
}

impl SpherePoint {
    /// Normalizes `(x, y, z)` onto the sphere. Fails on the zero vector or
    /// non-finite input. Input that is already unit-norm to within rounding is
    /// kept bit-for-bit, so points survive a text round trip unchanged.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { x, y, z });
        }
        let norm = n2.sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidParameter(format!("cannot normalize ({x}, {y}, {z}) onto the sphere")));
        }
        let p = Self { x: x / norm, y: y / norm, z: z / norm };
        debug_assert!((p.norm_squared() - 1.0).abs() <= NORM_TOLERANCE);
        Ok(p)
    }

    /// Point at colatitude `colatitude` (measured from the north pole) and
    /// longitude `longitude`, both in radians.
    pub fn from_spherical(colatitude: f64, longitude: f64) -> Self {
        let (sin_c, cos_c) = colatitude.sin_cos();
        let (sin_l, cos_l) = longitude.sin_cos();
        Self { x: sin_c * cos_l, y: sin_c * sin_l, z: cos_c }
    }

    pub fn north_pole() -> Self {
        Self { x: 0.0, y: 0.0, z: 1.0 }
    }

    pub fn south_pole() -> Self {
        Self { x: 0.0, y: 0.0, z: -1.0 }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Cosine of the geodesic distance, clamped to `[-1, 1]`.
    pub fn cos_distance(&self, other: &SpherePoint) -> f64 {
        self.dot(other).clamp(-1.0, 1.0)
    }

    pub fn distance(&self, other: &SpherePoint) -> f64 {
        geodesic_distance(self, other)
    }

    pub fn antipode(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }

    fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }
}

impl TryFrom<[f64; 3]> for SpherePoint {
    type Error = Error;

    fn try_from(c: [f64; 3]) -> Result<Self> {
        Self::new(c[0], c[1], c[2])
    }
}

impl From<SpherePoint> for [f64; 3] {
    fn from(p: SpherePoint) -> Self {
        p.coords()
    }
}

/// Great-circle distance in `[0, π]`.
pub fn geodesic_distance(a: &SpherePoint, b: &SpherePoint) -> f64 {
    a.cos_distance(b).acos()
}

/// Shape parameters of the Jacobi family `P_n^{(α, β)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    alpha: f64,
    beta: f64,
}

impl JacobiParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(Error::InvalidParameter(format!(
                "Jacobi parameters must exceed -1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// `(α, β) = (0, 0)`, the Legendre case used on S².
    pub fn legendre() -> Self {
        Self { alpha: 0.0, beta: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(Error::DegreeOverflow { degree, max: MAX_DEGREE });
    }
    Ok(())
}

/// Legendre polynomial `P_l(u)` by Bonnet's recurrence.
pub fn legendre(l: usize, u: f64) -> Result<f64> {
    check_degree(l)?;
    Ok(legendre_unchecked(l, u))
}

#[inline]
pub(crate) fn legendre_unchecked(l: usize, u: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => u,
        _ => {
            let (mut p0, mut p1) = (1.0, u);
            for n in 2..=l {
                let nf = n as f64;
                let p2 = ((2.0 * nf - 1.0) * u * p1 - (nf - 1.0) * p0) / nf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Fills `out[l] = P_l(u)` for `l = 0..out.len()`.
pub fn legendre_table(u: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = u;
    }
    for n in 2..out.len() {
        let nf = n as f64;
        out[n] = ((2.0 * nf - 1.0) * u * out[n - 1] - (nf - 1.0) * out[n - 2]) / nf;
    }
}

/// Jacobi polynomial `P_n^{(α, β)}(u)` by the standard three-term recurrence.
pub fn jacobi(params: JacobiParams, n: usize, u: f64) -> Result<f64> {
    check_degree(n)?;
    let JacobiParams { alpha: a, beta: b } = params;
    if n == 0 {
        return Ok(1.0);
    }
    let mut p0 = 1.0;
    let mut p1 = (a + 1.0) + (a + b + 2.0) * (u - 1.0) / 2.0;
    for k in 2..=n {
        let k = k as f64;
        let s = 2.0 * k + a + b;
        let c0 = 2.0 * k * (k + a + b) * (s - 2.0);
        let c1 = (s - 1.0) * (s * (s - 2.0) * u + a * a - b * b);
        let c2 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * s;
        let p2 = (c1 * p1 - c2 * p0) / c0;
        p0 = p1;
        p1 = p2;
    }
    Ok(p1)
}

/// Uniform point on S²: `z` uniform on `[-1, 1]`, longitude uniform on `[0, 2π)`.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> SpherePoint {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let (s, c) = phi.sin_cos();
    SpherePoint { x: r * c, y: r * s, z }
}

/// Normalization of the surface measure ν on S².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureConvention {
    /// Surface area, ν(S²) = 4π. Used throughout the crate.
    #[default]
    Geometric,
    /// Invariant probability measure, ν(S²) = 1.
    Probabilistic,
}

pub fn sphere_measure(convention: MeasureConvention) -> f64 {
    match convention {
        MeasureConvention::Geometric => 4.0 * PI,
        MeasureConvention::Probabilistic => 1.0,
    }
}

/// Measure of the spherical cap of angular radius `theta`.
pub fn cap_measure(theta: f64, convention: MeasureConvention) -> f64 {
    let theta = theta.clamp(0.0, PI);
    sphere_measure(convention) * (1.0 - theta.cos()) / 2.0
}

/// ν(S²) under the crate-wide geometric convention.
pub const SPHERE_AREA: f64 = 4.0 * PI;
