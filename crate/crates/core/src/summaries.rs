//! K-functions and nearest-neighbour G functions on a `(θ, t)` grid.
//!
//! The model K-function is
//!
//! ```text
//! K_t(θ) = (1/(|𝒯| ν)) ∫∫ 1{d(y,z) ≤ θ} 1{|s-u| ≤ t} g_{s-u}(cos d(y,z))
//! ```
//!
//! over `𝒯² × (S²)²`, and the per-scale `K_q` replaces `g` by
//! `exp(b_q(s-u) P_q(cos d))`. With `g ≡ 1` the integral is
//! `2π(1 - cos θ)(2t - t²/|𝒯|)`, the self-consistent null. The classical
//! `2πt(1 - cos θ)` is available as [`Baseline::Classical`].

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::cox::PointPattern;
use crate::distances::{Classification, IntegrationSpec};
use crate::error::{Error, Result};
use crate::manifold::{legendre_unchecked, SPHERE_AREA};
use crate::rng::{chunks, stream_rng};

/// Default angular nodes in `[0, π]`, kept at their tabulated four decimals.
#[allow(clippy::approx_constant)]
pub const DEFAULT_THETAS: [f64; 15] = [
    0.0, 0.2244, 0.4488, 0.6732, 0.8976, 1.1220, 1.3464, 1.5708, 1.7952, 2.0196, 2.2440, 2.4684, 2.6928,
    2.9172, 3.1416,
];

/// Default temporal nodes in `[0, 10]`.
pub const DEFAULT_TS: [f64; 15] = [
    0.0, 0.7143, 1.4286, 2.1429, 2.8571, 3.5714, 4.2857, 5.0000, 5.7143, 6.4286, 7.1429, 7.8571, 8.5714,
    9.2857, 10.0000,
];

/// Values on a `thetas × ts` grid, `values[i][j]` at `(thetas[i], ts[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KGrid {
    pub thetas: Vec<f64>,
    pub ts: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
}

impl KGrid {
    pub fn from_fn(thetas: &[f64], ts: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            thetas: thetas.to_vec(),
            ts: ts.to_vec(),
            values: thetas.iter().map(|&th| ts.iter().map(|&t| f(t, th)).collect()).collect(),
            std_errors: vec![vec![0.0; ts.len()]; thetas.len()],
        }
    }

    pub fn default_nodes() -> (Vec<f64>, Vec<f64>) {
        (DEFAULT_THETAS.to_vec(), DEFAULT_TS.to_vec())
    }

    fn same_nodes(&self, other: &KGrid) -> Result<()> {
        if self.thetas != other.thetas || self.ts != other.ts {
            return Err(Error::GridMismatch("K grids use different nodes".into()));
        }
        Ok(())
    }

    /// Cellwise `self - other`; standard errors add in quadrature.
    pub fn difference(&self, other: &KGrid) -> Result<KGrid> {
        self.same_nodes(other)?;
        let zip = |a: &[Vec<f64>], b: &[Vec<f64>], f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| f(*x, *y)).collect()).collect()
        };
        Ok(KGrid {
            thetas: self.thetas.clone(),
            ts: self.ts.clone(),
            values: zip(&self.values, &other.values, &|a, b| a - b),
            std_errors: zip(&self.std_errors, &other.std_errors, &|a, b| a.hypot(b)),
        })
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        let v = &self.values;
        (0..v.len()).all(|i| {
            (0..v[i].len()).all(|j| (i == 0 || v[i][j] >= v[i - 1][j]) && (j == 0 || v[i][j] >= v[i][j - 1]))
        })
    }

    /// Matrix CSV: the header row holds the `t` nodes, the first column the
    /// `θ` nodes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta\\t");
        for t in &self.ts {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for (th, row) in self.thetas.iter().zip(&self.values) {
            let _ = write!(out, "{th}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Homogeneous reference curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// `2π(1 - cos θ)(2t - t²/|𝒯|)`, the `g ≡ 1` value of the model integral.
    #[default]
    SelfConsistent,
    /// `2πt(1 - cos θ)`.
    #[serde(rename = "paper")]
    Classical,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selfconsistent" => Ok(Self::SelfConsistent),
            "paper" => Ok(Self::Classical),
            other => Err(Error::InvalidParameter(format!("unknown baseline {other:?}"))),
        }
    }
}

pub fn k_pois(t: f64, theta: f64) -> f64 {
    2.0 * t * PI * (1.0 - theta.cos())
}

/// Null K-function over a window of length `window`.
pub fn k_null(t: f64, theta: f64, window: f64) -> f64 {
    2.0 * PI * (1.0 - theta.cos()) * (2.0 * t - t * t / window)
}

pub fn baseline_grid(baseline: Baseline, thetas: &[f64], ts: &[f64], window: f64) -> KGrid {
    match baseline {
        Baseline::SelfConsistent => KGrid::from_fn(thetas, ts, |t, th| k_null(t, th, window)),
        Baseline::Classical => KGrid::from_fn(thetas, ts, k_pois),
    }
}

/// Monte Carlo scheme for the model K-functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KEstimator {
    /// `|𝒯|ν · mean(1{…} g)`.
    #[default]
    Direct,
    /// Analytic null plus `|𝒯|ν · mean(1{…}(g - 1))`; far smaller variance
    /// when `g` is close to one.
    NullControlVariate,
}

fn check_nodes(thetas: &[f64], ts: &[f64]) -> Result<()> {
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
    if thetas.is_empty() || ts.is_empty() || !increasing(thetas) || !increasing(ts) {
        return Err(Error::InvalidParameter("grid nodes must be nonempty and increasing".into()));
    }
    if thetas[0] < 0.0 || ts[0] < 0.0 {
        return Err(Error::InvalidParameter("grid nodes must be nonnegative".into()));
    }
    Ok(())
}

/// Cumulative MC over the grid for a pair-correlation-like `g(τ, u)`.
fn k_integral(
    g: &(dyn Fn(f64, f64) -> f64 + Sync),
    thetas: &[f64],
    ts: &[f64],
    spec: &IntegrationSpec,
    estimator: KEstimator,
) -> Result<KGrid> {
    check_nodes(thetas, ts)?;
    if spec.samples == 0 || spec.chunk_size == 0 || spec.t0.partial_cmp(&spec.t1) != Some(Ordering::Less) {
        return Err(Error::InvalidParameter("invalid K integration settings".into()));
    }
    let (nt, ns) = (thetas.len(), ts.len());
    let len = spec.t1 - spec.t0;
    let shift = match estimator {
        KEstimator::Direct => 0.0,
        KEstimator::NullControlVariate => 1.0,
    };
    let partial: Vec<(Vec<f64>, Vec<f64>)> = chunks(spec.samples, spec.chunk_size)
        .into_par_iter()
        .map(|(index, n)| {
            let mut rng = stream_rng(spec.seed, index);
            let mut s1 = vec![0.0; nt * ns];
            let mut s2 = vec![0.0; nt * ns];
            for _ in 0..n {
                let tau = rng.random_range(spec.t0..spec.t1) - rng.random_range(spec.t0..spec.t1);
                // The cosine distance of two independent uniform points is
                // uniform on [-1, 1].
                let u: f64 = rng.random_range(-1.0..=1.0);
                let a = thetas.partition_point(|&x| x < u.acos());
                let b = ts.partition_point(|&x| x < tau.abs());
                if a < nt && b < ns {
                    let v = g(tau, u) - shift;
                    s1[a * ns + b] += v;
                    s2[a * ns + b] += v * v;
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; nt * ns];
    let mut s2 = vec![0.0; nt * ns];
    for (p1, p2) in &partial {
        s1.iter_mut().zip(p1).for_each(|(a, b)| *a += b);
        s2.iter_mut().zip(p2).for_each(|(a, b)| *a += b);
    }
    // Prefix sums along t, then along θ. Unlike inclusion–exclusion this
    // never subtracts, so nonnegative cell sums stay exactly monotone.
    let cumulate = |s: &mut [f64]| {
        for i in 0..nt {
            for j in 1..ns {
                s[i * ns + j] += s[i * ns + j - 1];
            }
        }
        for i in 1..nt {
            for j in 0..ns {
                s[i * ns + j] += s[(i - 1) * ns + j];
            }
        }
    };
    cumulate(&mut s1);
    cumulate(&mut s2);
    let n = spec.samples as f64;
    let volume = len * SPHERE_AREA;
    let mut grid = KGrid::from_fn(thetas, ts, |_, _| 0.0);
    for i in 0..nt {
        for j in 0..ns {
            let m1 = s1[i * ns + j] / n;
            let m2 = s2[i * ns + j] / n;
            let null = if shift == 0.0 { 0.0 } else { k_null(ts[j], thetas[i], len) };
            grid.values[i][j] = null + volume * m1;
            grid.std_errors[i][j] = volume * ((m2 - m1 * m1).max(0.0) / n).sqrt();
        }
    }
    Ok(grid)
}

/// Model K-function with the plain estimator.
pub fn k_model(model: &CovarianceModel, thetas: &[f64], ts: &[f64], spec: &IntegrationSpec) -> Result<KGrid> {
    k_model_with(model, thetas, ts, spec, KEstimator::Direct)
}

pub fn k_model_with(
    model: &CovarianceModel,
    thetas: &[f64],
    ts: &[f64],
    spec: &IntegrationSpec,
    estimator: KEstimator,
) -> Result<KGrid> {
    k_integral(&|tau, u| model.spacetime_kernel(tau, u).exp(), thetas, ts, spec, estimator)
}

/// Per-scale K-function `K_q`; `q` must not exceed the model truncation.
pub fn k_scale(
    model: &CovarianceModel,
    q: usize,
    thetas: &[f64],
    ts: &[f64],
    spec: &IntegrationSpec,
    estimator: KEstimator,
) -> Result<KGrid> {
    model.scale_coefficient(q, 0.0)?;
    k_integral(
        &|tau, u| (model.scale_coefficient_unchecked(q, tau) * legendre_unchecked(q, u)).exp(),
        thetas,
        ts,
        spec,
        estimator,
    )
}

/// Intensity used to normalize empirical pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum IntensityNorm {
    /// `ρ̂ = n / (|𝒯| ν)` from the pattern itself.
    #[default]
    Estimated,
    /// A known intensity. Dividing by the true `ρ²` makes the estimator
    /// unbiased for the model K-function; `ρ̂²` is a ratio estimator with
    /// an `O(1/n)` bias that grows with clustering.
    Known(f64),
}

/// Empirical K-function of a pattern, without edge correction.
pub fn k_empirical(p: &PointPattern, thetas: &[f64], ts: &[f64]) -> Result<KGrid> {
    k_empirical_with(p, thetas, ts, IntensityNorm::Estimated)
}

pub fn k_empirical_with(p: &PointPattern, thetas: &[f64], ts: &[f64], norm: IntensityNorm) -> Result<KGrid> {
    check_nodes(thetas, ts)?;
    if p.len() < 2 {
        return Err(Error::TooFewEvents(p.len()));
    }
    let volume = p.window().volume();
    let rho = match norm {
        IntensityNorm::Estimated => p.intensity_estimate(),
        IntensityNorm::Known(rho) if rho > 0.0 && rho.is_finite() => rho,
        IntensityNorm::Known(rho) => {
            return Err(Error::InvalidParameter(format!("intensity {rho} must be positive")))
        }
    };
    let counts = crate::cox::pairwise_histogram(p, thetas, ts);
    let scale = rho * rho * volume;
    let mut grid = KGrid::from_fn(thetas, ts, |_, _| 0.0);
    for (row, c) in grid.values.iter_mut().zip(&counts) {
        for (v, &c) in row.iter_mut().zip(c) {
            *v = c as f64 / scale;
        }
    }
    Ok(grid)
}

/// Empirical nearest-neighbour G function, with the spatial and temporal
/// nearest neighbours taken independently.
pub fn g_empirical(p: &PointPattern, thetas: &[f64], ts: &[f64]) -> Result<KGrid> {
    check_nodes(thetas, ts)?;
    let n = p.len();
    if n < 2 {
        return Err(Error::TooFewEvents(n));
    }
    let ev = p.events();
    let nearest: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d = f64::INFINITY;
            let mut gap = f64::INFINITY;
            for (j, e) in ev.iter().enumerate() {
                if j != i {
                    d = d.min(ev[i].z.distance(&e.z));
                    gap = gap.min((ev[i].t - e.t).abs());
                }
            }
            (d, gap)
        })
        .collect();
    Ok(KGrid::from_fn(thetas, ts, |t, th| {
        nearest.iter().filter(|(d, g)| *d <= th && *g <= t).count() as f64 / n as f64
    }))
}

/// Cellwise sign test of `kgrid - null_grid`.
///
/// Cells where both the difference and its standard error vanish (the `θ = 0`
/// and `t = 0` edges) carry no information and are skipped.
pub fn classify_from_k(kgrid: &KGrid, null_grid: &KGrid, z: f64, fraction: f64) -> Result<Classification> {
    let diff = kgrid.difference(null_grid)?;
    let (mut above, mut below, mut cells) = (0usize, 0usize, 0usize);
    for (row, se) in diff.values.iter().zip(&diff.std_errors) {
        for (&d, &s) in row.iter().zip(se) {
            if d == 0.0 && s == 0.0 {
                continue;
            }
            cells += 1;
            if d > z * s {
                above += 1;
            } else if d < -z * s {
                below += 1;
            }
        }
    }
    let needed = fraction * cells as f64;
    Ok(if cells > 0 && above as f64 >= needed && below == 0 {
        Classification::Aggregation
    } else if cells > 0 && below as f64 >= needed && above == 0 {
        Classification::Inhibition
    } else {
        Classification::Regular
    })
}

/// Default share of informative cells that must agree in [`classify_from_k`].
pub const CLASSIFY_FRACTION: f64 = 0.8;
