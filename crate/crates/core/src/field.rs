//! Realizations of the Gaussian log-intensity on `[t0, t1] × S²`.
//!
//! The log-intensity is the truncated zonal series
//! `log X_t(z) = Σ_{l ≤ M} V_l(t) P_l(cos d(z, U))` with independent centered
//! Gaussian coefficient paths `V_l` and a uniform pole `U`. Paths are drawn on
//! an equispaced time grid by a dense Cholesky factor per degree and linearly
//! interpolated in between.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::manifold::{legendre_table, sample_uniform_sphere, SpherePoint};
use crate::rng::stream_rng;

/// Largest relative diagonal jitter tried before giving up on a Cholesky factor.
pub const MAX_JITTER: f64 = 1e-6;

/// Exponent clamp applied before `exp` in [`FieldRealization::eval_intensity`].
pub const LOG_INTENSITY_CLAMP: f64 = 700.0;

/// Equispaced time nodes `t0 = s_0 < … < s_{n-1} = t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::InvalidParameter(format!(
                "time window must satisfy t0 < t1, got [{t0}, {t1}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("time grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { t0, t1, n })
    }

    pub fn validated(self) -> Result<Self> {
        Self::new(self.t0, self.t1, self.n)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn step(&self) -> f64 {
        self.length() / (self.n - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.t1
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }

    /// Interval index `k` and weight `w` with `t = (1-w) s_k + w s_{k+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !self.contains(t) {
            return Err(Error::TimeOutsideWindow { t, t0: self.t0, t1: self.t1 });
        }
        let x = (t - self.t0) / self.step();
        let k = (x.floor() as usize).min(self.n - 2);
        Ok((k, (x - k as f64).clamp(0.0, 1.0)))
    }
}

/// Cached per-degree Cholesky factors for one `(model, grid)` pair.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    model: CovarianceModel,
    grid: TimeGrid,
    factors: Vec<DMatrix<f64>>,
    jitter: Vec<f64>,
}

impl FieldSampler {
    pub fn new(model: CovarianceModel, grid: TimeGrid) -> Result<Self> {
        let times = grid.nodes();
        let n = times.len();
        let mut factors = Vec::with_capacity(model.truncation() + 1);
        let mut jitter = Vec::with_capacity(model.truncation() + 1);
        for l in 0..=model.truncation() {
            let gram = DMatrix::from_row_slice(n, n, &model.series_gram(l, &times)?);
            let (factor, used) = cholesky_with_jitter(&gram)
                .ok_or(Error::NotPositiveDefinite { degree: l, max_jitter: MAX_JITTER })?;
            factors.push(factor);
            jitter.push(used);
        }
        Ok(Self { model, grid, factors, jitter })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Relative diagonal jitter used for each degree's factor.
    pub fn jitter(&self) -> &[f64] {
        &self.jitter
    }

    /// Draws a realization from `rng`: the pole first, then degrees `0..=M`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldRealization {
        let pole = sample_uniform_sphere(rng);
        let n = self.grid.len();
        let coeffs = self
            .factors
            .iter()
            .map(|factor| {
                let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n).map(|i| (0..=i).map(|j| factor[(i, j)] * xi[j]).sum()).collect()
            })
            .collect();
        FieldRealization { model: self.model, grid: self.grid, coeffs, pole, seed: None }
    }

    /// Draws the realization keyed by `seed` (stream 0 of that seed).
    pub fn sample(&self, seed: u64) -> FieldRealization {
        let mut rng = stream_rng(seed, 0);
        let mut f = self.sample_with(&mut rng);
        f.seed = Some(seed);
        f
    }
}

fn cholesky_with_jitter(gram: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)]).sum::<f64>() / n as f64;
    if scale == 0.0 {
        // Degenerate (zero-variance) model: the zero factor is exact.
        return Some((DMatrix::zeros(n, n), 0.0));
    }
    let mut jitter = 0.0;
    loop {
        let mut m = gram.clone();
        for i in 0..n {
            m[(i, i)] += jitter * scale;
        }
        if let Some(c) = m.cholesky() {
            return Some((c.l(), jitter));
        }
        jitter = if jitter == 0.0 { 1e-14 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return None;
        }
    }
}

/// Samples one realization; see [`FieldSampler`] for repeated draws.
pub fn simulate_coefficients<R: Rng + ?Sized>(
    model: &CovarianceModel,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<FieldRealization> {
    Ok(FieldSampler::new(*model, *grid)?.sample_with(rng))
}

/// One sample of the log-intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRealization {
    model: CovarianceModel,
    grid: TimeGrid,
    /// `coeffs[l][k] = V_l(s_k)`.
    coeffs: Vec<Vec<f64>>,
    pole: SpherePoint,
    seed: Option<u64>,
}

impl FieldRealization {
    /// Builds a realization from explicit coefficient paths.
    pub fn from_parts(
        model: CovarianceModel,
        grid: TimeGrid,
        coeffs: Vec<Vec<f64>>,
        pole: SpherePoint,
        seed: Option<u64>,
    ) -> Result<Self> {
        if coeffs.len() != model.truncation() + 1 {
            return Err(Error::GridMismatch(format!(
                "{} coefficient rows for truncation {}",
                coeffs.len(),
                model.truncation()
            )));
        }
        if coeffs.iter().any(|row| row.len() != grid.len()) {
            return Err(Error::GridMismatch("coefficient rows must match the time grid".into()));
        }
        Ok(Self { model, grid, coeffs, pole, seed })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn pole(&self) -> SpherePoint {
        self.pole
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Linearly interpolated `Ṽ_l(t)` for every degree.
    pub fn coefficients_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.grid.locate(t)?;
        Ok(self.coeffs.iter().map(|row| (1.0 - w) * row[k] + w * row[k + 1]).collect())
    }

    pub fn eval_field(&self, t: f64, z: &SpherePoint) -> Result<f64> {
        let (k, w) = self.grid.locate(t)?;
        let mut p = vec![0.0; self.coeffs.len()];
        legendre_table(z.cos_distance(&self.pole), &mut p);
        Ok(self.coeffs.iter().zip(&p).map(|(row, pl)| ((1.0 - w) * row[k] + w * row[k + 1]) * pl).sum())
    }

    /// `exp` of the field and whether the exponent had to be clamped.
    pub fn eval_intensity_checked(&self, t: f64, z: &SpherePoint) -> Result<(f64, bool)> {
        let v = self.eval_field(t, z)?;
        let clamped = v.abs() > LOG_INTENSITY_CLAMP;
        Ok((v.clamp(-LOG_INTENSITY_CLAMP, LOG_INTENSITY_CLAMP).exp(), clamped))
    }

    pub fn eval_intensity(&self, t: f64, z: &SpherePoint) -> Result<f64> {
        Ok(self.eval_intensity_checked(t, z)?.0)
    }

    /// `exp(Σ_l max_k |V_l(s_k)|)`, an upper bound on the intensity over the
    /// whole window since `|P_l| ≤ 1` and interpolation is convex.
    pub fn field_max_bound(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|row| row.iter().fold(0.0_f64, |m, v| m.max(v.abs()))).sum();
        s.min(LOG_INTENSITY_CLAMP).exp()
    }

    /// Field values at every grid node for the given points, `[node][point]`.
    pub fn node_values(&self, points: &[SpherePoint]) -> Vec<Vec<f64>> {
        let m = self.coeffs.len();
        let mut table = vec![0.0; m * points.len()];
        for (a, z) in points.iter().enumerate() {
            legendre_table(z.cos_distance(&self.pole), &mut table[a * m..(a + 1) * m]);
        }
        (0..self.grid.len())
            .map(|k| {
                (0..points.len())
                    .map(|a| (0..m).map(|l| self.coeffs[l][k] * table[a * m + l]).sum())
                    .collect()
            })
            .collect()
    }

    /// Writes `l,t,value` rows to `csv_path` and a JSON sidecar with the pole,
    /// grid, model and seed next to it (same stem, `.json`).
    pub fn write_dump(&self, csv_path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "l,t,value")?;
        for (l, row) in self.coeffs.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(out, "{l},{},{v}", self.grid.node(k))?;
            }
        }
        fs::write(csv_path, out)?;
        let meta = FieldDumpMeta { model: self.model, grid: self.grid, pole: self.pole, seed: self.seed };
        fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a dump written by [`Self::write_dump`].
    pub fn read_dump(csv_path: &Path) -> Result<Self> {
        let meta: FieldDumpMeta =
            serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json"))?)?;
        let model = meta.model.validated()?;
        let grid = meta.grid.validated()?;
        let mut coeffs = vec![vec![f64::NAN; grid.len()]; model.truncation() + 1];
        let mut reader = csv::Reader::from_path(csv_path)?;
        for record in reader.deserialize() {
            let (l, t, v): (usize, f64, f64) = record?;
            let k = ((t - grid.t0()) / grid.step()).round();
            if l >= coeffs.len() || k < 0.0 || k as usize >= grid.len() {
                return Err(Error::Format(format!("row (l={l}, t={t}) outside the dump grid")));
            }
            coeffs[l][k as usize] = v;
        }
        if coeffs.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Format("field dump is missing coefficient rows".into()));
        }
        Self::from_parts(model, grid, coeffs, meta.pole, meta.seed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldDumpMeta {
    model: CovarianceModel,
    grid: TimeGrid,
    pole: SpherePoint,
    seed: Option<u64>,
}
