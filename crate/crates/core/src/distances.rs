//! Per-scale entropy distances between the Cox product densities and the
//! homogeneous Poisson baseline.
//!
//! Write `S` for `Σ_{i≠j} b_q(t_i-t_j) P_q(cos d_ij)` and `r = e^{S/2}`, so
//! that `ρ_q⁽ⁿ⁾ = ρ_q^n r`. The literal integrals over `𝒯ⁿ × (S²)ⁿ` are
//!
//! ```text
//! Shannon:  V ρ_q^n E[r log r]
//! Rényi:    log(V ρ_q^n E[r^h]) / (h-1)
//! ```
//!
//! where `V = (|𝒯| ν(S²))^n` and `E` is the uniform expectation. Those depend
//! on the domain volume even for the null model, so the reported values are
//! normalized by the mass of `ρ_q⁽ⁿ⁾`:
//!
//! ```text
//! D^S = E[r log r] / E[r],    D^R_h = log(E[r^h] / E[r]) / (h-1)
//! ```
//!
//! Both vanish when `b_q ≡ 0`, are non-negative, and `D^R_h → D^S` as `h → 1`.
//! The literal values travel along as `raw`.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::manifold::{legendre_table, sample_uniform_sphere, SPHERE_AREA};
use crate::rng::{chunks, stream_rng};

/// Upper bound on trapezoid integrand evaluations.
pub const MAX_TRAPEZOID_EVALUATIONS: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMethod {
    #[default]
    MonteCarlo,
    Trapezoid,
}

/// How the distance integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationSpec {
    pub method: IntegrationMethod,
    /// Monte Carlo sample count.
    pub samples: usize,
    /// Trapezoid nodes per integration axis.
    pub nodes_per_axis: usize,
    pub seed: u64,
    /// Product density order.
    pub n: usize,
    pub t0: f64,
    pub t1: f64,
    /// Samples per random stream; results depend on it, not on thread count.
    pub chunk_size: usize,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::MonteCarlo,
            samples: 1000,
            nodes_per_axis: 8,
            seed: 0,
            n: 2,
            t0: 0.0,
            t1: 10.0,
            chunk_size: 1 << 14,
        }
    }
}

impl IntegrationSpec {
    pub fn monte_carlo(n: usize, samples: usize, seed: u64) -> Self {
        Self { n, samples, seed, ..Self::default() }
    }

    pub fn trapezoid(n: usize, nodes_per_axis: usize) -> Self {
        Self { method: IntegrationMethod::Trapezoid, n, nodes_per_axis, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::UnsupportedOrder(self.n));
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t0 < self.t1) {
            return Err(Error::InvalidParameter(format!(
                "integration window [{}, {}] is empty",
                self.t0, self.t1
            )));
        }
        match self.method {
            IntegrationMethod::MonteCarlo if self.samples < 100 => Err(Error::InvalidParameter(format!(
                "Monte Carlo needs at least 100 samples, got {}",
                self.samples
            ))),
            IntegrationMethod::Trapezoid if self.nodes_per_axis < 4 => Err(Error::InvalidParameter(format!(
                "trapezoid rule needs at least 4 nodes per axis, got {}",
                self.nodes_per_axis
            ))),
            _ if self.chunk_size == 0 => Err(Error::InvalidParameter("chunk_size must be positive".into())),
            _ => Ok(()),
        }
    }

    fn window_length(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// A value with its standard error (0 for deterministic quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiEstimate {
    pub h: f64,
    pub value: f64,
    pub std_error: f64,
    /// Literal (volume-dependent) value.
    pub raw: f64,
}

impl RenyiEstimate {
    pub fn clustering_index(&self) -> f64 {
        clustering_index(self.value)
    }
}

/// Distances at one scale, all from the same sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDistances {
    pub q: usize,
    pub shannon: Estimate,
    pub shannon_raw: f64,
    pub renyi: Vec<RenyiEstimate>,
}

/// Running means and co-moments of a fixed number of variables, merged in a
/// fixed order for reproducible reductions.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; k], comoment: vec![0.0; k * k] }
    }

    fn k(&self) -> usize {
        self.mean.len()
    }

    fn push(&mut self, x: &[f64], delta: &mut [f64]) {
        let k = self.k();
        self.n += 1.0;
        for ((d, m), xa) in delta.iter_mut().zip(&mut self.mean).zip(x) {
            *d = xa - *m;
            *m += *d / self.n;
        }
        for ((row, xa), m) in self.comoment.chunks_mut(k).zip(x).zip(&self.mean) {
            let da = xa - m;
            row.iter_mut().zip(&*delta).for_each(|(c, db)| *c += da * db);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        let k = self.k();
        let n = self.n + other.n;
        let d: Vec<f64> = (0..k).map(|a| other.mean[a] - self.mean[a]).collect();
        let f = self.n * other.n / n;
        for (a, (row, orow)) in self.comoment.chunks_mut(k).zip(other.comoment.chunks(k)).enumerate() {
            for (b, (c, oc)) in row.iter_mut().zip(orow).enumerate() {
                *c += oc + d[a] * d[b] * f;
            }
        }
        for (m, da) in self.mean.iter_mut().zip(&d) {
            *m += da * other.n / n;
        }
        self.n = n;
    }

    /// Population covariance of the sample mean's summands.
    fn cov(&self, a: usize, b: usize) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            self.comoment[a * self.k() + b] / (self.n - 1.0)
        }
    }
}

/// Per-scale integrands for one configuration: appends `(r·x, r, r^h…)` for
/// each scale in order, where `x = S/2`.
struct Integrand<'a> {
    model: &'a CovarianceModel,
    qs: &'a [usize],
    hs: &'a [f64],
    legendre: Vec<f64>,
    x: Vec<f64>,
}

impl<'a> Integrand<'a> {
    fn new(model: &'a CovarianceModel, qs: &'a [usize], hs: &'a [f64]) -> Self {
        let qmax = qs.iter().copied().max().unwrap_or(0);
        Self { model, qs, hs, legendre: vec![0.0; qmax + 1], x: vec![0.0; qs.len()] }
    }

    fn width(&self) -> usize {
        2 + self.hs.len()
    }

    fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds one unordered pair `(τ, u)`; it appears twice in `S`, once in `S/2`.
    fn add_pair(&mut self, tau: f64, u: f64) {
        legendre_table(u, &mut self.legendre);
        for (x, &q) in self.x.iter_mut().zip(self.qs) {
            *x += self.model.scale_coefficient_unchecked(q, tau) * self.legendre[q];
        }
    }

    fn values(&self, out: &mut [f64]) {
        let w = self.width();
        for (s, &x) in self.x.iter().enumerate() {
            let r = x.exp();
            out[s * w] = r * x;
            out[s * w + 1] = r;
            for (j, &h) in self.hs.iter().enumerate() {
                out[s * w + 2 + j] = (h * x).exp();
            }
        }
    }
}

/// Shannon and Rényi distances for every `q` in `qs` and every order in `hs`,
/// estimated on one shared sample set.
pub fn distance_profile(
    model: &CovarianceModel,
    qs: &[usize],
    hs: &[f64],
    spec: &IntegrationSpec,
) -> Result<Vec<ScaleDistances>> {
    spec.validate()?;
    for &q in qs {
        model.scale_coefficient(q, 0.0)?;
    }
    for &h in hs {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("Renyi order must be positive, got {h}")));
        }
        if h == 1.0 {
            return Err(Error::RenyiOrderOne);
        }
    }
    let per_scale = match spec.method {
        IntegrationMethod::MonteCarlo => monte_carlo(model, qs, hs, spec)?,
        IntegrationMethod::Trapezoid => trapezoid(model, qs, hs, spec)?,
    };
    let log_volume = spec.n as f64 * (spec.window_length() * SPHERE_AREA).ln();
    qs.iter()
        .enumerate()
        .map(|(s, &q)| {
            let m = &per_scale[s];
            let o = 0;
            let (a, b) = (m.mean[o], m.mean[o + 1]);
            let nn = m.n;
            let shannon_value = a / b;
            let shannon_var = (m.cov(o, o) - 2.0 * shannon_value * m.cov(o, o + 1)
                + shannon_value * shannon_value * m.cov(o + 1, o + 1))
                / (nn * b * b);
            let log_rho_n = spec.n as f64 * model.scale_coefficient_unchecked(q, 0.0) / 2.0;
            let renyi = hs
                .iter()
                .enumerate()
                .map(|(j, &h)| {
                    let c = m.mean[o + 2 + j];
                    let (ic, ib) = (o + 2 + j, o + 1);
                    let var = (m.cov(ic, ic) / (c * c) - 2.0 * m.cov(ic, ib) / (c * b)
                        + m.cov(ib, ib) / (b * b))
                        / nn;
                    RenyiEstimate {
                        h,
                        value: (c / b).ln() / (h - 1.0),
                        std_error: var.max(0.0).sqrt() / (h - 1.0).abs(),
                        raw: (log_volume + log_rho_n + c.ln()) / (h - 1.0),
                    }
                })
                .collect();
            let out = ScaleDistances {
                q,
                shannon: Estimate { value: shannon_value, std_error: shannon_var.max(0.0).sqrt() },
                shannon_raw: (log_volume + log_rho_n).exp() * a,
                renyi,
            };
            if !out.shannon.value.is_finite() {
                return Err(Error::NonFinite(format!("Shannon distance at q = {q}")));
            }
            Ok(out)
        })
        .collect()
}

fn monte_carlo(
    model: &CovarianceModel,
    qs: &[usize],
    hs: &[f64],
    spec: &IntegrationSpec,
) -> Result<Vec<Moments>> {
    let width = 2 + hs.len();
    let partial: Vec<Vec<Moments>> = chunks(spec.samples, spec.chunk_size)
        .into_par_iter()
        .map(|(index, len)| {
            let mut rng = stream_rng(spec.seed, index);
            let mut integrand = Integrand::new(model, qs, hs);
            let mut acc = vec![Moments::new(width); qs.len()];
            let mut values = vec![0.0; width * qs.len()];
            let mut delta = vec![0.0; width];
            let mut times = [0.0; 3];
            let mut points = [crate::manifold::SpherePoint::north_pole(); 3];
            for _ in 0..len {
                for i in 0..spec.n {
                    times[i] = rng.random_range(spec.t0..spec.t1);
                    points[i] = sample_uniform_sphere(&mut rng);
                }
                integrand.reset();
                for i in 0..spec.n {
                    for j in i + 1..spec.n {
                        integrand.add_pair(times[i] - times[j], points[i].cos_distance(&points[j]));
                    }
                }
                integrand.values(&mut values);
                for (s, m) in acc.iter_mut().enumerate() {
                    m.push(&values[s * width..(s + 1) * width], &mut delta);
                }
            }
            acc
        })
        .collect();
    Ok(reduce(partial, qs.len(), width))
}

fn reduce(partial: Vec<Vec<Moments>>, scales: usize, width: usize) -> Vec<Moments> {
    let mut total = vec![Moments::new(width); scales];
    for chunk in &partial {
        for (t, m) in total.iter_mut().zip(chunk) {
            t.merge(m);
        }
    }
    total
}

fn trapezoid_nodes(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let x = if k + 1 == n { b } else { a + k as f64 * h };
            let w = if k == 0 || k + 1 == n { h / 2.0 } else { h };
            (x, w)
        })
        .collect()
}

/// Weighted quadrature; the node weights sum to one, so the returned means are
/// expectations under the uniform law and the standard errors are zero.
fn trapezoid(
    model: &CovarianceModel,
    qs: &[usize],
    hs: &[f64],
    spec: &IntegrationSpec,
) -> Result<Vec<Moments>> {
    let m = spec.nodes_per_axis;
    let evaluations = match spec.n {
        1 => 1.0,
        2 => (m * m) as f64,
        _ => (m as f64).powi(6),
    };
    if evaluations > MAX_TRAPEZOID_EVALUATIONS {
        return Err(Error::IntegrationTooExpensive { evaluations, limit: MAX_TRAPEZOID_EVALUATIONS });
    }
    let width = 2 + hs.len();
    let len = spec.window_length();
    let u_nodes: Vec<(f64, f64)> =
        trapezoid_nodes(-1.0, 1.0, m).into_iter().map(|(u, w)| (u, w / 2.0)).collect();

    // Each outer index yields weighted sums over its slice of the grid.
    let slice = |outer: usize| -> Vec<f64> {
        let mut integrand = Integrand::new(model, qs, hs);
        let mut values = vec![0.0; width * qs.len()];
        let mut sums = vec![0.0; width * qs.len()];
        let mut add = |integrand: &Integrand, weight: f64, values: &mut Vec<f64>| {
            integrand.values(values);
            sums.iter_mut().zip(values.iter()).for_each(|(s, v)| *s += weight * v);
        };
        match spec.n {
            1 => add(&integrand, 1.0, &mut values),
            2 => {
                // Lag τ = |t1 - t2| on [0, |𝒯|] has density 2(|𝒯| - τ)/|𝒯|².
                let (tau, wt) = trapezoid_nodes(0.0, len, m)[outer];
                let wt = wt * 2.0 * (len - tau) / (len * len);
                for &(u, wu) in &u_nodes {
                    integrand.reset();
                    integrand.add_pair(tau, u);
                    add(&integrand, wt * wu, &mut values);
                }
            }
            _ => {
                let t_nodes: Vec<(f64, f64)> =
                    trapezoid_nodes(spec.t0, spec.t1, m).into_iter().map(|(t, w)| (t, w / len)).collect();
                // φ is periodic: equal weights, no duplicated endpoint.
                let phi: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
                let (t1, w1) = t_nodes[outer];
                for &(t2, w2) in &t_nodes {
                    for &(t3, w3) in &t_nodes {
                        let wt = w1 * w2 * w3;
                        for &(u12, wa) in &u_nodes {
                            for &(u13, wb) in &u_nodes {
                                let s = ((1.0 - u12 * u12) * (1.0 - u13 * u13)).max(0.0).sqrt();
                                for &p in &phi {
                                    let u23 = (u12 * u13 + s * p.cos()).clamp(-1.0, 1.0);
                                    integrand.reset();
                                    integrand.add_pair(t1 - t2, u12);
                                    integrand.add_pair(t1 - t3, u13);
                                    integrand.add_pair(t2 - t3, u23);
                                    add(&integrand, wt * wa * wb / m as f64, &mut values);
                                }
                            }
                        }
                    }
                }
            }
        }
        sums
    };
    let outer = if spec.n == 1 { 1 } else { m };
    let partial: Vec<Vec<f64>> = (0..outer).into_par_iter().map(slice).collect();
    let mut total = vec![0.0; width * qs.len()];
    for p in &partial {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    Ok((0..qs.len())
        .map(|s| Moments {
            n: f64::INFINITY,
            mean: total[s * width..(s + 1) * width].to_vec(),
            comoment: vec![0.0; width * width],
        })
        .collect())
}

/// Normalized Shannon distance `D_q^S`.
pub fn shannon_distance(model: &CovarianceModel, q: usize, spec: &IntegrationSpec) -> Result<Estimate> {
    Ok(distance_profile(model, &[q], &[], spec)?[0].shannon)
}

/// Normalized Rényi distance `D_{q,h}^R`; `h = 1` is rejected.
pub fn renyi_distance(model: &CovarianceModel, q: usize, h: f64, spec: &IntegrationSpec) -> Result<Estimate> {
    let r = distance_profile(model, &[q], &[h], spec)?[0].renyi[0];
    Ok(Estimate { value: r.value, std_error: r.std_error })
}

/// `CI_h = exp(D^R_h)`.
pub fn clustering_index(d: f64) -> f64 {
    d.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Aggregation,
    Regular,
    Inhibition,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aggregation => "aggregation",
            Self::Regular => "regular",
            Self::Inhibition => "inhibition",
        })
    }
}

/// Sign test of a distance against its standard error at `z` σ.
pub fn classify_scale(value: f64, std_error: f64, z: f64) -> Classification {
    if value > z * std_error {
        Classification::Aggregation
    } else if value < -z * std_error {
        Classification::Inhibition
    } else {
        Classification::Regular
    }
}

/// Least-squares polynomial, coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Fits a polynomial of `degree` by the normal equations with unit-norm
/// Vandermonde columns.
pub fn polyfit_smooth(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter("xs and ys differ in length".into()));
    }
    if xs.len() < degree + 1 {
        return Err(Error::InvalidParameter(format!(
            "degree {degree} needs at least {} points, got {}",
            degree + 1,
            xs.len()
        )));
    }
    let k = degree + 1;
    let v = DMatrix::from_fn(xs.len(), k, |i, j| xs[i].powi(j as i32));
    let scale: Vec<f64> = (0..k).map(|j| v.column(j).norm()).collect();
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::RankDeficient);
    }
    let mut vs = v.clone();
    for (j, s) in scale.iter().enumerate() {
        vs.column_mut(j).unscale_mut(*s);
    }
    let y = DVector::from_column_slice(ys);
    let gram = vs.transpose() * &vs;
    let chol = gram.clone().cholesky().ok_or(Error::RankDeficient)?;
    let l = chol.l();
    let diag: Vec<f64> = (0..k).map(|i| l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    // Pivots below √ε of the largest leave no trustworthy digits.
    if diag.iter().any(|&d| d < 1e-8 * max) {
        return Err(Error::RankDeficient);
    }
    let rhs = vs.transpose() * &y;
    let mut c = chol.solve(&rhs);
    // One step of refinement recovers digits lost to the squared condition.
    let r = &rhs - &gram * &c;
    c += chol.solve(&r);
    let coefficients: Vec<f64> = c.iter().zip(&scale).map(|(c, s)| c / s).collect();
    let residual = &y - &v * DVector::from_column_slice(&coefficients);
    Ok(PolyFit { coefficients, residual_norm: residual.norm() })
}

/// Distances over a list of scales and Rényi orders, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub model: CovarianceModel,
    pub spec: IntegrationSpec,
    pub orders: Vec<f64>,
    pub rows: Vec<ScaleDistances>,
    #[serde(default)]
    pub smoothing: Option<PolyFit>,
}

impl DistanceTable {
    pub fn compute(
        model: &CovarianceModel,
        qs: &[usize],
        hs: &[f64],
        spec: &IntegrationSpec,
    ) -> Result<Self> {
        Ok(Self {
            model: *model,
            spec: *spec,
            orders: hs.to_vec(),
            rows: distance_profile(model, qs, hs, spec)?,
            smoothing: None,
        })
    }

    pub fn scales(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.q).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.shannon.value).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.shannon.std_error).collect()
    }

    /// Fits the Shannon values against `q` and stores the coefficients.
    pub fn smooth(&mut self, degree: usize) -> Result<&PolyFit> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.q as f64).collect();
        let fit = polyfit_smooth(&xs, &self.values(), degree)?;
        Ok(self.smoothing.insert(fit))
    }

    /// `q,value,std_error` plus `renyi_h`, `renyi_se_h` and `ci_h` per order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,value,std_error");
        for h in &self.orders {
            out += &format!(",renyi_{h},renyi_se_{h},ci_{h}");
        }
        out.push('\n');
        for r in &self.rows {
            out += &format!("{},{},{}", r.q, r.shannon.value, r.shannon.std_error);
            for e in &r.renyi {
                out += &format!(",{},{},{}", e.value, e.std_error, e.clustering_index());
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        fs::File::create(csv_path)?.write_all(self.to_csv().as_bytes())?;
        fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(theta: f64) -> CovarianceModel {
        CovarianceModel::new(theta, 5).unwrap()
    }

    #[test]
    fn integration_settings_validation() {
        assert!(IntegrationSpec::monte_carlo(2, 99, 0).validate().is_err());
        assert!(IntegrationSpec::trapezoid(2, 3).validate().is_err());
        assert!(matches!(
            IntegrationSpec::monte_carlo(4, 1000, 0).validate(),
            Err(Error::UnsupportedOrder(4))
        ));
        assert!(IntegrationSpec::default().validate().is_ok());
    }

    #[test]
    fn single_point_is_null() {
        for theta in [0.01, 1.0, 100.0] {
            let m = model(theta);
            let spec = IntegrationSpec::monte_carlo(1, 200, 1);
            for q in 0..=5 {
                let e = shannon_distance(&m, q, &spec).unwrap();
                assert_eq!(e.value, 0.0);
                assert_eq!(e.std_error, 0.0);
            }
        }
    }

    #[test]
    fn null_model_trapezoid_is_zero() {
        let m = model(1.0).with_variance_scale(0.0).unwrap();
        for n in [2, 3] {
            let spec = IntegrationSpec::trapezoid(n, 5);
            let row = &distance_profile(&m, &[0, 2], &[0.5, 2.0], &spec).unwrap()[0];
            assert_eq!(row.shannon.value, 0.0);
            assert!(row.renyi.iter().all(|r| r.value == 0.0));
        }
    }

    #[test]
    fn renyi_rejects_order_one() {
        let spec = IntegrationSpec::default();
        assert!(matches!(renyi_distance(&model(1.0), 0, 1.0, &spec), Err(Error::RenyiOrderOne)));
        assert!(renyi_distance(&model(1.0), 0, -1.0, &spec).is_err());
    }

    #[test]
    fn scale_above_truncation_is_rejected() {
        assert!(shannon_distance(&model(1.0), 6, &IntegrationSpec::default()).is_err());
    }

    #[test]
    fn trapezoid_guard() {
        let spec = IntegrationSpec::trapezoid(3, 22);
        assert!(matches!(
            shannon_distance(&model(1.0), 0, &spec),
            Err(Error::IntegrationTooExpensive { .. })
        ));
    }

    #[test]
    fn raw_values_carry_the_volume() {
        let m = model(1.0);
        let spec = IntegrationSpec::trapezoid(2, 16);
        let row = &distance_profile(&m, &[0], &[2.0], &spec).unwrap()[0];
        let v = (10.0 * SPHERE_AREA).powi(2);
        let rho2 = (m.scale_coefficient(0, 0.0).unwrap()).exp();
        // raw_R·(h-1) - log(V ρ²) = log E[r^h] ≥ log E[r] > 0.
        assert!(row.renyi[0].raw > (v * rho2).ln());
        assert!(row.shannon_raw > 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_chunked() {
        let m = model(1.0);
        let mut spec = IntegrationSpec::monte_carlo(2, 5000, 3);
        spec.chunk_size = 1000;
        let a = distance_profile(&m, &[0, 1], &[2.0], &spec).unwrap();
        let b = distance_profile(&m, &[0, 1], &[2.0], &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_scale(0.5, 0.01, 3.0), Classification::Aggregation);
        assert_eq!(classify_scale(0.0001, 0.01, 3.0), Classification::Regular);
        assert_eq!(classify_scale(-0.5, 0.01, 3.0), Classification::Inhibition);
    }

    #[test]
    fn clustering_index_examples() {
        assert_eq!(clustering_index(0.0), 1.0);
        assert!((clustering_index(2f64.ln()) - 2.0).abs() < 1e-15);
        assert!(clustering_index(-0.1) < 1.0);
    }

    #[test]
    fn polyfit_recovers_polynomials() {
        let xs: Vec<f64> = (0..31).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let fit = polyfit_smooth(&xs, &ys, 5).unwrap();
        for (j, c) in fit.coefficients.iter().enumerate() {
            let want = if j == 2 { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 1e-8, "coefficient {j}: {c}");
        }
        let flat = polyfit_smooth(&xs, &vec![2.5; 31], 5).unwrap();
        assert!((flat.coefficients[0] - 2.5).abs() < 1e-8);
        assert!(flat.coefficients[1..].iter().all(|c| c.abs() < 1e-8));
        assert!(flat.residual_norm < 1e-8);
    }

    #[test]
    fn polyfit_errors() {
        assert!(polyfit_smooth(&[1.0, 2.0], &[1.0, 2.0], 5).is_err());
        assert!(matches!(polyfit_smooth(&[1.0; 10], &[1.0; 10], 3), Err(Error::RankDeficient)));
    }

    #[test]
    fn table_csv_layout() {
        let spec = IntegrationSpec::trapezoid(2, 6);
        let mut t = DistanceTable::compute(&model(1.0), &[0, 1, 2, 3, 4, 5], &[2.0], &spec).unwrap();
        t.smooth(2).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("q,value,std_error,renyi_2,renyi_se_2,ci_2\n"));
        assert_eq!(csv.lines().count(), 7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        t.write(&p).unwrap();
        let back: DistanceTable =
            serde_json::from_str(&fs::read_to_string(p.with_extension("json")).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
