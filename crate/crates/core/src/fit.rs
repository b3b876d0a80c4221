//! Recovering the covariance model from gridded field replicates.
//!
//! The empirical space-time covariance is averaged over lattice point pairs
//! by cosine distance (isotropy) and over time pairs at each lag
//! (stationarity). Each binned profile `r̂_τ(u)` is then projected onto the
//! Legendre basis, `b̂_l(τ) = (2l+1)/2 ∫ r̂_τ(u) P_l(u) du`, and converted to
//! the `B_l` scale. `θ` is fitted to the resulting table by least squares.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::field::{FieldRealization, TimeGrid};
use crate::manifold::{legendre_table, SpherePoint};

/// Minimum replicate count for [`empirical_coef_cov`].
pub const MIN_REPLICATES: usize = 50;

/// Number of cosine-distance bins.
pub const DEFAULT_BINS: usize = 64;

/// Default lags in time-grid steps, for a 100-node grid. The long lags carry
/// most of the information on `θ` when dependence is long-ranged.
pub const DEFAULT_LAG_STEPS: [usize; 12] = [0, 1, 2, 3, 5, 8, 12, 20, 30, 48, 70, 90];

/// Regular colatitude/longitude lattice with cell-centred colatitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereLattice {
    pub n_lat: usize,
    pub n_lon: usize,
}

impl SphereLattice {
    pub fn new(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 2 || n_lon < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice needs at least 2×2 nodes, got {n_lat}×{n_lon}"
            )));
        }
        Ok(Self { n_lat, n_lon })
    }

    pub fn len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<SpherePoint> {
        (0..self.n_lat)
            .flat_map(|i| {
                let colat = PI * (i as f64 + 0.5) / self.n_lat as f64;
                (0..self.n_lon)
                    .map(move |j| SpherePoint::from_spherical(colat, 2.0 * PI * j as f64 / self.n_lon as f64))
            })
            .collect()
    }

    /// Quadrature weights proportional to cell area, summing to one.
    pub fn weights(&self) -> Vec<f64> {
        let dtheta = PI / self.n_lat as f64;
        let per_row: Vec<f64> = (0..self.n_lat)
            .map(|i| {
                let a = i as f64 * dtheta;
                (a.cos() - (a + dtheta).cos()) / (2.0 * self.n_lon as f64)
            })
            .collect();
        per_row.iter().flat_map(|&w| std::iter::repeat(w).take(self.n_lon)).collect()
    }
}

/// Field values on `grid nodes × lattice points`, row-major by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedField {
    pub grid: TimeGrid,
    pub lattice: SphereLattice,
    pub values: Vec<f64>,
}

impl GriddedField {
    pub fn new(grid: TimeGrid, lattice: SphereLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * lattice.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}×{} grid",
                values.len(),
                grid.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gridded field value".into()));
        }
        Ok(Self { grid, lattice, values })
    }

    pub fn from_realization(f: &FieldRealization, lattice: SphereLattice) -> Self {
        let values = f.node_values(&lattice.points()).into_iter().flatten().collect();
        Self { grid: *f.grid(), lattice, values }
    }

    /// `k,i,value` rows plus a JSON sidecar with the grid and lattice.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.lattice.len();
        let mut out = String::from("k,i,value\n");
        for (idx, v) in self.values.iter().enumerate() {
            out += &format!("{},{},{v}\n", idx / n, idx % n);
        }
        fs::write(path, out)?;
        fs::write(path.with_extension("json"), serde_json::to_string_pretty(&(self.grid, self.lattice))?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (grid, lattice): (TimeGrid, SphereLattice) =
            serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
        let grid = grid.validated()?;
        let lattice = SphereLattice::new(lattice.n_lat, lattice.n_lon)?;
        let n = lattice.len();
        let mut values = vec![f64::NAN; grid.len() * n];
        for record in csv::Reader::from_path(path)?.deserialize() {
            let (k, i, v): (usize, usize, f64) = record?;
            if k >= grid.len() || i >= n {
                return Err(Error::Format(format!("cell ({k}, {i}) outside the grid")));
            }
            values[k * n + i] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("gridded field has missing cells".into()));
        }
        Self::new(grid, lattice, values)
    }
}

/// Empirical `B̂_l(τ)` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefCovTable {
    /// Lags in time units.
    pub lags: Vec<f64>,
    /// `values[l][k]` is `B̂_l(lags[k])`.
    pub values: Vec<Vec<f64>>,
    /// Binned `r̂_τ(u)`, `profiles[k][b]`.
    pub profiles: Vec<Vec<f64>>,
    pub bins: usize,
    pub replicates: usize,
}

impl CoefCovTable {
    /// Exact table of a model, for noise-free round trips.
    pub fn from_model(model: &CovarianceModel, l_max: usize, lags: &[f64]) -> Self {
        Self {
            lags: lags.to_vec(),
            values: (0..=l_max)
                .map(|l| lags.iter().map(|&t| model.coef_cov_unchecked(l, t)).collect())
                .collect(),
            profiles: Vec::new(),
            bins: 0,
            replicates: 0,
        }
    }

    pub fn l_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Estimates `B̂_l(τ)` for `l ≤ l_max` at the given lags, counted in time-grid
/// steps. `convention` maps `b̂_l` back to the `B_l` scale.
pub fn empirical_coef_cov(
    data: &[GriddedField],
    l_max: usize,
    lag_steps: &[usize],
    bins: usize,
    convention: &CovarianceModel,
) -> Result<CoefCovTable> {
    if data.len() < MIN_REPLICATES {
        return Err(Error::TooFewReplicates { got: data.len(), need: MIN_REPLICATES });
    }
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 cosine bins".into()));
    }
    let first = &data[0];
    if data.iter().any(|d| d.grid != first.grid || d.lattice != first.lattice) {
        return Err(Error::GridMismatch("replicates use different grids".into()));
    }
    let nk = first.grid.len();
    if let Some(&s) = lag_steps.iter().find(|&&s| s >= nk) {
        return Err(Error::InvalidParameter(format!("lag of {s} steps exceeds the {nk}-node grid")));
    }
    let np = first.lattice.len();

    // Σ_s X(s)ᵀ X(s+τ), summed over replicates in fixed-size blocks and
    // then in block order, so the result does not depend on thread count.
    // Binning is linear and happens once at the end.
    let lagged = |d: &GriddedField, acc: &mut Vec<DMatrix<f64>>| {
        let x = DMatrix::from_row_slice(nk, np, &d.values);
        for (a, &s) in acc.iter_mut().zip(lag_steps) {
            *a += x.rows(0, nk - s).transpose() * x.rows(s, nk - s);
        }
    };
    let zero = || vec![DMatrix::<f64>::zeros(np, np); lag_steps.len()];
    let blocks: Vec<Vec<DMatrix<f64>>> = data
        .par_chunks(16)
        .map(|block| {
            let mut acc = zero();
            block.iter().for_each(|d| lagged(d, &mut acc));
            acc
        })
        .collect();
    let mut sums = zero();
    for block in blocks {
        sums.iter_mut().zip(block).for_each(|(a, b)| *a += b);
    }

    let binning = LatticeBinning::new(&first.lattice, bins, l_max);
    let mut profiles = Vec::with_capacity(lag_steps.len());
    let mut values = vec![vec![0.0; lag_steps.len()]; l_max + 1];
    for (k, (&s, m)) in lag_steps.iter().zip(&sums).enumerate() {
        let count = (data.len() * (nk - s)) as f64;
        // Symmetrize so that lags ±τ contribute alike.
        let (r, b_hat) = binning.project(|i, j| 0.5 * (m[(i, j)] + m[(j, i)]) / count);
        for (l, row) in values.iter_mut().enumerate() {
            row[k] = convention.scale_to_coef(l, b_hat[l]);
        }
        let mut filled = r;
        fill_empty_bins(&mut filled);
        profiles.push(filled.into_iter().map(|v| v.unwrap_or(0.0)).collect());
    }
    Ok(CoefCovTable {
        lags: lag_steps.iter().map(|&s| s as f64 * first.grid.step()).collect(),
        values,
        profiles,
        bins,
        replicates: data.len(),
    })
}

/// Pair bins of a lattice by cosine distance, with the exact Legendre
/// integrals of the interpolant through the occupied bins.
const ENDPOINT_TOL: f64 = 1e-12;

struct LatticeBinning {
    weights: Vec<f64>,
    pair_bin: Vec<usize>,
    bin_weight: Vec<f64>,
    occupied: Vec<usize>,
    segments: Vec<Segment>,
    l_max: usize,
}

impl LatticeBinning {
    fn new(lattice: &SphereLattice, bins: usize, l_max: usize) -> Self {
        let points = lattice.points();
        let w = lattice.weights();
        let np = points.len();
        // Coincident and antipodal pairs get their own knots at u = ±1, so
        // the interpolant reaches the ends without extrapolating. Slots
        // `bins` and `bins + 1` hold them.
        let (top, bottom) = (bins, bins + 1);
        let slot_of = |u: f64| {
            if u >= 1.0 - ENDPOINT_TOL {
                top
            } else if u <= -1.0 + ENDPOINT_TOL {
                bottom
            } else {
                (((u + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1)
            }
        };
        let mut pair_bin = vec![0usize; np * np];
        let mut bin_weight = vec![0.0; bins + 2];
        let mut bin_u = vec![0.0; bins + 2];
        for i in 0..np {
            for j in 0..np {
                let u = points[i].cos_distance(&points[j]);
                let b = slot_of(u);
                pair_bin[i * np + j] = b;
                bin_weight[b] += w[i] * w[j];
                bin_u[b] += w[i] * w[j] * u;
            }
        }
        bin_u[top] = bin_weight[top];
        bin_u[bottom] = -bin_weight[bottom];
        // Knot abscissae: the pair-weighted mean cosine of each occupied
        // slot, in increasing order.
        let occupied: Vec<usize> = std::iter::once(bottom)
            .chain(0..bins)
            .chain(std::iter::once(top))
            .filter(|&b| bin_weight[b] > 0.0)
            .collect();
        let knots: Vec<f64> = occupied.iter().map(|&b| bin_u[b] / bin_weight[b]).collect();
        let segments = segment_integrals(&knots, l_max);
        Self { weights: w, pair_bin, bin_weight, occupied, segments, l_max }
    }

    /// Bin averages of `moment(i, j)` (the `bins` regular bins only) and
    /// the Legendre coefficients `b̂_l = (2l+1)/2 ∫ r̂ P_l` of the
    /// interpolant through every occupied slot.
    ///
    /// r̂ is projected as the piecewise-linear interpolant through the
    /// knots. Its leading error is (h²/12) ∫ r'' P_l, which vanishes for l
    /// above the degree of r'', so degrees above the truncation pick up
    /// far less bias than from a piecewise-constant profile.
    fn project(&self, moment: impl Fn(usize, usize) -> f64) -> (Vec<Option<f64>>, Vec<f64>) {
        let np = self.weights.len();
        let w = &self.weights;
        let mut acc = vec![0.0; self.bin_weight.len()];
        for i in 0..np {
            for j in 0..np {
                acc[self.pair_bin[i * np + j]] += w[i] * w[j] * moment(i, j);
            }
        }
        let r: Vec<Option<f64>> =
            acc.iter().zip(&self.bin_weight).map(|(a, &bw)| (bw > 0.0).then(|| a / bw)).collect();
        let heights: Vec<f64> = self.occupied.iter().map(|&b| r[b].unwrap()).collect();
        let bins = r.len() - 2;
        let b_hat = (0..=self.l_max)
            .map(|l| (2.0 * l as f64 + 1.0) / 2.0 * project(&self.segments, &heights, l))
            .collect();
        let mut r = r;
        r.truncate(bins);
        (r, b_hat)
    }
}

/// `∫ P_m(u) du` over `[x_a, x_b]` for `m ≤ l_max + 1`, via
/// `∫ P_m = (P_{m+1} - P_{m-1})/(2m+1)`.
fn legendre_integrals(xa: f64, xb: f64, l_max: usize) -> Vec<f64> {
    let mut p = vec![0.0; l_max + 3];
    let mut anti = |u: f64| -> Vec<f64> {
        legendre_table(u, &mut p);
        (0..=l_max + 1)
            .map(|m| if m == 0 { u } else { (p[m + 1] - p[m - 1]) / (2.0 * m as f64 + 1.0) })
            .collect()
    };
    let (lo, hi) = (anti(xa), anti(xb));
    hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
}

/// Per segment of the interpolant: `(a, b, ∫P_l, ∫u P_l)` over `[a, b]`,
/// with constant end pieces out to ±1 stored as `a == b` knots.
struct Segment {
    a: f64,
    b: f64,
    /// `∫ P_l` per degree.
    p: Vec<f64>,
    /// `∫ u P_l = ((l+1) ∫P_{l+1} + l ∫P_{l-1}) / (2l+1)` per degree.
    up: Vec<f64>,
}

fn segment_integrals(knots: &[f64], l_max: usize) -> Vec<Segment> {
    let make = |a: f64, b: f64| {
        let i = legendre_integrals(a, b, l_max);
        let up = (0..=l_max)
            .map(|l| {
                let lower = if l == 0 { 0.0 } else { l as f64 * i[l - 1] };
                ((l + 1) as f64 * i[l + 1] + lower) / (2.0 * l as f64 + 1.0)
            })
            .collect();
        Segment { a, b, p: i[..=l_max].to_vec(), up }
    };
    let mut out = Vec::with_capacity(knots.len() + 1);
    out.push(make(-1.0, knots[0]));
    for w in knots.windows(2) {
        out.push(make(w[0], w[1]));
    }
    out.push(make(knots[knots.len() - 1], 1.0));
    out
}

/// `∫_{-1}^{1} L(u) P_l(u) du` for the interpolant `L` through
/// `(knots, heights)`, constant beyond the end knots.
fn project(segments: &[Segment], heights: &[f64], l: usize) -> f64 {
    let n = heights.len();
    let mut total = segments[0].p[l] * heights[0] + segments[n].p[l] * heights[n - 1];
    for (s, h) in segments[1..n].iter().zip(heights.windows(2)) {
        let slope = (h[1] - h[0]) / (s.b - s.a);
        total += (h[0] - slope * s.a) * s.p[l] + slope * s.up[l];
    }
    total
}

/// Linear interpolation across runs of empty bins; constant extrapolation at
/// the ends.
fn fill_empty_bins(r: &mut [Option<f64>]) {
    let known: Vec<usize> = (0..r.len()).filter(|&b| r[b].is_some()).collect();
    let (Some(&lo), Some(&hi)) = (known.first(), known.last()) else {
        return;
    };
    for b in 0..r.len() {
        if r[b].is_some() {
            continue;
        }
        r[b] = Some(if b < lo {
            r[lo].unwrap()
        } else if b > hi {
            r[hi].unwrap()
        } else {
            let a = known[known.partition_point(|&k| k < b) - 1];
            let c = known[known.partition_point(|&k| k < b)];
            let f = (b - a) as f64 / (c - a) as f64;
            (1.0 - f) * r[a].unwrap() + f * r[c].unwrap()
        });
    }
}

/// Options for [`fit_theta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub log10_min: f64,
    pub log10_max: f64,
    /// Points in the initial coarse scan of the bracket.
    pub scan_points: usize,
    /// Tolerance on `log θ` for the golden-section refinement.
    pub tolerance: f64,
    /// Fit a common amplitude `s` along with `θ` (solved in closed form for
    /// each `θ`), so that sampling error in the overall level is not absorbed
    /// by `θ`.
    pub profile_amplitude: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { log10_min: -4.0, log10_max: 4.0, scan_points: 81, tolerance: 1e-10, profile_amplitude: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaFit {
    pub theta: f64,
    pub residual: f64,
    /// Fitted amplitude; exactly 1 when the amplitude is not profiled.
    pub amplitude: f64,
}

/// Least-squares `θ̂` over `l ≤ l_max` and all lags of `table`.
pub fn fit_theta(table: &CoefCovTable, l_max: usize, options: &FitOptions) -> Result<ThetaFit> {
    if l_max < 1 || table.l_max() < l_max {
        return Err(Error::InvalidParameter(format!(
            "fit needs at least 2 degrees available up to l_max = {l_max}"
        )));
    }
    if table.lags.len() < 5 {
        return Err(Error::InvalidParameter(format!("fit needs at least 5 lags, got {}", table.lags.len())));
    }
    if options.log10_min.partial_cmp(&options.log10_max) != Some(Ordering::Less) || options.scan_points < 3 {
        return Err(Error::InvalidParameter("invalid search bracket".into()));
    }
    let objective = |log_theta: f64| -> (f64, f64) {
        let theta = log_theta.exp();
        let model = CovarianceModel::new(theta, l_max).expect("positive theta");
        let mut cross = 0.0;
        let mut norm = 0.0;
        for l in 0..=l_max {
            for (k, &tau) in table.lags.iter().enumerate() {
                let m = model.coef_cov_unchecked(l, tau);
                cross += m * table.values[l][k];
                norm += m * m;
            }
        }
        let amp = if options.profile_amplitude && norm > 0.0 { cross / norm } else { 1.0 };
        let rss = (0..=l_max)
            .flat_map(|l| table.lags.iter().enumerate().map(move |(k, &tau)| (l, k, tau)))
            .map(|(l, k, tau)| {
                let d = table.values[l][k] - amp * model.coef_cov_unchecked(l, tau);
                d * d
            })
            .sum();
        (rss, amp)
    };
    let lo = options.log10_min * std::f64::consts::LN_10;
    let hi = options.log10_max * std::f64::consts::LN_10;
    let step = (hi - lo) / (options.scan_points - 1) as f64;
    let scan: Vec<f64> = (0..options.scan_points).map(|i| objective(lo + i as f64 * step).0).collect();
    if let Some(bad) = scan.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("fit objective {bad}")));
    }
    let best = (0..scan.len()).min_by(|&a, &b| scan[a].total_cmp(&scan[b])).unwrap();
    let mut a = lo + best.saturating_sub(1) as f64 * step;
    let mut b = lo + (best + 1).min(scan.len() - 1) as f64 * step;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c).0, objective(d).0);
    while (b - a).abs() > options.tolerance {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d).0;
        }
    }
    let x = 0.5 * (a + b);
    let (residual, amplitude) = objective(x);
    if !residual.is_finite() {
        return Err(Error::NonFinite("fit residual".into()));
    }
    Ok(ThetaFit { theta: x.exp(), residual, amplitude })
}
