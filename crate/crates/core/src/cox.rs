//! Spatiotemporal Cox patterns on `[t0, t1] × S²` and counting primitives.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::field::{FieldRealization, FieldSampler};
use crate::manifold::{sample_uniform_sphere, SpherePoint, SPHERE_AREA};
use crate::rng::stream_rng;

/// Default cap on the expected number of thinning candidates.
pub const DEFAULT_CANDIDATE_CAP: f64 = 1e7;

/// Observation window: a time interval times the whole sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
}

impl Window {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::InvalidParameter(format!("window must satisfy t0 < t1, got [{t0}, {t1}]")));
        }
        Ok(Self { t0, t1 })
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }

    /// `|T| · ν(S²)`.
    pub fn volume(&self) -> f64 {
        self.length() * SPHERE_AREA
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub z: SpherePoint,
}

/// Events sorted by time inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    events: Vec<Event>,
    window: Window,
}

impl PointPattern {
    /// Sorts `events` by time; rejects events outside the window.
    pub fn new(mut events: Vec<Event>, window: Window) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| !window.contains(e.t)) {
            return Err(Error::TimeOutsideWindow { t: e.t, t0: window.t0, t1: window.t1 });
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self { events, window })
    }

    pub fn empty(window: Window) -> Self {
        Self { events: Vec::new(), window }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `n / (|T| ν(S²))`.
    pub fn intensity_estimate(&self) -> f64 {
        self.len() as f64 / self.window.volume()
    }

    /// Writes `t,x,y,z` rows and a JSON sidecar (same stem) with the window
    /// and any extra metadata.
    pub fn write_csv(&self, path: &Path, meta: &PatternMeta) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "t,x,y,z")?;
        for e in &self.events {
            let [x, y, z] = e.z.coords();
            writeln!(out, "{},{x},{y},{z}", e.t)?;
        }
        fs::write(path, out)?;
        let sidecar = PatternSidecar { window: self.window, count: self.len(), meta: meta.clone() };
        fs::write(path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a pattern written by [`Self::write_csv`].
    pub fn read_csv(path: &Path) -> Result<(Self, PatternMeta)> {
        let sidecar: PatternSidecar =
            serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
        let mut events = Vec::new();
        for record in csv::Reader::from_path(path)?.deserialize() {
            let (t, x, y, z): (f64, f64, f64, f64) = record?;
            events.push(Event { t, z: SpherePoint::new(x, y, z)? });
        }
        if events.len() != sidecar.count {
            return Err(Error::Format(format!(
                "pattern file has {} events, sidecar says {}",
                events.len(),
                sidecar.count
            )));
        }
        Ok((Self::new(events, sidecar.window)?, sidecar.meta))
    }
}

/// Provenance carried alongside a pattern file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<CovarianceModel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternSidecar {
    window: Window,
    count: usize,
    #[serde(flatten)]
    meta: PatternMeta,
}

/// Thinning sampler; candidates are capped at `cap` in expectation.
pub fn sample_pattern_capped<R: Rng + ?Sized>(
    f: &FieldRealization,
    rng: &mut R,
    cap: f64,
) -> Result<PointPattern> {
    let grid = f.grid();
    let window = Window::new(grid.t0(), grid.t1())?;
    let lambda_star = f.field_max_bound();
    let expected = lambda_star * window.volume();
    if !expected.is_finite() {
        return Err(Error::NonFinite("thinning bound".into()));
    }
    if expected > cap {
        return Err(Error::TooManyCandidates { expected, cap });
    }
    let n = if expected > 0.0 {
        Poisson::new(expected).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut events = Vec::new();
    for _ in 0..n {
        let t = rng.random_range(window.t0..=window.t1);
        let z = sample_uniform_sphere(rng);
        let accept: f64 = rng.random();
        if accept * lambda_star < f.eval_intensity(t, &z)? {
            events.push(Event { t, z });
        }
    }
    PointPattern::new(events, window)
}

pub fn sample_pattern<R: Rng + ?Sized>(f: &FieldRealization, rng: &mut R) -> Result<PointPattern> {
    sample_pattern_capped(f, rng, DEFAULT_CANDIDATE_CAP)
}

/// Field and pattern for replicate `index` under `seed`: the field comes from
/// stream `2·index`, the thinning from stream `2·index + 1`.
pub fn simulate_replicate(
    sampler: &FieldSampler,
    seed: u64,
    index: u64,
) -> Result<(FieldRealization, PointPattern)> {
    let field = sampler.sample_with(&mut stream_rng(seed, 2 * index));
    let pattern = sample_pattern(&field, &mut stream_rng(seed, 2 * index + 1))?;
    Ok((field, pattern))
}

/// Events within geodesic distance `theta` of `center` with time in `[a, b]`.
pub fn count_in(p: &PointPattern, center: &SpherePoint, theta: f64, interval: (f64, f64)) -> usize {
    p.events
        .iter()
        .filter(|e| e.t >= interval.0 && e.t <= interval.1)
        .filter(|e| theta >= std::f64::consts::PI || e.z.distance(center) <= theta)
        .count()
}

/// Ordered-pair counts: entry `[i][j]` is the number of ordered pairs of
/// distinct events with geodesic distance `≤ thetas[i]` and time gap `≤ ts[j]`.
pub fn pairwise_histogram(p: &PointPattern, thetas: &[f64], ts: &[f64]) -> Vec<Vec<u64>> {
    let (nt, ns) = (thetas.len(), ts.len());
    let ev = &p.events;
    let cells = |i: usize| {
        let mut h = vec![0u64; nt * ns];
        for e in &ev[i + 1..] {
            let d = ev[i].z.distance(&e.z);
            let gap = (e.t - ev[i].t).abs();
            let a = thetas.partition_point(|&x| x < d);
            let b = ts.partition_point(|&x| x < gap);
            if a < nt && b < ns {
                h[a * ns + b] += 2;
            }
        }
        h
    };
    let bins = (0..ev.len()).into_par_iter().map(cells).reduce(
        || vec![0u64; nt * ns],
        |mut acc, h| {
            acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
            acc
        },
    );
    let mut out = vec![vec![0u64; ns]; nt];
    for i in 0..nt {
        for j in 0..ns {
            let mut v = bins[i * ns + j];
            if i > 0 {
                v += out[i - 1][j];
            }
            if j > 0 {
                v += out[i][j - 1];
            }
            if i > 0 && j > 0 {
                v -= out[i - 1][j - 1];
            }
            out[i][j] = v;
        }
    }
    out
}
