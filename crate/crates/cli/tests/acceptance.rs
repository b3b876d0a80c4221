//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --release -p spherecox-cli --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;
use spherecox::cox::simulate_replicate;
use spherecox::distances::distance_profile;
use spherecox::fit::{empirical_coef_cov, fit_theta, DEFAULT_BINS, DEFAULT_LAG_STEPS};
use spherecox::manifold::sample_uniform_sphere;
use spherecox::moments::{
    intensity, pair_correlation, per_scale_density, product_density, scale_pair_correlation,
};
use spherecox::rng::stream_rng;
use spherecox::summaries::{
    baseline_grid, k_empirical_with, k_model_with, k_null, k_scale, DEFAULT_THETAS, DEFAULT_TS,
};
use spherecox::{
    Baseline, CoefCovTable, Configuration, CovarianceModel, FieldSampler, FitOptions, GriddedField,
    IntegrationSpec, IntensityNorm, KEstimator, SphereLattice, TimeGrid,
};

const REGIMES: [f64; 3] = [0.01, 1.0, 100.0];
const T1: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn model(theta: f64) -> CovarianceModel {
    CovarianceModel::new(theta, 5).unwrap()
}

fn shannon_nullity() -> Outcome {
    let spec = IntegrationSpec::monte_carlo(1, 1000, 1);
    let qs: Vec<usize> = (0..=30).collect();
    let mut worst = 0.0f64;
    for theta in REGIMES {
        let m = model(theta).extended_to(30).unwrap();
        for r in distance_profile(&m, &qs, &[], &spec).unwrap() {
            worst = worst.max(r.shannon.value.abs());
        }
    }
    outcome(worst == 0.0, format!("max |D_q^S(n=1)| over 93 cases = {worst:e}"))
}

fn second_order_profile() -> Outcome {
    // Seed fixed before the run; N from the detection-limit analysis.
    let spec = IntegrationSpec { chunk_size: 1 << 16, ..IntegrationSpec::monte_carlo(2, 10_000_000, 2024) };
    let qs: Vec<usize> = (0..=30).collect();
    let rows = distance_profile(&model(1.0).extended_to(30).unwrap(), &qs, &[], &spec).unwrap();
    let v: Vec<f64> = rows.iter().map(|r| r.shannon.value).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.shannon.std_error).collect();
    let z: Vec<f64> = v.iter().zip(&s).map(|(v, s)| v / s).collect();
    let low = (0..=4).all(|q| z[q] > 3.0);
    let high = (5..=30).all(|q| z[q].abs() < 3.0);
    let argmax = (0..=30).fold(0, |b, q| if v[q] > v[b] { q } else { b });
    let monotone = (1..5).all(|q| v[q + 1] <= v[q] + (s[q].powi(2) + s[q + 1].powi(2)).sqrt());
    let max_high = (5..=30).map(|q| z[q].abs()).fold(0.0, f64::max);
    outcome(
        low && high && argmax <= 1 && monotone,
        format!(
            "z(q=0..4) = [{}], max |z| over q=5..30 = {max_high:.2}, argmax q = {argmax}, \
             monotone 1..5 = {monotone}",
            z[..5].iter().map(|z| format!("{z:.1}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn third_order_profile() -> Outcome {
    let spec = IntegrationSpec::trapezoid(3, 12);
    let qs: Vec<usize> = (0..=30).collect();
    let rows = distance_profile(&model(1.0).extended_to(30).unwrap(), &qs, &[], &spec).unwrap();
    let v: Vec<f64> = rows.iter().map(|r| r.shannon.value).collect();
    let positive = (0..=4).all(|q| v[q] > 0.0);
    let ratio = (5..=30).map(|q| v[q].abs() / v[0]).fold(0.0, f64::max);
    outcome(
        positive && ratio < 0.1,
        format!(
            "D(q=0..4) = [{}], max |D_q|/D_0 over q=5..30 = {ratio:.2e}",
            v[..5].iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn clustering_index_ordering() -> Outcome {
    // Common random numbers across the three regimes.
    let spec = IntegrationSpec { chunk_size: 1 << 16, ..IntegrationSpec::monte_carlo(2, 100_000_000, 77) };
    let hs = [1.5, 2.0];
    let per_theta: Vec<_> =
        REGIMES.iter().map(|&th| distance_profile(&model(th), &[0, 1, 2], &hs, &spec).unwrap()).collect();
    let mut pass = true;
    let mut min_z = f64::INFINITY;
    for qi in 0..3 {
        for hi in 0..2 {
            let ci: Vec<(f64, f64)> = per_theta
                .iter()
                .map(|rows| {
                    let e = rows[qi].renyi[hi];
                    let c = e.clustering_index();
                    (c, c * e.std_error)
                })
                .collect();
            for w in ci.windows(2) {
                let z = (w[0].0 - w[1].0) / (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
                min_z = min_z.min(z);
                pass &= z > 3.0;
            }
        }
    }
    outcome(pass, format!("smallest ordered gap over q in 0..2, h in (1.5, 2) = {min_z:.2} combined sigma"))
}

fn renyi_shannon_limit() -> Outcome {
    let spec = IntegrationSpec::monte_carlo(2, 1_000_000, 5);
    let rows = distance_profile(&model(1.0), &[0, 3], &[1.001], &spec).unwrap();
    let mut worst = 0.0f64;
    for r in &rows {
        let rel = (r.renyi[0].value - r.shannon.value).abs() / r.shannon.value.abs().max(1e-6);
        worst = worst.max(rel);
    }
    outcome(worst < 0.02, format!("max relative gap over q in (0, 3) = {worst:.2e}"))
}

fn k_null_consistency() -> Outcome {
    let zero = CovarianceModel::with_options(1.0, 5, 0.0, Default::default()).unwrap();
    let spec = IntegrationSpec { samples: 100_000, seed: 2024, ..IntegrationSpec::default() };
    let g = k_model_with(&zero, &DEFAULT_THETAS, &DEFAULT_TS, &spec, KEstimator::Direct).unwrap();
    let mut fails = 0;
    let mut worst = 0.0f64;
    for (i, &th) in DEFAULT_THETAS.iter().enumerate() {
        for (j, &t) in DEFAULT_TS.iter().enumerate() {
            let null = k_null(t, th, T1);
            let d = (g.values[i][j] - null).abs();
            let s = g.std_errors[i][j];
            // The rounding allowance matters only at nodes where s = 0.
            if d > 3.0 * s + 1e-9 * null.abs() {
                fails += 1;
            }
            if s > 0.0 {
                worst = worst.max(d / s);
            }
        }
    }
    outcome(fails == 0, format!("{fails} of 225 nodes outside 3 sigma, max |z| = {worst:.2}"))
}

fn k_scale_family() -> Outcome {
    let spec =
        IntegrationSpec { samples: 10_000_000, seed: 11, chunk_size: 1 << 16, ..IntegrationSpec::default() };
    let null = baseline_grid(Baseline::SelfConsistent, &DEFAULT_THETAS, &DEFAULT_TS, T1);
    let qs = [1, 7, 13, 19, 25];
    let mut pass = true;
    let mut lines = Vec::new();
    let mut q1 = Vec::new();
    for theta in REGIMES {
        let m = model(theta).extended_to(25).unwrap();
        let maxima: Vec<f64> = qs
            .iter()
            .map(|&q| {
                let g = k_scale(&m, q, &DEFAULT_THETAS, &DEFAULT_TS, &spec, KEstimator::NullControlVariate)
                    .unwrap();
                g.difference(&null).unwrap().max_value()
            })
            .collect();
        pass &= maxima.windows(2).all(|w| w[1] < w[0]) && maxima[4] < 1.0;
        q1.push(maxima[0]);
        lines.push(format!(
            "theta={theta}: [{}]",
            maxima.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ));
    }
    pass &= q1[0] > q1[2];
    outcome(pass, format!("max(K_q - null) for q=1,7,13,19,25; {}", lines.join("; ")))
}

fn lgcp_reproduction() -> Outcome {
    let m = model(1.0);
    let rho = intensity(&m);
    let sampler = FieldSampler::new(m, TimeGrid::new(0.0, T1, 100).unwrap()).unwrap();
    let n_rep = 200;
    let (nt, ns) = (DEFAULT_THETAS.len(), DEFAULT_TS.len());
    let mut s1 = vec![vec![0.0; ns]; nt];
    let mut s2 = vec![vec![0.0; ns]; nt];
    let mut counts = Vec::with_capacity(n_rep);
    for i in 0..n_rep {
        let (_, p) = simulate_replicate(&sampler, 2024, i as u64).unwrap();
        counts.push(p.len() as f64);
        let k = k_empirical_with(&p, &DEFAULT_THETAS, &DEFAULT_TS, IntensityNorm::Known(rho)).unwrap();
        for a in 0..nt {
            for b in 0..ns {
                s1[a][b] += k.values[a][b];
                s2[a][b] += k.values[a][b].powi(2);
            }
        }
    }
    let spec =
        IntegrationSpec { samples: 10_000_000, seed: 9, chunk_size: 1 << 16, ..IntegrationSpec::default() };
    let km = k_model_with(&m, &DEFAULT_THETAS, &DEFAULT_TS, &spec, KEstimator::NullControlVariate).unwrap();
    let n = n_rep as f64;
    let mut fails = 0;
    let mut worst = 0.0f64;
    for a in 0..nt {
        for b in 0..ns {
            let mean = s1[a][b] / n;
            let var = (s2[a][b] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let sigma = (var / n + km.std_errors[a][b].powi(2)).sqrt();
            let d = (mean - km.values[a][b]).abs();
            if d > 4.0 * sigma {
                fails += 1;
            }
            if sigma > 0.0 {
                worst = worst.max(d / sigma);
            }
        }
    }
    let mean_count = counts.iter().sum::<f64>() / n;
    let sd = (counts.iter().map(|c| (c - mean_count).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let expected = rho * 4.0 * std::f64::consts::PI * T1;
    let zc = (mean_count - expected) / (sd / n.sqrt());
    outcome(
        fails == 0 && zc.abs() < 4.0,
        format!(
            "{fails} of 225 nodes outside 4 sigma (max |z| = {worst:.2}); mean count {mean_count:.2} \
             vs {expected:.2} (z = {zc:.2})"
        ),
    )
}

fn moment_identities() -> Outcome {
    let mut rng = stream_rng(31, 0);
    let m = model(1.0);
    let mut worst_factor = 0.0f64;
    for n in 1..=3 {
        for _ in 0..100 {
            let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..T1)).collect();
            let locs = (0..n).map(|_| sample_uniform_sphere(&mut rng)).collect();
            let c = Configuration::new(times, locs).unwrap();
            let prod: f64 = (0..=5).map(|q| per_scale_density(&m, q, &c).unwrap()).product();
            let full = product_density(&m, &c);
            worst_factor = worst_factor.max((prod - full).abs() / full);
        }
    }
    let rho = intensity(&m);
    let mut worst_pair = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..100 {
        let (t, s) = (rng.random_range(0.0..T1), rng.random_range(0.0..T1));
        let (y, z) = (sample_uniform_sphere(&mut rng), sample_uniform_sphere(&mut rng));
        let c = Configuration::new(vec![t, s], vec![y, z]).unwrap();
        let u = y.cos_distance(&z);
        let g = pair_correlation(&m, t - s, u).unwrap();
        worst_pair = worst_pair.max((g - product_density(&m, &c) / (rho * rho)).abs() / g);
        let factors: f64 = (0..=5).map(|q| scale_pair_correlation(&m, q, t - s, u).unwrap()).product();
        worst_scale = worst_scale.max((factors - g).abs() / g);
    }

    // Field moments at grid-node times: E[e^X] = ρ and E[e^{X1+X2}] = ρ² g.
    let sampler = FieldSampler::new(m, TimeGrid::new(0.0, T1, 11).unwrap()).unwrap();
    let y = spherecox::SpherePoint::from_spherical(0.7, 0.3);
    let z = spherecox::SpherePoint::from_spherical(1.1, 2.0);
    let n_fields = 50_000;
    let (mut a1, mut a2, mut b1, mut b2, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n_fields {
        let f = sampler.sample_with(&mut stream_rng(4242, i));
        let x1 = f.eval_field(0.0, &y).unwrap();
        let x2 = f.eval_field(1.0, &z).unwrap();
        let (e, p) = (x1.exp(), (x1 + x2).exp());
        a1 += e;
        a2 += e * e;
        b1 += p;
        b2 += p * p;
        c1 += x1 * x1;
        c2 += x1.powi(4);
    }
    let n = n_fields as f64;
    let z_of = |s1: f64, s2: f64, target: f64| {
        let mean = s1 / n;
        (mean - target) / ((s2 / n - mean * mean) / n).sqrt()
    };
    let z_mean = z_of(a1, a2, rho);
    let z_pair = z_of(b1, b2, rho * rho * pair_correlation(&m, -1.0, y.cos_distance(&z)).unwrap());
    let z_var = z_of(c1, c2, m.spacetime_kernel(0.0, 1.0));
    let pass = worst_factor < 1e-10
        && worst_pair < 1e-10
        && worst_scale < 1e-10
        && [z_mean, z_pair, z_var].iter().all(|z| z.abs() < 4.0);
    outcome(
        pass,
        format!(
            "factorization {worst_factor:.1e}, pair correlation {worst_pair:.1e}, scale factors \
             {worst_scale:.1e}; field MC z: E[e^X] {z_mean:.2}, E[e^(X1+X2)] {z_pair:.2}, E[X^2] {z_var:.2}"
        ),
    )
}

fn fit_round_trip() -> Outcome {
    let grid = TimeGrid::new(0.0, T1, 100).unwrap();
    let lattice = SphereLattice::new(8, 16).unwrap();
    let options = FitOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, theta) in REGIMES.into_iter().enumerate() {
        let m = model(theta);
        let sampler = FieldSampler::new(m, grid).unwrap();
        let data: Vec<GriddedField> = (0..500u64)
            .map(|i| {
                let f = sampler.sample_with(&mut stream_rng(500 + r as u64, i));
                GriddedField::from_realization(&f, lattice)
            })
            .collect();
        let table = empirical_coef_cov(&data, 5, &DEFAULT_LAG_STEPS, DEFAULT_BINS, &m).unwrap();
        let noisy = fit_theta(&table, 5, &options).unwrap().theta;
        let exact = fit_theta(&CoefCovTable::from_model(&m, 5, &table.lags), 5, &options).unwrap().theta;
        let fixed = fit_theta(
            &CoefCovTable::from_model(&m, 5, &table.lags),
            5,
            &FitOptions { profile_amplitude: false, ..options },
        )
        .unwrap()
        .theta;
        let ratio = noisy / theta;
        let rel = ((exact - theta) / theta).abs().max(((fixed - theta) / theta).abs());
        pass &= (0.5..=2.0).contains(&ratio) && rel < 1e-6;
        parts.push(format!("theta*={theta}: noisy {noisy:.4}, noise-free rel err {rel:.1e}"));
    }
    outcome(pass, parts.join("; "))
}

fn strip_run_time(v: &mut Value) {
    if let Some(run) = v.get_mut("run").and_then(Value::as_object_mut) {
        run.remove("wall_time_s");
    }
}

/// Runs `command` from `config`, then again from the first sidecar it wrote,
/// and compares every file.
fn rerun_matches(work: &Path, command: &str, config: &str) -> Result<usize, String> {
    let cfg = work.join(format!("{command}.toml"));
    fs::write(&cfg, config).map_err(|e| e.to_string())?;
    let (a, b) = (work.join(format!("{command}_a")), work.join(format!("{command}_b")));
    let run = |config: &Path, out: &Path| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_spherecox"))
            .arg(command)
            .arg("--config")
            .arg(config)
            .arg("--out-dir")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&o.stderr).into_owned())
        }
    };
    run(&cfg, &a)?;
    let mut names: Vec<String> = fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let sidecar = names.iter().find(|n| n.ends_with(".json")).ok_or("no sidecar")?;
    run(&a.join(sidecar), &b)?;
    for n in &names {
        let (x, y) = (fs::read(a.join(n)), fs::read(b.join(n)));
        let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| format!("{n}: {e}"))?);
        let same = if n.ends_with(".json") {
            let mut x: Value = serde_json::from_slice(&x).map_err(|e| e.to_string())?;
            let mut y: Value = serde_json::from_slice(&y).map_err(|e| e.to_string())?;
            strip_run_time(&mut x);
            strip_run_time(&mut y);
            x == y
        } else {
            x == y
        };
        if !same {
            return Err(format!("{command}: {n} differs"));
        }
    }
    Ok(names.len())
}

fn cli_determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let pattern = w.join("simulate_a").join("pattern_0000.csv");
    let fields: Vec<String> = (0..50)
        .map(|i| format!("{:?}", w.join("simulate_a").join(format!("field_{i:04}.csv")).to_str().unwrap()))
        .collect();
    let runs = [
        ("simulate", "seed = 3\n[simulate]\nreplicates = 50\n".to_string()),
        ("distances", "seed = 3\n[distances]\nsamples = 20000\n".to_string()),
        (
            "kfun",
            format!(
                "seed = 3\n[kfun]\nsamples = 20000\ninclude_model = true\npattern = {:?}\n",
                pattern.to_str().unwrap()
            ),
        ),
        ("fit", format!("seed = 3\n[fit]\ninputs = [{}]\n", fields.join(", "))),
        (
            "classify",
            format!(
                "[classify]\ndistances = {:?}\nkgrids = [{:?}]\n",
                w.join("distances_a/distances.json").to_str().unwrap(),
                w.join("kfun_a/kfun_q01.json").to_str().unwrap()
            ),
        ),
    ];
    let mut parts = Vec::new();
    for (command, config) in &runs {
        match rerun_matches(w, command, config) {
            Ok(n) => parts.push(format!("{command} {n} files identical")),
            Err(e) => return outcome(false, e),
        }
    }
    outcome(true, parts.join(", "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Shannon n=1 nullity", shannon_nullity),
        ("second-order scale profile", second_order_profile),
        ("third-order scale profile", third_order_profile),
        ("Renyi clustering index ordering", clustering_index_ordering),
        ("Renyi to Shannon limit", renyi_shannon_limit),
        ("K null consistency", k_null_consistency),
        ("per-scale K family shape", k_scale_family),
        ("LGCP end-to-end K reproduction", lgcp_reproduction),
        ("moment identities", moment_identities),
        ("fit round trip", fit_round_trip),
        ("CLI rerun determinism", cli_determinism),
    ];
    let mut failed = 0;
    let total = Instant::now();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let elapsed: Duration = t.elapsed();
        println!(
            "{} [{:>2}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            elapsed.as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        total.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
