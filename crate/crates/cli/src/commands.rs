use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;
use spherecox::cox::{sample_pattern_capped, PatternMeta};
use spherecox::distances::classify_scale;
use spherecox::fit::empirical_coef_cov;
use spherecox::rng::stream_rng;
use spherecox::summaries::{
    baseline_grid, classify_from_k, g_empirical, k_empirical_with, k_model_with, k_scale,
};
use spherecox::{
    Baseline, CovarianceModel, DistanceTable, FieldRealization, FieldSampler, FitOptions, GriddedField,
    IntegrationSpec, IntensityNorm, KGrid, PointPattern, SphereLattice, TimeGrid,
};

use crate::config::Config;
use crate::error::CliError;
use crate::output::Staging;

/// Outcome of a command: the files it wrote.
pub type Written = Vec<PathBuf>;

fn grid(config: &Config) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::new(config.window.t0, config.window.t1, config.window.nodes)?)
}

/// The configured model, extended when `max_degree` lies above its truncation.
fn model_up_to(config: &Config, max_degree: usize) -> Result<CovarianceModel, CliError> {
    let model = config.model()?;
    if max_degree > model.truncation() {
        Ok(model.extended_to(max_degree)?)
    } else {
        Ok(model)
    }
}

pub fn simulate(config: &Config, out_dir: &Path) -> Result<Written, CliError> {
    let model = config.model()?;
    let sampler = FieldSampler::new(model, grid(config)?)?;
    let seed = config.seed;
    let cap = config.simulate.candidate_cap;
    // Same streams as `cox::simulate_replicate`: field 2i, thinning 2i+1.
    let replicates: Vec<(FieldRealization, PointPattern)> = (0..config.simulate.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let f = sampler.sample_with(&mut stream_rng(seed, 2 * i));
            let p = sample_pattern_capped(&f, &mut stream_rng(seed, 2 * i + 1), cap)?;
            Ok((f, p))
        })
        .collect::<Result<_, spherecox::Error>>()?;
    let mut staging = Staging::new(out_dir)?;
    let meta = PatternMeta { seed: Some(seed), model: Some(model) };
    for (i, (f, p)) in replicates.iter().enumerate() {
        let f =
            FieldRealization::from_parts(*f.model(), *f.grid(), f.coeffs().to_vec(), f.pole(), Some(seed))?;
        let field = format!("field_{i:04}");
        f.write_dump(&staging.path(&format!("{field}.csv")))?;
        staging.register(&field);
        let pattern = format!("pattern_{i:04}");
        p.write_csv(&staging.path(&format!("{pattern}.csv")), &meta)?;
        staging.register(&pattern);
    }
    staging.commit(
        "simulate",
        config,
        json!({"seed": seed, "field_stream": "2*replicate", "thinning_stream": "2*replicate+1"}),
    )
}

fn distance_table(config: &Config) -> Result<DistanceTable, CliError> {
    let d = &config.distances;
    let max_q = d.scales.iter().copied().max().unwrap_or(0);
    let model = model_up_to(config, max_q)?;
    let spec = IntegrationSpec {
        method: d.method,
        samples: d.samples,
        nodes_per_axis: d.nodes_per_axis,
        seed: config.seed,
        n: d.n,
        t0: config.window.t0,
        t1: config.window.t1,
        chunk_size: d.chunk_size,
    };
    let mut table = DistanceTable::compute(&model, &d.scales, &d.orders, &spec)?;
    if d.smooth_degree > 0 && d.scales.len() > d.smooth_degree {
        table.smooth(d.smooth_degree)?;
    }
    Ok(table)
}

pub fn distances(config: &Config, out_dir: &Path) -> Result<Written, CliError> {
    let table = distance_table(config)?;
    let mut staging = Staging::new(out_dir)?;
    staging.write("distances", &table.to_csv(), &table)?;
    staging.commit("distances", config, json!({"seed": config.seed}))
}

fn baseline_note(baseline: Baseline) -> &'static str {
    match baseline {
        Baseline::SelfConsistent => {
            "null is the g=1 value 2*pi*(1-cos theta)*(2t-t^2/T) of the model integral; \
             the classical 2*pi*t*(1-cos theta) differs from it"
        }
        Baseline::Classical => {
            "null is the classical 2*pi*t*(1-cos theta); the g=1 value of the model \
             integral is 2*pi*(1-cos theta)*(2t-t^2/T), so differences carry the gap"
        }
    }
}

pub fn kfun(config: &Config, out_dir: &Path) -> Result<Written, CliError> {
    let k = &config.kfun;
    let len = config.window.t1 - config.window.t0;
    let null = baseline_grid(k.baseline, &k.thetas, &k.ts, len);
    let spec = IntegrationSpec {
        samples: k.samples,
        seed: config.seed,
        t0: config.window.t0,
        t1: config.window.t1,
        chunk_size: k.chunk_size,
        ..IntegrationSpec::default()
    };
    let max_q = k.scales.iter().copied().max().unwrap_or(0);
    let model = model_up_to(config, max_q)?;

    // (stem, label, grid) per output, in a fixed order.
    let mut grids: Vec<(String, String, KGrid)> = Vec::new();
    for &q in &k.scales {
        let g = k_scale(&model, q, &k.thetas, &k.ts, &spec, k.estimator)?;
        grids.push((format!("kfun_q{q:02}"), format!("q={q}"), g));
    }
    if k.include_model {
        let g = k_model_with(&config.model()?, &k.thetas, &k.ts, &spec, k.estimator)?;
        grids.push(("kfun_model".into(), "model".into(), g));
    }
    let mut extra: Vec<(String, KGrid)> = Vec::new();
    if let Some(path) = &k.pattern {
        let (pattern, _) = PointPattern::read_csv(path)?;
        let norm = k.intensity.map_or(IntensityNorm::Estimated, IntensityNorm::Known);
        let g = k_empirical_with(&pattern, &k.thetas, &k.ts, norm)?;
        grids.push(("kfun_empirical".into(), "empirical".into(), g));
        extra.push(("gfun_empirical".into(), g_empirical(&pattern, &k.thetas, &k.ts)?));
    }

    let mut staging = Staging::new(out_dir)?;
    let mut labels = String::from("grid,label\n");
    for (stem, name, g) in &grids {
        let diff = g.difference(&null)?;
        let label = classify_from_k(g, &null, k.z, k.fraction)?;
        labels += &format!("{name},{label}\n");
        let meta = json!({
            "grid": g,
            "model": model,
            "name": name,
            "baseline": k.baseline,
            "baseline_note": baseline_note(k.baseline),
            "window_length": len,
            "estimator": k.estimator,
            "seed": config.seed,
            "label": label,
        });
        staging.write(stem, &g.to_csv(), &meta)?;
        let diff_meta = json!({"grid": diff, "name": name, "baseline": k.baseline, "seed": config.seed});
        staging.write(&stem.replacen("kfun", "kdiff", 1), &diff.to_csv(), &diff_meta)?;
    }
    for (stem, g) in &extra {
        staging.write(stem, &g.to_csv(), &json!({"grid": g}))?;
    }
    staging.write(
        "kfun_labels",
        &labels,
        &json!({"z": k.z, "fraction": k.fraction, "baseline": k.baseline}),
    )?;
    staging.write("kfun_baseline", &null.to_csv(), &json!({"grid": null, "baseline": k.baseline}))?;
    staging.commit("kfun", config, json!({"seed": config.seed}))
}

fn read_field_input(path: &Path, lattice: SphereLattice) -> Result<GriddedField, CliError> {
    let header = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?
        .lines()
        .next()
        .unwrap_or_default()
        .trim()
        .to_string();
    match header.as_str() {
        "l,t,value" => Ok(GriddedField::from_realization(&FieldRealization::read_dump(path)?, lattice)),
        "k,i,value" => Ok(GriddedField::read_csv(path)?),
        other => Err(CliError::Config(format!("{}: unrecognised header {other:?}", path.display()))),
    }
}

pub fn fit(config: &Config, out_dir: &Path) -> Result<Written, CliError> {
    let f = &config.fit;
    let lattice = SphereLattice::new(f.n_lat, f.n_lon)?;
    let model = config.model()?;
    let data: Vec<GriddedField> = if f.inputs.is_empty() {
        if f.simulate_replicates == 0 {
            return Err(CliError::Config("fit needs `inputs` or a positive `simulate_replicates`".into()));
        }
        let sampler = FieldSampler::new(model, grid(config)?)?;
        (0..f.simulate_replicates as u64)
            .into_par_iter()
            .map(|i| {
                let field = sampler.sample_with(&mut stream_rng(config.seed, 2 * i));
                GriddedField::from_realization(&field, lattice)
            })
            .collect()
    } else {
        f.inputs.iter().map(|p| read_field_input(p, lattice)).collect::<Result<_, _>>()?
    };
    let table = empirical_coef_cov(&data, f.l_max, &f.lag_steps, f.bins, &model)?;
    let options = FitOptions { profile_amplitude: f.profile_amplitude, ..FitOptions::default() };
    let fitted = spherecox::fit::fit_theta(&table, f.l_max, &options)?;

    let mut csv = String::from("l,lag,value\n");
    for (l, row) in table.values.iter().enumerate() {
        for (lag, v) in table.lags.iter().zip(row) {
            csv += &format!("{l},{lag},{v}\n");
        }
    }
    let report = json!({
        "theta_hat": fitted.theta,
        "residual": fitted.residual,
        "amplitude": fitted.amplitude,
        "bins": table.bins,
        "replicates": table.replicates,
        "lags": table.lags,
        "options": options,
        "seed": config.seed,
    });
    let mut staging = Staging::new(out_dir)?;
    staging.write("fit", &csv, &report)?;
    staging.commit("fit", config, json!({"seed": config.seed}))
}

/// The parts of a `kfun` sidecar needed to label a grid.
#[derive(Deserialize)]
struct KSidecar {
    grid: KGrid,
    name: String,
    baseline: Baseline,
    window_length: f64,
}

pub fn classify(config: &Config, out_dir: &Path) -> Result<Written, CliError> {
    let c = &config.classify;
    let mut csv = String::from("source,item,value,std_error,label\n");
    let table = match &c.distances {
        Some(path) => serde_json::from_str::<DistanceTable>(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None if c.kgrids.is_empty() => distance_table(config)?,
        None => DistanceTable {
            model: config.model()?,
            spec: IntegrationSpec::default(),
            orders: Vec::new(),
            rows: Vec::new(),
            smoothing: None,
        },
    };
    for r in &table.rows {
        let label = classify_scale(r.shannon.value, r.shannon.std_error, c.z);
        csv += &format!("distances,q={},{},{},{label}\n", r.q, r.shannon.value, r.shannon.std_error);
    }
    for path in &c.kgrids {
        let side: KSidecar = serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let null = baseline_grid(side.baseline, &side.grid.thetas, &side.grid.ts, side.window_length);
        let diff = side.grid.difference(&null)?;
        let max = diff.max_value();
        let label = classify_from_k(&side.grid, &null, c.z, c.fraction)?;
        csv += &format!("kfun,{},{max},,{label}\n", side.name);
    }
    let mut staging = Staging::new(out_dir)?;
    staging.write("classify", &csv, &json!({"z": c.z, "fraction": c.fraction}))?;
    staging.commit("classify", config, json!({"seed": config.seed}))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}
