use rand::Rng;
use spherecox::manifold::sample_uniform_sphere;
use spherecox::moments::*;
use spherecox::rng::stream_rng;
use spherecox::*;

fn random_config(rng: &mut impl Rng, n: usize) -> Configuration {
    let times = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let locs = (0..n).map(|_| sample_uniform_sphere(rng)).collect();
    Configuration::new(times, locs).unwrap()
}

#[test]
fn per_scale_densities_factor_the_global_density() {
    let mut rng = stream_rng(1, 0);
    for theta in [0.01, 1.0, 100.0] {
        let m = CovarianceModel::new(theta, 5).unwrap();
        for n in 1..=3 {
            for _ in 0..100 {
                let c = random_config(&mut rng, n);
                let logs: f64 = (0..=5).map(|q| log_per_scale_density(&m, q, &c).unwrap()).sum();
                assert!((logs - log_product_density(&m, &c)).abs() < 1e-10);
                let prod: f64 = (0..=5).map(|q| per_scale_density(&m, q, &c).unwrap()).product();
                let full = product_density(&m, &c);
                assert!((prod - full).abs() < 1e-10 * full);
            }
        }
    }
}

#[test]
fn pair_density_is_the_lognormal_moment() {
    // E[e^{X1+X2}] = exp((Var X1 + Var X2 + 2 Cov)/2) from the kernel alone.
    let mut rng = stream_rng(2, 0);
    let m = CovarianceModel::new(1.0, 5).unwrap();
    let var = m.spacetime_kernel(0.0, 1.0);
    for _ in 0..20 {
        let c = random_config(&mut rng, 2);
        let (t, z) = (c.times(), c.locations());
        let cov = m.spacetime_kernel(t[0] - t[1], z[0].cos_distance(&z[1]));
        let oracle = ((var + var + 2.0 * cov) / 2.0).exp();
        assert!((product_density(&m, &c) - oracle).abs() < 1e-10 * oracle);
        let g = pair_correlation(&m, t[0] - t[1], z[0].cos_distance(&z[1])).unwrap();
        let rho = intensity(&m);
        assert!((g - product_density(&m, &c) / (rho * rho)).abs() < 1e-10 * g);
    }
}

#[test]
fn intensity_products_match_product_density_by_simulation() {
    let m = CovarianceModel::new(1.0, 5).unwrap();
    // Probe times on grid nodes (integers), so no interpolation is involved.
    let sampler = FieldSampler::new(m, TimeGrid::new(0.0, 10.0, 11).unwrap()).unwrap();
    let mut rng = stream_rng(3, 0);
    let probes: Vec<_> = (0..5)
        .map(|_| {
            let t1 = rng.random_range(0..11) as f64;
            let t2 = rng.random_range(0..11) as f64;
            Configuration::new(
                vec![t1, t2],
                vec![sample_uniform_sphere(&mut rng), sample_uniform_sphere(&mut rng)],
            )
            .unwrap()
        })
        .collect();
    let n = 20_000;
    let mut s1 = [0.0; 5];
    let mut s2 = [0.0; 5];
    for i in 0..n {
        let f = sampler.sample_with(&mut stream_rng(4, i));
        for (k, c) in probes.iter().enumerate() {
            let (t, z) = (c.times(), c.locations());
            let v = f.eval_intensity(t[0], &z[0]).unwrap() * f.eval_intensity(t[1], &z[1]).unwrap();
            s1[k] += v;
            s2[k] += v * v;
        }
    }
    let n = n as f64;
    for (k, c) in probes.iter().enumerate() {
        let mean = s1[k] / n;
        let se = ((s2[k] / n - mean * mean) / n).sqrt();
        let target = product_density(&m, c);
        assert!((mean - target).abs() < 4.0 * se, "probe {k}: {mean} vs {target} ± {se}");
    }
}

#[test]
fn documented_values() {
    let m = CovarianceModel::new(1.0, 5).unwrap();
    let r0 = m.spacetime_kernel(0.0, 1.0);
    assert!((r0 - 0.135_624_3).abs() < 1e-7);
    let c = Configuration::new(vec![2.0], vec![SpherePoint::north_pole()]).unwrap();
    assert!((log_product_density(&m, &c) - r0 / 2.0).abs() < 1e-15);
    let z = SpherePoint::from_spherical(0.4, 1.0);
    let c = Configuration::new(vec![1.0, 1.0], vec![z, z]).unwrap();
    let rho = intensity(&m);
    assert!((log_product_density(&m, &c) - (2.0 * rho.ln() + r0)).abs() < 1e-14);
    assert!((scale_intensity(&m, 0).unwrap() - 1.020_093_6).abs() < 1e-7);
}
