//! Benchmark generator: moments, ground truth, consistency rates and the
//! replicate runner.

mod common;

use std::sync::Arc;

use wcca::estimation::{covariance_eigen, frechet_mean_curve, log_fields};
use wcca::simulation::{
    basis_fields, beta_mean_surfaces, draw_subject, error_metrics, generate_with_means, run_replicates, sample_scores,
    simulate_replicate, stream_rng, truncated_normal_variance, Case, GroundTruth, MeanSurfaces, NoiseScale, SimConfig,
    TuningSpec,
};
use wcca::tensor::field_inner;
use wcca::{CcaEstimate, GridConfig, Method, Tuning};

use common::*;

fn config(n: usize, sigma: f64, case: Case) -> SimConfig {
    let mut c = SimConfig::new(n, sigma, case);
    c.grid = GridConfig::new(32, 20, (0.0, 1.0)).unwrap();
    c
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn truncated_normal_moment_oracle() {
    // Independent evaluation of 1 - 2 phi(1) / (2 Phi(1) - 1) by Simpson's
    // rule on the standard normal density over [-1, 1]. The library value
    // goes through statrs' erf, accurate to a few parts in 1e11.
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let steps = 20_000;
    let h = 2.0 / steps as f64;
    let (mut mass, mut second) = (0.0, 0.0);
    for i in 0..=steps {
        let x = -1.0 + i as f64 * h;
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        mass += w * pdf(x);
        second += w * x * x * pdf(x);
    }
    let variance = second / mass;
    assert!((truncated_normal_variance() - variance).abs() < 1e-10);
    assert!((variance - 0.29112).abs() < 1e-5);
}

#[test]
fn score_variances_match_sampling() {
    for case in [Case::TruncatedNormal, Case::Uniform] {
        let c = config(100_000, 0.1, case);
        let scores = sample_scores(&c, 0);
        for k in [1usize, 2, 5] {
            let column: Vec<f64> = scores.xi.iter().map(|s| s[k - 1]).collect();
            let (mean, var) = mean_and_var(&column);
            let expect = c.score_variance(k);
            // Standard error of a sample variance is about var sqrt(2/n).
            assert!((var - expect).abs() < 5.0 * expect * (2.0f64 / 1e5).sqrt(), "{case:?} k={k}");
            assert!(mean.abs() < 5.0 * (expect / 1e5).sqrt());
            assert!(column.iter().all(|x| x.abs() <= SimConfig::score_bound(k)));
        }
    }
}

#[test]
fn analytic_rho_matches_sampling() {
    for case in [Case::TruncatedNormal, Case::Uniform] {
        for noise in [NoiseScale::Literal, NoiseScale::Calibrated] {
            for sigma in [0.1, 0.5] {
                let mut c = config(2, sigma, case);
                c.noise = noise;
                c.basis_size = 2;
                let means = MeanSurfaces::new(&c.grid).unwrap();
                let truth = GroundTruth::new(&c, &means.x, &means.y);
                let mut rng = stream_rng(99, 0, 0);
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for _ in 0..1_000_000 {
                    let (xi, eta) = draw_subject(&c, &mut rng);
                    a.push(xi[0] + xi[1]);
                    b.push(eta[1]);
                }
                let (ma, va) = mean_and_var(&a);
                let (mb, vb) = mean_and_var(&b);
                let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
                let sampled = cov / (va * vb).sqrt();
                assert!((sampled - truth.rho).abs() < 3e-3, "{case:?} {noise:?} {sigma}: {sampled} vs {}", truth.rho);
                if noise == NoiseScale::Calibrated {
                    assert!((truth.rho - truth.rho_closed_form).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_noise_truth_is_perfect() {
    for noise in [NoiseScale::Literal, NoiseScale::Calibrated] {
        let mut c = config(10, 0.0, Case::Uniform);
        c.noise = noise;
        let means = MeanSurfaces::new(&c.grid).unwrap();
        let truth = GroundTruth::new(&c, &means.x, &means.y);
        assert_eq!(truth.rho, 1.0);
        assert_eq!(truth.rho_closed_form, 1.0);
    }
}

#[test]
fn truth_fields_are_normalized_under_the_true_covariance() {
    let c = config(10, 0.3, Case::TruncatedNormal);
    let means = MeanSurfaces::new(&c.grid).unwrap();
    let truth = GroundTruth::new(&c, &means.x, &means.y);
    let quad = |f: &wcca::TangentField, lambda: &[f64], base: &Arc<wcca::DistributionCurve>| -> f64 {
        let phi = basis_fields(base, lambda.len());
        lambda.iter().zip(&phi).map(|(l, p)| l * field_inner(p, f).unwrap().powi(2)).sum()
    };
    assert!((quad(&truth.u_field, &truth.lambda_x, &means.x) - 1.0).abs() < 1e-10);
    assert!((quad(&truth.v_field, &truth.lambda_y, &means.y) - 1.0).abs() < 1e-10);
}

#[test]
fn mean_surfaces_follow_the_beta_family() {
    let grid = GridConfig::new(65, 11, (0.0, 1.0)).unwrap();
    let (mx, my) = beta_mean_surfaces(&grid).unwrap();
    // Level 33 of 65 is exactly one half.
    assert!((mx.frame_quantiles(0)[32] - beta_quantile(2.0, 3.0, 0.5)).abs() < 1e-4);
    assert!((mx.frame_quantiles(0)[32] - 0.38573).abs() < 1e-4);
    for (t, time) in grid.times().iter().enumerate() {
        let (ax, bx) = (2.0 + time, 3.0 - (time * time + time) / 2.0);
        let (ay, by) = (3.0 - time, 2.0 + (time * time + time) / 2.0);
        for (j, u) in grid.levels().iter().enumerate() {
            assert!((mx.frame_quantiles(t)[j] - beta_quantile(ax, bx, *u)).abs() < 1e-4);
            assert!((my.frame_quantiles(t)[j] - beta_quantile(ay, by, *u)).abs() < 1e-4);
        }
        assert!(mx.frame_quantiles(t).windows(2).all(|w| w[0] < w[1]));
        assert!(my.frame_quantiles(t).windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn basis_at_the_median_level() {
    let grid = GridConfig::new(65, 2, (0.0, 1.0)).unwrap();
    let (mx, _) = beta_mean_surfaces(&grid).unwrap();
    let phi = basis_fields(&Arc::new(mx), 1);
    assert!((phi[0].frame(1)[32] - std::f64::consts::SQRT_2).abs() < 1e-15);
}

#[test]
fn error_metric_edge_cases() {
    let c = config(10, 0.1, Case::TruncatedNormal);
    let means = MeanSurfaces::new(&c.grid).unwrap();
    let truth = GroundTruth::new(&c, &means.x, &means.y);
    let est = |u: wcca::TangentField, v: wcca::TangentField| CcaEstimate {
        rho: truth.rho,
        u_field: u,
        v_field: v,
        method: Method::Fpca,
        tuning: Tuning::truncation(2),
        higher: Vec::new(),
        rho_clipped: false,
    };
    let same = error_metrics(&est(truth.u_field.clone(), truth.v_field.clone()), &truth).unwrap();
    assert_eq!((same.abs_rho_err, same.imse_u, same.imse_v), (0.0, 0.0, 0.0));
    let flipped = error_metrics(&est(truth.u_field.scaled(-1.0), truth.v_field.scaled(-3.0)), &truth).unwrap();
    assert!(flipped.imse_u < 1e-12 && flipped.imse_v < 1e-12);
    // A field orthogonal to U: Phi_1 - Phi_2.
    let phi = basis_fields(&means.x, 2);
    let orth = phi[0].add_scaled(-1.0, &phi[1]).unwrap();
    let apart = error_metrics(&est(orth, truth.v_field.clone()), &truth).unwrap();
    assert!((apart.imse_u - std::f64::consts::SQRT_2).abs() < 1e-10);
}

fn log_slope(ns: &[usize], values: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn covariance_estimate_converges_at_the_root_n_rate() {
    let ns = [50, 100, 200, 400, 800];
    let reps = 20;
    let mut errors = Vec::new();
    for &n in &ns {
        let c = config(n, 0.1, Case::TruncatedNormal);
        let means = MeanSurfaces::new(&c.grid).unwrap();
        let truth = GroundTruth::new(&c, &means.x, &means.y);
        let phi = basis_fields(&means.x, c.basis_size);
        let mut total = 0.0;
        for rep in 0..reps {
            let r = simulate_replicate(&c, &means, rep).unwrap();
            let mean = Arc::new(frechet_mean_curve(&r.x));
            let logs = log_fields(&r.x, &mean).unwrap();
            total += logs.covariance_hs_distance_sq(&truth.lambda_x, &phi).unwrap();
        }
        errors.push(total / reps as f64);
    }
    assert!(errors.windows(2).all(|w| w[0] > w[1]), "{errors:?}");
    let slope = log_slope(&ns, &errors);
    assert!((-1.35..=-0.65).contains(&slope), "slope {slope}, errors {errors:?}");
}

#[test]
fn eigenfield_errors_grow_with_index_and_shrink_with_n() {
    let reps = 30;
    let mut table = Vec::new();
    for n in [100, 400] {
        let c = config(n, 0.1, Case::TruncatedNormal);
        let means = MeanSurfaces::new(&c.grid).unwrap();
        let phi = basis_fields(&means.x, 3);
        let mut sq = [0.0; 3];
        for rep in 0..reps {
            let r = simulate_replicate(&c, &means, rep).unwrap();
            let mean = Arc::new(frechet_mean_curve(&r.x));
            let (eig, _) = covariance_eigen(&log_fields(&r.x, &mean).unwrap(), 3).unwrap();
            for j in 0..3 {
                let d = wcca::simulation::aligned_direction_distance(&eig.eigenfields[j], &phi[j]).unwrap();
                sq[j] += d * d / reps as f64;
            }
        }
        table.push(sq);
    }
    for row in &table {
        assert!(row[0] < row[1] && row[1] < row[2], "{table:?}");
    }
    for j in 0..3 {
        assert!(table[1][j] < table[0][j], "{table:?}");
    }
}

#[test]
fn generator_is_reproducible_and_seed_sensitive() {
    let c = config(20, 0.2, Case::Uniform);
    let means = MeanSurfaces::new(&c.grid).unwrap();
    let (a, _, _) = generate_with_means(&c, &means, 3).unwrap();
    let (b, _, _) = generate_with_means(&c, &means, 3).unwrap();
    let (d, _, _) = generate_with_means(&c, &means, 4).unwrap();
    assert_eq!(a.curves()[0].surface(), b.curves()[0].surface());
    assert_ne!(a.curves()[0].surface(), d.curves()[0].surface());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let mut c = config(60, 0.3, Case::TruncatedNormal);
    c.replicates = 3;
    let specs = [TuningSpec::CrossValidated { candidates: wcca::cca::default_truncation_grid(), folds: 5 }, TuningSpec::Fixed(Tuning::ridge(1e-6))];
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut out = Vec::new();
            run_replicates(&c, &specs).unwrap().write_csv(&mut out).unwrap();
            out
        })
    };
    let one = csv(1);
    assert_eq!(one, csv(4));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().next().unwrap(), "replicate,method,n,sigma,case,k_or_eps,abs_rho_err,imse_u,imse_v");
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}
