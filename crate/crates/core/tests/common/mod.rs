//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wcca::estimation::{frechet_mean_curve, log_fields};
use wcca::{Distribution, DistributionCurve, GridConfig, LogFieldMatrix, Sample, TangentField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sorted uniform draws inside the support: a generic quantile vector.
pub fn random_quantiles<R: Rng>(rng: &mut R, grid: &GridConfig) -> Vec<f64> {
    let (a, b) = grid.support();
    let mut q: Vec<f64> = (0..grid.m_levels()).map(|_| rng.random_range(a..=b)).collect();
    q.sort_by(f64::total_cmp);
    q
}

pub fn random_distribution<R: Rng>(rng: &mut R, grid: &GridConfig) -> Distribution {
    Distribution::new(random_quantiles(rng, grid), *grid).unwrap()
}

pub fn random_curve<R: Rng>(rng: &mut R, grid: &GridConfig) -> DistributionCurve {
    let q: Vec<f64> = (0..grid.t_points()).flat_map(|_| random_quantiles(rng, grid)).collect();
    DistributionCurve::from_surface(q, *grid).unwrap()
}

pub fn random_field<R: Rng>(rng: &mut R, base: &Arc<DistributionCurve>) -> TangentField {
    let z = (0..base.grid().surface_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    TangentField::new(z, base.clone()).unwrap()
}

pub fn random_sample<R: Rng>(rng: &mut R, grid: &GridConfig, n: usize) -> Sample {
    Sample::new((0..n).map(|_| random_curve(rng, grid)).collect()).unwrap()
}

/// Two samples whose log-fields share a common component, so the leading
/// canonical correlation is well separated.
pub fn coupled_samples<R: Rng>(rng: &mut R, grid: &GridConfig, n: usize) -> (Sample, Sample) {
    let x = random_sample(rng, grid, n);
    let y_curves = x
        .curves()
        .iter()
        .map(|c| {
            let noise = random_curve(rng, grid);
            let q = c.surface().iter().zip(noise.surface()).map(|(a, b)| 0.7 * a + 0.3 * b).collect();
            DistributionCurve::from_surface(q, *grid).unwrap()
        })
        .collect();
    (x, Sample::new(y_curves).unwrap())
}

pub fn centered_logs(sample: &Sample) -> LogFieldMatrix {
    let mean = Arc::new(frechet_mean_curve(sample));
    log_fields(sample, &mean).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sign-insensitive distance between two coefficient vectors.
pub fn up_to_sign(a: &[f64], b: &[f64]) -> f64 {
    let plus = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let minus = a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta function, for Beta quantiles by bisection.

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Lentz evaluation of the incomplete-beta continued fraction.
fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        d = if d.abs() < TINY { 1.0 / TINY } else { 1.0 / d };
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        d = if d.abs() < TINY { 1.0 / TINY } else { 1.0 / d };
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let step = d * c;
        h *= step;
        if (step - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

pub fn beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

pub fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf(a, b, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Dense-space estimators: operators materialized as (T m) x (T m) arrays.
//
// With inner product <<a, b>> = w a.b (w the cell weight), the operator
// f -> (1/n) sum_i <<L_i, f>> M_i has the array (w/n) M^T L, which is
// symmetric for auto-covariances and so self-adjoint in either metric.

pub fn rows(logs: &LogFieldMatrix) -> DMatrix<f64> {
    let p = logs.grid().surface_len();
    DMatrix::from_fn(logs.len(), p, |i, j| logs.row(i)[j])
}

pub fn dense_cross(left: &LogFieldMatrix, right: &LogFieldMatrix) -> DMatrix<f64> {
    let w = left.grid().cell_weight();
    rows(left).transpose() * rows(right) * (w / left.len() as f64)
}

/// Eigenvalues (descending) and w-orthonormal eigenvectors of the dense covariance.
pub fn dense_eigen(logs: &LogFieldMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let w = logs.grid().cell_weight();
    let c = dense_cross(logs, logs);
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().map(|x| x / w.sqrt()).collect())
        .collect();
    (values, vectors)
}

/// Function of a symmetric array through its spectrum.
fn spectral(c: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Dense canonical correlations and leading weight vectors for a given
/// pair of regularized inverse square roots.
fn dense_cca(
    logs_x: &LogFieldMatrix,
    logs_y: &LogFieldMatrix,
    root_x: DMatrix<f64>,
    root_y: DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = logs_x.grid().cell_weight();
    let m = &root_x * dense_cross(logs_x, logs_y) * &root_y;
    // Singular triples from the symmetric eigenproblem of M M^T.
    let eig = SymmetricEigen::new(&m * m.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rhos = order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect::<Vec<f64>>();
    let left = eig.eigenvectors.column(order[0]).into_owned();
    let right = m.transpose() * &left / rhos[0];
    let u = &root_x * left / w.sqrt();
    let v = &root_y * right / w.sqrt();
    (rhos, u.iter().copied().collect(), v.iter().copied().collect())
}

/// `(C_X + eps I)^-1 C_XY (C_Y + eps I)^-1 C_YX` in dense form.
pub fn dense_tikhonov(logs_x: &LogFieldMatrix, logs_y: &LogFieldMatrix, eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rx = spectral(&dense_cross(logs_x, logs_x), |l| 1.0 / (l.max(0.0) + eps).sqrt());
    let ry = spectral(&dense_cross(logs_y, logs_y), |l| 1.0 / (l.max(0.0) + eps).sqrt());
    dense_cca(logs_x, logs_y, rx, ry)
}

/// Truncated inverses keeping the leading `k` dense eigencomponents.
pub fn dense_fpca(logs_x: &LogFieldMatrix, logs_y: &LogFieldMatrix, k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let root = |logs: &LogFieldMatrix| {
        let w = logs.grid().cell_weight();
        let (values, vectors) = dense_eigen(logs);
        let p = logs.grid().surface_len();
        let mut r = DMatrix::zeros(p, p);
        for (l, v) in values.iter().zip(&vectors).take(k) {
            // v is w-normalized; the Euclidean unit vector is sqrt(w) v.
            let e = DMatrix::from_column_slice(p, 1, v) * w.sqrt();
            r += &e * e.transpose() / l.sqrt();
        }
        r
    };
    dense_cca(logs_x, logs_y, root(logs_x), root(logs_y))
}
