//! Benchmark generator with Beta mean surfaces and sine eigenfields, its
//! ground truth, error metrics and a seeded Monte Carlo runner.
//!
//! Mean curves are `mu_X(t) = Beta(2 + t, 3 - (t^2 + t)/2)` and
//! `mu_Y(t) = Beta(3 - t, 2 + (t^2 + t)/2)` on `[0, 1]`. In quantile
//! coordinates the basis fields are `Phi_j(t, u) = sqrt(2) sin(pi j u)` for
//! both samples. Scores are bounded by `b_k = v_k / (V_k M)` with
//! `v_k = 2^-k`, `V_k = sqrt(2) pi k` and `M = 1.78`, which keeps every
//! perturbed quantile function nondecreasing. The Y-scores are independent
//! of X except `eta_2 = 0.5 (xi_1 + xi_2) + kappa theta`, so the population
//! canonical pair is `U ∝ Phi_1 + Phi_2`, `V ∝ Phi_2`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{CcaData, CcaEstimate, Method, Tuning};
use crate::error::{Error, Result};
use crate::estimation::{frechet_mean_curve, Sample};
use crate::format::fmt_float;
use crate::grid::GridConfig;
use crate::io::{Dataset, SampleList};
use crate::tensor::{DistributionCurve, TangentField};
use crate::wasserstein::{from_density_grid, settle_quantiles, ExpMode};

/// Upper bound on the mean densities, used in the score bounds.
pub const DENSITY_BOUND: f64 = 1.78;

/// Points in the `x`-grid used to invert the Beta mean densities.
pub const DENSITY_GRID_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Scores are scaled `N(0, 1)` draws truncated to `[-1, 1]`.
    #[serde(rename = "1")]
    TruncatedNormal,
    /// Scores are uniform on `[-b_k, b_k]`.
    #[serde(rename = "2")]
    Uniform,
}

impl Case {
    pub fn number(&self) -> u8 {
        match self {
            Case::TruncatedNormal => 1,
            Case::Uniform => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Case::TruncatedNormal),
            2 => Ok(Case::Uniform),
            _ => Err(Error::DomainError(format!("unknown case {n}, expected 1 or 2"))),
        }
    }

    /// Variance of the unit draw `theta` (truncated normal or `U[-1, 1]`).
    pub fn unit_variance(&self) -> f64 {
        match self {
            Case::TruncatedNormal => truncated_normal_variance(),
            Case::Uniform => 1.0 / 3.0,
        }
    }

    fn draw_unit<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Case::TruncatedNormal => loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 1.0 {
                    break z;
                }
            },
            Case::Uniform => rng.random_range(-1.0..=1.0),
        }
    }
}

/// `Var(Z | |Z| <= 1)` for standard normal `Z`: `1 - 2 phi(1) / (2 Phi(1) - 1)`.
pub fn truncated_normal_variance() -> f64 {
    let pdf1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
    let mass = statrs::function::erf::erf(1.0 / SQRT_2);
    1.0 - 2.0 * pdf1 / mass
}

/// Scale of the noise term in the coupled score `eta_2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// `kappa = sigma E(xi_1^2 + xi_2^2)`, the coupling taken at face value.
    Literal,
    /// `kappa = sigma sqrt(E(xi_1^2 + xi_2^2)) / sd(theta)`, for which
    /// `rho^2 = 0.25 / (0.25 + sigma^2)` holds exactly.
    Calibrated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub sigma: f64,
    pub case: Case,
    pub basis_size: usize,
    pub grid: GridConfig,
    pub seed: u64,
    pub replicates: usize,
    pub noise: NoiseScale,
}

impl SimConfig {
    /// Defaults: 50 time points, 64 levels, 20 basis fields, 50 replicates,
    /// literal noise scale.
    pub fn new(n: usize, sigma: f64, case: Case) -> Self {
        Self {
            n,
            sigma,
            case,
            basis_size: 20,
            grid: GridConfig::new(64, 50, (0.0, 1.0)).expect("static grid is valid"),
            seed: 0,
            replicates: 50,
            noise: NoiseScale::Literal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_size < 2 {
            return Err(Error::DomainError(format!("basis size {} < 2", self.basis_size)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::DomainError(format!("noise level {} must be finite and nonnegative", self.sigma)));
        }
        if self.n < 2 {
            return Err(Error::DomainError(format!("sample size {} < 2", self.n)));
        }
        if self.grid.support() != (0.0, 1.0) {
            return Err(Error::DomainError("the benchmark lives on the support [0, 1]".into()));
        }
        Ok(())
    }

    /// `b_k = v_k / (V_k M)` for 1-based `k`.
    pub fn score_bound(k: usize) -> f64 {
        let v = 0.5f64.powi(k as i32);
        let big_v = SQRT_2 * PI * k as f64;
        v / (big_v * DENSITY_BOUND)
    }

    /// Variance of `xi_k` (and of `eta_k`, `k != 2`).
    pub fn score_variance(&self, k: usize) -> f64 {
        Self::score_bound(k).powi(2) * self.case.unit_variance()
    }

    /// `E(xi_1^2 + xi_2^2)`.
    pub fn coupling_moment(&self) -> f64 {
        self.score_variance(1) + self.score_variance(2)
    }

    /// `kappa` in `eta_2 = 0.5 (xi_1 + xi_2) + kappa theta`.
    pub fn noise_coefficient(&self) -> f64 {
        let c = self.coupling_moment();
        match self.noise {
            NoiseScale::Literal => self.sigma * c,
            NoiseScale::Calibrated => self.sigma * c.sqrt() / self.case.unit_variance().sqrt(),
        }
    }

    /// `Var(eta_2)`.
    pub fn coupled_variance(&self) -> f64 {
        let kappa = self.noise_coefficient();
        0.25 * self.coupling_moment() + kappa * kappa * self.case.unit_variance()
    }
}

/// Population canonical correlation and weight functions of a configuration.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `Corr(xi_1 + xi_2, eta_2)` from the generator's exact moments.
    pub rho: f64,
    /// `0.5 / sqrt(0.25 + sigma^2)`.
    pub rho_closed_form: f64,
    /// `(Phi_1 + Phi_2) / sqrt(l_1 + l_2)`, so `<<U, C_X U>> = 1`.
    pub u_field: TangentField,
    /// `Phi_2 / sqrt(Var eta_2)`, so `<<V, C_Y V>> = 1`.
    pub v_field: TangentField,
    /// True eigenvalues of `C_X` and `C_Y`, in basis order.
    pub lambda_x: Vec<f64>,
    pub lambda_y: Vec<f64>,
}

impl GroundTruth {
    pub fn new(config: &SimConfig, mean_x: &Arc<DistributionCurve>, mean_y: &Arc<DistributionCurve>) -> Self {
        let c = config.coupling_moment();
        let kappa = config.noise_coefficient();
        let rho = 0.5 * c.sqrt() / (0.25 * c + kappa * kappa * config.case.unit_variance()).sqrt();
        let rho_closed_form = 0.5 / (0.25 + config.sigma * config.sigma).sqrt();
        let bx = basis_fields(mean_x, 2);
        let by = basis_fields(mean_y, 2);
        let lambda_x: Vec<f64> = (1..=config.basis_size).map(|k| config.score_variance(k)).collect();
        let mut lambda_y = lambda_x.clone();
        lambda_y[1] = config.coupled_variance();
        let u_field = bx[0]
            .add_scaled(1.0, &bx[1])
            .expect("basis fields share a base")
            .scaled(1.0 / (lambda_x[0] + lambda_x[1]).sqrt());
        let v_field = by[1].scaled(1.0 / lambda_y[1].sqrt());
        Self { rho, rho_closed_form, u_field, v_field, lambda_x, lambda_y }
    }
}

/// Unnormalized Beta density.
fn beta_kernel(x: f64, a: f64, b: f64) -> f64 {
    // powf keeps the finite endpoint value when a or b is 1; poles become 0.
    let f = x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0);
    if f.is_finite() { f } else { 0.0 }
}

/// Quantiles of `Beta(a, b)` on the grid's levels by CDF-grid inversion.
pub fn beta_quantiles(a: f64, b: f64, grid: &GridConfig) -> Result<Vec<f64>> {
    let last = (DENSITY_GRID_POINTS - 1) as f64;
    let density: Vec<(f64, f64)> = (0..DENSITY_GRID_POINTS)
        .map(|i| {
            let x = i as f64 / last;
            (x, beta_kernel(x, a, b))
        })
        .collect();
    Ok(from_density_grid(&density, grid)?.into_quantiles())
}

/// Parameters of `mu_X(t)` and `mu_Y(t)`.
pub fn beta_parameters(t: f64) -> ((f64, f64), (f64, f64)) {
    let s = (t * t + t) / 2.0;
    ((2.0 + t, 3.0 - s), (3.0 - t, 2.0 + s))
}

/// The two Beta mean curves on the grid.
pub fn beta_mean_surfaces(grid: &GridConfig) -> Result<(DistributionCurve, DistributionCurve)> {
    if grid.support() != (0.0, 1.0) {
        return Err(Error::DomainError("Beta mean surfaces need the support [0, 1]".into()));
    }
    let mut qx = Vec::with_capacity(grid.surface_len());
    let mut qy = Vec::with_capacity(grid.surface_len());
    for t in grid.times() {
        let ((ax, bx), (ay, by)) = beta_parameters(t);
        qx.extend(beta_quantiles(ax, bx, grid)?);
        qy.extend(beta_quantiles(ay, by, grid)?);
    }
    Ok((DistributionCurve::from_surface(qx, *grid)?, DistributionCurve::from_surface(qy, *grid)?))
}

/// `sqrt(2) sin(pi k u)`, the same at every time and for every mean.
pub fn basis_fields(mean: &Arc<DistributionCurve>, k: usize) -> Vec<TangentField> {
    (1..=k)
        .map(|j| TangentField::from_fn(mean.clone(), |_, u| SQRT_2 * (PI * j as f64 * u).sin()))
        .collect()
}

/// Scores of one replicate: `xi[i][k]`, `eta[i][k]` with 0-based `k`.
#[derive(Debug, Clone)]
pub struct Scores {
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream `stream` of replicate `replicate` under `seed`.
pub fn stream_rng(seed: u64, replicate: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let r = splitmix64(&mut state) ^ replicate;
    let mut state = r;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for fold assignment in cross-validation.
const CV_STREAM: u64 = u64::MAX;

/// Draws `(xi_i, eta_i)` for one subject.
pub fn draw_subject<R: Rng>(config: &SimConfig, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let k = config.basis_size;
    let xi: Vec<f64> = (1..=k).map(|j| SimConfig::score_bound(j) * config.case.draw_unit(rng)).collect();
    let theta: Vec<f64> = (0..k).map(|_| config.case.draw_unit(rng)).collect();
    let mut eta: Vec<f64> = (1..=k).map(|j| SimConfig::score_bound(j) * theta[j - 1]).collect();
    eta[1] = 0.5 * (xi[0] + xi[1]) + config.noise_coefficient() * theta[1];
    (xi, eta)
}

/// Redraws allowed per subject before a generator failure is reported.
pub const MAX_REDRAWS: usize = 1000;

/// `sqrt(2) sin(pi k u_j)` for `k = 1..=size`, one row per `k`.
fn basis_table(grid: &GridConfig, size: usize) -> Vec<Vec<f64>> {
    let levels = grid.levels();
    (1..=size).map(|k| levels.iter().map(|u| SQRT_2 * (PI * k as f64 * u).sin()).collect()).collect()
}

/// `Exp_mean(sum_k scores[k] Phi_k)` in strict mode.
fn perturb(mean: &DistributionCurve, table: &[Vec<f64>], scores: &[f64]) -> Result<DistributionCurve> {
    let grid = *mean.grid();
    let mut shift = vec![0.0; grid.m_levels()];
    for (c, row) in scores.iter().zip(table) {
        for (acc, phi) in shift.iter_mut().zip(row) {
            *acc += c * phi;
        }
    }
    let mut q = Vec::with_capacity(grid.surface_len());
    for t in 0..grid.t_points() {
        let frame: Vec<f64> = mean.frame_quantiles(t).iter().zip(&shift).map(|(a, b)| a + b).collect();
        q.extend(settle_quantiles(frame, &grid, ExpMode::Strict)?);
    }
    Ok(DistributionCurve::from_surface_unchecked(q, grid))
}

/// `Exp_mean(sum_k scores[i][k] Phi_k)` for every subject, in strict mode.
pub fn curves_from_scores(mean: &DistributionCurve, scores: &[Vec<f64>]) -> Result<Sample> {
    let k = scores.first().map_or(0, Vec::len);
    let table = basis_table(mean.grid(), k);
    let curves = scores.par_iter().map(|s| perturb(mean, &table, s)).collect::<Result<Vec<_>>>()?;
    Sample::new(curves)
}

/// Mean curves, reused across replicates of one grid.
#[derive(Debug, Clone)]
pub struct MeanSurfaces {
    pub x: Arc<DistributionCurve>,
    pub y: Arc<DistributionCurve>,
}

impl MeanSurfaces {
    pub fn new(grid: &GridConfig) -> Result<Self> {
        let (x, y) = beta_mean_surfaces(grid)?;
        Ok(Self { x: Arc::new(x), y: Arc::new(y) })
    }
}

/// One replicate's subjects with their scores.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub x: Sample,
    pub y: Sample,
    pub scores: Scores,
    /// Subjects redrawn because a curve left the log image.
    pub redraws: usize,
}

/// Draws subject `i` from its own stream until both curves are valid
/// distributions. Only the coupled score can leave the log image, and only
/// at large calibrated noise.
fn draw_valid_subject(
    config: &SimConfig,
    means: &MeanSurfaces,
    table: &[Vec<f64>],
    replicate: u64,
    i: usize,
) -> Result<(DistributionCurve, DistributionCurve, Vec<f64>, Vec<f64>, usize)> {
    let mut rng = stream_rng(config.seed, replicate, i as u64);
    let mut last = None;
    for redraws in 0..=MAX_REDRAWS {
        let (xi, eta) = draw_subject(config, &mut rng);
        match (perturb(&means.x, table, &xi), perturb(&means.y, table, &eta)) {
            (Ok(x), Ok(y)) => return Ok((x, y, xi, eta, redraws)),
            (Err(e), _) | (_, Err(e)) => last = Some(e),
        }
    }
    Err(last.expect("at least one draw was made"))
}

/// All subjects of one replicate.
pub fn simulate_replicate(config: &SimConfig, means: &MeanSurfaces, replicate: u64) -> Result<Replicate> {
    config.validate()?;
    means.x.grid().ensure_same(&config.grid)?;
    let table = basis_table(&config.grid, config.basis_size);
    let subjects = (0..config.n)
        .into_par_iter()
        .map(|i| draw_valid_subject(config, means, &table, replicate, i))
        .collect::<Result<Vec<_>>>()?;
    let mut x = Vec::with_capacity(config.n);
    let mut y = Vec::with_capacity(config.n);
    let mut scores = Scores { xi: Vec::with_capacity(config.n), eta: Vec::with_capacity(config.n) };
    let mut redraws = 0;
    for (cx, cy, xi, eta, r) in subjects {
        x.push(cx);
        y.push(cy);
        scores.xi.push(xi);
        scores.eta.push(eta);
        redraws += r;
    }
    Ok(Replicate { x: Sample::new(x)?, y: Sample::new(y)?, scores, redraws })
}

/// All subjects' first-draw scores for one replicate, one RNG stream per subject.
pub fn sample_scores(config: &SimConfig, replicate: u64) -> Scores {
    let (xi, eta) = (0..config.n)
        .map(|i| draw_subject(config, &mut stream_rng(config.seed, replicate, i as u64)))
        .unzip();
    Scores { xi, eta }
}

/// Both samples and the ground truth of one replicate.
pub fn generate_dataset(config: &SimConfig, replicate: u64) -> Result<(Sample, Sample, GroundTruth)> {
    let means = MeanSurfaces::new(&config.grid)?;
    generate_with_means(config, &means, replicate)
}

pub fn generate_with_means(config: &SimConfig, means: &MeanSurfaces, replicate: u64) -> Result<(Sample, Sample, GroundTruth)> {
    let rep = simulate_replicate(config, means, replicate)?;
    Ok((rep.x, rep.y, GroundTruth::new(config, &means.x, &means.y)))
}

/// `int d^2(mu_hat_X(t), mu_X(t)) dt` for one replicate of the X sample.
pub fn mean_curve_error(config: &SimConfig, means: &MeanSurfaces, replicate: u64) -> Result<f64> {
    let rep = simulate_replicate(config, means, replicate)?;
    frechet_mean_curve(&rep.x).integrated_sq_distance(&means.x)
}

/// Stream reserved for raw-sample exports.
pub const EXPORT_STREAM: u64 = u64::MAX - 1;

/// `draws` observations per subject and frame from the distributions of
/// `data`, as sample lists. Each observation is `q_j` for a uniform level
/// index `j`, an exact draw from the gridded measure.
pub fn raw_sample_lists<R: Rng>(data: &Dataset, draws: usize, rng: &mut R) -> Vec<SampleList> {
    let grid = data.sample.grid();
    let m = grid.m_levels();
    let mut out = Vec::with_capacity(data.subjects.len() * grid.t_points());
    for (subject, curve) in data.subjects.iter().zip(data.sample.curves()) {
        for t in 0..grid.t_points() {
            let q = curve.frame_quantiles(t);
            let values = (0..draws).map(|_| q[rng.random_range(0..m)]).collect();
            out.push(SampleList { subject: subject.clone(), t_index: t, values });
        }
    }
    out
}

/// Per-replicate errors; field distances are between unit-norm directions,
/// sign-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub abs_rho_err: f64,
    pub imse_u: f64,
    pub imse_v: f64,
}

/// `min(||a/|a| - b/|b|||, ||a/|a| + b/|b|||)` after transporting `a` onto `b`'s base.
pub fn aligned_direction_distance(estimate: &TangentField, truth: &TangentField) -> Result<f64> {
    estimate.grid().ensure_same(truth.grid())?;
    let (na, nb) = (estimate.norm(), truth.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DomainError("cannot align a zero weight function".into()));
    }
    let w = truth.grid().cell_weight();
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in estimate.values().iter().zip(truth.values()) {
        let (a, b) = (a / na, b / nb);
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    Ok((minus.min(plus) * w).sqrt())
}

pub fn error_metrics(est: &CcaEstimate, truth: &GroundTruth) -> Result<ErrorMetrics> {
    Ok(ErrorMetrics {
        abs_rho_err: (est.rho - truth.rho).abs(),
        imse_u: aligned_direction_distance(&est.u_field, &truth.u_field)?,
        imse_v: aligned_direction_distance(&est.v_field, &truth.v_field)?,
    })
}

/// How tuning parameters are set in each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TuningSpec {
    Fixed(Tuning),
    CrossValidated { candidates: Vec<Tuning>, folds: usize },
}

impl TuningSpec {
    /// Five-fold CV over the default grid of `method`.
    pub fn default_cv(method: Method) -> Self {
        TuningSpec::CrossValidated { candidates: crate::cca::default_grid(method), folds: 5 }
    }

    fn method(&self) -> Option<Method> {
        match self {
            TuningSpec::Fixed(t) => Some(t.method()),
            TuningSpec::CrossValidated { candidates, .. } => candidates.first().map(Tuning::method),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: Method,
    pub n: usize,
    pub sigma: f64,
    pub case: u8,
    pub tuning: Tuning,
    pub rho_hat: f64,
    pub abs_rho_err: f64,
    pub imse_u: f64,
    pub imse_v: f64,
}

/// One table cell: averages over replicates.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub case: u8,
    pub sigma: f64,
    pub n: usize,
    pub replicates: usize,
    pub noise: NoiseScale,
    pub rho_truth: f64,
    pub rho_closed_form: f64,
    pub mean_abs_rho_err: f64,
    /// `sqrt(mean ||U_hat - U||^2)` over replicates.
    pub imse_u: f64,
    pub imse_v: f64,
    pub mean_rho_hat: f64,
    pub tuning_histogram: BTreeMap<String, usize>,
    /// Subjects redrawn across all replicates because a curve left the log image.
    pub redraws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateReport {
    pub config: SimConfig,
    pub records: Vec<ReplicateRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// Runs every method on each replicate's dataset.
///
/// Replicates are independent and may run concurrently; results are
/// collected in replicate order, so the report depends only on the config.
pub fn run_replicates(config: &SimConfig, methods: &[TuningSpec]) -> Result<ReplicateReport> {
    config.validate()?;
    if config.replicates == 0 {
        return Err(Error::DomainError("need at least one replicate".into()));
    }
    if methods.is_empty() || methods.iter().any(|m| m.method().is_none()) {
        return Err(Error::EmptyInput("no estimator to run".into()));
    }
    let means = MeanSurfaces::new(&config.grid)?;
    let runs: Vec<(Vec<ReplicateRecord>, usize)> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_one(config, &means, methods, rep))
        .collect::<Result<_>>()?;
    let redraws: usize = runs.iter().map(|r| r.1).sum();
    let per_replicate: Vec<Vec<ReplicateRecord>> = runs.into_iter().map(|r| r.0).collect();

    let truth = GroundTruth::new(config, &means.x, &means.y);
    let aggregates = (0..methods.len())
        .map(|m| {
            let rows: Vec<&ReplicateRecord> = per_replicate.iter().map(|r| &r[m]).collect();
            let count = rows.len() as f64;
            let mut histogram = BTreeMap::new();
            for r in &rows {
                *histogram.entry(r.tuning.label()).or_insert(0) += 1;
            }
            AggregateRow {
                method: rows[0].method,
                case: config.case.number(),
                sigma: config.sigma,
                n: config.n,
                replicates: rows.len(),
                noise: config.noise,
                rho_truth: truth.rho,
                rho_closed_form: truth.rho_closed_form,
                mean_abs_rho_err: rows.iter().map(|r| r.abs_rho_err).sum::<f64>() / count,
                imse_u: (rows.iter().map(|r| r.imse_u * r.imse_u).sum::<f64>() / count).sqrt(),
                imse_v: (rows.iter().map(|r| r.imse_v * r.imse_v).sum::<f64>() / count).sqrt(),
                mean_rho_hat: rows.iter().map(|r| r.rho_hat).sum::<f64>() / count,
                tuning_histogram: histogram,
                redraws,
            }
        })
        .collect();
    let records = per_replicate.into_iter().flatten().collect();
    Ok(ReplicateReport { config: config.clone(), records, aggregates })
}

fn run_one(config: &SimConfig, means: &MeanSurfaces, methods: &[TuningSpec], rep: usize) -> Result<(Vec<ReplicateRecord>, usize)> {
    let sim = simulate_replicate(config, means, rep as u64)?;
    let truth = GroundTruth::new(config, &means.x, &means.y);
    let data = CcaData::new(&sim.x, &sim.y)?;
    let cv_seed = stream_rng(config.seed, rep as u64, CV_STREAM).random::<u64>();

    // Specs sharing a fold count are cross-validated over the same folds.
    let mut chosen: Vec<Option<Tuning>> = methods
        .iter()
        .map(|s| match s {
            TuningSpec::Fixed(t) => Some(*t),
            TuningSpec::CrossValidated { .. } => None,
        })
        .collect();
    let mut fold_counts: Vec<usize> = methods
        .iter()
        .filter_map(|s| match s {
            TuningSpec::CrossValidated { folds, .. } => Some(*folds),
            TuningSpec::Fixed(_) => None,
        })
        .collect();
    fold_counts.sort_unstable();
    fold_counts.dedup();
    for folds in fold_counts {
        let members: Vec<(usize, &[Tuning])> = methods
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                TuningSpec::CrossValidated { candidates, folds: f } if *f == folds => Some((i, candidates.as_slice())),
                _ => None,
            })
            .collect();
        let groups: Vec<&[Tuning]> = members.iter().map(|(_, g)| *g).collect();
        let outcomes = data.cross_validate_groups(&groups, folds, cv_seed)?;
        for ((i, _), out) in members.into_iter().zip(outcomes) {
            chosen[i] = Some(out.chosen);
        }
    }

    let records = chosen
        .into_iter()
        .map(|tuning| {
            let tuning = tuning.expect("every spec was resolved");
            let est = data.fit(&tuning, 1)?;
            let metrics = error_metrics(&est, &truth)?;
            Ok(ReplicateRecord {
                replicate: rep,
                method: tuning.method(),
                n: config.n,
                sigma: config.sigma,
                case: config.case.number(),
                tuning,
                rho_hat: est.rho,
                abs_rho_err: metrics.abs_rho_err,
                imse_u: metrics.imse_u,
                imse_v: metrics.imse_v,
            })
        })
        .collect::<Result<_>>()?;
    Ok((records, sim.redraws))
}

impl ReplicateReport {
    /// Per-replicate CSV with the columns
    /// `replicate,method,n,sigma,case,k_or_eps,abs_rho_err,imse_u,imse_v`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "method", "n", "sigma", "case", "k_or_eps", "abs_rho_err", "imse_u", "imse_v"])?;
        for r in &self.records {
            w.write_record([
                r.replicate.to_string(),
                r.method.to_string(),
                r.n.to_string(),
                fmt_float(r.sigma),
                r.case.to_string(),
                r.tuning.label(),
                fmt_float(r.abs_rho_err),
                fmt_float(r.imse_u),
                fmt_float(r.imse_v),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn aggregate(&self, method: Method) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}
