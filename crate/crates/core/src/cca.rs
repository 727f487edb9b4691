//! Canonical correlation between two samples of distribution curves.
//!
//! Both estimators reduce to a singular value decomposition in the
//! estimated eigenbases. With scores `s_x`, `s_y`, eigenvalues `l_X`, `l_Y`
//! and score cross-covariance `gamma = s_x^T s_y / n`, the leading
//! eigenpair of `C_X^-1 C_XY C_Y^-1 C_YX` (with `C^-1` regularized) is
//! obtained from
//!
//! ```text
//! W = D_X gamma D_Y,   D = diag(1/sqrt(l_k))       FPCA, first k components
//!                      D = diag(1/sqrt(l_k + eps))  Tikhonov, all components
//! ```
//!
//! The top singular value of `W` is the correlation; `D_X` times the left
//! singular vector gives the coordinates of `U` in the X eigenbasis. The
//! Tikhonov operator lives entirely in the span of the log-fields, so the
//! Gram-space eigenbasis is exact for it.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    covariance_eigen_from_gram, cross_covariance_scores, frechet_mean_curve, log_fields, needs_flip,
    EigenSystem, GramEigen, LogFieldMatrix, Sample, ScoreMatrix,
};
use crate::tensor::{DistributionCurve, TangentField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fpca,
    Tikhonov,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Fpca => "fpca",
            Method::Tikhonov => "tikhonov",
        })
    }
}

/// Regularization of the covariance inverses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tuning {
    /// Keep the leading `k_x` / `k_y` eigencomponents.
    Truncation { k_x: usize, k_y: usize },
    /// Ridge shifts `(C + eps id)^-1`.
    Ridge { eps_x: f64, eps_y: f64 },
}

impl Tuning {
    pub fn truncation(k: usize) -> Self {
        Tuning::Truncation { k_x: k, k_y: k }
    }

    pub fn ridge(eps: f64) -> Self {
        Tuning::Ridge { eps_x: eps, eps_y: eps }
    }

    pub fn method(&self) -> Method {
        match self {
            Tuning::Truncation { .. } => Method::Fpca,
            Tuning::Ridge { .. } => Method::Tikhonov,
        }
    }

    /// Compact label: `k` or `kx;ky` for truncation, the epsilon(s) for ridge.
    pub fn label(&self) -> String {
        match *self {
            Tuning::Truncation { k_x, k_y } if k_x == k_y => k_x.to_string(),
            Tuning::Truncation { k_x, k_y } => format!("{k_x};{k_y}"),
            Tuning::Ridge { eps_x, eps_y } if eps_x == eps_y => format!("{eps_x:e}"),
            Tuning::Ridge { eps_x, eps_y } => format!("{eps_x:e};{eps_y:e}"),
        }
    }

    /// Lower is simpler: fewer components, or heavier shrinkage.
    fn complexity(&self) -> f64 {
        match *self {
            Tuning::Truncation { k_x, k_y } => (k_x + k_y) as f64,
            Tuning::Ridge { eps_x, eps_y } => -(eps_x + eps_y),
        }
    }
}

/// Truncation levels `1..=10`, shared between X and Y.
pub fn default_truncation_grid() -> Vec<Tuning> {
    (1..=10).map(Tuning::truncation).collect()
}

/// Ridge levels `1e-10, 1e-9, ..., 1e-2`, shared between X and Y.
pub fn default_ridge_grid() -> Vec<Tuning> {
    (-10..=-2).map(|e| Tuning::ridge(10f64.powi(e))).collect()
}

pub fn default_grid(method: Method) -> Vec<Tuning> {
    match method {
        Method::Fpca => default_truncation_grid(),
        Method::Tikhonov => default_ridge_grid(),
    }
}

/// One canonical pair.
#[derive(Debug, Clone)]
pub struct CanonicalPair {
    pub rho: f64,
    pub u_field: TangentField,
    pub v_field: TangentField,
}

#[derive(Debug, Clone)]
pub struct CcaEstimate {
    /// Leading correlation, clipped to `[0, 1]`.
    pub rho: f64,
    pub u_field: TangentField,
    pub v_field: TangentField,
    pub method: Method,
    pub tuning: Tuning,
    /// Pairs `2..=r`, correlations nonincreasing.
    pub higher: Vec<CanonicalPair>,
    /// Set when the raw leading singular value exceeded one.
    pub rho_clipped: bool,
}

impl CcaEstimate {
    /// All correlations, leading first.
    pub fn correlations(&self) -> Vec<f64> {
        std::iter::once(self.rho).chain(self.higher.iter().map(|p| p.rho)).collect()
    }
}

/// Singular triple in eigen-coordinates.
#[derive(Debug, Clone)]
struct CoordPair {
    sigma: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Leading `r` singular triples of `diag(wx) gamma diag(wy)`, mapped back to
/// eigen-coordinates. `u[0] >= 0` for every pair.
fn solve_whitened(gamma: &DMatrix<f64>, wx: &[f64], wy: &[f64], r: usize) -> Vec<CoordPair> {
    let (kx, ky) = (wx.len(), wy.len());
    let g = gamma.view((0, 0), (kx, ky));
    let w = DMatrix::from_fn(kx, ky, |j, k| wx[j] * g[(j, k)] * wy[k]);
    let svd = w.svd(true, true);
    let (Some(left), Some(right_t)) = (svd.u, svd.v_t) else {
        unreachable!("singular vectors were requested");
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order
        .into_iter()
        .take(r)
        .map(|c| {
            let sigma = svd.singular_values[c];
            let mut u: Vec<f64> = (0..kx).map(|j| wx[j] * left[(j, c)]).collect();
            if u.first().copied().unwrap_or(0.0) < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            // V = C_Y^-1 C_YX U / ||C_Y^-1/2 C_YX U||, regularized inverses.
            let cyx_u: Vec<f64> = (0..ky).map(|k| (0..kx).map(|j| g[(j, k)] * u[j]).sum()).collect();
            let norm = cyx_u.iter().zip(wy).map(|(c, w)| (c * w) * (c * w)).sum::<f64>().sqrt();
            let v = if norm > 0.0 {
                cyx_u.iter().zip(wy).map(|(c, w)| c * w * w / norm).collect()
            } else {
                let sign = if wx[0] * left[(0, c)] < 0.0 { -1.0 } else { 1.0 };
                (0..ky).map(|k| sign * wy[k] * right_t[(c, k)]).collect()
            };
            CoordPair { sigma, u, v }
        })
        .collect()
}

fn truncation_weights(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > values.len() {
        return Err(Error::RankError { requested: k, available: values.len() });
    }
    values[..k]
        .iter()
        .enumerate()
        .map(|(j, &l)| if l > 0.0 { Ok(1.0 / l.sqrt()) } else { Err(Error::SingularTruncation { component: j + 1 }) })
        .collect()
}

fn ridge_weights(values: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::DomainError(format!("ridge parameter must be positive, got {eps}")));
    }
    Ok(values.iter().map(|&l| 1.0 / (l + eps).sqrt()).collect())
}

fn whitening(tuning: &Tuning, lx: &[f64], ly: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match *tuning {
        Tuning::Truncation { k_x, k_y } => Ok((truncation_weights(lx, k_x)?, truncation_weights(ly, k_y)?)),
        Tuning::Ridge { eps_x, eps_y } => Ok((ridge_weights(lx, eps_x)?, ridge_weights(ly, eps_y)?)),
    }
}

/// Applies the sign convention: `<<U, Phi_1>> >= 0`, or if that is zero,
/// the largest-magnitude entry of `U` is positive. `V` follows `U`.
fn orient(mut u: TangentField, mut v: TangentField, u_on_first: f64) -> (TangentField, TangentField) {
    let flip = if u_on_first != 0.0 { u_on_first < 0.0 } else { needs_flip(u.values()) };
    if flip {
        u = u.scaled(-1.0);
        v = v.scaled(-1.0);
    }
    (u, v)
}

fn assemble(
    pairs: Vec<CoordPair>,
    lift_x: impl Fn(&[f64]) -> TangentField,
    lift_y: impl Fn(&[f64]) -> TangentField,
    tuning: Tuning,
) -> CcaEstimate {
    let mut out = pairs.into_iter().map(|p| {
        let (u, v) = orient(lift_x(&p.u), lift_y(&p.v), p.u[0]);
        (p.sigma, u, v)
    });
    let (sigma, u_field, v_field) = out.next().expect("at least one canonical pair");
    let higher = out
        .map(|(s, u_field, v_field)| CanonicalPair { rho: s.clamp(0.0, 1.0), u_field, v_field })
        .collect();
    CcaEstimate {
        rho: sigma.clamp(0.0, 1.0),
        u_field,
        v_field,
        method: tuning.method(),
        tuning,
        higher,
        rho_clipped: sigma > 1.0,
    }
}

/// FPCA-truncated estimator from precomputed eigen-systems and scores.
pub fn fpca_cca(
    eigen_x: &EigenSystem,
    scores_x: &ScoreMatrix,
    eigen_y: &EigenSystem,
    scores_y: &ScoreMatrix,
    k_x: usize,
    k_y: usize,
    r: usize,
) -> Result<CcaEstimate> {
    if r == 0 {
        return Err(Error::DomainError("need at least one canonical pair".into()));
    }
    let tuning = Tuning::Truncation { k_x, k_y };
    let (wx, wy) = whitening(&tuning, &eigen_x.eigenvalues, &eigen_y.eigenvalues)?;
    let gamma = cross_covariance_scores(scores_x, scores_y)?;
    let pairs = solve_whitened(&gamma, &wx, &wy, r);
    let lift = |eig: &EigenSystem, coords: &[f64]| {
        let fields: Vec<&[f64]> = eig.eigenfields.iter().map(|f| f.values()).collect();
        TangentField::combination(&eig.base, coords, &fields[..coords.len()])
    };
    Ok(assemble(pairs, |c| lift(eigen_x, c), |c| lift(eigen_y, c), tuning))
}

/// Tikhonov-regularized estimator, solved in Gram space.
pub fn tikhonov_cca(logs_x: &LogFieldMatrix, logs_y: &LogFieldMatrix, eps_x: f64, eps_y: f64, r: usize) -> Result<CcaEstimate> {
    CcaData::from_logs(logs_x.clone(), logs_y.clone())?.fit(&Tuning::Ridge { eps_x, eps_y }, r)
}

/// Gram-space eigenbasis of one side, with the first eigenfield oriented.
#[derive(Debug, Clone)]
struct Side {
    eig: GramEigen,
    /// Indices of the rows of the full log matrix this side was fitted on.
    members: Vec<usize>,
}

impl Side {
    fn fit(logs: &LogFieldMatrix, gram: &DMatrix<f64>, members: Vec<usize>) -> Self {
        let centered = centered_subgram(gram, &members);
        Self::oriented(logs, GramEigen::new(&centered), members)
    }

    /// Held-in eigenbasis from the full-sample scores, whose outer product
    /// reproduces the Gram array up to the dropped null components.
    fn fit_factored(logs: &LogFieldMatrix, full: &Side, members: Vec<usize>) -> Self {
        let scores = full.eig.scores(full.eig.rank());
        let r = scores.ncols();
        let mut b = DMatrix::from_fn(members.len(), r, |a, k| scores[(members[a], k)]);
        for k in 0..r {
            let mean = b.column(k).mean();
            b.column_mut(k).add_scalar_mut(-mean);
        }
        Self::oriented(logs, GramEigen::from_factors(&b), members)
    }

    fn oriented(logs: &LogFieldMatrix, mut eig: GramEigen, members: Vec<usize>) -> Self {
        if eig.rank() > 0 {
            let phi = combine_rows(logs, &members, &eig.field_weights(0));
            if needs_flip(phi.values()) {
                eig.flip(0);
            }
        }
        Side { eig, members }
    }

    /// `gamma = s_x^T s_y / n` over all retained components.
    fn cross_scores(&self, other: &Side) -> DMatrix<f64> {
        let s = self.members.len() as f64;
        self.eig.scores(self.eig.rank()).transpose() * other.eig.scores(other.eig.rank()) / s
    }

    /// Weights over `members` such that `sum_a w[a] L_a` is the field with the given eigen-coordinates.
    fn row_weights(&self, coords: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.members.len()];
        for (k, &c) in coords.iter().enumerate() {
            for (acc, a) in w.iter_mut().zip(self.eig.field_weights(k)) {
                *acc += c * a;
            }
        }
        w
    }
}

/// `sum_a weights[a] L_{members[a]}`.
fn combine_rows(logs: &LogFieldMatrix, members: &[usize], weights: &[f64]) -> TangentField {
    let rows: Vec<&[f64]> = members.iter().map(|&i| logs.row(i)).collect();
    TangentField::combination(logs.base(), weights, &rows)
}

/// Double-centered Gram array of a subset: the Gram array of the subset's
/// log-fields taken about the subset's own Fréchet mean.
fn centered_subgram(gram: &DMatrix<f64>, members: &[usize]) -> DMatrix<f64> {
    let s = members.len();
    let sub = DMatrix::from_fn(s, s, |a, b| gram[(members[a], members[b])]);
    let row_means: Vec<f64> = (0..s).map(|a| sub.row(a).sum() / s as f64).collect();
    let grand = row_means.iter().sum::<f64>() / s as f64;
    DMatrix::from_fn(s, s, |a, b| sub[(a, b)] - row_means[a] - row_means[b] + grand)
}

/// Full-sample log-fields and Gram arrays of a paired sample.
#[derive(Debug, Clone)]
pub struct CcaData {
    logs_x: LogFieldMatrix,
    logs_y: LogFieldMatrix,
    gram_x: DMatrix<f64>,
    gram_y: DMatrix<f64>,
    full: OnceLock<(Side, Side)>,
}

/// Chosen tuning and the score of every candidate, in input order.
#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub chosen: Tuning,
    pub scores: Vec<(Tuning, f64)>,
}

impl CcaData {
    /// Centers both samples at their Fréchet means.
    pub fn new(sample_x: &Sample, sample_y: &Sample) -> Result<Self> {
        if sample_x.len() != sample_y.len() {
            return Err(Error::SampleMismatch { left: sample_x.len(), right: sample_y.len() });
        }
        let mean_x = Arc::new(frechet_mean_curve(sample_x));
        let mean_y = Arc::new(frechet_mean_curve(sample_y));
        Self::from_logs(log_fields(sample_x, &mean_x)?, log_fields(sample_y, &mean_y)?)
    }

    pub fn from_logs(logs_x: LogFieldMatrix, logs_y: LogFieldMatrix) -> Result<Self> {
        if logs_x.len() != logs_y.len() {
            return Err(Error::SampleMismatch { left: logs_x.len(), right: logs_y.len() });
        }
        if logs_x.len() < 2 {
            return Err(Error::EmptyInput("canonical correlation needs at least two subjects".into()));
        }
        let gram_x = logs_x.gram();
        let gram_y = logs_y.gram();
        Ok(Self { logs_x, logs_y, gram_x, gram_y, full: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.logs_x.len()
    }

    pub fn logs_x(&self) -> &LogFieldMatrix {
        &self.logs_x
    }

    pub fn logs_y(&self) -> &LogFieldMatrix {
        &self.logs_y
    }

    pub fn mean_x(&self) -> &Arc<DistributionCurve> {
        self.logs_x.base()
    }

    pub fn mean_y(&self) -> &Arc<DistributionCurve> {
        self.logs_y.base()
    }

    /// Eigen-systems of both sides, up to `k` components each.
    pub fn eigen(&self, k: usize) -> Result<((EigenSystem, ScoreMatrix), (EigenSystem, ScoreMatrix))> {
        Ok((
            covariance_eigen_from_gram(&self.logs_x, &self.gram_x, k)?,
            covariance_eigen_from_gram(&self.logs_y, &self.gram_y, k)?,
        ))
    }

    /// Full-sample eigenbases, computed on first use.
    fn full_sides(&self) -> &(Side, Side) {
        self.full.get_or_init(|| {
            let all: Vec<usize> = (0..self.n()).collect();
            (Side::fit(&self.logs_x, &self.gram_x, all.clone()), Side::fit(&self.logs_y, &self.gram_y, all))
        })
    }

    /// Fits the estimator selected by `tuning`, returning `r` pairs when available.
    pub fn fit(&self, tuning: &Tuning, r: usize) -> Result<CcaEstimate> {
        if r == 0 {
            return Err(Error::DomainError("need at least one canonical pair".into()));
        }
        let (side_x, side_y) = self.full_sides();
        if side_x.eig.rank() == 0 || side_y.eig.rank() == 0 {
            return Err(Error::RankError { requested: 1, available: 0 });
        }
        let (wx, wy) = whitening(tuning, &side_x.eig.values, &side_y.eig.values)?;
        let gamma = side_x.cross_scores(side_y);
        let pairs = solve_whitened(&gamma, &wx, &wy, r);
        Ok(assemble(
            pairs,
            |c| combine_rows(&self.logs_x, &side_x.members, &side_x.row_weights(c)),
            |c| combine_rows(&self.logs_y, &side_y.members, &side_y.row_weights(c)),
            *tuning,
        ))
    }

    /// K-fold cross-validation of the leading pair by pooled squared
    /// Pearson correlation of held-out projections.
    ///
    /// Weight fields are fitted on the held-in folds about the held-in
    /// mean, transported to the full-sample mean, and paired with the
    /// held-out full-sample log-fields. Ties go to the simpler candidate.
    pub fn cross_validate(&self, candidates: &[Tuning], folds: usize, seed: u64) -> Result<CvOutcome> {
        Ok(self.cross_validate_groups(&[candidates], folds, seed)?.remove(0))
    }

    /// Several independent selections over the same folds, each group
    /// choosing among its own candidates.
    pub fn cross_validate_groups(&self, groups: &[&[Tuning]], folds: usize, seed: u64) -> Result<Vec<CvOutcome>> {
        if groups.iter().any(|g| g.is_empty()) {
            return Err(Error::EmptyInput("no tuning candidates".into()));
        }
        let candidates: Vec<Tuning> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        let partition = fold_partition(self.n(), folds, seed)?;
        let per_fold: Vec<Vec<(Vec<f64>, Vec<f64>)>> = partition
            .par_iter()
            .map(|held_out| self.evaluate_fold(held_out, &candidates))
            .collect::<Result<_>>()?;

        let n = self.n();
        let mut scores = Vec::with_capacity(candidates.len());
        for (c, tuning) in candidates.iter().enumerate() {
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            for (held_out, results) in partition.iter().zip(&per_fold) {
                let (px, py) = &results[c];
                for (slot, &i) in held_out.iter().enumerate() {
                    x[i] = px[slot];
                    y[i] = py[slot];
                }
            }
            scores.push((*tuning, squared_pearson(&x, &y)));
        }
        let mut rest = scores.as_slice();
        Ok(groups
            .iter()
            .map(|g| {
                let (mine, tail) = rest.split_at(g.len());
                rest = tail;
                CvOutcome { chosen: pick_best(mine), scores: mine.to_vec() }
            })
            .collect())
    }

    fn evaluate_fold(&self, held_out: &[usize], candidates: &[Tuning]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut is_out = vec![false; self.n()];
        held_out.iter().for_each(|&i| is_out[i] = true);
        let held_in: Vec<usize> = (0..self.n()).filter(|&i| !is_out[i]).collect();
        let (full_x, full_y) = self.full_sides();
        let side_x = Side::fit_factored(&self.logs_x, full_x, held_in.clone());
        let side_y = Side::fit_factored(&self.logs_y, full_y, held_in);
        let gamma = side_x.cross_scores(&side_y);

        candidates
            .iter()
            .map(|tuning| {
                let (wx, wy) = whitening(tuning, &side_x.eig.values, &side_y.eig.values)?;
                let pair = solve_whitened(&gamma, &wx, &wy, 1).remove(0);
                let project = |side: &Side, gram: &DMatrix<f64>, coords: &[f64]| -> Vec<f64> {
                    let w = side.row_weights(coords);
                    held_out
                        .iter()
                        .map(|&i| side.members.iter().zip(&w).map(|(&a, wa)| wa * gram[(i, a)]).sum())
                        .collect()
                };
                Ok((project(&side_x, &self.gram_x, &pair.u), project(&side_y, &self.gram_y, &pair.v)))
            })
            .collect()
    }
}

/// Seeded shuffle of `0..n` cut into `folds` contiguous blocks whose sizes differ by at most one.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::DomainError(format!("need at least 2 folds, got {folds}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for l in 0..folds {
        let size = base + usize::from(l < extra);
        if size < 2 || n - size < 2 {
            return Err(Error::FoldError { fold: l, size });
        }
        let mut block = order[start..start + size].to_vec();
        block.sort_unstable();
        out.push(block);
        start += size;
    }
    Ok(out)
}

/// Squared Pearson correlation in the single-sum form; zero when either side is constant.
pub fn squared_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let num = n * sxy - sx * sy;
    let den = (n * sxx - sx * sx) * (n * syy - sy * sy);
    if den > 0.0 {
        (num * num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn pick_best(scores: &[(Tuning, f64)]) -> Tuning {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.complexity().total_cmp(&scores[b].0.complexity()));
    let mut best = order[0];
    for &i in &order[1..] {
        if scores[i].1 > scores[best].1 {
            best = i;
        }
    }
    scores[best].0
}

/// Cross-validated choice among `candidates`, all of which must belong to `method`.
pub fn cv_select(
    sample_x: &Sample,
    sample_y: &Sample,
    method: Method,
    candidates: &[Tuning],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no tuning candidates".into()));
    }
    if let Some(bad) = candidates.iter().find(|t| t.method() != method) {
        return Err(Error::DomainError(format!("candidate {bad:?} does not belong to {method}")));
    }
    CcaData::new(sample_x, sample_y)?.cross_validate(candidates, folds, seed)
}
