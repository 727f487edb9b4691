//! Fréchet means, log-fields and sample covariance structure.
//!
//! The sample covariance operator `C = (1/n) sum_i L_i ⊗ L_i` of the
//! log-fields `L_i = Log_mean X_i` is never formed. Its nonzero spectrum is
//! read off the `n x n` Gram array `G[i][k] = <<L_i, L_k>>`: if `G/n = A diag(l) A^T`
//! then `l` are the eigenvalues of `C` and `Phi_k = sum_i A[i][k] L_i / sqrt(n l_k)`
//! its orthonormal eigenfields.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::tensor::{dot, DistributionCurve, TangentField};

/// `n` curves on one grid.
#[derive(Debug, Clone)]
pub struct Sample {
    curves: Vec<DistributionCurve>,
    grid: GridConfig,
}

impl Sample {
    pub fn new(curves: Vec<DistributionCurve>) -> Result<Self> {
        let first = curves.first().ok_or_else(|| Error::EmptyInput("sample has no curves".into()))?;
        let grid = *first.grid();
        for c in &curves {
            grid.ensure_same(c.grid())?;
        }
        Ok(Self { curves, grid })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn curves(&self) -> &[DistributionCurve] {
        &self.curves
    }

    /// The curves at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Sample> {
        Sample::new(indices.iter().map(|&i| self.curves[i].clone()).collect())
    }
}

/// Per-frame average of quantile functions, the sample Wasserstein barycenter.
pub fn frechet_mean_curve(sample: &Sample) -> DistributionCurve {
    let grid = sample.grid;
    let n = sample.len() as f64;
    let mut acc = vec![0.0; grid.surface_len()];
    for c in &sample.curves {
        for (a, q) in acc.iter_mut().zip(c.surface()) {
            *a += q;
        }
    }
    let (lo, hi) = grid.support();
    for a in acc.iter_mut() {
        *a = (*a / n).clamp(lo, hi);
    }
    DistributionCurve::from_surface_unchecked(acc, grid)
}

/// `Log_mean X_i` for every curve, stored row-wise.
#[derive(Debug, Clone)]
pub struct LogFieldMatrix {
    rows: Vec<f64>,
    n: usize,
    base: Arc<DistributionCurve>,
}

pub fn log_fields(sample: &Sample, mean: &Arc<DistributionCurve>) -> Result<LogFieldMatrix> {
    sample.grid.ensure_same(mean.grid())?;
    let len = sample.grid.surface_len();
    let mut rows = vec![0.0; sample.len() * len];
    rows.par_chunks_mut(len).zip(sample.curves.par_iter()).for_each(|(row, curve)| {
        for ((r, x), m) in row.iter_mut().zip(curve.surface()).zip(mean.surface()) {
            *r = x - m;
        }
    });
    Ok(LogFieldMatrix { rows, n: sample.len(), base: mean.clone() })
}

impl LogFieldMatrix {
    /// Wraps precomputed rows (row-major, one surface per row).
    pub fn from_rows(rows: Vec<f64>, base: Arc<DistributionCurve>) -> Result<Self> {
        let len = base.grid().surface_len();
        if rows.is_empty() || rows.len() % len != 0 {
            return Err(Error::GridMismatch(format!("{} values is not a whole number of {len}-value rows", rows.len())));
        }
        Ok(Self { n: rows.len() / len, rows, base })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn base(&self) -> &Arc<DistributionCurve> {
        &self.base
    }

    pub fn grid(&self) -> &GridConfig {
        self.base.grid()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let len = self.grid().surface_len();
        &self.rows[i * len..(i + 1) * len]
    }

    pub fn field(&self, i: usize) -> TangentField {
        TangentField::from_raw(self.row(i).to_vec(), self.base.clone())
    }

    /// Entrywise average of the rows.
    pub fn mean_field(&self) -> TangentField {
        let len = self.grid().surface_len();
        let mut acc = vec![0.0; len];
        for i in 0..self.n {
            for (a, x) in acc.iter_mut().zip(self.row(i)) {
                *a += x;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.n as f64;
        }
        TangentField::from_raw(acc, self.base.clone())
    }

    /// `G[i][k] = <<L_i, L_k>>`, without the `1/n` factor.
    pub fn gram(&self) -> DMatrix<f64> {
        // Row-major n x p storage is a column-major p x n array.
        let b = DMatrix::from_column_slice(self.grid().surface_len(), self.n, &self.rows);
        let mut g = b.transpose() * &b * self.grid().cell_weight();
        for i in 0..self.n {
            for k in 0..i {
                let v = 0.5 * (g[(i, k)] + g[(k, i)]);
                g[(i, k)] = v;
                g[(k, i)] = v;
            }
        }
        g
    }

    /// `<<L_i, f>>` for every row.
    pub fn project(&self, f: &TangentField) -> Result<Vec<f64>> {
        self.grid().ensure_same(f.grid())?;
        let w = self.grid().cell_weight();
        Ok((0..self.n).map(|i| dot(self.row(i), f.values()) * w).collect())
    }

    /// `sum_i coeffs[i] L_i`.
    pub fn combine(&self, coeffs: &[f64]) -> TangentField {
        let rows: Vec<&[f64]> = (0..self.n).map(|i| self.row(i)).collect();
        TangentField::combination(&self.base, coeffs, &rows)
    }

    /// Applies the sample covariance operator: `C f = (1/n) sum_i <<L_i, f>> L_i`.
    pub fn apply_covariance(&self, f: &TangentField) -> Result<TangentField> {
        let coeffs: Vec<f64> = self.project(f)?.into_iter().map(|c| c / self.n as f64).collect();
        Ok(self.combine(&coeffs))
    }

    /// Squared Hilbert-Schmidt distance between the sample covariance and
    /// `sum_k values[k] fields[k] ⊗ fields[k]`, with orthonormal `fields`
    /// living over any curve on the same grid. Fields are compared after
    /// transport, which is the identity in quantile coordinates.
    pub fn covariance_hs_distance_sq(&self, values: &[f64], fields: &[TangentField]) -> Result<f64> {
        let n = self.n as f64;
        let g = self.gram();
        let sample_sq: f64 = g.iter().map(|x| x * x).sum::<f64>() / (n * n);
        let mut cross = 0.0;
        for (lambda, phi) in values.iter().zip(fields) {
            let p = self.project(phi)?;
            cross += lambda * p.iter().map(|x| x * x).sum::<f64>() / n;
        }
        let truth_sq: f64 = values.iter().map(|l| l * l).sum();
        Ok((sample_sq - 2.0 * cross + truth_sq).max(0.0))
    }
}

/// Leading eigenpairs of a sample covariance operator.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<TangentField>,
    pub base: Arc<DistributionCurve>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// `s[i][k] = <<L_i, Phi_k>>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub s: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn components(&self) -> usize {
        self.s.ncols()
    }
}

/// Spectral decomposition of `G/n` for a centered Gram array `G`.
///
/// Eigenvalues are sorted descending; those below the numerical rank
/// threshold (negative round-off included) are dropped together with their
/// eigenvectors.
#[derive(Debug, Clone)]
pub(crate) struct GramEigen {
    pub values: Vec<f64>,
    /// `n x r`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    pub n: usize,
}

impl GramEigen {
    pub fn new(gram: &DMatrix<f64>) -> Self {
        let n = gram.nrows();
        let scaled = gram / n as f64;
        let eig = SymmetricEigen::new(scaled);
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort keeps solver order on ties.
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = order.first().map(|&k| eig.eigenvalues[k]).unwrap_or(0.0).max(0.0);
        let threshold = top * n as f64 * f64::EPSILON;
        let kept: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > threshold).collect();
        let values = kept.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, kept.len(), |i, c| eig.eigenvectors[(i, kept[c])]);
        Self { values, vectors, n }
    }

    /// Eigen-decomposition of `B B^T / s` for an `s x r` factor `B`, through
    /// the `r x r` array `B^T B / s`.
    pub fn from_factors(b: &DMatrix<f64>) -> Self {
        let s = b.nrows();
        let small = b.transpose() * b / s as f64;
        let eig = SymmetricEigen::new(small);
        let r = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        let top = order.first().map(|&k| eig.eigenvalues[k]).unwrap_or(0.0).max(0.0);
        let threshold = top * s as f64 * f64::EPSILON;
        let kept: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > threshold).collect();
        let values: Vec<f64> = kept.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = DMatrix::zeros(s, kept.len());
        for (c, &k) in kept.iter().enumerate() {
            let col = b * eig.eigenvectors.column(k);
            let scale = 1.0 / (s as f64 * values[c]).sqrt();
            vectors.set_column(c, &(col * scale));
        }
        Self { values, vectors, n: s }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Weights `c` with `Phi_k = sum_i c[i] L_i`.
    pub fn field_weights(&self, k: usize) -> Vec<f64> {
        let scale = 1.0 / (self.n as f64 * self.values[k]).sqrt();
        self.vectors.column(k).iter().map(|a| a * scale).collect()
    }

    /// Scores `sqrt(n l_k) A[i][k]`, first `k` components.
    pub fn scores(&self, k: usize) -> DMatrix<f64> {
        let n = self.n as f64;
        DMatrix::from_fn(self.n, k, |i, c| (n * self.values[c]).sqrt() * self.vectors[(i, c)])
    }

    pub fn flip(&mut self, k: usize) {
        for x in self.vectors.column_mut(k).iter_mut() {
            *x = -*x;
        }
    }
}

/// Makes the entry of largest magnitude positive; returns whether a flip was needed.
pub(crate) fn needs_flip(values: &[f64]) -> bool {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in values {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    sign < 0.0
}

/// Eigen-decomposition of the sample covariance of `logs`, via its Gram array.
///
/// Returns at most `max_components` pairs; fewer when the numerical rank is smaller.
pub fn covariance_eigen(logs: &LogFieldMatrix, max_components: usize) -> Result<(EigenSystem, ScoreMatrix)> {
    covariance_eigen_from_gram(logs, &logs.gram(), max_components)
}

/// [`covariance_eigen`] with the Gram array of `logs` already at hand.
pub(crate) fn covariance_eigen_from_gram(
    logs: &LogFieldMatrix,
    gram: &DMatrix<f64>,
    max_components: usize,
) -> Result<(EigenSystem, ScoreMatrix)> {
    if max_components > logs.n {
        return Err(Error::RankError { requested: max_components, available: logs.n });
    }
    let mut eig = GramEigen::new(gram);
    let k = max_components.min(eig.rank());
    let mut eigenfields = Vec::with_capacity(k);
    for c in 0..k {
        let mut field = logs.combine(&eig.field_weights(c));
        if needs_flip(field.values()) {
            eig.flip(c);
            field = field.scaled(-1.0);
        }
        eigenfields.push(field);
    }
    let scores = ScoreMatrix { s: eig.scores(k) };
    Ok((
        EigenSystem { eigenvalues: eig.values[..k].to_vec(), eigenfields, base: logs.base.clone() },
        scores,
    ))
}

/// `gamma[j][k] = (1/n) sum_i s_x[i][j] s_y[i][k]`.
pub fn cross_covariance_scores(scores_x: &ScoreMatrix, scores_y: &ScoreMatrix) -> Result<DMatrix<f64>> {
    if scores_x.n() != scores_y.n() {
        return Err(Error::SampleMismatch { left: scores_x.n(), right: scores_y.n() });
    }
    Ok(scores_x.s.transpose() * &scores_y.s / scores_x.n() as f64)
}

/// Truncated versions of the two alignment sums
/// `sum gamma^2 / (l_X^2 l_Y)` and `sum gamma^2 / (l_X l_Y^2)`.
///
/// Advisory only: large or fast-growing values signal that the
/// cross-covariance is poorly aligned with the leading eigenfields.
pub fn alignment_diagnostic(gamma: &DMatrix<f64>, lambda_x: &[f64], lambda_y: &[f64], k_x: usize, k_y: usize) -> (f64, f64) {
    let k_x = k_x.min(gamma.nrows()).min(lambda_x.len());
    let k_y = k_y.min(gamma.ncols()).min(lambda_y.len());
    let mut first = 0.0;
    let mut second = 0.0;
    for j in 0..k_x {
        for k in 0..k_y {
            let g2 = gamma[(j, k)] * gamma[(j, k)];
            if g2 == 0.0 {
                continue;
            }
            first += g2 / (lambda_x[j] * lambda_x[j] * lambda_y[k]);
            second += g2 / (lambda_x[j] * lambda_y[k] * lambda_y[k]);
        }
    }
    (first, second)
}

/// CSV-friendly view of an eigen-system: one row per component.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentRow {
    pub component: usize,
    pub eigenvalue: f64,
    pub explained: f64,
}

pub fn component_rows(eigen: &EigenSystem) -> Vec<ComponentRow> {
    let total: f64 = eigen.eigenvalues.iter().sum();
    eigen
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| ComponentRow { component: k + 1, eigenvalue: l, explained: if total > 0.0 { l / total } else { 0.0 } })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasserstein::Distribution;

    fn grid() -> GridConfig {
        GridConfig::new(8, 3, (0.0, 1.0)).unwrap()
    }

    fn uniform_curve(lo: f64, hi: f64) -> DistributionCurve {
        let g = grid();
        DistributionCurve::new((0..3).map(|_| Distribution::uniform(lo, hi, g).unwrap()).collect(), g).unwrap()
    }

    #[test]
    fn mean_of_single_curve() {
        let c = uniform_curve(0.1, 0.7);
        let s = Sample::new(vec![c.clone()]).unwrap();
        assert_eq!(frechet_mean_curve(&s), c);
    }

    #[test]
    fn mean_of_shifted_uniforms() {
        let s = Sample::new(vec![uniform_curve(0.0, 0.5), uniform_curve(0.5, 1.0)]).unwrap();
        let mean = frechet_mean_curve(&s);
        let expected = uniform_curve(0.25, 0.75);
        for (a, b) in mean.surface().iter().zip(expected.surface()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_curves_have_zero_logs() {
        let s = Sample::new(vec![uniform_curve(0.2, 0.6); 4]).unwrap();
        let mean = Arc::new(frechet_mean_curve(&s));
        let logs = log_fields(&s, &mean).unwrap();
        assert!(logs.rows.iter().all(|&x| x == 0.0));
        let (eig, scores) = covariance_eigen(&logs, 2).unwrap();
        assert!(eig.is_empty());
        assert_eq!(scores.components(), 0);
    }

    #[test]
    fn single_nonzero_row() {
        let base = Arc::new(uniform_curve(0.0, 1.0));
        let len = grid().surface_len();
        let mut rows = vec![0.0; 3 * len];
        for (j, x) in rows[len..2 * len].iter_mut().enumerate() {
            *x = (j as f64 * 0.37).sin();
        }
        let logs = LogFieldMatrix::from_rows(rows, base).unwrap();
        let r = logs.field(1);
        let (eig, _) = covariance_eigen(&logs, 3).unwrap();
        assert_eq!(eig.len(), 1);
        assert!((eig.eigenvalues[0] - r.norm().powi(2) / 3.0).abs() < 1e-14);
        let unit = r.scaled(1.0 / r.norm());
        let sign = if needs_flip(unit.values()) { -1.0 } else { 1.0 };
        for (a, b) in eig.eigenfields[0].values().iter().zip(unit.values()) {
            assert!((a - sign * b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_error() {
        let s = Sample::new(vec![uniform_curve(0.2, 0.6); 2]).unwrap();
        let mean = Arc::new(frechet_mean_curve(&s));
        let logs = log_fields(&s, &mean).unwrap();
        assert!(matches!(covariance_eigen(&logs, 3), Err(Error::RankError { .. })));
    }

    #[test]
    fn cross_covariance_edge_cases() {
        let a = ScoreMatrix { s: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]) };
        let b = ScoreMatrix { s: DMatrix::from_row_slice(1, 3, &[3.0, 4.0, 5.0]) };
        let g = cross_covariance_scores(&a, &b).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 3, &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]));
        let c = ScoreMatrix { s: DMatrix::zeros(2, 2) };
        assert!(matches!(cross_covariance_scores(&a, &c), Err(Error::SampleMismatch { .. })));
    }

    #[test]
    fn alignment_sums() {
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(alignment_diagnostic(&zero, &[1.0, 0.5, 0.1], &[1.0, 0.2, 0.1], 3, 3), (0.0, 0.0));

        let lx: [f64; 3] = [0.8, 0.3, 0.05];
        let ly: [f64; 3] = [0.6, 0.2, 0.02];
        let rho = [0.9, 0.4, 0.1];
        let gamma = DMatrix::from_fn(3, 3, |j, k| if j == k { (lx[j] * ly[j]).sqrt() * rho[j] } else { 0.0 });
        let (a, b) = alignment_diagnostic(&gamma, &lx, &ly, 3, 3);
        let ea: f64 = (0..3).map(|j| rho[j] * rho[j] / lx[j]).sum();
        let eb: f64 = (0..3).map(|j| rho[j] * rho[j] / ly[j]).sum();
        assert!((a - ea).abs() < 1e-12 && (b - eb).abs() < 1e-12);

        let mut prev = (0.0, 0.0);
        for k in 1..=3 {
            let cur = alignment_diagnostic(&gamma, &lx, &ly, k, k);
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prev = cur;
        }
    }
}
