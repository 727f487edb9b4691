//! Distributions on a compact interval in quantile coordinates, and the
//! Wasserstein geometry on them.
//!
//! A distribution is stored as its quantile function sampled on the
//! midpoint level grid of a [`GridConfig`]. In these coordinates the
//! optimal transport map from `mu` to `nu` is `F_nu^-1 o F_mu`, so
//!
//! * the 2-Wasserstein distance is the `L2(0, 1)` distance of quantile functions,
//! * `Log_mu(nu)` evaluated at `x = F_mu^-1(u)` is `F_nu^-1(u) - F_mu^-1(u)`,
//! * `Exp_mu(T)` pushes `mu` through `id + T`, i.e. adds `T` to the quantiles,
//! * parallel transport between tangent spaces leaves the entries unchanged.
//!
//! Tangent vectors are therefore stored as functions of the quantile level,
//! not of `x`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::isotonic::project_nondecreasing;

/// Relative slack (in units of the support width) tolerated by strict
/// exponential maps before a decrease counts as leaving the log image.
pub const STRICT_SLACK: f64 = 1e-12;

/// A probability measure on the grid's support, held as quantiles `q_j = F^-1(u_j)`.
#[derive(Debug, Clone)]
pub struct Distribution {
    q: Vec<f64>,
    grid: GridConfig,
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q
            && self.grid.m_levels() == other.grid.m_levels()
            && self.grid.support() == other.grid.support()
    }
}

impl Distribution {
    /// Validates monotonicity and support containment.
    pub fn new(q: Vec<f64>, grid: GridConfig) -> Result<Self> {
        if q.len() != grid.m_levels() {
            return Err(Error::InvalidDistribution(format!(
                "{} quantiles for a grid with {} levels",
                q.len(),
                grid.m_levels()
            )));
        }
        if let Some(j) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite quantile at level {j}")));
        }
        if let Some(j) = q.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidDistribution(format!(
                "quantiles decrease between levels {j} and {}",
                j + 1
            )));
        }
        let (a, b) = grid.support();
        if q[0] < a || q[q.len() - 1] > b {
            let value = if q[0] < a { q[0] } else { q[q.len() - 1] };
            return Err(Error::SupportViolation { value, lower: a, upper: b });
        }
        Ok(Self { q, grid })
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_raw(q: Vec<f64>, grid: GridConfig) -> Self {
        debug_assert_eq!(q.len(), grid.m_levels());
        Self { q, grid }
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64, grid: GridConfig) -> Result<Self> {
        Self::new(vec![x; grid.m_levels()], grid)
    }

    /// Uniform distribution on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, grid: GridConfig) -> Result<Self> {
        let q = grid.levels().iter().map(|u| lo + (hi - lo) * u).collect();
        Self::new(q, grid)
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.q
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn into_quantiles(self) -> Vec<f64> {
        self.q
    }

    pub fn mean(&self) -> f64 {
        self.q.iter().sum::<f64>() / self.q.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    support: [f64; 2],
    m: usize,
    q: Vec<f64>,
}

impl Serialize for Distribution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (a, b) = self.grid.support();
        DistributionRepr { support: [a, b], m: self.grid.m_levels(), q: self.q.clone() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DistributionRepr::deserialize(deserializer)?;
        let grid = GridConfig::new(repr.m, 2, (repr.support[0], repr.support[1]))
            .map_err(D::Error::custom)?;
        Distribution::new(repr.q, grid).map_err(D::Error::custom)
    }
}

/// An element of `Tan_mu` in quantile coordinates: `v_j = T(F_mu^-1(u_j))`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    v: Vec<f64>,
    base: Arc<Distribution>,
}

impl TangentVector {
    pub fn new(v: Vec<f64>, base: Arc<Distribution>) -> Result<Self> {
        if v.len() != base.grid.m_levels() {
            return Err(Error::GridMismatch(format!(
                "{} entries for a base with {} levels",
                v.len(),
                base.grid.m_levels()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DomainError("tangent vector has non-finite entries".into()));
        }
        Ok(Self { v, base })
    }

    pub fn zero(base: Arc<Distribution>) -> Self {
        let m = base.grid.m_levels();
        Self { v: vec![0.0; m], base }
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn base(&self) -> &Arc<Distribution> {
        &self.base
    }

    /// `<self, other>_mu` by midpoint quadrature over the levels.
    pub fn inner(&self, other: &TangentVector) -> Result<f64> {
        same_base(&self.base, &other.base)?;
        let dot: f64 = self.v.iter().zip(&other.v).map(|(a, b)| a * b).sum();
        Ok(dot * self.base.grid.level_weight())
    }

    pub fn norm(&self) -> f64 {
        let ss: f64 = self.v.iter().map(|a| a * a).sum();
        (ss * self.base.grid.level_weight()).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { v: self.v.iter().map(|a| a * factor).collect(), base: self.base.clone() }
    }
}

fn same_base(a: &Arc<Distribution>, b: &Arc<Distribution>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::BaseMismatch)
    }
}

/// How [`exp_map`] treats candidates outside the log image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpMode {
    /// Reject non-monotone or out-of-support results.
    Strict,
    /// Pool adjacent violators, then clip to the support.
    Project,
}

pub fn wasserstein_distance(mu: &Distribution, nu: &Distribution) -> Result<f64> {
    mu.grid.ensure_same_levels(&nu.grid)?;
    Ok(quantile_distance_sq(&mu.q, &nu.q).sqrt())
}

/// Squared `L2(0,1)` distance of two quantile vectors under midpoint quadrature.
pub(crate) fn quantile_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    ss / a.len() as f64
}

pub fn log_map(mu: &Distribution, nu: &Distribution) -> Result<TangentVector> {
    log_map_at(&Arc::new(mu.clone()), nu)
}

/// [`log_map`] with a shared base, so repeated logs at one point reuse it.
pub fn log_map_at(mu: &Arc<Distribution>, nu: &Distribution) -> Result<TangentVector> {
    mu.grid.ensure_same_levels(&nu.grid)?;
    let v = nu.q.iter().zip(&mu.q).map(|(b, a)| b - a).collect();
    Ok(TangentVector { v, base: mu.clone() })
}

pub fn exp_map(base: &Distribution, v: &TangentVector, mode: ExpMode) -> Result<Distribution> {
    if *v.base != *base {
        return Err(Error::BaseMismatch);
    }
    let q: Vec<f64> = base.q.iter().zip(&v.v).map(|(a, b)| a + b).collect();
    Ok(Distribution::from_raw(settle_quantiles(q, &base.grid, mode)?, base.grid))
}

/// Turns a candidate quantile vector into a valid one according to `mode`.
///
/// Strict mode tolerates floating-point slack of `STRICT_SLACK` times the
/// support width and snaps it away; anything larger is an error.
pub(crate) fn settle_quantiles(mut q: Vec<f64>, grid: &GridConfig, mode: ExpMode) -> Result<Vec<f64>> {
    let (a, b) = grid.support();
    match mode {
        ExpMode::Strict => {
            let slack = STRICT_SLACK * (b - a);
            for j in 1..q.len() {
                if q[j] < q[j - 1] {
                    if q[j] < q[j - 1] - slack {
                        return Err(Error::NotInLogImage { index: j });
                    }
                    q[j] = q[j - 1];
                }
            }
            for x in q.iter_mut() {
                if *x < a - slack || *x > b + slack {
                    return Err(Error::SupportViolation { value: *x, lower: a, upper: b });
                }
                *x = x.clamp(a, b);
            }
        }
        ExpMode::Project => {
            project_nondecreasing(&mut q);
            for x in q.iter_mut() {
                *x = x.clamp(a, b);
            }
        }
    }
    Ok(q)
}

/// Point at time `t` on the constant-speed geodesic from `mu` to `nu`.
pub fn mccann_geodesic(mu: &Distribution, nu: &Distribution, t: f64) -> Result<Distribution> {
    mu.grid.ensure_same_levels(&nu.grid)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::DomainError(format!("geodesic time {t} outside [0, 1]")));
    }
    let (a, b) = mu.grid.support();
    let q = mu
        .q
        .iter()
        .zip(&nu.q)
        .map(|(x, y)| ((1.0 - t) * x + t * y).clamp(a, b))
        .collect();
    Ok(Distribution::from_raw(q, mu.grid))
}

/// Parallel transport `u -> u o F_from^-1 o F_to`.
///
/// In quantile coordinates the entries are unchanged; only the base moves.
pub fn transport_vector(v: &TangentVector, from: &Distribution, to: &Distribution) -> Result<TangentVector> {
    from.grid.ensure_same_levels(&to.grid)?;
    if *v.base != *from {
        return Err(Error::BaseMismatch);
    }
    Ok(TangentVector { v: v.v.clone(), base: Arc::new(to.clone()) })
}

/// Empirical quantiles of `samples` on the grid's levels.
///
/// Uses the right-continuous inverse `inf { x : F_n(x) > u }` of the
/// empirical CDF. Samples outside the support are rejected.
pub fn from_samples(samples: &[f64], grid: &GridConfig) -> Result<Distribution> {
    let (a, b) = grid.support();
    if let Some(&x) = samples.iter().find(|x| !(a..=b).contains(*x)) {
        return Err(Error::SupportViolation { value: x, lower: a, upper: b });
    }
    let (dist, _) = from_samples_clipped(samples, grid)?;
    Ok(dist)
}

/// Like [`from_samples`] but clips out-of-support samples, returning how many were clipped.
pub fn from_samples_clipped(samples: &[f64], grid: &GridConfig) -> Result<(Distribution, usize)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::DomainError("NaN sample".into()));
    }
    let (a, b) = grid.support();
    let mut clipped = 0;
    let mut sorted: Vec<f64> = samples
        .iter()
        .map(|&x| {
            if x < a || x > b {
                clipped += 1;
            }
            x.clamp(a, b)
        })
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let q = grid
        .levels()
        .iter()
        .map(|u| sorted[((u * n as f64).floor() as usize).min(n - 1)])
        .collect();
    Ok((Distribution::from_raw(q, *grid), clipped))
}

/// Quantiles of a density tabulated on an increasing `x` grid.
///
/// The density is integrated by the trapezoid rule, normalized to unit
/// mass, and the CDF is inverted by linear interpolation.
pub fn from_density_grid(density: &[(f64, f64)], grid: &GridConfig) -> Result<Distribution> {
    if density.len() < 2 {
        return Err(Error::EmptyInput("density needs at least two grid points".into()));
    }
    for w in density.windows(2) {
        if !(w[0].0 < w[1].0) {
            return Err(Error::DomainError("density x-grid must be strictly increasing".into()));
        }
    }
    if density.iter().any(|&(x, f)| !x.is_finite() || !f.is_finite() || f < 0.0) {
        return Err(Error::DomainError("density values must be finite and nonnegative".into()));
    }
    let mut cdf = Vec::with_capacity(density.len());
    cdf.push(0.0);
    for w in density.windows(2) {
        let last = cdf[cdf.len() - 1];
        cdf.push(last + 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0));
    }
    let total = cdf[cdf.len() - 1];
    if !(total > 0.0) {
        return Err(Error::DegenerateDensity(total));
    }
    let (a, b) = grid.support();
    let mut i = 1;
    let q = grid
        .levels()
        .iter()
        .map(|&u| {
            let target = u * total;
            while i < cdf.len() - 1 && cdf[i] < target {
                i += 1;
            }
            let (c0, c1) = (cdf[i - 1], cdf[i]);
            let (x0, x1) = (density[i - 1].0, density[i].0);
            let x = if c1 > c0 { x0 + (target - c0) / (c1 - c0) * (x1 - x0) } else { x1 };
            x.clamp(a, b)
        })
        .collect();
    Ok(Distribution::from_raw(q, *grid))
}
