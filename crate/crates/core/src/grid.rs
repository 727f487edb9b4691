//! Discretization shared by every distribution, curve and field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile-level and time discretization.
///
/// Quantile levels sit on the midpoint grid `u_j = (j - 1/2) / m`, so no
/// quantile is ever evaluated at 0 or 1. Time samples are equispaced and
/// include both endpoints of the time domain. Every `du` and `dt` integral
/// uses uniform weights over these nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    m_levels: usize,
    t_points: usize,
    support: (f64, f64),
    time_domain: (f64, f64),
}

impl GridConfig {
    /// Grid over the default time domain `[0, 1]`.
    pub fn new(m_levels: usize, t_points: usize, support: (f64, f64)) -> Result<Self> {
        Self::with_time_domain(m_levels, t_points, support, (0.0, 1.0))
    }

    pub fn with_time_domain(
        m_levels: usize,
        t_points: usize,
        support: (f64, f64),
        time_domain: (f64, f64),
    ) -> Result<Self> {
        if m_levels < 2 {
            return Err(Error::InvalidGrid(format!("m_levels = {m_levels}, need at least 2")));
        }
        if t_points < 2 {
            return Err(Error::InvalidGrid(format!("t_points = {t_points}, need at least 2")));
        }
        let (a, b) = support;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidGrid(format!("support [{a}, {b}] is not a proper interval")));
        }
        let (t0, t1) = time_domain;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::InvalidGrid(format!(
                "time domain [{t0}, {t1}] is not a proper interval"
            )));
        }
        Ok(Self { m_levels, t_points, support, time_domain })
    }

    pub fn m_levels(&self) -> usize {
        self.m_levels
    }

    pub fn t_points(&self) -> usize {
        self.t_points
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn time_domain(&self) -> (f64, f64) {
        self.time_domain
    }

    /// Number of reals in one (time x level) surface.
    pub fn surface_len(&self) -> usize {
        self.m_levels * self.t_points
    }

    /// The `j`-th quantile level (zero-based).
    pub fn level(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.m_levels as f64
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.m_levels).map(|j| self.level(j)).collect()
    }

    /// The `i`-th time sample (zero-based).
    pub fn time(&self, i: usize) -> f64 {
        let (t0, t1) = self.time_domain;
        t0 + (t1 - t0) * i as f64 / (self.t_points - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.t_points).map(|i| self.time(i)).collect()
    }

    /// Quadrature weight of one level for `du` integrals over `(0, 1)`.
    pub fn level_weight(&self) -> f64 {
        1.0 / self.m_levels as f64
    }

    /// Quadrature weight of one (time, level) cell in the tensor inner product.
    pub fn cell_weight(&self) -> f64 {
        let (t0, t1) = self.time_domain;
        (t1 - t0) / (self.t_points as f64 * self.m_levels as f64)
    }

    pub(crate) fn ensure_same(&self, other: &GridConfig) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    pub(crate) fn ensure_same_levels(&self, other: &GridConfig) -> Result<()> {
        if self.m_levels == other.m_levels && self.support == other.support {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "m = {} on {:?} vs m = {} on {:?}",
                self.m_levels, self.support, other.m_levels, other.support
            )))
        }
    }
}
