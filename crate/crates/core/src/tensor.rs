//! Curves of distributions and square-integrable vector fields along them.
//!
//! A [`TangentField`] over a curve `mu` is a function `t -> Z(t)` with
//! `Z(t)` in the tangent space at `mu(t)`. On the grid it is a
//! `t_points x m_levels` array in quantile coordinates, and the tensor
//! inner product `<<Z1, Z2>>_mu = int <Z1(t), Z2(t)>_{mu(t)} dt` becomes a
//! weighted dot product with uniform weights.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::grid::GridConfig;
use crate::wasserstein::Distribution;

/// One functional datum: a distribution at every time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionCurve {
    grid: GridConfig,
    /// Row-major `t_points x m_levels` quantiles.
    q: Vec<f64>,
}

impl DistributionCurve {
    pub fn new(frames: Vec<Distribution>, grid: GridConfig) -> Result<Self> {
        if frames.len() != grid.t_points() {
            return Err(Error::GridMismatch(format!(
                "{} frames for a grid with {} time points",
                frames.len(),
                grid.t_points()
            )));
        }
        let mut q = Vec::with_capacity(grid.surface_len());
        for frame in &frames {
            grid.ensure_same_levels(frame.grid())?;
            q.extend_from_slice(frame.quantiles());
        }
        Ok(Self { grid, q })
    }

    /// Builds a curve from a flat row-major surface, validating every frame.
    pub fn from_surface(q: Vec<f64>, grid: GridConfig) -> Result<Self> {
        if q.len() != grid.surface_len() {
            return Err(Error::GridMismatch(format!(
                "surface of {} values for a {}x{} grid",
                q.len(),
                grid.t_points(),
                grid.m_levels()
            )));
        }
        for row in q.chunks(grid.m_levels()) {
            Distribution::new(row.to_vec(), grid)?;
        }
        Ok(Self { grid, q })
    }

    pub(crate) fn from_surface_unchecked(q: Vec<f64>, grid: GridConfig) -> Self {
        debug_assert_eq!(q.len(), grid.surface_len());
        Self { grid, q }
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    /// Flat row-major quantile surface.
    pub fn surface(&self) -> &[f64] {
        &self.q
    }

    pub fn frame_quantiles(&self, t: usize) -> &[f64] {
        let m = self.grid.m_levels();
        &self.q[t * m..(t + 1) * m]
    }

    pub fn frame(&self, t: usize) -> Distribution {
        Distribution::from_raw(self.frame_quantiles(t).to_vec(), self.grid)
    }

    pub fn frames(&self) -> impl Iterator<Item = Distribution> + '_ {
        (0..self.grid.t_points()).map(|t| self.frame(t))
    }

    /// `int d^2(self(t), other(t)) dt`.
    pub fn integrated_sq_distance(&self, other: &DistributionCurve) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let ss: f64 = self.q.iter().zip(&other.q).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(ss * self.grid.cell_weight())
    }
}

/// An element of the tensor Hilbert space over `base`.
#[derive(Debug, Clone)]
pub struct TangentField {
    z: Vec<f64>,
    base: Arc<DistributionCurve>,
}

impl PartialEq for TangentField {
    fn eq(&self, other: &Self) -> bool {
        self.z == other.z && same_base(&self.base, &other.base).is_ok()
    }
}

pub(crate) fn same_base(a: &Arc<DistributionCurve>, b: &Arc<DistributionCurve>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::BaseMismatch)
    }
}

impl TangentField {
    pub fn new(z: Vec<f64>, base: Arc<DistributionCurve>) -> Result<Self> {
        if z.len() != base.grid.surface_len() {
            return Err(Error::GridMismatch(format!(
                "field of {} values over a {}x{} grid",
                z.len(),
                base.grid.t_points(),
                base.grid.m_levels()
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::DomainError("field has non-finite entries".into()));
        }
        Ok(Self { z, base })
    }

    pub(crate) fn from_raw(z: Vec<f64>, base: Arc<DistributionCurve>) -> Self {
        debug_assert_eq!(z.len(), base.grid.surface_len());
        Self { z, base }
    }

    pub fn zero(base: Arc<DistributionCurve>) -> Self {
        let len = base.grid.surface_len();
        Self { z: vec![0.0; len], base }
    }

    /// Builds a field from a function of `(time, level)`.
    pub fn from_fn(base: Arc<DistributionCurve>, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = base.grid;
        let mut z = Vec::with_capacity(grid.surface_len());
        for t in grid.times() {
            for u in grid.levels() {
                z.push(f(t, u));
            }
        }
        Self { z, base }
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn base(&self) -> &Arc<DistributionCurve> {
        &self.base
    }

    pub fn grid(&self) -> &GridConfig {
        &self.base.grid
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let m = self.base.grid.m_levels();
        &self.z[t * m..(t + 1) * m]
    }

    pub fn inner(&self, other: &TangentField) -> Result<f64> {
        field_inner(self, other)
    }

    pub fn norm(&self) -> f64 {
        let ss: f64 = self.z.iter().map(|a| a * a).sum();
        (ss * self.base.grid.cell_weight()).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { z: self.z.iter().map(|a| a * factor).collect(), base: self.base.clone() }
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, factor: f64, other: &TangentField) -> Result<Self> {
        same_base(&self.base, &other.base)?;
        let z = self.z.iter().zip(&other.z).map(|(a, b)| a + factor * b).collect();
        Ok(Self { z, base: self.base.clone() })
    }

    /// `sum_k coeffs[k] * fields[k]`, all over `base`.
    pub fn combination(base: &Arc<DistributionCurve>, coeffs: &[f64], fields: &[&[f64]]) -> Self {
        let mut z = vec![0.0; base.grid.surface_len()];
        for (&c, f) in coeffs.iter().zip(fields) {
            if c != 0.0 {
                for (acc, x) in z.iter_mut().zip(f.iter()) {
                    *acc += c * x;
                }
            }
        }
        Self { z, base: base.clone() }
    }

    /// Writes the field as a dense `t_points x m_levels` CSV table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let grid = self.base.grid;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_index".to_string(), "time".to_string()];
        header.extend((1..=grid.m_levels()).map(|j| format!("z_{j}")));
        w.write_record(&header)?;
        for (t, time) in grid.times().into_iter().enumerate() {
            let mut row = vec![t.to_string(), fmt_float(time)];
            row.extend(self.frame(t).iter().map(|&x| fmt_float(x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON-ready dense table.
    pub fn to_table(&self) -> FieldTable {
        let grid = self.base.grid;
        FieldTable {
            time_domain: grid.time_domain(),
            support: grid.support(),
            times: grid.times(),
            levels: grid.levels(),
            z: (0..grid.t_points()).map(|t| self.frame(t).to_vec()).collect(),
        }
    }
}

/// Dense table form of a field for heatmap output.
#[derive(Debug, Clone, Serialize)]
pub struct FieldTable {
    pub time_domain: (f64, f64),
    pub support: (f64, f64),
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

/// `<<z1, z2>>_mu = |T| (1/t_points) (1/m_levels) sum z1 z2`.
pub fn field_inner(z1: &TangentField, z2: &TangentField) -> Result<f64> {
    same_base(&z1.base, &z2.base)?;
    Ok(dot(&z1.z, &z2.z) * z1.base.grid.cell_weight())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Parallel transport of a field to another curve: entries unchanged, base re-tagged.
pub fn transport_field(z: &TangentField, to: &Arc<DistributionCurve>) -> Result<TangentField> {
    z.base.grid.ensure_same(&to.grid)?;
    Ok(TangentField { z: z.z.clone(), base: to.clone() })
}

/// `(left ⊗ right)(arg) = <<right, arg>> left`.
pub fn rank_one_operator_apply(
    left: &TangentField,
    right: &TangentField,
    arg: &TangentField,
) -> Result<TangentField> {
    let c = field_inner(right, arg)?;
    Ok(left.scaled(c))
}
