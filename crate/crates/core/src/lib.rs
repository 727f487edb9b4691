//! Canonical correlation analysis for samples of distribution-valued curves,
//! in the geometry of the 2-Wasserstein space on a compact interval.
//!
//! The crate is organized bottom-up:
//!
//! * [`wasserstein`]: distributions as quantile functions, distance, log/exp
//!   maps, geodesics and parallel transport;
//! * [`tensor`]: curves of distributions and vector fields along them;
//! * [`estimation`]: Fréchet mean curves, log-fields and covariance eigen-systems;
//! * [`cca`]: FPCA-truncated and Tikhonov-regularized correlation estimators
//!   with cross-validated tuning;
//! * [`simulation`]: the Beta-mean benchmark generator, ground truth and a
//!   seeded Monte Carlo runner;
//! * [`io`]: quantile-table and sample-list dataset files.

pub mod cca;
pub mod error;
pub mod estimation;
pub mod format;
pub mod grid;
pub mod io;
pub mod isotonic;
pub mod simulation;
pub mod tensor;
pub mod wasserstein;

pub use cca::{CcaData, CcaEstimate, CvOutcome, Method, Tuning};
pub use error::{Error, Result};
pub use estimation::{EigenSystem, LogFieldMatrix, Sample, ScoreMatrix};
pub use grid::GridConfig;
pub use tensor::{DistributionCurve, TangentField};
pub use wasserstein::{Distribution, ExpMode, TangentVector};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/curves.md")]
    mod curves {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/cca.md")]
    mod cca {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
}
