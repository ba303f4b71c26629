//! Variational Neumann problem for the p-th sub-Laplacian of a system of
//! Hörmander vector fields.
//!
//! The crate discretizes the energy
//!
//! ```text
//! J_p(u) = ∫_Ω (1/p)|Xu|^p + f u dx − <ν, Tr u>
//! ```
//!
//! on Cartesian grids (P1 elements on the Kuhn triangulation, cut cells for
//! curved domains), minimizes it on the mean-zero subspace and measures every
//! quantitative property the existence theory predicts: compatibility, weak
//! form, convexity, a-priori estimate, Poincaré and trace inequalities, and
//! the upper Ahlfors bound of the boundary measure in the
//! Carnot–Carathéodory metric.
//!
//! Module map:
//! - [`fields`]: vector-field systems, horizontal gradient and its adjoint.
//! - [`domain`]: grids, boundary samples, measures, mean-zero projection.
//! - [`cc_metric`]: graph approximation of the CC distance, balls, Ahlfors checks.
//! - [`besov`]: Besov seminorm/norm on the boundary, trace and pairing.
//! - [`energy`]: the discrete functional, its gradient and the weak residual.
//! - [`solver`]: minimization, uniqueness and estimate ratios.
//! - [`verify`]: the check suite and its report.
//! - [`config`], [`report`]: run configuration and output files.

pub mod besov;
pub mod cc_metric;
pub mod config;
pub mod domain;
pub mod energy;
pub mod error;
pub mod expr;
pub mod fields;
pub mod report;
pub mod solver;
pub mod testfields;
pub mod verify;

pub use error::{Error, Result};
