//! Optimal discrimination designs for regression models.
//!
//! Given two candidate mean functions on a common design space — the first
//! fully specified, the second known only up to parameters in a box — this
//! crate computes approximate designs (support points with weights) that
//! maximise the worst-case discrepancy between the models, under several
//! criteria:
//!
//! * `T` — weighted squared distance between the mean functions;
//! * `KL` / `KLNORMAL` — Kullback–Leibler divergence between fully
//!   parametric error densities (lognormal / equal-variance normal);
//! * `SKL_A` / `SKL_B` — semi-parametric divergence where one side ranges
//!   over *all* densities with a prescribed mean, resolved through a
//!   one-dimensional dual multiplier per design point.
//!
//! The optimiser is a vertex-exchange scheme with a weight-refinement
//! stage; solutions are certified through the associated equivalence
//! theorem (the sensitivity function must be non-positive over the design
//! space and vanish on the support).

pub mod config;
pub mod criteria;
pub mod divergence;
pub mod equivalence;
pub mod error;
pub mod expr;
pub mod lambda;
pub mod models;
pub(crate) mod nelder;
pub mod normal;
pub mod optimizer;
pub mod quad;
pub mod report;

pub use error::{Error, Result, Warning};
