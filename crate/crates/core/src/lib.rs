//! Extreme conditional quantile estimation with a common-shape tail.
//!
//! The estimator fits the conditional `tau_c` quantile curve `r̂(x)` by local
//! linear quantile regression, computes residuals `eᵢ = yᵢ − r̂(xᵢ)`, estimates
//! the extreme value index from the top residuals with the Hill estimator and
//! extrapolates with the Weissman estimator:
//!
//! ```text
//! Q̂(τ | x) = r̂(x) + e_{n−k,n} · (k / (n (1 − τ)))^γ̂     for τ ≥ τ_c
//! ```
//!
//! Around this core the crate provides bandwidth selection, a linear-quantile
//! baseline, a zero-inflated wrapper for precipitation-like responses,
//! verification scores with grouped cross-validation, and the Monte-Carlo
//! harness used to compare the estimators.

pub mod bandwidth;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod quantreg;
pub mod rng;
pub mod simulation;
pub mod tail;
pub mod verification;
pub mod zeroinfl;

pub use error::{Error, Result};
pub use quantreg::{
    check_loss, local_linear_quantile, threshold_curve, weighted_qr, Design, Kernel, LocalFit,
    PairedSample,
};
pub use tail::{fit_cst, hill, weissman_quantile, CstModel, LinearBaselineModel, TailFit};
