//! Modified equations for numerical integrators and stochastic optimizers.
//!
//! A stochastic optimization iteration `x_{k+1} = x_k − h·ĝ(x_k)` with an
//! unbiased gradient estimator `ĝ` is read as a weak integrator of the SDE
//! `dX = −∇(F + (h/4)‖∇F‖²)dt + √h·Σ(X)^{1/2} dW`, with `Σ` the estimator's
//! covariance. The crate builds these modified equations, integrates them,
//! measures weak orders and tests mean-square stability.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod integrate;
mod linalg;
pub mod measure;
pub mod objective;

pub use dynamics::{
    build_modified_sde, harmonic, harmonic_modified, moment_oracle, ou, ou_modified, ModifiedSde, Moments, Observable,
    OdeProblem, OdeScheme, OuProcess, Sde, SdeScheme,
};
pub use error::{Error, Result};
pub use estimator::{sigma, sigma_closed_form, sigma_empirical, CovarianceMatrix, EstimatorKind};
pub use measure::{fit_order, stability_experiment, ErrorCurve, ErrorPoint, OrderFit, StabilityConfig, StabilityReport, Verdict};
pub use objective::{ConvexityConstants, Objective, Quadratic, SumObjective};
