//! Causal sufficient dimension reduction for high-dimensional treatments.
//!
//! Estimates a `p × d` basis β such that the counterfactual mean of an
//! outcome depends on a treatment vector `A` only through `Aᵀβ`, under
//! confounding by baseline covariates `C`. Three estimating functions are
//! provided (plain regression, inverse probability weighted, augmented),
//! solved by damped Newton-Raphson over a canonical parameterization of β,
//! together with the simulation designs and harness used to benchmark them.

pub mod basis;
pub mod error;
pub mod estimating;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod nuisance;
pub mod rng;
pub mod simulation;
pub mod solver;

pub use basis::Basis;
pub use error::{Error, Result};
pub use estimating::{u_augmented, u_ipw, u_regression, EstimatingProblem, MomentValue};
pub use kernel::{KernelConfig, SmoothingConfig};
pub use metrics::{pca_directions, projection_distance, SubspaceDistance};
pub use nuisance::{fit_ftilde, fit_treatment_model, FTildeModel, NuisanceSpec, TreatmentModel};
pub use rng::RngStream;
pub use simulation::{generate, Case, Confounding, Dataset, Panel, ScenarioSpec, SimulationTruth};
pub use solver::{solve, SolveResult, SolverConfig};
