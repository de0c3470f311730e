//! Exact probabilities for the Reed-Frost chain binomial household model,
//! including the incomplete (observed after `d` generations) and final
//! outbreak-size distributions, maximum-likelihood inference on the secondary
//! attack rate (SAR), GLM-style regression of the SAR on household covariates,
//! misspecification-bias analysis and a seeded simulation harness.

pub mod analysis;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod regression;
pub mod simulation;

pub use error::{Error, Result};
pub use estimation::{CiMethod, Horizon, HouseholdObservation, Interval, SarEstimate};
pub use model::{HouseholdConfig, OutbreakState, Scenario};
