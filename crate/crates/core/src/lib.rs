//! Dynamic estimation of discrete-time hazard functions from right-censored
//! survival data with time-varying covariates.
//!
//! The crate is `no_std` (with `alloc`) when built without the `std`
//! feature. File formats, the benchmark runner and the command-line tool
//! live in the companion `dynhaz` crate.
//!
//! Layout:
//!
//! * [`survival_data`]: wide-format subjects, validation, covariate snapshots.
//! * [`person_period`]: training tables for the Separate, Poolt, Superpp and
//!   Superpp0 constructions.
//! * [`hellinger_forest`]: probability forest with the Hellinger split rule.
//! * [`dtpo`]: discrete-time proportional odds model fitted by IRLS.
//! * [`dynamic_estimator`]: model bundles per method, hazard queries and
//!   survival / event-probability curves.
//! * [`metrics`]: ADIST, ALOR, C-index and per-(t,u) grid evaluation.
//! * [`simgen`]: factorial data-generating process with known true hazards.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dtpo;
pub mod dynamic_estimator;
pub mod hellinger_forest;
pub mod metrics;
pub mod person_period;
pub mod seed;
pub mod simgen;
pub mod survival_data;

mod math;

pub use dtpo::{DtpoConfig, DtpoError, DtpoModel};
pub use dynamic_estimator::{
    hazard_to_curve, BundleConfig, EstimateError, HazardCurve, MethodKind, ModelBundle, ModelKey,
};
pub use hellinger_forest::{hellinger_distance, ForestConfig, ForestError, HazardForest, Tree, TreeNode};
pub use metrics::TestSet;
pub use metrics::{
    adist, alor, cindex, evaluate_cells, evaluate_grid, CellFailure, EvalCell, GridEvaluation, MetricsError,
};
pub use person_period::{PersonPeriodRow, TableError, TableSchema, TrainingTable};
pub use simgen::{SimConfig, SimOutput, Simulator};
pub use survival_data::{CovariateKind, CovariateSpec, DataError, GenericDataset, SubjectRecord, ValidationReport};
