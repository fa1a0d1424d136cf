//! Discrete-time simulator and calibration library for mobile chemical-sensor
//! networks.
//!
//! Sensors roam a bounded grid under a random-waypoint model while a Gaussian
//! plume wanders beneath them. Each sensor's polynomial response drifts
//! linearly in time. When sensors come within transmission range they form a
//! rendezvous group, agree on a staleness-weighted consensus of the local
//! concentration, append it to their calibration tables, and re-fit their
//! drift parameters by weighted least squares with age-decaying tuple
//! weights. The exponential decay constant of those weights can be tuned
//! offline per sensor by simulated annealing.
//!
//! The [`harness`] module orchestrates full experiments (weight-scheme
//! comparison and network-size sweep) with shared per-repetition traces,
//! and the `driftnet` binary exposes them on the command line.

pub mod calibration;
pub mod config;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod optimizer;
pub mod plume;
pub mod report;
pub mod rng;
pub mod sensor;
pub mod stats;

pub use calibration::{
    consensus_estimate, consensus_estimate_weighted, fit_wls, rendezvous_update, tuple_weight,
    CalibrationOptions, ConsensusInput, FitScheme, StalenessWeighting, WeightScheme,
};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use harness::{run_condition, run_size_sweep, run_weight_comparison, Condition, RunMetrics};
pub use mobility::{
    find_rendezvous, init_mobility, step_mobility, GridBounds, MobilityState, RendezvousGroup,
    RwpParams,
};
pub use optimizer::{
    anneal, lambda_objective, optimize_lambda, AnnealingSchedule, SaResult, TrainingTrace,
};
pub use plume::PlumeField;
pub use sensor::{
    invert_response, measure, true_params_at, CalibrationTuple, DriftParams, Inversion,
    SensorState,
};
