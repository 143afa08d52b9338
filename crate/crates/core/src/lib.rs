//! Two-arm survival estimation under a single-crossing constraint.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::manual_clamp)]

pub mod constraints;
pub mod data;
pub mod error;
pub mod estimands;
pub mod hazard;
pub mod inference;
pub mod mle;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use constraints::{
    build_constraints, check_single_crossing, v_index, ConstraintKind, ConstraintSystem, CrossingParams, Dominance, Row,
};
pub use data::{bin_followup, kaplan_meier, Arm, Cohort, EventGrid, StepSurvival, Subject, CAP};
pub use error::{Error, Result};
pub use estimands::{
    avg_hazard_ratios, conditional_survival, estimand_report, milestone_diff, rmst, rrml, surv_at_crossing, Estimand,
    EstimandReport, EstimandSpec, HazardSource,
};
pub use hazard::{build_hazard_constraints, scc_hazard_fit, smooth_hazards, DiscreteHazards, SmoothedHazards};
pub use inference::{
    joint_test_surv, joint_test_theta, permutation_test, stratified_bootstrap, BootstrapResult, Direction,
    JointTestResult, PermutationResult,
};
pub use mle::{
    fit_conditional, fit_system, init_from_km, kkt_residual, km_loglik, loglik, FitResult, Method, Route,
    SolverOptions, BARRIER,
};
pub use profile::{curves_from_fit, profile_loglik, scc_fit, ProfileEntry, SccFit};
pub use scalar::Scalar;
pub use simulation::{run_mse_study, true_estimands, Censoring, MseTable, PiecewiseExp, ScenarioSpec, StudyConfig};

/// Double-precision instantiations of the generic types.
pub mod double {
    pub type Cohort = super::Cohort<f64>;
    pub type Subject = super::Subject<f64>;
    pub type EventGrid = super::EventGrid<f64>;
    pub type StepSurvival = super::StepSurvival<f64>;
    pub type CrossingParams = super::CrossingParams<f64>;
    pub type FitResult = super::FitResult<f64>;
    pub type SccFit = super::SccFit<f64>;
    pub type ProfileEntry = super::ProfileEntry<f64>;
    pub type DiscreteHazards = super::DiscreteHazards<f64>;
    pub type SmoothedHazards = super::SmoothedHazards<f64>;
    pub type EstimandSpec = super::EstimandSpec<f64>;
}
