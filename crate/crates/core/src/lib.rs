//! Interactive multi-objective off-policy optimization.
//!
//! Builds candidate policies from logged bandit feedback, picks which
//! value vectors to show a designer with a G-optimal design, fits the
//! designer's scalarization by logistic maximum likelihood and returns the
//! policy that is best under the fitted scalarization.

pub mod algorithms;
pub mod dataset;
pub mod design;
pub mod elicitation;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod types;

pub use algorithms::{
    evaluate_run, run, Algorithm, Candidate, Diagnostics, Elicitor, RunConfig, RunResult,
};
pub use dataset::{LogDataset, LoggedRecord};
pub use design::{g_optimal_design, leverage_score, sample_from_design, DesignWeights, Leverage};
pub use elicitation::{
    logistic_mle, response_probability, DesignerChannel, QueryRecord, ScriptedDesigner,
    SimulatedDesigner,
};
pub use error::{Error, Result};
pub use estimators::{ClipLevel, EstimatorKind, OffPolicyEstimator, RewardModel};
pub use harness::{emit_plot_data, run_sweep, run_sweep_to_path, SweepSpec};
pub use optimizer::{optimize_scalarized, ScalarizedCoefficients};
pub use types::{
    simple_regret, utility, ObjectiveScale, Policy, ProblemSpec, RewardSource, RewardTable,
    Scalarization, ValueVector,
};
