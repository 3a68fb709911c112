//! Remaining-charging-time (RCT) estimation for CC-CV lithium-ion
//! charging, plus the simulation lab used to validate it.
//!
//! The estimator tracks the CC-stage charging accuracy online with an
//! adaptive exponential moving average, predicts the CV-stage current
//! profile from an RBF-network resistance model, and assembles remaining
//! time across the CC/CV scenario split. The simulator drives a Rint
//! battery with a synthetic resistance law against a derating, noisy
//! charger and provides the ground truth the evaluation harness scores
//! both the proposed and the conventional estimator against.

pub mod accuracy;
pub mod battery;
pub mod engine;
pub mod error;
pub mod eval;
pub mod profile;
pub mod rbf;
pub mod scenarios;
pub mod sim;

pub use accuracy::{AccuracyState, ChargerTypeTable};
pub use battery::{cv_c_rate, resistance_from_measurement, BatteryParams, OcvCurve, RintState};
pub use engine::{
    estimate, estimate_baseline, rct_cc, rct_cv, EstimatorConfig, EtaMode, RctEstimate,
    SessionState,
};
pub use error::{RctError, Result};
pub use eval::{
    rmse, run_aging_experiment, run_experiment, train_model, EvaluationReport, TickRecord,
    TrainSummary,
};
pub use profile::{
    classify_scenario, cv_turning_soc, partition_cc, ChargeProfile, Partitioning, Scenario, Stage,
};
pub use rbf::{fit_weights, online_update, RbfModel, TrainingBuffer, TrainingSample};
pub use scenarios::{
    paper_scenario_aging, paper_scenario_cc, paper_scenario_cc_wrong_init, paper_scenario_cv,
    perfect_scenario, scenario_by_name, AgingSetup, ScenarioSetup, Thresholds,
};
pub use sim::{
    simulate_session, ChargerModel, SessionTrace, StepSchedule, TraceMeta, TraceRow,
    TrueResistanceLaw,
};
