//! Remaining-charging-time assembly: CC summation over the partitioned
//! profile, CV summation over 1%-SOC steps with predicted resistance, the
//! scenario dispatch between them, and the constant-accuracy baseline.

use serde::{Deserialize, Serialize};

use crate::battery::{cv_c_rate, BatteryParams, OcvCurve};
use crate::error::{RctError, Result};
use crate::profile::{
    classify_scenario, cv_turning_soc, partition_cc, ChargeProfile, Partitioning, Scenario, Stage,
};
use crate::rbf::RbfModel;

/// How the charging-accuracy factor enters the time formulas.
///
/// `Divides` treats the accuracy as a derating of the delivered current,
/// so an accuracy below one lengthens the estimate. `Multiplies` applies
/// the factor literally as typeset in the source equations, shortening
/// the estimate instead; it exists for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EtaMode {
    #[default]
    Divides,
    Multiplies,
}

impl EtaMode {
    fn apply(self, hours: f64, eta: f64) -> f64 {
        match self {
            EtaMode::Divides => hours / eta,
            EtaMode::Multiplies => hours * eta,
        }
    }
}

/// Knobs of the estimator itself (not of any particular session).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// CV integration step in SOC fraction ("1% SOC" by default).
    pub soc_step_cv: f64,
    /// CV-stage charging accuracy; the charger follows the small CV
    /// command closely, so this stays at 1.0.
    pub eta_cv: f64,
    /// Constant CC accuracy assumed by the baseline method.
    pub baseline_eta_cc: f64,
    /// Constant CV accuracy assumed by the baseline method.
    pub baseline_eta_cv: f64,
    pub eta_mode: EtaMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            soc_step_cv: 0.01,
            eta_cv: 1.0,
            baseline_eta_cc: 0.9,
            baseline_eta_cv: 1.0,
            eta_mode: EtaMode::Divides,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.soc_step_cv > 0.0 && self.soc_step_cv <= 0.05) {
            return Err(RctError::domain("soc_step_cv must lie in (0, 0.05]"));
        }
        for (name, eta) in [
            ("eta_cv", self.eta_cv),
            ("baseline_eta_cc", self.baseline_eta_cc),
            ("baseline_eta_cv", self.baseline_eta_cv),
        ] {
            if !(eta > 0.0) {
                return Err(RctError::domain(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// What the estimator can see of a session at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionState {
    pub current_soc: f64,
    pub start_soc: f64,
    pub target_soc: f64,
    pub temperature_c: f64,
    pub stage: Stage,
}

/// A finished estimate with its stage breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct RctEstimate {
    pub total_minutes: f64,
    pub cc_minutes: f64,
    pub cv_minutes: f64,
    pub scenario: Scenario,
    pub eta_cc_used: f64,
}

/// CC remaining time in hours: each constant-command segment contributes
/// its SOC width over the accuracy-adjusted C-rate.
pub fn rct_cc(partitioning: &Partitioning, eta_cc: f64, config: &EstimatorConfig) -> Result<f64> {
    if !(eta_cc > 0.0) {
        return Err(RctError::domain("eta_cc must be positive"));
    }
    let commanded_hours: f64 = partitioning
        .segments
        .iter()
        .map(|s| s.delta_soc / s.c_rate)
        .sum();
    Ok(config.eta_mode.apply(commanded_hours, eta_cc))
}

/// CV remaining time in hours. The span is walked in `soc_step_cv` steps;
/// each step's C-rate comes from the Rint relation at the step midpoint
/// with the model's predicted resistance and the cut-off voltage as the
/// terminal voltage.
#[allow(clippy::too_many_arguments)]
pub fn rct_cv(
    span: (f64, f64),
    model: &RbfModel,
    battery: &BatteryParams,
    ocv: &OcvCurve,
    start_soc: f64,
    temperature_c: f64,
    config: &EstimatorConfig,
) -> Result<f64> {
    let (from, to) = span;
    if !(from < to) {
        return Err(RctError::domain(format!("empty or inverted CV span [{from}, {to}]")));
    }
    config.validate()?;
    let steps = ((to - from) / config.soc_step_cv - 1e-12).ceil().max(1.0) as usize;
    let mut hours = 0.0;
    let mut lo = from;
    for i in 0..steps {
        let hi = (from + (i + 1) as f64 * config.soc_step_cv).min(to);
        let mid = 0.5 * (lo + hi);
        let resistance = model.predict_resistance([mid, start_soc, temperature_c]);
        let c_rate = match cv_c_rate(
            battery.cutoff_voltage_v,
            ocv.ocv_at(mid)?,
            resistance,
            battery.capacity_ah,
        ) {
            Ok(c) if c > 0.0 => c,
            Ok(_) => return Err(RctError::UnreachableTarget { soc: mid }),
            Err(RctError::NegativeCurrent { .. }) => {
                return Err(RctError::UnreachableTarget { soc: mid })
            }
            Err(e) => return Err(e),
        };
        hours += (hi - lo) / c_rate;
        lo = hi;
    }
    Ok(config.eta_mode.apply(hours, config.eta_cv))
}

/// Full estimate: classifies the pending charge into its scenario and
/// assembles the CC and CV parts. An observed CV stage pins the scenario
/// to CV-only; in CC the turning point is predicted by solving the Rint
/// cut-off condition along the commanded profile with the model's
/// resistance.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    state: &SessionState,
    profile: &ChargeProfile,
    battery: &BatteryParams,
    ocv: &OcvCurve,
    accuracy: &crate::accuracy::AccuracyState,
    model: &RbfModel,
    config: &EstimatorConfig,
) -> Result<RctEstimate> {
    if !(state.current_soc < state.target_soc) {
        return Err(RctError::domain(
            "current SOC must be below target SOC to estimate",
        ));
    }
    config.validate()?;
    let scenario = match state.stage {
        Stage::Done => return Err(RctError::domain("session already done")),
        Stage::Cv => Scenario::CvOnly {
            cv_span: (state.current_soc, state.target_soc),
        },
        Stage::Cc => {
            let turning = cv_turning_soc(profile, battery, ocv, |soc| {
                model.predict_resistance([soc, state.start_soc, state.temperature_c])
            })?;
            classify_scenario(state.current_soc, state.target_soc, turning)?
        }
    };

    let cc_hours = match scenario.cc_span() {
        Some((a, b)) => rct_cc(&partition_cc(profile, a, b)?, accuracy.eta_cc, config)?,
        None => 0.0,
    };
    let cv_hours = match scenario.cv_span() {
        Some(span) => rct_cv(
            span,
            model,
            battery,
            ocv,
            state.start_soc,
            state.temperature_c,
            config,
        )?,
        None => 0.0,
    };

    Ok(RctEstimate {
        total_minutes: (cc_hours + cv_hours) * 60.0,
        cc_minutes: cc_hours * 60.0,
        cv_minutes: cv_hours * 60.0,
        scenario,
        eta_cc_used: accuracy.eta_cc,
    })
}

/// The conventional estimate: remaining capacity over the present current,
/// with a constant stage-dependent accuracy. Returns minutes.
pub fn estimate_baseline(
    state: &SessionState,
    battery: &BatteryParams,
    charger_max_current_a: f64,
    commanded_current_a: f64,
    config: &EstimatorConfig,
) -> Result<f64> {
    if !(charger_max_current_a > 0.0) || !(commanded_current_a > 0.0) {
        return Err(RctError::domain("currents must be positive"));
    }
    if !(state.current_soc < state.target_soc) {
        return Err(RctError::domain(
            "current SOC must be below target SOC to estimate",
        ));
    }
    let eta = match state.stage {
        Stage::Cc => config.baseline_eta_cc,
        Stage::Cv => config.baseline_eta_cv,
        Stage::Done => return Err(RctError::domain("session already done")),
    };
    let delta_soc = state.target_soc - state.current_soc;
    let hours = delta_soc * battery.capacity_ah / charger_max_current_a.min(commanded_current_a);
    Ok(config.eta_mode.apply(hours, eta) * 60.0)
}
