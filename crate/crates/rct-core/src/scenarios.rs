//! Ready-to-run experiment setups at desk scale: a CC session against a
//! derating charger with a late received-current step, a CV session with
//! an offline-trained resistance model, a three-cycle aging sequence, and
//! a noiseless sanity case.

use crate::battery::{BatteryParams, OcvCurve};
use crate::engine::EstimatorConfig;
use crate::error::Result;
use crate::profile::ChargeProfile;
use crate::sim::{ChargerModel, StepSchedule, TrueResistanceLaw};

/// Pass/fail gates a scenario carries into the evaluation harness.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Thresholds {
    /// Proposed RMSE over baseline RMSE must not exceed this.
    pub max_rmse_ratio: Option<f64>,
    /// Fraction of ticks where the baseline must underestimate the truth.
    pub min_baseline_underestimate_frac: Option<f64>,
    /// Final-tick absolute error bound, in units of one tick's duration.
    pub max_final_abs_error_ticks: Option<f64>,
}

/// One offline training session: where it starts and how warm the cell is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSession {
    pub start_soc: f64,
    pub temperature_c: f64,
}

/// How to build the resistance model for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSpec {
    pub sessions: Vec<TrainingSession>,
    /// Target SOC of each training charge; sessions ending at the cut-off
    /// current earlier than this are fine and expected.
    pub target_soc: f64,
    pub n_hidden: usize,
    pub seed: u64,
    /// Extraction cadence over the CV rows of each trace.
    pub sample_stride_s: f64,
}

/// A full experiment description: the simulated world plus the estimator
/// configuration run against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSetup {
    pub name: String,
    pub battery: BatteryParams,
    pub ocv: OcvCurve,
    pub profile: ChargeProfile,
    pub charger: ChargerModel,
    pub law: TrueResistanceLaw,
    pub temperature: StepSchedule,
    pub start_soc: f64,
    pub target_soc: f64,
    /// Simulator integration step.
    pub dt_s: f64,
    /// Estimation cadence.
    pub tick_s: f64,
    pub init_eta_cc: f64,
    pub alpha_slow: f64,
    pub alpha_fast: f64,
    pub eta_cap: f64,
    pub buffer_capacity: usize,
    pub discard_threshold: u64,
    pub estimator: EstimatorConfig,
    pub training: Option<TrainingSpec>,
    pub thresholds: Thresholds,
}

impl ScenarioSetup {
    pub fn with_init_eta(mut self, init_eta_cc: f64) -> Self {
        self.init_eta_cc = init_eta_cc;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.charger.seed = seed;
        self
    }
}

/// A multi-session aging experiment: sessions run on an aged pack while
/// the model starts from weights fitted to the un-aged law and adapts
/// online between cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct AgingSetup {
    pub session: ScenarioSetup,
    /// Law the initial model is trained on (the pack the model knew).
    pub train_law: TrueResistanceLaw,
    pub cycles: usize,
    pub online_learning_rate: f64,
    pub online_epochs: usize,
}

fn default_accuracy_rates() -> (f64, f64, f64) {
    (
        crate::accuracy::DEFAULT_ALPHA_SLOW,
        crate::accuracy::DEFAULT_ALPHA_FAST,
        crate::accuracy::DEFAULT_ETA_CAP,
    )
}

/// The CC experiment: 5% to 70% SOC against a charger whose accuracy
/// wanders around an overall mean of 0.748, dips to 0.6 and then jumps so
/// the received current steps from 0.6 C to 0.9 C at 41 minutes. The
/// estimator starts from the historical accuracy 0.7; the baseline
/// assumes 0.9.
pub fn paper_scenario_cc() -> Result<ScenarioSetup> {
    let (alpha_slow, alpha_fast, eta_cap) = default_accuracy_rates();
    let accuracy = StepSchedule::new(vec![
        (0.0, 0.77),
        (1200.0, 0.73),
        (2160.0, 0.60),
        (2460.0, 0.90),
        (2700.0, 0.748),
    ])?;
    Ok(ScenarioSetup {
        name: "paper-cc".into(),
        battery: BatteryParams::default_cell(),
        ocv: OcvCurve::default_synthetic(),
        profile: ChargeProfile::from_triples(&[
            (0.0, 0.62, 1.0),
            (0.62, 0.82, 0.6),
            (0.82, 1.0, 0.3),
        ])?,
        charger: ChargerModel::new(10.0, accuracy, 0.03, 11)?,
        law: TrueResistanceLaw::default().validated()?,
        temperature: StepSchedule::constant(25.0),
        start_soc: 0.05,
        target_soc: 0.70,
        dt_s: 1.0,
        tick_s: 10.0,
        init_eta_cc: 0.7,
        alpha_slow,
        alpha_fast,
        eta_cap,
        buffer_capacity: crate::rbf::DEFAULT_BUFFER_CAPACITY,
        discard_threshold: crate::rbf::DEFAULT_DISCARD_THRESHOLD,
        estimator: EstimatorConfig::default(),
        training: None,
        thresholds: Thresholds {
            max_rmse_ratio: Some(0.40),
            min_baseline_underestimate_frac: None,
            max_final_abs_error_ticks: Some(1.0),
        },
    })
}

/// The CC experiment with a badly wrong initial accuracy of 0.5.
pub fn paper_scenario_cc_wrong_init() -> Result<ScenarioSetup> {
    let mut setup = paper_scenario_cc()?.with_init_eta(0.5);
    setup.name = "paper-cc-wrong-init".into();
    setup.thresholds = Thresholds {
        max_rmse_ratio: None,
        min_baseline_underestimate_frac: None,
        max_final_abs_error_ticks: Some(1.0),
    };
    Ok(setup)
}

/// The CV experiment: a session that is in CV from 71% to 90% SOC, with
/// the resistance model trained offline on ten simulated sessions from
/// the same law across starting SOCs and temperatures.
pub fn paper_scenario_cv() -> Result<ScenarioSetup> {
    let (alpha_slow, alpha_fast, eta_cap) = default_accuracy_rates();
    Ok(ScenarioSetup {
        name: "paper-cv".into(),
        battery: BatteryParams::new(4.8, 4.1, 0.05, 25.0)?,
        ocv: OcvCurve::default_synthetic(),
        profile: ChargeProfile::from_triples(&[(0.0, 0.75, 1.0), (0.75, 1.0, 0.5)])?,
        charger: ChargerModel::new(10.0, StepSchedule::constant(0.9), 0.0, 3)?,
        law: TrueResistanceLaw::default().validated()?,
        temperature: StepSchedule::constant(25.0),
        start_soc: 0.71,
        target_soc: 0.90,
        dt_s: 1.0,
        tick_s: 10.0,
        init_eta_cc: 0.9,
        alpha_slow,
        alpha_fast,
        eta_cap,
        buffer_capacity: crate::rbf::DEFAULT_BUFFER_CAPACITY,
        discard_threshold: crate::rbf::DEFAULT_DISCARD_THRESHOLD,
        estimator: EstimatorConfig::default(),
        training: Some(TrainingSpec {
            sessions: vec![
                TrainingSession { start_soc: 0.55, temperature_c: 15.0 },
                TrainingSession { start_soc: 0.55, temperature_c: 35.0 },
                TrainingSession { start_soc: 0.60, temperature_c: 20.0 },
                TrainingSession { start_soc: 0.60, temperature_c: 30.0 },
                TrainingSession { start_soc: 0.65, temperature_c: 25.0 },
                TrainingSession { start_soc: 0.65, temperature_c: 40.0 },
                TrainingSession { start_soc: 0.71, temperature_c: 25.0 },
                TrainingSession { start_soc: 0.71, temperature_c: 10.0 },
                TrainingSession { start_soc: 0.75, temperature_c: 20.0 },
                TrainingSession { start_soc: 0.75, temperature_c: 30.0 },
            ],
            target_soc: 0.95,
            n_hidden: crate::rbf::DEFAULT_N_HIDDEN,
            seed: 7,
            sample_stride_s: 5.0,
        }),
        thresholds: Thresholds {
            max_rmse_ratio: Some(0.30),
            min_baseline_underestimate_frac: Some(0.90),
            max_final_abs_error_ticks: Some(1.0),
        },
    })
}

/// Three sequential CV sessions on a pack aged 15% past the law the model
/// was trained on, with buffer ingestion during each session and an
/// online weight update between sessions.
pub fn paper_scenario_aging() -> Result<AgingSetup> {
    let mut session = paper_scenario_cv()?;
    session.name = "paper-aging".into();
    session.law = session.law.with_aging(1.15).validated()?;
    session.thresholds = Thresholds::default();
    let train_law = TrueResistanceLaw::default().validated()?;
    Ok(AgingSetup {
        session,
        train_law,
        cycles: 3,
        online_learning_rate: 0.02,
        online_epochs: 20,
    })
}

/// Noiseless sanity case: a perfect charger, a perfectly known (constant
/// command) profile, and a baseline granted the true accuracy. Both
/// estimators should track the truth to within integration quantization.
pub fn perfect_scenario() -> Result<ScenarioSetup> {
    let (alpha_slow, alpha_fast, eta_cap) = default_accuracy_rates();
    let estimator = EstimatorConfig {
        baseline_eta_cc: 1.0,
        ..EstimatorConfig::default()
    };
    Ok(ScenarioSetup {
        name: "perfect".into(),
        battery: BatteryParams::default_cell(),
        ocv: OcvCurve::default_synthetic(),
        profile: ChargeProfile::from_triples(&[(0.0, 1.0, 0.5)])?,
        charger: ChargerModel::new(10.0, StepSchedule::constant(1.0), 0.0, 1)?,
        law: TrueResistanceLaw::default().validated()?,
        temperature: StepSchedule::constant(25.0),
        start_soc: 0.10,
        target_soc: 0.50,
        dt_s: 1.0,
        tick_s: 10.0,
        init_eta_cc: 1.0,
        alpha_slow,
        alpha_fast,
        eta_cap,
        buffer_capacity: crate::rbf::DEFAULT_BUFFER_CAPACITY,
        discard_threshold: crate::rbf::DEFAULT_DISCARD_THRESHOLD,
        estimator,
        training: None,
        thresholds: Thresholds {
            max_rmse_ratio: None,
            min_baseline_underestimate_frac: None,
            max_final_abs_error_ticks: Some(1.0),
        },
    })
}

/// Single-session scenarios addressable from the CLI.
pub fn scenario_by_name(name: &str) -> Result<Option<ScenarioSetup>> {
    Ok(match name {
        "paper-cc" => Some(paper_scenario_cc()?),
        "paper-cc-wrong-init" => Some(paper_scenario_cc_wrong_init()?),
        "paper-cv" => Some(paper_scenario_cv()?),
        "perfect" => Some(perfect_scenario()?),
        _ => None,
    })
}

pub const SCENARIO_NAMES: &[&str] = &[
    "paper-cc",
    "paper-cc-wrong-init",
    "paper-cv",
    "paper-aging",
    "perfect",
];
