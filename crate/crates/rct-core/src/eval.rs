//! End-to-end experiments: replay a simulated session through the
//! proposed and baseline estimators tick by tick, score both against the
//! trace's true remaining time, and emit JSON summaries plus plot-ready
//! CSV series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::AccuracyState;
use crate::engine::{estimate, estimate_baseline, SessionState};
use crate::error::{RctError, Result};
use crate::profile::Stage;
use crate::rbf::{
    fit_weights, online_update, RbfModel, TrainingBuffer, TrainingSample,
    DEFAULT_RESISTANCE_FLOOR_OHM,
};
use crate::scenarios::{AgingSetup, ScenarioSetup, Thresholds, TrainingSpec};
use crate::sim::{simulate_session, SessionTrace};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Root mean squared error between an estimate series and the truth.
pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(RctError::domain(format!(
            "rmse needs equal non-empty series, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let sum_sq: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok((sum_sq / estimates.len() as f64).sqrt())
}

/// One estimation tick of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time_s: f64,
    pub true_rct_min: f64,
    pub est_proposed_min: f64,
    pub est_baseline_min: f64,
    pub eta_cc: f64,
    pub predicted_r_ohm: f64,
}

/// Summary half of an evaluation report; the tick series lives in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub tick_s: f64,
    pub rmse_proposed_min: f64,
    pub rmse_baseline_min: f64,
    /// 100 * (1 - rmse_proposed / rmse_baseline).
    pub improvement_percent: f64,
    pub max_abs_error_proposed_min: f64,
    pub max_abs_error_baseline_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub summary: ReportSummary,
    pub ticks: Vec<TickRecord>,
}

impl EvaluationReport {
    pub fn from_ticks(scenario: &str, tick_s: f64, ticks: Vec<TickRecord>) -> Result<Self> {
        let truths: Vec<f64> = ticks.iter().map(|t| t.true_rct_min).collect();
        let proposed: Vec<f64> = ticks.iter().map(|t| t.est_proposed_min).collect();
        let baseline: Vec<f64> = ticks.iter().map(|t| t.est_baseline_min).collect();
        let rmse_proposed_min = rmse(&proposed, &truths)?;
        let rmse_baseline_min = rmse(&baseline, &truths)?;
        let improvement_percent = if rmse_baseline_min > 0.0 {
            100.0 * (1.0 - rmse_proposed_min / rmse_baseline_min)
        } else {
            0.0
        };
        let max_abs = |series: &[f64]| {
            series
                .iter()
                .zip(&truths)
                .map(|(e, t)| (e - t).abs())
                .fold(0.0f64, f64::max)
        };
        Ok(Self {
            summary: ReportSummary {
                schema_version: REPORT_SCHEMA_VERSION,
                scenario: scenario.to_string(),
                tick_s,
                rmse_proposed_min,
                rmse_baseline_min,
                improvement_percent,
                max_abs_error_proposed_min: max_abs(&proposed),
                max_abs_error_baseline_min: max_abs(&baseline),
            },
            ticks,
        })
    }

    /// The plot-ready series, schema-versioned in a leading comment line.
    pub fn series_csv_string(&self) -> String {
        let mut out = format!("# schema_version={REPORT_SCHEMA_VERSION}\n");
        out.push_str("time_s,true_rct_min,est_proposed_min,est_baseline_min,eta_cc,predicted_r_ohm\n");
        for t in &self.ticks {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.time_s,
                t.true_rct_min,
                t.est_proposed_min,
                t.est_baseline_min,
                t.eta_cc,
                t.predicted_r_ohm
            ));
        }
        out
    }

    /// Writes `report.json` and `series.csv` under `out_dir`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let out_dir = out_dir.as_ref();
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&self.summary).expect("summary serializes"),
        )?;
        std::fs::write(out_dir.join("series.csv"), self.series_csv_string())?;
        Ok(())
    }

    /// Reads a report written by [`EvaluationReport::write`].
    pub fn read(out_dir: impl AsRef<Path>) -> Result<Self> {
        let out_dir = out_dir.as_ref();
        let json_path = out_dir.join("report.json");
        let raw = std::fs::read_to_string(&json_path)?;
        let summary: ReportSummary = serde_json::from_str(&raw)
            .map_err(|e| RctError::parse(&json_path, e.line(), e.to_string()))?;
        let csv_path = out_dir.join("series.csv");
        let ticks = read_series_csv(&csv_path)?;
        Ok(Self { summary, ticks })
    }

    /// Recomputes both RMSE fields from the tick series.
    pub fn recomputed_rmse(&self) -> Result<(f64, f64)> {
        let truths: Vec<f64> = self.ticks.iter().map(|t| t.true_rct_min).collect();
        let proposed: Vec<f64> = self.ticks.iter().map(|t| t.est_proposed_min).collect();
        let baseline: Vec<f64> = self.ticks.iter().map(|t| t.est_baseline_min).collect();
        Ok((rmse(&proposed, &truths)?, rmse(&baseline, &truths)?))
    }

    /// Fraction of ticks where the baseline strictly underestimates.
    pub fn baseline_underestimate_fraction(&self) -> f64 {
        if self.ticks.is_empty() {
            return 0.0;
        }
        let under = self
            .ticks
            .iter()
            .filter(|t| t.est_baseline_min < t.true_rct_min)
            .count();
        under as f64 / self.ticks.len() as f64
    }

    /// Human-readable gate failures; empty means the report passes.
    pub fn threshold_failures(&self, thresholds: &Thresholds) -> Vec<String> {
        let mut failures = Vec::new();
        if let Some(max_ratio) = thresholds.max_rmse_ratio {
            let ratio = if self.summary.rmse_baseline_min > 0.0 {
                self.summary.rmse_proposed_min / self.summary.rmse_baseline_min
            } else {
                f64::INFINITY
            };
            if ratio > max_ratio {
                failures.push(format!(
                    "rmse ratio {ratio:.4} exceeds {max_ratio} (proposed {:.4} / baseline {:.4})",
                    self.summary.rmse_proposed_min, self.summary.rmse_baseline_min
                ));
            }
        }
        if let Some(min_frac) = thresholds.min_baseline_underestimate_frac {
            let frac = self.baseline_underestimate_fraction();
            if frac < min_frac {
                failures.push(format!(
                    "baseline underestimates at only {frac:.3} of ticks, need {min_frac}"
                ));
            }
        }
        if let Some(max_ticks) = thresholds.max_final_abs_error_ticks {
            if let Some(last) = self.ticks.last() {
                let bound = max_ticks * self.summary.tick_s / 60.0;
                for (name, est) in [
                    ("proposed", last.est_proposed_min),
                    ("baseline", last.est_baseline_min),
                ] {
                    let err = (est - last.true_rct_min).abs();
                    if err > bound {
                        failures.push(format!(
                            "{name} final-tick error {err:.4} min exceeds {bound:.4} min"
                        ));
                    }
                }
            }
        }
        failures
    }
}

fn read_series_csv(path: &Path) -> Result<Vec<TickRecord>> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    {
        let headers = rdr
            .headers()
            .map_err(|e| RctError::parse(path, 1, e.to_string()))?;
        let expected = [
            "time_s",
            "true_rct_min",
            "est_proposed_min",
            "est_baseline_min",
            "eta_cc",
            "predicted_r_ohm",
        ];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(RctError::parse(path, 2, "unexpected series header"));
        }
    }
    let mut ticks = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 3; // the comment and header lines come first
        let record = record.map_err(|e| RctError::parse(path, line, e.to_string()))?;
        ticks.push(TickRecord {
            time_s: crate::battery::parse_field(&record, 0, path, line)?,
            true_rct_min: crate::battery::parse_field(&record, 1, path, line)?,
            est_proposed_min: crate::battery::parse_field(&record, 2, path, line)?,
            est_baseline_min: crate::battery::parse_field(&record, 3, path, line)?,
            eta_cc: crate::battery::parse_field(&record, 4, path, line)?,
            predicted_r_ohm: crate::battery::parse_field(&record, 5, path, line)?,
        });
    }
    Ok(ticks)
}

/// Everything a finished experiment leaves behind.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvaluationReport,
    pub trace: SessionTrace,
    pub model: RbfModel,
    pub accuracy: AccuracyState,
    pub buffer: TrainingBuffer,
}

/// Replays one trace through both estimators at the setup's tick cadence.
/// Each tick first feeds the row's measurements to the accuracy state (CC)
/// or the training buffer (CV), then produces both estimates.
pub fn evaluate_session(
    trace: &SessionTrace,
    setup: &ScenarioSetup,
    accuracy: &mut AccuracyState,
    model: &RbfModel,
    buffer: &mut TrainingBuffer,
) -> Result<Vec<TickRecord>> {
    let mut ticks = Vec::new();
    let mut time_s = 0.0;
    let end = trace.end_time_s();
    while time_s <= end {
        let row = trace.row_at(time_s)?;
        if row.stage == Stage::Done {
            break;
        }
        match row.stage {
            Stage::Cc => {
                *accuracy = accuracy.step(row.soc, row.i_received_a, row.i_commanded_a)?;
            }
            Stage::Cv => {
                buffer.ingest(TrainingSample {
                    soc: row.soc,
                    start_soc: trace.meta.start_soc,
                    temperature_c: row.temperature_c,
                    current_a: row.i_received_a,
                    v_measured_v: row.v_terminal_v,
                    ocv_v: setup.ocv.ocv_at(row.soc)?,
                    serial: 0,
                });
            }
            Stage::Done => unreachable!(),
        }
        let state = SessionState {
            current_soc: row.soc,
            start_soc: trace.meta.start_soc,
            target_soc: trace.meta.target_soc,
            temperature_c: row.temperature_c,
            stage: row.stage,
        };
        let proposed = estimate(
            &state,
            &setup.profile,
            &setup.battery,
            &setup.ocv,
            accuracy,
            model,
            &setup.estimator,
        )?;
        let baseline = estimate_baseline(
            &state,
            &setup.battery,
            setup.charger.max_current_a,
            row.i_commanded_a,
            &setup.estimator,
        )?;
        ticks.push(TickRecord {
            time_s,
            true_rct_min: trace.true_rct(time_s)?,
            est_proposed_min: proposed.total_minutes,
            est_baseline_min: baseline,
            eta_cc: accuracy.eta_cc,
            predicted_r_ohm: model.predict_resistance([
                row.soc,
                trace.meta.start_soc,
                row.temperature_c,
            ]),
        });
        time_s += setup.tick_s;
    }
    Ok(ticks)
}

/// Training summary of [`train_model`].
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub traces: usize,
    pub samples: usize,
    pub requested_hidden: usize,
    pub effective_hidden: usize,
    /// Voltage MSE of the fit over the training samples, in V^2.
    pub mse_volts2: f64,
}

/// Extracts CV samples from traces at the given cadence and trains a
/// fresh model: k-means centers, then the least-squares weight fit.
pub fn train_model(
    traces: &[SessionTrace],
    ocv: &crate::battery::OcvCurve,
    n_hidden: usize,
    seed: u64,
    sample_stride_s: f64,
) -> Result<(RbfModel, TrainSummary)> {
    if !(sample_stride_s >= 0.0) {
        return Err(RctError::domain("sample stride must be non-negative"));
    }
    let mut samples: Vec<TrainingSample> = Vec::new();
    for trace in traces {
        let mut next_t = 0.0;
        for row in trace.rows.iter().filter(|r| r.stage == Stage::Cv) {
            if row.time_s + 1e-9 < next_t {
                continue;
            }
            next_t = row.time_s + sample_stride_s;
            samples.push(TrainingSample {
                soc: row.soc,
                start_soc: trace.meta.start_soc,
                temperature_c: row.temperature_c,
                current_a: row.i_received_a,
                v_measured_v: row.v_terminal_v,
                ocv_v: ocv.ocv_at(row.soc)?,
                serial: 0,
            });
        }
    }
    if samples.is_empty() {
        return Err(RctError::EmptyTrainingSet);
    }
    let inputs: Vec<[f64; 3]> = samples.iter().map(|s| s.input()).collect();
    let (skeleton, centers_report) = RbfModel::fit_centers(&inputs, n_hidden, seed)?;
    let buffer = TrainingBuffer::from_samples(samples, inputs.len(), u64::MAX)?;
    let (model, fit_report) = fit_weights(&skeleton, &buffer)?;
    let summary = TrainSummary {
        traces: traces.len(),
        samples: inputs.len(),
        requested_hidden: centers_report.requested_hidden,
        effective_hidden: centers_report.effective_hidden,
        mse_volts2: fit_report.mse_volts2,
    };
    Ok((model, summary))
}

/// Simulates the offline training sessions of a scenario under `law`.
pub fn simulate_training_traces(
    setup: &ScenarioSetup,
    spec: &TrainingSpec,
    law: &crate::sim::TrueResistanceLaw,
) -> Result<Vec<SessionTrace>> {
    let mut traces = Vec::with_capacity(spec.sessions.len());
    for (i, session) in spec.sessions.iter().enumerate() {
        let mut charger = setup.charger.clone();
        charger.seed = spec.seed.wrapping_add(1000 + i as u64);
        let temperature = crate::sim::StepSchedule::constant(session.temperature_c);
        let mut trace = simulate_session(
            &setup.battery,
            &setup.ocv,
            &setup.profile,
            &charger,
            law,
            session.start_soc,
            spec.target_soc,
            &temperature,
            setup.dt_s,
        )?;
        trace.meta.charger_id = format!("{}-train-{i}", setup.name);
        trace.meta.battery_id = format!("{}-cell", setup.name);
        traces.push(trace);
    }
    Ok(traces)
}

/// Trains the scenario's model per its training spec and the scenario law.
pub fn train_scenario_model(setup: &ScenarioSetup) -> Result<(RbfModel, TrainSummary)> {
    let spec = setup
        .training
        .as_ref()
        .ok_or_else(|| RctError::domain("scenario has no training spec"))?;
    let traces = simulate_training_traces(setup, spec, &setup.law)?;
    train_model(&traces, &setup.ocv, spec.n_hidden, spec.seed, spec.sample_stride_s)
}

/// Simulates a scenario's session, resolves its model (given, trained per
/// the setup, or the flat floor model), replays it through both
/// estimators, and optionally writes `report.json` and `series.csv`.
pub fn run_experiment(
    setup: &ScenarioSetup,
    model: Option<RbfModel>,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    setup.estimator.validate()?;
    let model = match model {
        Some(m) => m,
        None => match &setup.training {
            Some(_) => train_scenario_model(setup)?.0,
            None => RbfModel::flat(DEFAULT_RESISTANCE_FLOOR_OHM),
        },
    };
    let mut trace = simulate_session(
        &setup.battery,
        &setup.ocv,
        &setup.profile,
        &setup.charger,
        &setup.law,
        setup.start_soc,
        setup.target_soc,
        &setup.temperature,
        setup.dt_s,
    )?;
    trace.meta.charger_id = format!("{}-charger", setup.name);
    trace.meta.battery_id = format!("{}-cell", setup.name);

    let mut accuracy = AccuracyState::new(
        setup.init_eta_cc,
        setup.alpha_slow,
        setup.alpha_fast,
        setup.start_soc,
        setup.target_soc,
    )?
    .with_cap(setup.eta_cap)?;
    let mut buffer = TrainingBuffer::new(setup.buffer_capacity, setup.discard_threshold);
    let ticks = evaluate_session(&trace, setup, &mut accuracy, &model, &mut buffer)?;
    let report = EvaluationReport::from_ticks(&setup.name, setup.tick_s, ticks)?;
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(ExperimentOutcome {
        report,
        trace,
        model,
        accuracy,
        buffer,
    })
}

/// Outcome of a multi-cycle aging experiment.
#[derive(Debug, Clone)]
pub struct AgingOutcome {
    pub cycle_reports: Vec<EvaluationReport>,
    /// Maximum absolute proposed-estimate error per cycle, in minutes.
    pub max_abs_errors_min: Vec<f64>,
    pub model: RbfModel,
}

/// Runs the aging sequence: the model starts from weights trained on
/// `train_law`, each cycle's CV samples are ingested during the session,
/// and the output weights take a gradient-descent update between cycles.
pub fn run_aging_experiment(aging: &AgingSetup, out_dir: Option<&Path>) -> Result<AgingOutcome> {
    let setup = &aging.session;
    let spec = setup
        .training
        .as_ref()
        .ok_or_else(|| RctError::domain("aging setup needs a training spec"))?;
    let train_traces = simulate_training_traces(setup, spec, &aging.train_law)?;
    let (mut model, _) = train_model(
        &train_traces,
        &setup.ocv,
        spec.n_hidden,
        spec.seed,
        spec.sample_stride_s,
    )?;

    let mut accuracy = AccuracyState::new(
        setup.init_eta_cc,
        setup.alpha_slow,
        setup.alpha_fast,
        setup.start_soc,
        setup.target_soc,
    )?
    .with_cap(setup.eta_cap)?;
    let mut buffer = TrainingBuffer::new(setup.buffer_capacity, setup.discard_threshold);

    let mut cycle_reports = Vec::with_capacity(aging.cycles);
    let mut max_abs_errors_min = Vec::with_capacity(aging.cycles);
    for cycle in 0..aging.cycles {
        let mut charger = setup.charger.clone();
        charger.seed = setup.charger.seed.wrapping_add(cycle as u64);
        let mut trace = simulate_session(
            &setup.battery,
            &setup.ocv,
            &setup.profile,
            &charger,
            &setup.law,
            setup.start_soc,
            setup.target_soc,
            &setup.temperature,
            setup.dt_s,
        )?;
        trace.meta.charger_id = format!("{}-cycle-{cycle}", setup.name);
        trace.meta.battery_id = format!("{}-new-pack", setup.name);
        let ticks = evaluate_session(&trace, setup, &mut accuracy, &model, &mut buffer)?;
        let report = EvaluationReport::from_ticks(
            &format!("{}-cycle-{cycle}", setup.name),
            setup.tick_s,
            ticks,
        )?;
        if let Some(dir) = out_dir {
            report.write(dir.join(format!("cycle{cycle}")))?;
        }
        max_abs_errors_min.push(report.summary.max_abs_error_proposed_min);
        cycle_reports.push(report);

        let (updated, _) =
            online_update(&model, &buffer, aging.online_learning_rate, aging.online_epochs)?;
        model = updated;
    }
    Ok(AgingOutcome {
        cycle_reports,
        max_abs_errors_min,
        model,
    })
}
