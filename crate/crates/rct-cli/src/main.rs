mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rct_core::error::RctError;
use rct_core::eval::{run_aging_experiment, run_experiment, train_model, EvaluationReport};
use rct_core::rbf::RbfModel;
use rct_core::scenarios::{paper_scenario_aging, scenario_by_name, ScenarioSetup, SCENARIO_NAMES};
use rct_core::sim::{simulate_session, SessionTrace};

use config::ScenarioOverrides;

const EXIT_THRESHOLD: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

/// Remaining-charging-time estimation lab: deterministic CC-CV charging
/// simulations, resistance-model training, and estimator evaluation.
#[derive(Parser)]
#[command(name = "rct-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario name.
    #[arg(long, value_parser = SCENARIO_NAMES.to_vec())]
    scenario: String,
    /// TOML file overriding parts of the scenario (see docs/config.md).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the charger seed (RCT_LAB_SEED wins over this).
    #[arg(long)]
    seed: Option<u64>,
    /// Apply the accuracy factor literally (multiply) instead of as a
    /// current derating (divide).
    #[arg(long)]
    eta_multiplies: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one charging session and write trace.csv plus its sidecar.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a resistance model from simulated trace CSVs.
    Train {
        /// Trace CSV files (each with a <stem>.meta.json sidecar).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Hidden-unit count.
        #[arg(long, default_value_t = rct_core::rbf::DEFAULT_N_HIDDEN)]
        n_hidden: usize,
        /// k-means seed (RCT_LAB_SEED wins over this).
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Sample extraction cadence over CV rows, in seconds.
        #[arg(long, default_value_t = 5.0)]
        stride_s: f64,
        /// OCV curve CSV; defaults to the built-in curve.
        #[arg(long)]
        ocv: Option<PathBuf>,
        /// Output model JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// One-shot estimate for a SOC window of a scenario.
    Estimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        current_soc: f64,
        /// Defaults to the scenario's target SOC.
        #[arg(long)]
        target_soc: Option<f64>,
        /// Charging accuracy to use; defaults to the scenario's initial value.
        #[arg(long)]
        eta: Option<f64>,
        /// Resistance model JSON; defaults to the scenario's trained or flat model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run a full experiment: simulate, estimate every tick, score, report.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Resistance model JSON; defaults to the scenario's trained or flat model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory for report.json and series.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check and summarize a written report directory.
    Report {
        /// Directory holding report.json and series.csv.
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify_error(&e))
        }
    }
}

fn classify_error(e: &anyhow::Error) -> u8 {
    if let Some(rct) = e.downcast_ref::<RctError>() {
        match rct {
            RctError::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        }
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

/// RCT_LAB_SEED environment variable, for CI determinism.
fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("RCT_LAB_SEED") {
        Ok(raw) => {
            let seed = raw
                .parse::<u64>()
                .map_err(|e| anyhow::anyhow!("RCT_LAB_SEED `{raw}`: {e}"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn resolve_scenario(args: &ScenarioArgs) -> anyhow::Result<ScenarioSetup> {
    let mut setup = scenario_by_name(&args.scenario)?
        .ok_or_else(|| anyhow::anyhow!("unknown scenario `{}`", args.scenario))?;
    if let Some(path) = &args.config {
        let overrides = ScenarioOverrides::from_toml_path(path)?;
        setup = overrides.apply(setup)?;
    }
    if let Some(seed) = args.seed {
        setup.charger.seed = seed;
    }
    if let Some(seed) = env_seed()? {
        setup.charger.seed = seed;
        if let Some(training) = &mut setup.training {
            training.seed = seed;
        }
    }
    if args.eta_multiplies {
        setup.estimator.eta_mode = rct_core::engine::EtaMode::Multiplies;
    }
    Ok(setup)
}

fn load_model(path: &Path) -> anyhow::Result<RbfModel> {
    Ok(RbfModel::from_json_path(path)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let setup = resolve_scenario(&scenario)?;
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
            std::fs::create_dir_all(&out)?;
            let csv_path = out.join("trace.csv");
            trace.save(&csv_path)?;
            println!(
                "simulated {}: {} rows, {:.1} min, wrote {}",
                setup.name,
                trace.rows.len(),
                trace.end_time_s() / 60.0,
                csv_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            traces,
            n_hidden,
            seed,
            stride_s,
            ocv,
            out,
        } => {
            let seed = env_seed()?.unwrap_or(seed);
            let ocv = match ocv {
                Some(path) => rct_core::battery::OcvCurve::from_csv_path(path)?,
                None => rct_core::battery::OcvCurve::default_synthetic(),
            };
            let loaded: Vec<SessionTrace> = traces
                .iter()
                .map(SessionTrace::load)
                .collect::<Result<_, _>>()?;
            let (model, summary) = train_model(&loaded, &ocv, n_hidden, seed, stride_s)?;
            model.to_json_path(&out)?;
            println!(
                "trained on {} traces / {} samples: {} hidden units (requested {}), voltage MSE {:.3e} V^2 ({:.3} mV RMSE)",
                summary.traces,
                summary.samples,
                summary.effective_hidden,
                summary.requested_hidden,
                summary.mse_volts2,
                summary.mse_volts2.sqrt() * 1000.0
            );
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate {
            scenario,
            current_soc,
            target_soc,
            eta,
            model,
        } => {
            let setup = resolve_scenario(&scenario)?;
            let model = match model {
                Some(path) => load_model(&path)?,
                None => match &setup.training {
                    Some(_) => rct_core::eval::train_scenario_model(&setup)?.0,
                    None => RbfModel::flat(rct_core::rbf::DEFAULT_RESISTANCE_FLOOR_OHM),
                },
            };
            let target_soc = target_soc.unwrap_or(setup.target_soc);
            let accuracy = rct_core::AccuracyState::new(
                eta.unwrap_or(setup.init_eta_cc),
                setup.alpha_slow,
                setup.alpha_fast,
                current_soc,
                target_soc,
            )?;
            // infer the stage from the predicted turning SOC
            let turning = rct_core::cv_turning_soc(&setup.profile, &setup.battery, &setup.ocv, |soc| {
                model.predict_resistance([soc, current_soc, 25.0])
            })?;
            let stage = if current_soc >= turning {
                rct_core::Stage::Cv
            } else {
                rct_core::Stage::Cc
            };
            let state = rct_core::SessionState {
                current_soc,
                start_soc: current_soc,
                target_soc,
                temperature_c: setup.temperature.value_at(0.0),
                stage,
            };
            let est = rct_core::estimate(
                &state,
                &setup.profile,
                &setup.battery,
                &setup.ocv,
                &accuracy,
                &model,
                &setup.estimator,
            )?;
            let payload = serde_json::json!({
                "scenario": setup.name,
                "current_soc": current_soc,
                "target_soc": target_soc,
                "kind": est.scenario.kind_name(),
                "total_minutes": est.total_minutes,
                "cc_minutes": est.cc_minutes,
                "cv_minutes": est.cv_minutes,
                "eta_cc_used": est.eta_cc_used,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            scenario,
            model,
            out,
        } => {
            if scenario.scenario == "paper-aging" {
                let mut aging = paper_scenario_aging()?;
                if let Some(seed) = scenario.seed {
                    aging.session.charger.seed = seed;
                }
                if let Some(seed) = env_seed()? {
                    aging.session.charger.seed = seed;
                }
                let outcome = run_aging_experiment(&aging, Some(&out))?;
                let mut decreasing = true;
                for (i, report) in outcome.cycle_reports.iter().enumerate() {
                    println!(
                        "cycle {}: rmse proposed {:.3} min, baseline {:.3} min, max |err| {:.3} min",
                        i + 1,
                        report.summary.rmse_proposed_min,
                        report.summary.rmse_baseline_min,
                        outcome.max_abs_errors_min[i]
                    );
                    if i > 0 && outcome.max_abs_errors_min[i] >= outcome.max_abs_errors_min[i - 1] {
                        decreasing = false;
                    }
                }
                if !decreasing {
                    eprintln!("threshold failure: max error did not strictly decrease across cycles");
                    return Ok(ExitCode::from(EXIT_THRESHOLD));
                }
                return Ok(ExitCode::SUCCESS);
            }

            let setup = resolve_scenario(&scenario)?;
            let model = match model {
                Some(path) => Some(load_model(&path)?),
                None => None,
            };
            let outcome = run_experiment(&setup, model, Some(&out))?;
            let summary = &outcome.report.summary;
            println!(
                "{}: rmse proposed {:.4} min, baseline {:.4} min, improvement {:.2}%",
                setup.name,
                summary.rmse_proposed_min,
                summary.rmse_baseline_min,
                summary.improvement_percent
            );
            println!("wrote {}", out.display());
            let failures = outcome.report.threshold_failures(&setup.thresholds);
            if !failures.is_empty() {
                for f in &failures {
                    eprintln!("threshold failure: {f}");
                }
                return Ok(ExitCode::from(EXIT_THRESHOLD));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let report = EvaluationReport::read(&dir)?;
            let s = &report.summary;
            println!("scenario:        {}", s.scenario);
            println!("ticks:           {} at {} s", report.ticks.len(), s.tick_s);
            println!("rmse proposed:   {:.4} min", s.rmse_proposed_min);
            println!("rmse baseline:   {:.4} min", s.rmse_baseline_min);
            println!("improvement:     {:.2}%", s.improvement_percent);
            println!(
                "max |err|:       proposed {:.4} min, baseline {:.4} min",
                s.max_abs_error_proposed_min, s.max_abs_error_baseline_min
            );
            let (rp, rb) = report.recomputed_rmse()?;
            if rp != s.rmse_proposed_min || rb != s.rmse_baseline_min {
                eprintln!(
                    "inconsistent report: stored rmse ({}, {}) vs recomputed ({rp}, {rb})",
                    s.rmse_proposed_min, s.rmse_baseline_min
                );
                return Ok(ExitCode::from(EXIT_THRESHOLD));
            }
            println!("series is self-consistent with the stored RMSE");
            Ok(ExitCode::SUCCESS)
        }
    }
}
