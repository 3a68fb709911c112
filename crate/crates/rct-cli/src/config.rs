//! TOML overrides applied on top of a named built-in scenario. The file
//! is sectioned key-value text; every key is optional. See docs/config.md
//! for the full schema.

use std::path::Path;

use serde::Deserialize;

use rct_core::accuracy::ChargerTypeTable;
use rct_core::battery::{BatteryParams, OcvCurve};
use rct_core::profile::ChargeProfile;
use rct_core::scenarios::ScenarioSetup;
use rct_core::sim::{ChargerModel, StepSchedule, TrueResistanceLaw};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    #[serde(default)]
    session: SessionOverrides,
    #[serde(default)]
    battery: BatteryOverrides,
    #[serde(default)]
    charger: ChargerOverrides,
    #[serde(default)]
    law: LawOverrides,
    #[serde(default)]
    accuracy: AccuracyOverrides,
    #[serde(default)]
    estimator: EstimatorOverrides,
    #[serde(default)]
    files: FileOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionOverrides {
    start_soc: Option<f64>,
    target_soc: Option<f64>,
    dt_s: Option<f64>,
    tick_s: Option<f64>,
    /// Piecewise-constant [[time_s, temp_c], ...].
    temperature: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatteryOverrides {
    capacity_ah: Option<f64>,
    cutoff_voltage_v: Option<f64>,
    cutoff_current_c: Option<f64>,
    nominal_temperature_c: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChargerOverrides {
    max_current_a: Option<f64>,
    noise_amplitude: Option<f64>,
    seed: Option<u64>,
    /// Piecewise-constant [[time_s, accuracy], ...].
    accuracy: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawOverrides {
    r_base_ohm: Option<f64>,
    temp_coeff_per_c: Option<f64>,
    end_rise_gain: Option<f64>,
    end_rise_rate: Option<f64>,
    start_soc_coeff: Option<f64>,
    aging_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccuracyOverrides {
    init_eta_cc: Option<f64>,
    alpha_slow: Option<f64>,
    alpha_fast: Option<f64>,
    eta_cap: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorOverrides {
    soc_step_cv: Option<f64>,
    eta_cv: Option<f64>,
    baseline_eta_cc: Option<f64>,
    baseline_eta_cv: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    /// OCV curve CSV with header `soc,ocv_v`.
    ocv_csv: Option<String>,
    /// Charge profile CSV with header `soc_from,soc_to,c_rate`.
    profile_csv: Option<String>,
    /// Charger-type table CSV with header `charger_type,historical_eta`;
    /// seeds the initial accuracy for `charger_type`.
    charger_types_csv: Option<String>,
    charger_type: Option<String>,
}

impl ScenarioOverrides {
    pub fn from_toml_path(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let overrides: Self =
            toml::from_str(&raw).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(overrides)
    }

    pub fn apply(self, mut setup: ScenarioSetup) -> anyhow::Result<ScenarioSetup> {
        let s = &self.session;
        setup.start_soc = s.start_soc.unwrap_or(setup.start_soc);
        setup.target_soc = s.target_soc.unwrap_or(setup.target_soc);
        setup.dt_s = s.dt_s.unwrap_or(setup.dt_s);
        setup.tick_s = s.tick_s.unwrap_or(setup.tick_s);
        if let Some(points) = s.temperature.clone() {
            setup.temperature = StepSchedule::new(points)?;
        }

        let b = &self.battery;
        setup.battery = BatteryParams::new(
            b.capacity_ah.unwrap_or(setup.battery.capacity_ah),
            b.cutoff_voltage_v.unwrap_or(setup.battery.cutoff_voltage_v),
            b.cutoff_current_c.unwrap_or(setup.battery.cutoff_current_c),
            b.nominal_temperature_c
                .unwrap_or(setup.battery.nominal_temperature_c),
        )?;

        let c = &self.charger;
        let accuracy = match c.accuracy.clone() {
            Some(points) => StepSchedule::new(points)?,
            None => setup.charger.accuracy.clone(),
        };
        setup.charger = ChargerModel::new(
            c.max_current_a.unwrap_or(setup.charger.max_current_a),
            accuracy,
            c.noise_amplitude.unwrap_or(setup.charger.noise_amplitude),
            c.seed.unwrap_or(setup.charger.seed),
        )?;

        let l = &self.law;
        setup.law = TrueResistanceLaw {
            r_base_ohm: l.r_base_ohm.unwrap_or(setup.law.r_base_ohm),
            temp_coeff_per_c: l.temp_coeff_per_c.unwrap_or(setup.law.temp_coeff_per_c),
            end_rise_gain: l.end_rise_gain.unwrap_or(setup.law.end_rise_gain),
            end_rise_rate: l.end_rise_rate.unwrap_or(setup.law.end_rise_rate),
            start_soc_coeff: l.start_soc_coeff.unwrap_or(setup.law.start_soc_coeff),
            aging_scale: l.aging_scale.unwrap_or(setup.law.aging_scale),
        }
        .validated()?;

        let a = &self.accuracy;
        setup.init_eta_cc = a.init_eta_cc.unwrap_or(setup.init_eta_cc);
        setup.alpha_slow = a.alpha_slow.unwrap_or(setup.alpha_slow);
        setup.alpha_fast = a.alpha_fast.unwrap_or(setup.alpha_fast);
        setup.eta_cap = a.eta_cap.unwrap_or(setup.eta_cap);

        let e = &self.estimator;
        setup.estimator.soc_step_cv = e.soc_step_cv.unwrap_or(setup.estimator.soc_step_cv);
        setup.estimator.eta_cv = e.eta_cv.unwrap_or(setup.estimator.eta_cv);
        setup.estimator.baseline_eta_cc = e.baseline_eta_cc.unwrap_or(setup.estimator.baseline_eta_cc);
        setup.estimator.baseline_eta_cv = e.baseline_eta_cv.unwrap_or(setup.estimator.baseline_eta_cv);
        setup.estimator.validate()?;

        let f = &self.files;
        if let Some(path) = &f.ocv_csv {
            setup.ocv = OcvCurve::from_csv_path(path)?;
        }
        if let Some(path) = &f.profile_csv {
            setup.profile = ChargeProfile::from_csv_path(path)?;
        }
        match (&f.charger_types_csv, &f.charger_type) {
            (Some(table_path), Some(charger_type)) => {
                let table = ChargerTypeTable::from_csv_path(table_path)?;
                setup.init_eta_cc = table.eta_for(charger_type);
            }
            (None, None) => {}
            _ => anyhow::bail!(
                "[files] charger_types_csv and charger_type must be given together"
            ),
        }
        Ok(setup)
    }
}
