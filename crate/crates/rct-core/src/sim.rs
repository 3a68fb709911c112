//! Ground-truth charging simulator: a derating, noisy charger against an
//! Rint battery whose resistance follows a synthetic law with the shape
//! of measured cell behavior. Produces time-stamped session traces that
//! double as the oracle for estimator evaluation.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::battery::{BatteryParams, OcvCurve, RintState};
use crate::error::{RctError, Result};
use crate::profile::{ChargeProfile, Stage};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
/// Hard cap on simulated time, a guard against non-terminating configs.
const MAX_SIM_SECONDS: f64 = 30.0 * 24.0 * 3600.0;

/// Piecewise-constant schedule over time: the value at `t` is the last
/// point at or before `t`. The first point must sit at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    points: Vec<(f64, f64)>,
}

impl StepSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(RctError::domain("schedule needs at least one point"));
        }
        if points[0].0 != 0.0 {
            return Err(RctError::domain("schedule must start at time 0"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(RctError::domain("schedule times must be strictly increasing"));
            }
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(RctError::domain("schedule values must be finite"));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn value_at(&self, time_s: f64) -> f64 {
        let idx = self.points.partition_point(|(t, _)| *t <= time_s);
        self.points[idx.saturating_sub(1)].1
    }
}

/// The charger: a hard current limit, a piecewise accuracy (derating)
/// process, and seeded zero-mean multiplicative jitter on the received
/// CC current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargerModel {
    pub max_current_a: f64,
    pub accuracy: StepSchedule,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl ChargerModel {
    pub fn new(
        max_current_a: f64,
        accuracy: StepSchedule,
        noise_amplitude: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(max_current_a > 0.0) {
            return Err(RctError::domain("charger max current must be positive"));
        }
        if accuracy
            .points()
            .iter()
            .any(|(_, a)| !(*a > 0.0 && *a <= 1.2))
        {
            return Err(RctError::domain("accuracy values must lie in (0, 1.2]"));
        }
        if !(0.0..0.5).contains(&noise_amplitude) {
            return Err(RctError::domain("noise amplitude must lie in [0, 0.5)"));
        }
        Ok(Self {
            max_current_a,
            accuracy,
            noise_amplitude,
            seed,
        })
    }
}

/// Synthetic ground-truth resistance: a base value derated linearly with
/// temperature, lifted exponentially toward full charge, offset by the
/// session's starting SOC, and scaled by an aging multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueResistanceLaw {
    pub r_base_ohm: f64,
    pub temp_coeff_per_c: f64,
    pub end_rise_gain: f64,
    pub end_rise_rate: f64,
    pub start_soc_coeff: f64,
    pub aging_scale: f64,
}

impl Default for TrueResistanceLaw {
    fn default() -> Self {
        Self {
            r_base_ohm: 0.05,
            temp_coeff_per_c: 0.01,
            end_rise_gain: 5.0,
            end_rise_rate: 20.0,
            start_soc_coeff: 0.1,
            aging_scale: 1.0,
        }
    }
}

impl TrueResistanceLaw {
    /// Temperature range over which the law must stay positive.
    pub const TEMP_RANGE_C: (f64, f64) = (-20.0, 60.0);

    pub fn validated(self) -> Result<Self> {
        if !(self.r_base_ohm > 0.0) {
            return Err(RctError::domain("r_base_ohm must be positive"));
        }
        if !(self.temp_coeff_per_c > 0.0) {
            return Err(RctError::domain(
                "temp_coeff_per_c must be positive (resistance falls with temperature)",
            ));
        }
        if self.end_rise_gain < 0.0 || self.end_rise_rate <= 0.0 {
            return Err(RctError::domain("end-rise parameters must be non-negative"));
        }
        if !(self.aging_scale >= 1.0) {
            return Err(RctError::domain("aging_scale must be at least 1"));
        }
        let (lo, hi) = Self::TEMP_RANGE_C;
        for temp in [lo, hi] {
            if self.resistance(0.0, 0.0, temp) <= 0.0 || self.resistance(1.0, 1.0, temp) <= 0.0 {
                return Err(RctError::domain(format!(
                    "law is non-positive at {temp} C; lower temp_coeff_per_c"
                )));
            }
        }
        Ok(self)
    }

    pub fn with_aging(mut self, aging_scale: f64) -> Self {
        self.aging_scale = aging_scale;
        self
    }

    pub fn resistance(&self, soc: f64, start_soc: f64, temperature_c: f64) -> f64 {
        self.r_base_ohm
            * (1.0 - self.temp_coeff_per_c * (temperature_c - 25.0))
            * (1.0 + self.end_rise_gain * (self.end_rise_rate * (soc - 1.0)).exp())
            * (1.0 + self.start_soc_coeff * start_soc)
            * self.aging_scale
    }
}

/// One sample of a simulated session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub soc: f64,
    pub stage: Stage,
    pub i_commanded_a: f64,
    pub i_received_a: f64,
    pub v_terminal_v: f64,
    pub temperature_c: f64,
}

/// Sidecar metadata of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    pub start_soc: f64,
    pub target_soc: f64,
    pub seed: u64,
    pub charger_id: String,
    pub battery_id: String,
    /// True when the session hit the cut-off current before the target SOC.
    pub ended_at_cutoff: bool,
    pub config_sha256: String,
}

/// A finished charging session: rows at the integration step plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
}

impl SessionTrace {
    pub fn end_time_s(&self) -> f64 {
        self.rows.last().map(|r| r.time_s).unwrap_or(0.0)
    }

    /// True remaining charging time at `at_time_s`, in minutes.
    pub fn true_rct(&self, at_time_s: f64) -> Result<f64> {
        let end = self.end_time_s();
        if at_time_s < 0.0 || at_time_s > end {
            return Err(RctError::domain(format!(
                "time {at_time_s} s outside trace [0, {end}]"
            )));
        }
        Ok((end - at_time_s) / 60.0)
    }

    /// Row index at or just before `at_time_s`.
    pub fn row_at(&self, at_time_s: f64) -> Result<&TraceRow> {
        if self.rows.is_empty() {
            return Err(RctError::domain("empty trace"));
        }
        let idx = self.rows.partition_point(|r| r.time_s <= at_time_s);
        if idx == 0 {
            return Err(RctError::domain(format!("time {at_time_s} s before trace start")));
        }
        Ok(&self.rows[idx - 1])
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from("time_s,soc,stage,i_cmd_a,i_recv_a,v_term_v,temp_c\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.time_s, r.soc, r.stage, r.i_commanded_a, r.i_received_a, r.v_terminal_v,
                r.temperature_c
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.csv_string())?;
        Ok(())
    }

    /// Writes `<path>` and its `<stem>.meta.json` sidecar.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(csv_path)?;
        let meta_path = meta_path_for(csv_path);
        std::fs::write(
            meta_path,
            serde_json::to_string_pretty(&self.meta).expect("meta serializes"),
        )?;
        Ok(())
    }

    /// Loads a trace CSV plus its `<stem>.meta.json` sidecar.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let meta_path = meta_path_for(csv_path);
        let meta_raw = std::fs::read_to_string(&meta_path)?;
        let meta: TraceMeta = serde_json::from_str(&meta_raw)
            .map_err(|e| RctError::parse(&meta_path, e.line(), e.to_string()))?;
        let file = std::fs::File::open(csv_path)?;
        let rows = Self::read_rows(file, csv_path)?;
        Ok(Self { rows, meta })
    }

    pub fn read_rows(reader: impl Read, path: &Path) -> Result<Vec<TraceRow>> {
        let mut rdr = csv::Reader::from_reader(reader);
        crate::battery::expect_headers(
            &mut rdr,
            path,
            &["time_s", "soc", "stage", "i_cmd_a", "i_recv_a", "v_term_v", "temp_c"],
        )?;
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| RctError::parse(path, line, e.to_string()))?;
            let stage_raw = record
                .get(2)
                .ok_or_else(|| RctError::parse(path, line, "missing stage"))?;
            let stage: Stage = stage_raw
                .trim()
                .parse()
                .map_err(|e: String| RctError::parse(path, line, e))?;
            rows.push(TraceRow {
                time_s: crate::battery::parse_field(&record, 0, path, line)?,
                soc: crate::battery::parse_field(&record, 1, path, line)?,
                stage,
                i_commanded_a: crate::battery::parse_field(&record, 3, path, line)?,
                i_received_a: crate::battery::parse_field(&record, 4, path, line)?,
                v_terminal_v: crate::battery::parse_field(&record, 5, path, line)?,
                temperature_c: crate::battery::parse_field(&record, 6, path, line)?,
            });
        }
        Ok(rows)
    }
}

pub fn meta_path_for(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("meta.json")
}

/// Everything a simulation run depends on; hashed into the trace metadata.
#[derive(Serialize)]
struct SimConfigDigest<'a> {
    battery: &'a BatteryParams,
    ocv: &'a OcvCurve,
    profile: &'a ChargeProfile,
    charger: &'a ChargerModel,
    law: &'a TrueResistanceLaw,
    start_soc: f64,
    target_soc: f64,
    temperature: &'a StepSchedule,
    dt_s: f64,
}

/// Euler integration of one CC-CV session. CC draws the commanded profile
/// current through the charger's accuracy and jitter; the switch to CV
/// happens at the first step where the Rint terminal voltage reaches the
/// cut-off voltage; CV holds the terminal voltage at the cut-off and ends
/// at the target SOC or the cut-off current, whichever comes first.
/// Deterministic for a given charger seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate_session(
    battery: &BatteryParams,
    ocv: &OcvCurve,
    profile: &ChargeProfile,
    charger: &ChargerModel,
    law: &TrueResistanceLaw,
    start_soc: f64,
    target_soc: f64,
    temperature: &StepSchedule,
    dt_s: f64,
) -> Result<SessionTrace> {
    if !(start_soc < target_soc) {
        return Err(RctError::domain("start SOC must be below target SOC"));
    }
    if !(0.0..=1.0).contains(&start_soc) || !(0.0..=1.0).contains(&target_soc) {
        return Err(RctError::domain("SOC span must lie within [0, 1]"));
    }
    if !(dt_s > 0.0) {
        return Err(RctError::domain("dt_s must be positive"));
    }
    let (cov_lo, cov_hi) = profile.coverage();
    if start_soc < cov_lo || target_soc > cov_hi {
        return Err(RctError::domain(format!(
            "session span [{start_soc}, {target_soc}] outside profile coverage [{cov_lo}, {cov_hi}]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(charger.seed);
    let cutoff_v = battery.cutoff_voltage_v;
    let cutoff_a = battery.cutoff_current_a();
    let mut rows = Vec::new();
    let mut soc = start_soc;
    let mut time_s = 0.0;
    let mut stage = Stage::Cc;
    let mut ended_at_cutoff = false;

    loop {
        if soc >= target_soc {
            let temp = temperature.value_at(time_s);
            rows.push(TraceRow {
                time_s,
                soc,
                stage: Stage::Done,
                i_commanded_a: 0.0,
                i_received_a: 0.0,
                v_terminal_v: ocv.ocv_at(soc.min(1.0))?,
                temperature_c: temp,
            });
            break;
        }
        if time_s > MAX_SIM_SECONDS {
            return Err(RctError::domain(
                "simulation exceeded 30 days; configuration cannot terminate",
            ));
        }
        let temp = temperature.value_at(time_s);
        let rint = RintState::new(soc, law.resistance(soc, start_soc, temp), temp)?;

        let (i_commanded_a, i_received_a, v_terminal_v) = if stage == Stage::Cc {
            let i_cmd = profile.c_rate_at(soc)? * battery.capacity_ah;
            let noise = if charger.noise_amplitude > 0.0 {
                rng.random_range(-charger.noise_amplitude..=charger.noise_amplitude)
            } else {
                0.0
            };
            let i_recv = i_cmd.min(charger.max_current_a)
                * charger.accuracy.value_at(time_s)
                * (1.0 + noise);
            if ocv.ocv_at(soc)? + rint.resistance_ohm * i_recv >= cutoff_v {
                stage = Stage::Cv;
                cv_step(ocv, &rint, cutoff_v)?
            } else {
                (i_cmd, i_recv, ocv.ocv_at(soc)? + rint.resistance_ohm * i_recv)
            }
        } else {
            cv_step(ocv, &rint, cutoff_v)?
        };

        if stage == Stage::Cv && i_received_a <= cutoff_a {
            ended_at_cutoff = true;
            rows.push(TraceRow {
                time_s,
                soc,
                stage: Stage::Done,
                i_commanded_a: 0.0,
                i_received_a: 0.0,
                v_terminal_v: ocv.ocv_at(soc)?,
                temperature_c: temp,
            });
            break;
        }

        rows.push(TraceRow {
            time_s,
            soc,
            stage,
            i_commanded_a,
            i_received_a,
            v_terminal_v,
            temperature_c: temp,
        });

        soc += i_received_a / battery.capacity_ah / 3600.0 * dt_s;
        time_s += dt_s;
    }

    let digest = SimConfigDigest {
        battery,
        ocv,
        profile,
        charger,
        law,
        start_soc,
        target_soc,
        temperature,
        dt_s,
    };
    let config_json = serde_json::to_string(&digest).expect("config serializes");
    let config_sha256 = hex_digest(config_json.as_bytes());

    Ok(SessionTrace {
        rows,
        meta: TraceMeta {
            schema_version: TRACE_SCHEMA_VERSION,
            start_soc,
            target_soc,
            seed: charger.seed,
            charger_id: String::new(),
            battery_id: String::new(),
            ended_at_cutoff,
            config_sha256,
        },
    })
}

fn cv_step(ocv: &OcvCurve, rint: &RintState, cutoff_v: f64) -> Result<(f64, f64, f64)> {
    let i = (cutoff_v - ocv.ocv_at(rint.soc)?) / rint.resistance_ohm;
    Ok((i, i, cutoff_v))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
