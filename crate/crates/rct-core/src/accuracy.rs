//! Online tracking of the CC-stage charging accuracy: an exponential
//! moving average whose update rate slides from `alpha_slow` at the start
//! of a session toward `alpha_fast` as the target SOC approaches.

use std::io::Read;
use std::path::Path;

use crate::error::{RctError, Result};

pub const DEFAULT_ALPHA_SLOW: f64 = 0.01;
pub const DEFAULT_ALPHA_FAST: f64 = 0.2;
pub const DEFAULT_ETA_CAP: f64 = 1.2;
/// Historical accuracy assumed for charger types absent from the table.
pub const FALLBACK_ETA: f64 = 0.9;

/// Evolving estimate of the CC charging accuracy for one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyState {
    pub eta_cc: f64,
    pub alpha_slow: f64,
    pub alpha_fast: f64,
    pub start_soc: f64,
    pub target_soc: f64,
    /// Instantaneous ratios are clamped to [0, eta_cap] to reject sensor
    /// glitches from near-zero commands.
    pub eta_cap: f64,
}

impl AccuracyState {
    pub fn new(
        eta_cc: f64,
        alpha_slow: f64,
        alpha_fast: f64,
        start_soc: f64,
        target_soc: f64,
    ) -> Result<Self> {
        let state = Self {
            eta_cc,
            alpha_slow,
            alpha_fast,
            start_soc,
            target_soc,
            eta_cap: DEFAULT_ETA_CAP,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn with_cap(mut self, eta_cap: f64) -> Result<Self> {
        self.eta_cap = eta_cap;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_slow && self.alpha_slow < self.alpha_fast && self.alpha_fast < 1.0) {
            return Err(RctError::domain(
                "update rates must satisfy 0 < alpha_slow < alpha_fast < 1",
            ));
        }
        if !(self.start_soc < self.target_soc) {
            return Err(RctError::domain("start SOC must be below target SOC"));
        }
        if !(self.eta_cap > 0.0) {
            return Err(RctError::domain("eta_cap must be positive"));
        }
        if !(self.eta_cc > 0.0 && self.eta_cc <= self.eta_cap) {
            return Err(RctError::domain(format!(
                "eta_cc {} outside (0, {}]",
                self.eta_cc, self.eta_cap
            )));
        }
        Ok(())
    }

    /// Ratio of received to commanded current, clamped to [0, eta_cap].
    pub fn instantaneous_accuracy(&self, i_received_a: f64, i_commanded_a: f64) -> Result<f64> {
        if !(i_commanded_a > 0.0) {
            return Err(RctError::NoCommand);
        }
        Ok((i_received_a / i_commanded_a).clamp(0.0, self.eta_cap))
    }

    /// The SOC-progress-dependent EMA rate. Exactly `alpha_fast` at the
    /// target SOC; exactly `alpha_slow` at the start SOC, where the
    /// exponent's limit is taken.
    pub fn update_rate(&self, current_soc: f64) -> Result<f64> {
        if current_soc < self.start_soc || current_soc > self.target_soc {
            return Err(RctError::domain(format!(
                "current SOC {current_soc} outside [{}, {}]",
                self.start_soc, self.target_soc
            )));
        }
        if current_soc == self.start_soc {
            return Ok(self.alpha_slow);
        }
        if current_soc == self.target_soc {
            return Ok(self.alpha_fast);
        }
        let exponent =
            (current_soc - self.target_soc) / (current_soc - self.start_soc);
        Ok(self.alpha_slow + (self.alpha_fast - self.alpha_slow) * exponent.exp())
    }

    /// One EMA update. A non-positive command means no usable sample, so
    /// the state is returned unchanged.
    pub fn step(&self, current_soc: f64, i_received_a: f64, i_commanded_a: f64) -> Result<Self> {
        let instant = match self.instantaneous_accuracy(i_received_a, i_commanded_a) {
            Ok(v) => v,
            Err(RctError::NoCommand) => return Ok(*self),
            Err(e) => return Err(e),
        };
        let alpha = self.update_rate(current_soc)?;
        Ok(Self {
            eta_cc: (1.0 - alpha) * self.eta_cc + alpha * instant,
            ..*self
        })
    }
}

/// Historical charging accuracy per charger type, used to seed `eta_cc`
/// from pre-study knowledge. Unknown types fall back to [`FALLBACK_ETA`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChargerTypeTable {
    entries: Vec<(String, f64)>,
}

impl ChargerTypeTable {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        for (name, eta) in &entries {
            if !(*eta > 0.0 && *eta <= DEFAULT_ETA_CAP) {
                return Err(RctError::domain(format!(
                    "charger type `{name}`: eta {eta} outside (0, {DEFAULT_ETA_CAP}]"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, path)
    }

    pub fn from_csv_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        crate::battery::expect_headers(&mut rdr, path, &["charger_type", "historical_eta"])?;
        let mut entries = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| RctError::parse(path, line, e.to_string()))?;
            let name = record
                .get(0)
                .ok_or_else(|| RctError::parse(path, line, "missing charger_type"))?
                .trim()
                .to_string();
            let eta = crate::battery::parse_field(&record, 1, path, line)?;
            entries.push((name, eta));
        }
        Self::new(entries)
    }

    /// Historical accuracy for `charger_type`, or [`FALLBACK_ETA`].
    pub fn eta_for(&self, charger_type: &str) -> f64 {
        self.entries
            .iter()
            .find(|(name, _)| name == charger_type)
            .map(|(_, eta)| *eta)
            .unwrap_or(FALLBACK_ETA)
    }
}
