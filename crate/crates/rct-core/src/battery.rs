//! Battery physical parameters, the OCV-SOC relation, and the Rint-model
//! algebra shared by the estimator and the simulator.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RctError, Result};

/// Physical identity of the pack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub capacity_ah: f64,
    pub cutoff_voltage_v: f64,
    /// CV termination current as a C-rate, e.g. 0.05 for C/20.
    pub cutoff_current_c: f64,
    pub nominal_temperature_c: f64,
}

impl BatteryParams {
    pub fn new(
        capacity_ah: f64,
        cutoff_voltage_v: f64,
        cutoff_current_c: f64,
        nominal_temperature_c: f64,
    ) -> Result<Self> {
        if !(capacity_ah > 0.0) {
            return Err(RctError::domain("capacity_ah must be positive"));
        }
        if !(cutoff_voltage_v > 0.0) {
            return Err(RctError::domain("cutoff_voltage_v must be positive"));
        }
        if !(cutoff_current_c > 0.0 && cutoff_current_c < 1.0) {
            return Err(RctError::domain("cutoff_current_c must lie in (0, 1)"));
        }
        Ok(Self {
            capacity_ah,
            cutoff_voltage_v,
            cutoff_current_c,
            nominal_temperature_c,
        })
    }

    /// The 4.8 Ah cell used by the built-in scenarios, cut off at C/20.
    pub fn default_cell() -> Self {
        Self {
            capacity_ah: 4.8,
            cutoff_voltage_v: 4.2,
            cutoff_current_c: 0.05,
            nominal_temperature_c: 25.0,
        }
    }

    /// CV termination current in amps.
    pub fn cutoff_current_a(&self) -> f64 {
        self.cutoff_current_c * self.capacity_ah
    }
}

/// Open-circuit voltage as a function of SOC, interpolated linearly
/// between knots. Knots must cover SOC 0 and 1 and be monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcvCurve {
    points: Vec<(f64, f64)>,
}

impl OcvCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(RctError::domain("OCV curve needs at least 2 points"));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(RctError::domain("OCV curve must cover SOC 0.0 and 1.0"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(RctError::domain("OCV curve SOC values must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(RctError::domain("OCV curve voltages must be non-decreasing"));
            }
        }
        if points.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(RctError::domain("OCV curve values must be finite"));
        }
        Ok(Self { points })
    }

    /// The curve shipped with the crate: monotone, steep near empty and
    /// full, flat through the mid range. Pinned by the test suite.
    pub fn default_synthetic() -> Self {
        static CSV: &str = include_str!("../data/default_ocv.csv");
        Self::from_csv_reader(CSV.as_bytes(), Path::new("data/default_ocv.csv"))
            .expect("embedded OCV curve is valid")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// OCV at `soc`, exact at knots, linear between them.
    pub fn ocv_at(&self, soc: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(RctError::domain(format!("SOC {soc} outside [0, 1]")));
        }
        let idx = self.points.partition_point(|(s, _)| *s <= soc);
        if idx == 0 {
            return Ok(self.points[0].1);
        }
        let (x0, y0) = self.points[idx - 1];
        if x0 == soc || idx == self.points.len() {
            return Ok(y0);
        }
        let (x1, y1) = self.points[idx];
        Ok(y0 + (soc - x0) / (x1 - x0) * (y1 - y0))
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, path)
    }

    pub fn from_csv_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        expect_headers(&mut rdr, path, &["soc", "ocv_v"])?;
        let mut points = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record
                .map_err(|e| RctError::parse(path, line, e.to_string()))?;
            points.push((
                parse_field(&record, 0, path, line)?,
                parse_field(&record, 1, path, line)?,
            ));
        }
        Self::new(points)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("soc,ocv_v\n");
        for (s, v) in &self.points {
            out.push_str(&format!("{s},{v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Instantaneous Rint-model state: SOC, ohmic resistance, temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RintState {
    pub soc: f64,
    pub resistance_ohm: f64,
    pub temperature_c: f64,
}

impl RintState {
    pub fn new(soc: f64, resistance_ohm: f64, temperature_c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(RctError::domain(format!("SOC {soc} outside [0, 1]")));
        }
        if !(resistance_ohm > 0.0) {
            return Err(RctError::domain("resistance must be positive"));
        }
        Ok(Self {
            soc,
            resistance_ohm,
            temperature_c,
        })
    }
}

/// CV-stage C-rate from the Rint model: the overpotential across the
/// internal resistance, normalized by capacity. Units are 1/hour.
pub fn cv_c_rate(
    v_terminal_v: f64,
    ocv_v: f64,
    resistance_ohm: f64,
    capacity_ah: f64,
) -> Result<f64> {
    if !(resistance_ohm > 0.0) {
        return Err(RctError::domain("resistance must be positive"));
    }
    if !(capacity_ah > 0.0) {
        return Err(RctError::domain("capacity must be positive"));
    }
    if v_terminal_v < ocv_v {
        return Err(RctError::NegativeCurrent {
            v_terminal_v,
            ocv_v,
        });
    }
    Ok((v_terminal_v - ocv_v) / (resistance_ohm * capacity_ah))
}

/// Internal resistance recovered from one (voltage, current) measurement
/// via the Rint model.
pub fn resistance_from_measurement(v_terminal_v: f64, ocv_v: f64, current_a: f64) -> Result<f64> {
    if current_a == 0.0 {
        return Err(RctError::UnmeasurableResistance);
    }
    Ok((v_terminal_v - ocv_v) / current_a)
}

pub(crate) fn expect_headers(
    rdr: &mut csv::Reader<impl Read>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| RctError::parse(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    if got != expected {
        return Err(RctError::parse(
            path,
            1,
            format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

pub(crate) fn parse_field(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
    line: usize,
) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| RctError::parse(path, line, format!("missing column {idx}")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|e| RctError::parse(path, line, format!("`{raw}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_knot() -> OcvCurve {
        OcvCurve::new(vec![(0.0, 3.0), (1.0, 4.2)]).unwrap()
    }

    #[test]
    fn ocv_exact_at_knots() {
        let c = two_knot();
        assert_eq!(c.ocv_at(0.0).unwrap(), 3.0);
        assert_eq!(c.ocv_at(1.0).unwrap(), 4.2);
    }

    #[test]
    fn ocv_linear_midpoint() {
        let c = two_knot();
        assert_relative_eq!(c.ocv_at(0.5).unwrap(), 3.6, max_relative = 1e-12);
    }

    #[test]
    fn ocv_three_knot_interpolation() {
        let c = OcvCurve::new(vec![(0.0, 3.0), (0.5, 3.8), (1.0, 4.2)]).unwrap();
        // frozen by hand interpolation: 3.8 + 0.5 * 0.4
        assert_relative_eq!(c.ocv_at(0.75).unwrap(), 4.0, max_relative = 1e-12);
        assert_eq!(c.ocv_at(0.5).unwrap(), 3.8);
    }

    #[test]
    fn ocv_rejects_out_of_range_soc() {
        let c = two_knot();
        assert!(matches!(c.ocv_at(-0.01), Err(RctError::Domain(_))));
        assert!(matches!(c.ocv_at(1.01), Err(RctError::Domain(_))));
    }

    #[test]
    fn ocv_curve_validation() {
        assert!(OcvCurve::new(vec![(0.0, 3.0)]).is_err());
        assert!(OcvCurve::new(vec![(0.1, 3.0), (1.0, 4.2)]).is_err());
        assert!(OcvCurve::new(vec![(0.0, 3.0), (0.5, 2.9), (1.0, 4.2)]).is_err());
        assert!(OcvCurve::new(vec![(0.0, 3.0), (0.0, 3.1), (1.0, 4.2)]).is_err());
    }

    #[test]
    fn default_curve_is_monotone_and_covers_unit_interval() {
        let c = OcvCurve::default_synthetic();
        assert_eq!(c.points().first().unwrap().0, 0.0);
        assert_eq!(c.points().last().unwrap().0, 1.0);
        assert_eq!(c.points().last().unwrap().1, 4.2);
        for w in c.points().windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn cv_c_rate_examples() {
        assert_eq!(cv_c_rate(4.2, 4.2, 0.05, 4.8).unwrap(), 0.0);
        // frozen by direct evaluation: 0.1 / (0.05 * 4.8)
        assert_relative_eq!(
            cv_c_rate(4.2, 4.1, 0.05, 4.8).unwrap(),
            0.416_666_666_666_668_9,
            max_relative = 1e-12
        );
        // frozen by direct evaluation: 0.05 / (0.1 * 4.8)
        assert_relative_eq!(
            cv_c_rate(4.2, 4.15, 0.1, 4.8).unwrap(),
            0.104_166_666_666_666_3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn cv_c_rate_rejects_invalid_inputs() {
        assert!(matches!(
            cv_c_rate(4.0, 4.1, 0.05, 4.8),
            Err(RctError::NegativeCurrent { .. })
        ));
        assert!(matches!(cv_c_rate(4.2, 4.1, 0.0, 4.8), Err(RctError::Domain(_))));
        assert!(matches!(cv_c_rate(4.2, 4.1, -0.1, 4.8), Err(RctError::Domain(_))));
        assert!(matches!(cv_c_rate(4.2, 4.1, 0.05, 0.0), Err(RctError::Domain(_))));
    }

    #[test]
    fn resistance_examples() {
        // frozen by direct evaluation of the Rint relation
        assert_relative_eq!(
            resistance_from_measurement(4.2, 4.1, 2.0).unwrap(),
            0.05,
            max_relative = 1e-12
        );
        assert_eq!(resistance_from_measurement(4.0, 4.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            resistance_from_measurement(4.2, 4.19, 0.24).unwrap(),
            0.041_666_666_666_665_78,
            max_relative = 1e-10
        );
        assert!(matches!(
            resistance_from_measurement(4.2, 4.1, 0.0),
            Err(RctError::UnmeasurableResistance)
        ));
    }

    #[test]
    fn resistance_round_trips_synthetic_measurements() {
        let ocv = 3.9;
        // overpotentials comfortably above the cancellation floor round-trip
        // at 1e-12 relative; a millivolt-scale overpotential still recovers
        // to a few parts in 1e10
        for &r in &[0.01, 0.05, 0.4, 3.0] {
            for &i in &[0.5, 1.0, 4.8, 12.0] {
                let v = ocv + r * i;
                let rec = resistance_from_measurement(v, ocv, i).unwrap();
                assert_relative_eq!(rec, r, max_relative = 1e-12);
            }
        }
        let rec = resistance_from_measurement(ocv + 1e-4 * 1.0, ocv, 1.0).unwrap();
        assert_relative_eq!(rec, 1e-4, max_relative = 1e-9);
    }

    #[test]
    fn cv_c_rate_monotonicities() {
        let base = cv_c_rate(4.2, 4.0, 0.05, 4.8).unwrap();
        assert!(cv_c_rate(4.2, 4.0, 0.06, 4.8).unwrap() < base);
        assert!(cv_c_rate(4.2, 4.05, 0.05, 4.8).unwrap() < base);
        assert!(cv_c_rate(4.25, 4.0, 0.05, 4.8).unwrap() > base);
    }

    #[test]
    fn battery_params_validation() {
        assert!(BatteryParams::new(0.0, 4.2, 0.05, 25.0).is_err());
        assert!(BatteryParams::new(4.8, 0.0, 0.05, 25.0).is_err());
        assert!(BatteryParams::new(4.8, 4.2, 0.0, 25.0).is_err());
        assert!(BatteryParams::new(4.8, 4.2, 1.0, 25.0).is_err());
        let b = BatteryParams::default_cell();
        assert_relative_eq!(b.cutoff_current_a(), 0.24, max_relative = 1e-12);
    }

    #[test]
    fn rint_state_validation() {
        assert!(RintState::new(0.5, 0.05, 25.0).is_ok());
        assert!(RintState::new(1.1, 0.05, 25.0).is_err());
        assert!(RintState::new(0.5, 0.0, 25.0).is_err());
    }

    #[test]
    fn ocv_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ocv.csv");
        let c = OcvCurve::default_synthetic();
        c.write_csv(&path).unwrap();
        let back = OcvCurve::from_csv_path(&path).unwrap();
        assert_eq!(c, back);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "soc,ocv_v\n0.0,3.0\nnope,4.2\n").unwrap();
        match OcvCurve::from_csv_path(&bad) {
            Err(RctError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let badhdr = dir.path().join("hdr.csv");
        std::fs::write(&badhdr, "a,b\n0.0,3.0\n").unwrap();
        assert!(matches!(
            OcvCurve::from_csv_path(&badhdr),
            Err(RctError::Parse { line: 1, .. })
        ));
    }
}
