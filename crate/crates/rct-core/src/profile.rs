//! The designed CC current profile, SOC-range partitioning, the CV
//! turning point, and the three-way charging scenario classification.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::battery::{expect_headers, parse_field, BatteryParams, OcvCurve};
use crate::error::{RctError, Result};

/// SOC agreement tolerance for profile contiguity checks.
const CONTIGUITY_EPS: f64 = 1e-12;
/// Turning-SOC scan resolution; bisection then refines to `TURNING_TOL`.
const TURNING_SCAN_STEP: f64 = 0.01;
const TURNING_TOL: f64 = 1e-4;

/// One constant-command step of the designed charging profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStep {
    pub soc_from: f64,
    pub soc_to: f64,
    /// Commanded C-rate over this step, in 1/hour.
    pub c_rate: f64,
}

/// The designed CC current profile: contiguous SOC steps with
/// non-increasing commanded C-rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeProfile {
    steps: Vec<ProfileStep>,
}

impl ChargeProfile {
    pub fn new(steps: Vec<ProfileStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(RctError::domain("charge profile needs at least one step"));
        }
        for (i, s) in steps.iter().enumerate() {
            if !(s.soc_from < s.soc_to) {
                return Err(RctError::domain(format!(
                    "profile step {i}: soc_from {} must be below soc_to {}",
                    s.soc_from, s.soc_to
                )));
            }
            if !(0.0..=1.0).contains(&s.soc_from) || !(0.0..=1.0).contains(&s.soc_to) {
                return Err(RctError::domain(format!("profile step {i}: SOC outside [0, 1]")));
            }
            if !(s.c_rate > 0.0) {
                return Err(RctError::domain(format!("profile step {i}: c_rate must be positive")));
            }
        }
        for (i, w) in steps.windows(2).enumerate() {
            if (w[1].soc_from - w[0].soc_to).abs() > CONTIGUITY_EPS {
                return Err(RctError::domain(format!(
                    "profile steps {i} and {} are not contiguous",
                    i + 1
                )));
            }
            if w[1].c_rate > w[0].c_rate {
                return Err(RctError::domain(format!(
                    "commanded C-rate must be non-increasing (step {} rises)",
                    i + 1
                )));
            }
        }
        Ok(Self { steps })
    }

    /// Convenience constructor from `(soc_from, soc_to, c_rate)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(soc_from, soc_to, c_rate)| ProfileStep {
                    soc_from,
                    soc_to,
                    c_rate,
                })
                .collect(),
        )
    }

    pub fn steps(&self) -> &[ProfileStep] {
        &self.steps
    }

    /// SOC range covered by the profile.
    pub fn coverage(&self) -> (f64, f64) {
        (
            self.steps[0].soc_from,
            self.steps[self.steps.len() - 1].soc_to,
        )
    }

    /// Commanded C-rate at `soc`. Steps are half-open on the right; the
    /// very top of the coverage takes the last step's rate.
    pub fn c_rate_at(&self, soc: f64) -> Result<f64> {
        let (lo, hi) = self.coverage();
        if soc < lo || soc > hi {
            return Err(RctError::domain(format!(
                "SOC {soc} outside profile coverage [{lo}, {hi}]"
            )));
        }
        for s in &self.steps {
            if soc < s.soc_to {
                return Ok(s.c_rate);
            }
        }
        Ok(self.steps[self.steps.len() - 1].c_rate)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, path)
    }

    pub fn from_csv_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        expect_headers(&mut rdr, path, &["soc_from", "soc_to", "c_rate"])?;
        let mut steps = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| RctError::parse(path, line, e.to_string()))?;
            steps.push(ProfileStep {
                soc_from: parse_field(&record, 0, path, line)?,
                soc_to: parse_field(&record, 1, path, line)?,
                c_rate: parse_field(&record, 2, path, line)?,
            });
        }
        Self::new(steps)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("soc_from,soc_to,c_rate\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{}\n", s.soc_from, s.soc_to, s.c_rate));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// One constant-command segment of a partitioned CC span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub delta_soc: f64,
    pub c_rate: f64,
}

/// Minimal constant-command segments covering one CC span.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    pub segments: Vec<Segment>,
}

impl Partitioning {
    pub fn count(&self) -> usize {
        self.segments.len()
    }

    pub fn span(&self) -> f64 {
        self.segments.iter().map(|s| s.delta_soc).sum()
    }
}

/// Splits `[start_soc, end_soc]` at the profile's step boundaries so each
/// segment carries a single commanded C-rate.
pub fn partition_cc(profile: &ChargeProfile, start_soc: f64, end_soc: f64) -> Result<Partitioning> {
    if !(start_soc < end_soc) {
        return Err(RctError::domain(format!(
            "empty or inverted CC span [{start_soc}, {end_soc}]"
        )));
    }
    let (lo, hi) = profile.coverage();
    if start_soc < lo - CONTIGUITY_EPS || end_soc > hi + CONTIGUITY_EPS {
        return Err(RctError::domain(format!(
            "span [{start_soc}, {end_soc}] outside profile coverage [{lo}, {hi}]"
        )));
    }
    let mut segments = Vec::new();
    for s in profile.steps() {
        let seg_lo = start_soc.max(s.soc_from);
        let seg_hi = end_soc.min(s.soc_to);
        if seg_hi - seg_lo > CONTIGUITY_EPS {
            segments.push(Segment {
                delta_soc: seg_hi - seg_lo,
                c_rate: s.c_rate,
            });
        }
    }
    Ok(Partitioning { segments })
}

/// Charging stage of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Cc,
    Cv,
    Done,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Cc => "CC",
            Stage::Cv => "CV",
            Stage::Done => "DONE",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "CC" => Ok(Stage::Cc),
            "CV" => Ok(Stage::Cv),
            "DONE" => Ok(Stage::Done),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

/// Which stages the pending charge spans, split at the CV turning SOC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    /// Current and target SOC both sit below the turning point.
    CcOnly { cc_span: (f64, f64) },
    /// The session is already at or past the turning point.
    CvOnly { cv_span: (f64, f64) },
    /// The charge crosses the turning point.
    CcThenCv {
        cc_span: (f64, f64),
        cv_span: (f64, f64),
    },
}

impl Scenario {
    pub fn cc_span(&self) -> Option<(f64, f64)> {
        match self {
            Scenario::CcOnly { cc_span } | Scenario::CcThenCv { cc_span, .. } => Some(*cc_span),
            Scenario::CvOnly { .. } => None,
        }
    }

    pub fn cv_span(&self) -> Option<(f64, f64)> {
        match self {
            Scenario::CvOnly { cv_span } | Scenario::CcThenCv { cv_span, .. } => Some(*cv_span),
            Scenario::CcOnly { .. } => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Scenario::CcOnly { .. } => "CC_ONLY",
            Scenario::CvOnly { .. } => "CV_ONLY",
            Scenario::CcThenCv { .. } => "CC_THEN_CV",
        }
    }
}

/// Classifies the pending charge against the CV turning SOC. Ties go to
/// the single-stage scenarios so spans never degenerate to zero width.
pub fn classify_scenario(current_soc: f64, target_soc: f64, turning_soc: f64) -> Result<Scenario> {
    if !(current_soc < target_soc) {
        return Err(RctError::domain(format!(
            "current SOC {current_soc} must be below target SOC {target_soc}"
        )));
    }
    if target_soc <= turning_soc {
        Ok(Scenario::CcOnly {
            cc_span: (current_soc, target_soc),
        })
    } else if current_soc >= turning_soc {
        Ok(Scenario::CvOnly {
            cv_span: (current_soc, target_soc),
        })
    } else {
        Ok(Scenario::CcThenCv {
            cc_span: (current_soc, turning_soc),
            cv_span: (turning_soc, target_soc),
        })
    }
}

/// Smallest SOC at which the commanded profile would push the Rint
/// terminal voltage to the cut-off voltage, i.e. where CV charging must
/// begin. Scans the profile coverage at 1% resolution, then bisects the
/// bracketing interval down to 1e-4 SOC. Returns 1.0 when the cut-off is
/// never reached.
pub fn cv_turning_soc(
    profile: &ChargeProfile,
    battery: &BatteryParams,
    ocv: &OcvCurve,
    resistance_provider: impl Fn(f64) -> f64,
) -> Result<f64> {
    let (lo, hi) = profile.coverage();
    let reaches_cutoff = |soc: f64| -> Result<bool> {
        let current_a = profile.c_rate_at(soc)? * battery.capacity_ah;
        let v = ocv.ocv_at(soc)? + resistance_provider(soc) * current_a;
        Ok(v >= battery.cutoff_voltage_v)
    };

    if reaches_cutoff(lo)? {
        return Ok(lo);
    }
    let mut prev = lo;
    let mut k = 1usize;
    loop {
        let soc = (lo + k as f64 * TURNING_SCAN_STEP).min(hi);
        if reaches_cutoff(soc)? {
            let (mut a, mut b) = (prev, soc);
            while b - a > TURNING_TOL {
                let mid = 0.5 * (a + b);
                if reaches_cutoff(mid)? {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Ok(b);
        }
        if soc >= hi {
            return Ok(1.0);
        }
        prev = soc;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_step() -> ChargeProfile {
        ChargeProfile::from_triples(&[(0.0, 0.5, 1.0), (0.5, 0.8, 0.5)]).unwrap()
    }

    #[test]
    fn profile_validation() {
        assert!(ChargeProfile::from_triples(&[]).is_err());
        assert!(ChargeProfile::from_triples(&[(0.0, 0.5, 1.0), (0.6, 0.8, 0.5)]).is_err());
        assert!(ChargeProfile::from_triples(&[(0.0, 0.5, 0.5), (0.5, 0.8, 1.0)]).is_err());
        assert!(ChargeProfile::from_triples(&[(0.5, 0.5, 1.0)]).is_err());
        assert!(ChargeProfile::from_triples(&[(0.0, 0.5, 0.0)]).is_err());
    }

    #[test]
    fn c_rate_lookup_boundaries() {
        let p = two_step();
        assert_eq!(p.c_rate_at(0.0).unwrap(), 1.0);
        assert_eq!(p.c_rate_at(0.49).unwrap(), 1.0);
        assert_eq!(p.c_rate_at(0.5).unwrap(), 0.5);
        assert_eq!(p.c_rate_at(0.8).unwrap(), 0.5);
        assert!(p.c_rate_at(0.81).is_err());
    }

    #[test]
    fn partition_spans_two_steps() {
        // frozen by hand partition of (0.1, 0.7) over the two-step profile
        let part = partition_cc(&two_step(), 0.1, 0.7).unwrap();
        assert_eq!(part.count(), 2);
        assert_relative_eq!(part.segments[0].delta_soc, 0.4, max_relative = 1e-12);
        assert_eq!(part.segments[0].c_rate, 1.0);
        assert_relative_eq!(part.segments[1].delta_soc, 0.2, max_relative = 1e-12);
        assert_eq!(part.segments[1].c_rate, 0.5);
    }

    #[test]
    fn partition_single_step_span() {
        let part = partition_cc(&two_step(), 0.1, 0.4).unwrap();
        assert_eq!(part.count(), 1);
        assert_relative_eq!(part.segments[0].delta_soc, 0.3, max_relative = 1e-12);
        assert_eq!(part.segments[0].c_rate, 1.0);
    }

    #[test]
    fn partition_rejects_degenerate_and_uncovered_spans() {
        assert!(partition_cc(&two_step(), 0.5, 0.5).is_err());
        assert!(partition_cc(&two_step(), 0.6, 0.4).is_err());
        assert!(partition_cc(&two_step(), 0.1, 0.9).is_err());
    }

    #[test]
    fn partition_reconstructs_span_and_concatenates() {
        let p = two_step();
        let whole = partition_cc(&p, 0.05, 0.75).unwrap();
        assert_relative_eq!(whole.span(), 0.70, max_relative = 1e-12);
        let a = partition_cc(&p, 0.05, 0.3).unwrap();
        let b = partition_cc(&p, 0.3, 0.75).unwrap();
        let mut joined = a.segments.clone();
        joined.extend(b.segments.clone());
        // adjacent same-rate segments merge in the whole partition
        let merged: f64 = joined
            .iter()
            .filter(|s| s.c_rate == 1.0)
            .map(|s| s.delta_soc)
            .sum();
        assert_relative_eq!(merged, whole.segments[0].delta_soc, max_relative = 1e-12);
        assert_relative_eq!(
            a.span() + b.span(),
            whole.span(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn classify_matches_figure_cases() {
        match classify_scenario(0.1, 0.6, 0.8).unwrap() {
            Scenario::CcOnly { cc_span } => assert_eq!(cc_span, (0.1, 0.6)),
            other => panic!("expected CC_ONLY, got {other:?}"),
        }
        match classify_scenario(0.85, 0.95, 0.8).unwrap() {
            Scenario::CvOnly { cv_span } => assert_eq!(cv_span, (0.85, 0.95)),
            other => panic!("expected CV_ONLY, got {other:?}"),
        }
        match classify_scenario(0.1, 0.95, 0.8).unwrap() {
            Scenario::CcThenCv { cc_span, cv_span } => {
                assert_eq!(cc_span, (0.1, 0.8));
                assert_eq!(cv_span, (0.8, 0.95));
            }
            other => panic!("expected CC_THEN_CV, got {other:?}"),
        }
    }

    #[test]
    fn classify_boundary_ties() {
        assert!(matches!(
            classify_scenario(0.1, 0.8, 0.8).unwrap(),
            Scenario::CcOnly { .. }
        ));
        assert!(matches!(
            classify_scenario(0.8, 0.95, 0.8).unwrap(),
            Scenario::CvOnly { .. }
        ));
        assert!(classify_scenario(0.8, 0.8, 0.5).is_err());
        assert!(classify_scenario(0.9, 0.8, 0.5).is_err());
    }

    #[test]
    fn turning_soc_zero_resistance_reaches_cutoff_at_full() {
        let profile = ChargeProfile::from_triples(&[(0.0, 1.0, 1.0)]).unwrap();
        let battery = BatteryParams::default_cell();
        let ocv = OcvCurve::new(vec![(0.0, 3.0), (1.0, 4.2)]).unwrap();
        let t = cv_turning_soc(&profile, &battery, &ocv, |_| 1e-15).unwrap();
        assert!(t > 0.999, "turning {t}");
    }

    #[test]
    fn turning_soc_closed_form_case() {
        // OCV(s) = 3.0 + 1.2 s, R = 0.05, 1C on 4.8 Ah:
        // 3.0 + 1.2 s + 0.24 = 4.2  =>  s = 0.8 (frozen closed-form solve)
        let profile = ChargeProfile::from_triples(&[(0.0, 1.0, 1.0)]).unwrap();
        let battery = BatteryParams::default_cell();
        let ocv = OcvCurve::new(vec![(0.0, 3.0), (1.0, 4.2)]).unwrap();
        let t = cv_turning_soc(&profile, &battery, &ocv, |_| 0.05).unwrap();
        assert!((t - 0.8).abs() <= 1e-4, "turning {t}");
    }

    #[test]
    fn turning_soc_never_reached_is_one() {
        let profile = ChargeProfile::from_triples(&[(0.0, 0.6, 0.1)]).unwrap();
        let battery = BatteryParams::default_cell();
        let ocv = OcvCurve::new(vec![(0.0, 3.0), (1.0, 4.2)]).unwrap();
        let t = cv_turning_soc(&profile, &battery, &ocv, |_| 0.05).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn stage_round_trips_strings() {
        for s in [Stage::Cc, Stage::Cv, Stage::Done] {
            assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
        }
        assert!("cc".parse::<Stage>().is_err());
    }

    #[test]
    fn profile_csv_round_trip_and_row_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.csv");
        let p = two_step();
        p.write_csv(&path).unwrap();
        assert_eq!(ChargeProfile::from_csv_path(&path).unwrap(), p);

        let bad = dir.path().join("gap.csv");
        std::fs::write(&bad, "soc_from,soc_to,c_rate\n0.0,0.5,1.0\n0.6,0.8,0.5\n").unwrap();
        assert!(matches!(
            ChargeProfile::from_csv_path(&bad),
            Err(RctError::Domain(_))
        ));
    }
}
