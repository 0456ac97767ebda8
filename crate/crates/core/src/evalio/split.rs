//! Train/test splits over a regular azimuth grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalio::manifest::{DatasetManifest, ManifestEntry};

const GRID_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitchRule {
    /// Every pitch is eligible for training.
    All,
    /// Only the listed pitches (degrees) are eligible for training.
    List(Vec<f64>),
    /// Odd-degree pitches train, even-degree pitches are held out.
    OddTrainEvenTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Azimuth interval in whole degrees; must divide 360.
    pub azimuth_interval: u32,
    pub pitch_rule: PitchRule,
}

impl SplitSpec {
    pub fn new(azimuth_interval: u32, pitch_rule: PitchRule) -> Result<Self> {
        let s = Self {
            azimuth_interval,
            pitch_rule,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn every(azimuth_interval: u32) -> Result<Self> {
        Self::new(azimuth_interval, PitchRule::All)
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuth_interval == 0 || 360 % self.azimuth_interval != 0 {
            return Err(Error::invalid(format!(
                "azimuth interval {} must be a positive divisor of 360",
                self.azimuth_interval
            )));
        }
        if let PitchRule::List(list) = &self.pitch_rule {
            if list.iter().any(|p| !p.is_finite()) {
                return Err(Error::invalid("pitch list contains non-finite values"));
            }
        }
        Ok(())
    }

    fn pitch_trains(&self, pitch_deg: f64) -> Result<bool> {
        Ok(match &self.pitch_rule {
            PitchRule::All => true,
            PitchRule::List(list) => list.iter().any(|p| (p - pitch_deg).abs() < GRID_TOL),
            PitchRule::OddTrainEvenTest => whole_degree(pitch_deg, "pitch")?.rem_euclid(2) == 1,
        })
    }
}

fn whole_degree(value: f64, what: &str) -> Result<i64> {
    let r = value.round();
    if (value - r).abs() > GRID_TOL {
        return Err(Error::invalid(format!(
            "{what} {value} deg is not on the regular 1 deg grid"
        )));
    }
    Ok(r as i64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

/// Training entries are those whose azimuth is a multiple of the interval
/// and whose pitch passes the pitch rule; the test set is the complement.
pub fn make_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        let az = whole_degree(e.pose.phi_deg(), "azimuth")?.rem_euclid(360);
        let on_interval = az % spec.azimuth_interval as i64 == 0;
        if on_interval && spec.pitch_trains(e.pose.theta_deg())? {
            train.push(e.clone());
        } else {
            test.push(e.clone());
        }
    }
    Ok(Split {
        train: manifest.with_entries(train),
        test: manifest.with_entries(test),
    })
}

/// Entries whose pitch, in whole degrees, satisfies `keep`.
pub fn filter_pitch(
    manifest: &DatasetManifest,
    mut keep: impl FnMut(i64) -> bool,
) -> Result<DatasetManifest> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for e in &manifest.entries {
        if keep(whole_degree(e.pose.theta_deg(), "pitch")?) {
            out.push(e.clone());
        }
    }
    Ok(manifest.with_entries(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadarPose;

    fn grid(pitches: &[f64], step: u32) -> DatasetManifest {
        let mut m = DatasetManifest::new("unused");
        for &t in pitches {
            for az in (0..360).step_by(step as usize) {
                m.entries.push(ManifestEntry {
                    path: format!("t{t}_a{az}.pfm").into(),
                    pose: RadarPose::at_altitude_degrees(t, az as f64, 10_000.0).unwrap(),
                    config_id: "c".into(),
                });
            }
        }
        m
    }

    #[test]
    fn ten_degree_split_counts() {
        let m = grid(&[45.0], 1);
        let s = make_split(&m, &SplitSpec::every(10).unwrap()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (36, 324));
        let s = make_split(&m, &SplitSpec::every(360).unwrap()).unwrap();
        assert_eq!(s.train.len(), 1);
    }

    #[test]
    fn parity_protocol_counts() {
        let pitches: Vec<f64> = (35..=55).map(f64::from).collect();
        let m = grid(&pitches, 1);
        let spec = SplitSpec::new(10, PitchRule::OddTrainEvenTest).unwrap();
        let s = make_split(&m, &spec).unwrap();
        assert_eq!(s.train.len(), 11 * 36);
        assert_eq!(s.train.len() + s.test.len(), 21 * 360);
        let even = filter_pitch(&s.test, |p| p % 2 == 0).unwrap();
        assert_eq!(even.len(), 10 * 360);
    }

    #[test]
    fn rejects_bad_interval_and_grid() {
        assert!(SplitSpec::every(7).is_err());
        assert!(SplitSpec::every(0).is_err());
        let mut m = grid(&[45.0], 90);
        m.entries[1].pose = RadarPose::at_altitude_degrees(45.0, 90.5, 10_000.0).unwrap();
        assert!(make_split(&m, &SplitSpec::every(10).unwrap()).is_err());
    }
}
