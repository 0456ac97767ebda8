//! Dataset manifests.
//!
//! A dataset directory holds `manifest.csv` with one row per image
//! (`path,theta_deg,phi_deg,range_m,altitude_m,config_id`) and a
//! `manifest.toml` sidecar with the sampling config table and the
//! dataset-wide intensity maximum used for normalisation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RadarPose, SamplingConfig};
use crate::renderer::Image;

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MANIFEST_META: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Image path relative to the manifest directory.
    pub path: PathBuf,
    pub pose: RadarPose<f64>,
    pub config_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory containing the manifest files.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub configs: BTreeMap<String, SamplingConfig<f64>>,
    /// Dataset-wide maximum raw intensity.
    pub intensity_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    path: String,
    theta_deg: String,
    phi_deg: String,
    range_m: String,
    altitude_m: String,
    config_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    intensity_max: f64,
    #[serde(default)]
    sampling: BTreeMap<String, SamplingSection>,
}

/// Sampling config as stored on disk; angles in radians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_a: usize,
    pub n_r: usize,
    pub n_theta: usize,
    pub delta_a: f64,
    pub delta_r: f64,
    pub delta_theta: f64,
    pub r_min: f64,
    pub theta0: f64,
    pub theta1: f64,
}

impl From<&SamplingConfig<f64>> for SamplingSection {
    fn from(c: &SamplingConfig<f64>) -> Self {
        Self {
            n_a: c.n_a,
            n_r: c.n_r,
            n_theta: c.n_theta,
            delta_a: c.delta_a,
            delta_r: c.delta_r,
            delta_theta: c.delta_theta,
            r_min: c.r_min,
            theta0: c.theta0,
            theta1: c.theta1,
        }
    }
}

impl SamplingSection {
    pub fn to_config(&self) -> Result<SamplingConfig<f64>> {
        SamplingConfig::new(
            self.n_a,
            self.n_r,
            self.n_theta,
            self.delta_a,
            self.delta_r,
            self.delta_theta,
            self.r_min,
            self.theta0,
            self.theta1,
        )
    }
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
            configs: BTreeMap::new(),
            intensity_max: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same metadata, different entries.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: self.root.clone(),
            entries,
            configs: self.configs.clone(),
            intensity_max: self.intensity_max,
        }
    }

    /// Scale mapping raw intensities onto `[0, 1]`.
    pub fn normalisation(&self) -> f64 {
        if self.intensity_max > 0.0 {
            1.0 / self.intensity_max
        } else {
            1.0
        }
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn config_for(&self, entry: &ManifestEntry) -> Result<&SamplingConfig<f64>> {
        self.configs.get(&entry.config_id).ok_or_else(|| {
            Error::invalid(format!(
                "manifest entry {} references unknown config {:?}",
                entry.path.display(),
                entry.config_id
            ))
        })
    }

    /// The single sampling config shared by every entry.
    pub fn shared_config(&self) -> Result<SamplingConfig<f64>> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| Error::invalid("manifest has no entries"))?;
        let cfg = *self.config_for(first)?;
        for e in &self.entries {
            if *self.config_for(e)? != cfg {
                return Err(Error::invalid(
                    "manifest entries use differing sampling configs",
                ));
            }
        }
        Ok(cfg)
    }

    /// Loads the image of `entry`, normalised to the dataset range.
    pub fn load_normalised(&self, entry: &ManifestEntry) -> Result<Image<f64>> {
        let img: Image<f64> = crate::evalio::pfm::read_pfm(&self.image_path(entry))?;
        Ok(img.scaled(self.normalisation()))
    }

    fn format_row(e: &ManifestEntry) -> CsvRow {
        CsvRow {
            path: e.path.to_string_lossy().replace('\\', "/"),
            theta_deg: format!("{:.6}", e.pose.theta_deg()),
            phi_deg: format!("{:.6}", e.pose.phi_deg()),
            range_m: format!("{:.6}", e.pose.range),
            altitude_m: format!("{:.6}", e.pose.altitude),
            config_id: e.config_id.clone(),
        }
    }

    /// Writes `manifest.csv` and `manifest.toml` under `dir`.
    pub fn save_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(MANIFEST_CSV);
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(Self::format_row(e))
                .map_err(|e| Error::invalid(format!("manifest row: {e}")))?;
        }
        let mut body = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        if self.entries.is_empty() {
            body = b"path,theta_deg,phi_deg,range_m,altitude_m,config_id\n".to_vec();
        }
        fs::write(&csv_path, body).map_err(|e| Error::io(&csv_path, e))?;

        let meta = MetaFile {
            intensity_max: self.intensity_max,
            sampling: self
                .configs
                .iter()
                .map(|(k, v)| (k.clone(), SamplingSection::from(v)))
                .collect(),
        };
        let meta_path = dir.join(MANIFEST_META);
        let text = toml::to_string(&meta).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    /// Writes into [`DatasetManifest::root`].
    pub fn save(&self) -> Result<()> {
        self.save_to(&self.root)
    }

    /// Loads a manifest from its CSV path or its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let csv_path = if path.is_dir() {
            path.join(MANIFEST_CSV)
        } else {
            path.to_path_buf()
        };
        let root = csv_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let meta_path = csv_path.with_extension("toml");
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MetaFile = toml::from_str(&meta_text).map_err(|e| Error::Config {
            path: meta_path.clone(),
            message: e.to_string(),
        })?;
        let mut configs = BTreeMap::new();
        for (id, section) in &meta.sampling {
            configs.insert(id.clone(), section.to_config()?);
        }

        let text = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_slice());
        let headers = reader
            .headers()
            .map_err(|e| Error::format(0, format!("manifest header: {e}")))?
            .clone();
        let expected = ["path", "theta_deg", "phi_deg", "range_m", "altitude_m", "config_id"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(0, format!("unexpected manifest header {headers:?}")));
        }
        let mut entries = Vec::new();
        for rec in reader.deserialize::<CsvRow>() {
            let row = rec.map_err(|e| {
                let offset = e.position().map_or(0, |p| p.byte());
                Error::format(offset, format!("manifest row: {e}"))
            })?;
            let num = |s: &str, what: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("manifest {what} {s:?} is not a number")))
            };
            let theta = num(&row.theta_deg, "theta_deg")?;
            let phi = num(&row.phi_deg, "phi_deg")?;
            let range = num(&row.range_m, "range_m")?;
            let altitude = num(&row.altitude_m, "altitude_m")?;
            let pose: RadarPose<f64> = RadarPose::from_degrees(theta, phi, range)?;
            if (pose.altitude - altitude).abs() > 1e-6 * range.max(1.0) + 1e-6 {
                return Err(Error::invalid(format!(
                    "manifest altitude {altitude} inconsistent with range and incidence of {}",
                    row.path
                )));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(row.path),
                pose,
                config_id: row.config_id,
            });
        }
        Ok(Self {
            root,
            entries,
            configs,
            intensity_max: meta.intensity_max,
        })
    }
}
