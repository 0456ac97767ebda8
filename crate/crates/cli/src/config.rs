//! `key = value` run configuration merged with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

/// Every accepted key with its default and a short description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("profile", "desk", "desk or full"),
    ("seed", "0", "RNG seed"),
    ("threads", "0", "worker threads, 0 = all cores"),
    ("scene", "", "scene TOML file (simulate, extract)"),
    ("theta_deg", "45", "comma-separated pitch angles, degrees"),
    ("phi_start_deg", "0", "first azimuth, degrees"),
    ("phi_end_deg", "359", "last azimuth, degrees (inclusive)"),
    ("phi_step_deg", "1", "azimuth step, degrees"),
    ("altitude_m", "10000", "radar altitude, meters"),
    ("reference_theta_deg", "45", "pitch used to size the elevation fan"),
    ("azimuth_interval", "10", "training azimuth interval, degrees"),
    ("pitch_rule", "all", "all, odd_even, or a comma list of pitches"),
    ("iterations", "2000", "training steps"),
    ("rows_per_batch", "4", "azimuth rows per step"),
    ("learning_rate", "0.0005", "Adam step size"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("epsilon", "1e-8", "Adam epsilon"),
    ("checkpoint_interval", "0", "steps between checkpoints, 0 = final only"),
    ("log_interval", "10", "steps between loss-log rows"),
    ("volume_size_m", "20", "edge of the extraction cube, meters"),
    ("volume_resolution", "64", "lattice cells per axis"),
    ("threshold", "0.001", "attenuation threshold for extraction"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| ConfigError(format!("{origin}:{}: {}", n + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key {key:?}"))),
        }
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.set(key, &v.to_string())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| ConfigError(format!("config key {key} has invalid value {raw:?}")))
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| ConfigError(format!("config key {key} has invalid entry {s:?}")))
            })
            .collect()
    }

    /// Every key in declaration order, one `key = value  # note` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, note) in KEYS {
            let _ = writeln!(out, "{k} = {}  # {note}", self.raw(k));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let c = RunConfig::parse("# c\nseed = 7\niterations=5 # trailing\n", "t").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 7);
        assert_eq!(c.get::<usize>("iterations").unwrap(), 5);
        assert_eq!(c.raw("profile"), "desk");
        assert!(RunConfig::parse("bogus = 1", "t").is_err());
        assert!(RunConfig::parse("seed", "t").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.set("theta_deg", "35,37").unwrap();
        let back = RunConfig::parse(&c.render(), "r").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.list_f64("theta_deg").unwrap(), vec![35.0, 37.0]);
    }
}
