//! Line-oriented `key = value` run configuration. `#` starts a comment;
//! unknown and repeated keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mininet::config::parse_value;
use crate::mininet::TrainConfig;

/// Training settings plus evaluation metric parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// F-Score threshold relative to the ground-truth bounding-box diagonal.
    pub fscore_threshold: f64,
    /// Uniformity patch area fraction.
    pub uniformity_p: f64,
    pub uniformity_patches: usize,
    /// Seeds uniformity patch selection.
    pub metric_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            fscore_threshold: 0.01,
            uniformity_p: 0.01,
            uniformity_patches: 10,
            metric_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at_line(format!("expected 'key = value', found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at_line(format!("key '{key}' appears twice")));
            }
            let known = config.set(key, value).map_err(|e| at_line(e.to_string()))?;
            if !known {
                return Err(at_line(format!("unknown key '{key}'")));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "fscore_threshold" => self.fscore_threshold = parse_value(key, value)?,
            "uniformity_p" => self.uniformity_p = parse_value(key, value)?,
            "uniformity_patches" => self.uniformity_patches = parse_value(key, value)?,
            "metric_seed" => self.metric_seed = parse_value(key, value)?,
            _ => return self.train.set(key, value),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.fscore_threshold.is_finite() && self.fscore_threshold > 0.0) {
            return Err(Error::Config("fscore_threshold must be positive".into()));
        }
        if !(self.uniformity_p > 0.0 && self.uniformity_p < 1.0) {
            return Err(Error::Config("uniformity_p must lie in (0, 1)".into()));
        }
        if self.uniformity_patches == 0 {
            return Err(Error::Config("uniformity_patches must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = RunConfig::parse(
            "# toy run\n\ngrid_resolution = 8   # coarse\nchannels = 4, 8\nlearning_rate=0.01\n\
             uniformity_patches = 5\n",
        )
        .unwrap();
        assert_eq!(c.train.net.grid_resolution, 8);
        assert_eq!(c.train.net.channels, vec![4, 8]);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.uniformity_patches, 5);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        let err = |t: &str| match RunConfig::parse(t) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error for {t:?}, got {other:?}"),
        };
        assert!(err("epochs = 2\nbogus = 1\n").contains("line 2"));
        assert!(err("epochs = 2\nepochs = 3\n").contains("twice"));
        assert!(err("epochs 2\n").contains("line 1"));
        assert!(err("epochs = two\n").contains("epochs"));
        err("grid_resolution = 10\n");
        err("uniformity_p = 1.5\n");
    }
}
