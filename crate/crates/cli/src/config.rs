use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nvmrl_core::costmodel::{FreeParam, HardwareSpec};
use nvmrl_core::rl::ExperimentConfig;
use nvmrl_core::{NetworkSpec, TrainingPolicy};
use serde::Deserialize;

use crate::output::Format;
use crate::CliError;

/// Inclusive batch-size range, written `N`, `A..B` or `A..=B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchRange {
    pub start: u64,
    pub end: u64,
}

impl BatchRange {
    pub fn single(&self) -> Result<u64, CliError> {
        if self.start != self.end {
            return Err(CliError::Config(format!("this command needs one batch size, got {self}")));
        }
        Ok(self.start)
    }
}

impl fmt::Display for BatchRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}..{}", self.start, self.end)
        }
    }
}

impl FromStr for BatchRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("batch `{s}` must be N or A..B with 1 <= A <= B");
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        let (start, end) = match s.split_once("..") {
            Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
            None => {
                let n = num(s)?;
                (n, n)
            }
        };
        if start == 0 || start > end {
            return Err(bad());
        }
        Ok(BatchRange { start, end })
    }
}

impl<'de> Deserialize<'de> for BatchRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => format!("{n}").parse(),
            Raw::S(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub name: String,
    /// metres
    pub d_min: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSettings {
    /// Frame rates to tabulate; empty means the model's fps per policy.
    pub fps: Vec<f64>,
    pub frames_to_react: u32,
    pub environments: Vec<Environment>,
}

impl Default for EnvelopeSettings {
    fn default() -> Self {
        // placeholder clearances, replace with measured values
        let env = |name: &str, d_min| Environment {
            name: name.into(),
            d_min,
        };
        EnvelopeSettings {
            fps: Vec::new(),
            frames_to_react: 1,
            environments: vec![env("indoor-cluttered", 1.0), env("indoor-open", 2.0), env("outdoor", 4.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSettings {
    pub free: Vec<FreeParam>,
}

impl Default for CalibrateSettings {
    fn default() -> Self {
        CalibrateSettings {
            free: FreeParam::ALL.to_vec(),
        }
    }
}

/// Consolidated run configuration. Every key is optional; command-line flags
/// take precedence.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: Option<PathBuf>,
    pub hardware: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub policies: Option<Vec<TrainingPolicy>>,
    pub batch: Option<BatchRange>,
    pub seed: Option<u64>,
    pub envelope: EnvelopeSettings,
    pub calibrate: CalibrateSettings,
    pub train_toy: ExperimentConfig,
}

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))
}

impl RunConfig {
    /// Parses a config file; relative paths inside it are resolved against
    /// the file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path, "config")?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.hardware, &mut cfg.reference].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Config(format!("config references missing file {}", p.display())));
            }
        }
        if let Some(out) = cfg.out.as_mut().filter(|o| o.is_relative()) {
            *out = base.join(&*out);
        }
        cfg.train_toy.validate()?;
        Ok(cfg)
    }

    pub fn network(&self) -> Result<NetworkSpec, CliError> {
        match &self.network {
            Some(p) => Ok(NetworkSpec::from_toml_str(&read(p, "network spec")?)?),
            None => Ok(NetworkSpec::default_network()),
        }
    }

    pub fn hardware(&self) -> Result<HardwareSpec, CliError> {
        match &self.hardware {
            Some(p) => Ok(HardwareSpec::from_toml_str(&read(p, "hardware spec")?)?),
            None => Ok(HardwareSpec::default_hardware()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_forms() {
        assert_eq!("4".parse::<BatchRange>().unwrap(), BatchRange { start: 4, end: 4 });
        assert_eq!("1..32".parse::<BatchRange>().unwrap(), BatchRange { start: 1, end: 32 });
        assert_eq!("2..=3".parse::<BatchRange>().unwrap(), BatchRange { start: 2, end: 3 });
        assert!("0..4".parse::<BatchRange>().is_err());
        assert!("5..4".parse::<BatchRange>().is_err());
    }

    #[test]
    fn config_sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            policies = ["E2E", "L4"]
            batch = "1..8"
            format = "json-like"
            [envelope]
            fps = [3.0, 15.0]
            [train_toy]
            seeds = [9]
            meta_steps = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.policies.unwrap(), vec![TrainingPolicy::E2E, TrainingPolicy::LastK(4)]);
        assert_eq!(cfg.format, Some(Format::Json));
        assert_eq!(cfg.train_toy.seeds, vec![9]);
        assert_eq!(cfg.train_toy.fine_tune_steps, ExperimentConfig::default().fine_tune_steps);
    }
}
