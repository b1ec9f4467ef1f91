//! Run configuration: a TOML file with `[system]`, `[lead]`, `[protocol]`
//! and `[run]` sections. CLI flags override individual `[run]` entries.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub system: SystemSection,
    pub lead: LeadSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Central system: a single dot; `epsilon` is its on-site energy for the
/// static experiments (the erasure protocol drives it instead).
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadSection {
    #[serde(rename = "T")]
    pub temperature: f64,
    pub mu: f64,
    pub omega_max: f64,
    /// Flat spectral density strength (steady-state experiments; the
    /// erasure protocol derives its own peak coupling).
    #[serde(rename = "Gamma", default)]
    pub gamma: f64,
    #[serde(rename = "L")]
    pub modes: usize,
    #[serde(rename = "Lambda_plus", default = "one")]
    pub lambda_plus: f64,
    #[serde(rename = "Lambda_minus", default = "one")]
    pub lambda_minus: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// Trajectory span (steady-ft) or drive duration (erasure).
    #[serde(default)]
    pub tau: f64,
    /// Erasure: additional equilibration time after the drive.
    #[serde(default)]
    pub tau_eq: f64,
    /// Erasure: final energy splitting of the bit mode.
    #[serde(default)]
    pub epsilon_max: f64,
    /// Erasure: multiple drive durations; overrides `tau` when nonempty.
    #[serde(default)]
    pub tau_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_trajectories")]
    pub trajectories: u64,
    #[serde(default)]
    pub seed: u64,
    /// 0 = one worker per available CPU.
    #[serde(default)]
    pub workers: usize,
    /// Histogram bins: "auto" (Freedman-Diaconis) or a number.
    #[serde(default)]
    pub bins: BinSpec,
}

fn default_trajectories() -> u64 {
    1000
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            seed: 0,
            workers: 0,
            bins: BinSpec::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum BinSpec {
    #[default]
    #[serde(with = "auto_str")]
    Auto,
    Count(usize),
}

mod auto_str {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom("expected \"auto\" or a bin count"))
        }
    }
}

impl Config {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.lead.temperature > 0.0, "T must be positive");
        anyhow::ensure!(self.lead.modes >= 1, "L must be at least 1");
        anyhow::ensure!(self.lead.omega_max > 0.0, "omega_max must be positive");
        anyhow::ensure!(self.lead.gamma >= 0.0, "Gamma must be nonnegative");
        for lam in [self.lead.lambda_plus, self.lead.lambda_minus] {
            anyhow::ensure!((0.0..=1.0).contains(&lam), "efficiencies must be in [0, 1]");
        }
        Ok(())
    }

    /// Erasure drive durations: the grid when given, otherwise `tau`.
    pub fn tau_values(&self) -> Vec<f64> {
        if self.protocol.tau_grid.is_empty() {
            vec![self.protocol.tau]
        } else {
            self.protocol.tau_grid.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = r#"
            [system]
            epsilon = 0.25

            [lead]
            T = 1.0
            mu = 0.0625
            omega_max = 1.0
            Gamma = 0.125
            L = 10

            [protocol]
            tau = 400.0

            [run]
            trajectories = 5000
            seed = 7
            workers = 2
            bins = 40
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lead.modes, 10);
        assert_eq!(cfg.lead.lambda_plus, 1.0);
        assert_eq!(cfg.run.bins, BinSpec::Count(40));
        assert_eq!(cfg.tau_values(), vec![400.0]);
    }

    #[test]
    fn defaults_and_auto_bins() {
        let text = r#"
            [lead]
            T = 0.5
            mu = 0.0
            omega_max = 1.0
            L = 4
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        assert_eq!(cfg.run.bins, BinSpec::Auto);
        assert_eq!(cfg.run.trajectories, 1000);
        assert_eq!(cfg.lead.gamma, 0.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let text = r#"
            [lead]
            T = 1.0
            mu = 0.0
            omega_max = 1.0
            L = 4
            typo_key = 3
        "#;
        assert!(toml::from_str::<Config>(text).is_err());

        let text = r#"
            [lead]
            T = -1.0
            mu = 0.0
            omega_max = 1.0
            L = 4
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
