//! Run configuration read from a TOML file.
//!
//! Every section is optional; missing keys keep their defaults and command-line
//! flags are applied on top by the individual commands.

use std::path::Path;

use anyhow::{Context, Result};
use mvpt::sampler::FitConfig;
use mvpt::simulation::StudyConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it replaces `fit.seed` and `simulation.seed`.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub fit: FitConfig,
    pub summary: SummaryConfig,
    pub simulation: StudyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// Monte Carlo size for the conditional-mean tree of future cohorts.
    pub mean_draws: usize,
    /// Defaults to the seed of the fit.
    pub seed: Option<u64>,
    pub grid_points: usize,
    /// Upper end of the density grid; derived from the data when absent.
    pub grid_max: Option<f64>,
    /// Cohort ids for the density grid; all cohorts when empty.
    pub density_cohorts: Vec<String>,
    pub keep_draws: bool,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { mean_draws: 200, seed: None, grid_points: 200, grid_max: None, density_cohorts: Vec::new(), keep_draws: false }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<Self>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = cfg.seed {
            cfg.fit.seed = s;
            cfg.simulation.seed = s;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back.fit, cfg.fit);
        assert_eq!(back.summary, cfg.summary);
        assert_eq!(back.simulation.fit, cfg.simulation.fit);
        assert_eq!(back.simulation.scenario, cfg.simulation.scenario);
    }

    #[test]
    fn partial_file_and_master_seed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 42\n[fit]\niterations = 300\nburn_in = 100\n[fit.kernel]\ntumor = 1.0\n").unwrap();
        let cfg = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(cfg.fit.iterations, 300);
        assert_eq!(cfg.fit.thin, 3);
        assert_eq!(cfg.fit.kernel.tumor, 1.0);
        assert_eq!(cfg.fit.kernel.agent, 2.0);
        assert_eq!(cfg.fit.seed, 42);
        assert_eq!(cfg.simulation.seed, 42);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[fit]\niteration = 300\n").unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }
}
