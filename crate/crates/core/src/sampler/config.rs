//! Fit configuration and its defaults.

use serde::{Deserialize, Serialize};

use crate::data::BandTransform;
use crate::error::{Error, Result};
use crate::kernel::{AlphaRule, KernelWeights};
use crate::special::DistributionSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetainDeep {
    /// Keep deep-level splits of every cohort.
    #[default]
    All,
    /// Keep them only for future cohorts.
    Future,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Elicitation {
    #[default]
    MonteCarlo,
    /// (0, σ²R) per node, exact only when all partitions are G₀-dyadic.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub gp_depth: usize,
    pub depth: usize,
    pub c: f64,
    pub alpha_rule: AlphaRule,
    pub g0: DistributionSpec<f64>,
    pub censoring: DistributionSpec<f64>,
    pub kernel: KernelWeights<f64>,
    pub transform: BandTransform,
    pub seed: u64,
    pub elicitation: Elicitation,
    pub elicit_draws: usize,
    pub latent_moves: usize,
    pub check_every: usize,
    pub retain_deep: RetainDeep,
    pub chains: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            burn_in: 1000,
            thin: 3,
            gp_depth: 2,
            depth: 8,
            c: 5.0,
            alpha_rule: AlphaRule::Continuous,
            g0: DistributionSpec::half_cauchy(3.5),
            censoring: DistributionSpec::exponential_mean(10.0),
            kernel: KernelWeights::default(),
            transform: BandTransform::Log,
            seed: 1,
            elicitation: Elicitation::MonteCarlo,
            elicit_draws: 5000,
            latent_moves: 1,
            check_every: 100,
            retain_deep: RetainDeep::All,
            chains: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.thin < 1 {
            return bad("thin must be >= 1");
        }
        if self.burn_in >= self.iterations {
            return bad("burn_in must be smaller than iterations");
        }
        if self.depth < 2 || self.depth > 20 {
            return bad("depth must lie in 2..=20");
        }
        if self.gp_depth < 1 || self.gp_depth > 2 {
            return bad("gp_depth must be 1 or 2 (levels anchored by the reported triple)");
        }
        if !(self.c > 0.0) {
            return bad("c must be positive");
        }
        if self.elicit_draws < 1000 && self.elicitation == Elicitation::MonteCarlo {
            return bad("elicit_draws must be >= 1000");
        }
        if self.chains < 1 {
            return bad("chains must be >= 1");
        }
        self.kernel.validate()
    }

    /// Number of retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether iteration `it` (1-based) is recorded.
    pub fn keeps(&self, it: usize) -> bool {
        it > self.burn_in && (it - self.burn_in) % self.thin == 0
    }
}
