//! Fixed model ingredients: partitions, kernel and elicited node priors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CohortSummary, Target};
use crate::elicit::{elicit_node_moments, shared_node_priors, ElicitDiagnostics, ElicitSpec, NodePrior};
use crate::error::{Error, Result};
use crate::kernel::{build_correlation_matrix, deep_beta_params, CovariateVector};
use crate::partition::{PartitionTree, Triple};
use crate::sampler::config::{Elicitation, FitConfig};
use crate::special::{cholesky_jittered, Law};

/// A cohort without data whose distribution is predicted through the kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FutureCohort {
    pub cohort_id: String,
    pub covariates: CovariateVector,
    /// Partition anchor; defaults to the componentwise median of observed triples.
    pub triple: Option<Triple<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub config: FitConfig,
    pub cohort_ids: Vec<String>,
    pub observed: Vec<CohortSummary>,
    pub future: Vec<FutureCohort>,
    /// Observed cohorts first, then future cohorts.
    pub trees: Vec<PartitionTree<f64>>,
    pub targets: Vec<Target>,
    pub kernel: DMatrix<f64>,
    pub kernel_repair: f64,
    pub priors: Vec<NodePrior>,
    pub elicitation: ElicitDiagnostics,
    #[serde(skip)]
    factors: Vec<DMatrix<f64>>,
}

impl Model {
    pub fn build(observed: Vec<CohortSummary>, future: Vec<FutureCohort>, config: FitConfig) -> Result<Self> {
        config.validate()?;
        if observed.is_empty() && future.is_empty() {
            return Err(Error::Config("no cohorts to fit".into()));
        }
        for c in &observed {
            c.validate()?;
        }
        let mut cohort_ids: Vec<String> = observed.iter().map(|c| c.cohort_id.clone()).collect();
        cohort_ids.extend(future.iter().map(|f| f.cohort_id.clone()));
        let mut sorted = cohort_ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation { cohort: w[0].clone(), msg: "duplicate cohort id".into() });
        }
        let g0 = config.g0;
        let default_future = Triple::componentwise_median(&observed.iter().map(|c| c.triple).collect::<Vec<_>>())
            .unwrap_or_else(|| Triple::full(g0.inv_cdf(0.25), g0.inv_cdf(0.5), g0.inv_cdf(0.75)));
        let mut trees = Vec::with_capacity(cohort_ids.len());
        for c in &observed {
            trees.push(PartitionTree::build(&c.cohort_id, &c.triple, &g0, config.depth)?);
        }
        for f in &future {
            trees.push(PartitionTree::build(&f.cohort_id, &f.triple.unwrap_or(default_future), &g0, config.depth)?);
        }
        let covs: Vec<CovariateVector> =
            observed.iter().map(|c| c.covariates.clone()).chain(future.iter().map(|f| f.covariates.clone())).collect();
        let corr = build_correlation_matrix(&covs, &config.kernel)?;
        let (priors, elicitation) = match config.elicitation {
            Elicitation::MonteCarlo => elicit_node_moments(
                &trees,
                &corr.matrix,
                &ElicitSpec {
                    c: config.c,
                    gp_depth: config.gp_depth,
                    alpha_rule: config.alpha_rule,
                    n_mc: config.elicit_draws,
                    seed: config.seed,
                },
            )?,
            Elicitation::Shared => (shared_node_priors(&corr.matrix, config.c, config.gp_depth)?, ElicitDiagnostics::default()),
        };
        let targets = observed.iter().map(|c| Target::from_cohort(c, config.transform)).collect();
        let mut model = Self {
            config,
            cohort_ids,
            observed,
            future,
            trees,
            targets,
            kernel: corr.matrix,
            kernel_repair: corr.repair,
            priors,
            elicitation,
            factors: Vec::new(),
        };
        model.prepare()?;
        Ok(model)
    }

    /// Recomputes cached factorizations (needed after deserialization).
    pub fn prepare(&mut self) -> Result<()> {
        self.factors = self
            .priors
            .iter()
            .map(|p| cholesky_jittered(&p.spec.covariance, &p.node.to_string()).map(|f| f.chol.l()))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k]
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_cohorts(&self) -> usize {
        self.cohort_ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.cohort_ids.iter().position(|c| c == id)
    }

    pub fn n_splits(&self) -> usize {
        (1usize << self.config.depth) - 1
    }

    pub fn n_gp_splits(&self) -> usize {
        (1usize << self.config.gp_depth) - 1
    }

    /// Symmetric beta parameter for splits of nodes at `level` (their children sit at level + 1).
    pub fn alpha(&self, level: usize) -> f64 {
        deep_beta_params(level + 1, self.config.c, self.config.alpha_rule)
    }
}
