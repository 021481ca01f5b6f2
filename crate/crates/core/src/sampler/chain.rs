//! Chain state, sweeps and retained draws.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{initialize_latent, mh_latent_step, CountsTable, LatentState, MoveKind, Target};
use crate::elicit::gp_nodes;
use crate::error::{Error, Result};
use crate::partition::NodePath;
use crate::rng::{stream, Module};
use crate::sampler::config::RetainDeep;
use crate::sampler::model::Model;
use crate::sampler::update::{deep_level_update, pg_node_update};
use crate::scalar::expit;
use crate::special::Law;
use crate::tree_dist::TreeDistribution;

pub const CHECKPOINT_VERSION: u32 = 1;
const SPLIT_FLOOR: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub chain: u32,
    pub iteration: u64,
    /// Per GP node (sweep order), logits for every cohort.
    #[serde(with = "crate::b64::nested")]
    pub z: Vec<Vec<f64>>,
    /// Per cohort, heap-indexed splitting probabilities at all levels.
    #[serde(with = "crate::b64::nested")]
    pub splits: Vec<Vec<f64>>,
    pub latent: Vec<LatentState>,
    /// Targets actually reproduced (differ from the reported ones only after an initialization fallback).
    pub targets: Vec<Target>,
}

impl ChainState {
    pub fn distribution<'a>(&'a self, model: &'a Model, cohort: usize) -> TreeDistribution<'a> {
        TreeDistribution::new(&model.trees[cohort], &self.splits[cohort])
    }
}

pub fn cdf_eval(model: &Model, state: &ChainState, cohort: usize, t: f64) -> f64 {
    state.distribution(model, cohort).cdf(t)
}

pub fn density_eval(model: &Model, state: &ChainState, cohort: usize, t: f64) -> f64 {
    state.distribution(model, cohort).pdf(t)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub invariant_checks: u64,
    pub invariant_failures: u64,
    /// Per observed cohort, latent transitions that changed the state.
    pub latent_moves: Vec<u64>,
    pub latent_proposals: u64,
    pub fallback_cohorts: Vec<String>,
}

/// Retained draws in columnar layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub cohort_ids: Vec<String>,
    pub n_observed: usize,
    pub depth: usize,
    pub gp_depth: usize,
    pub chain: Vec<u32>,
    pub iteration: Vec<u64>,
    /// [draw][GP node][cohort]
    #[serde(with = "crate::b64")]
    pub z: Vec<f64>,
    pub deep_cohorts: Vec<usize>,
    /// [draw][retained cohort][deep split]
    #[serde(with = "crate::b64")]
    pub deep: Vec<f64>,
    /// [draw][cohort] medians M_i
    #[serde(with = "crate::b64")]
    pub medians: Vec<f64>,
}

impl PosteriorDraws {
    fn new(model: &Model) -> Self {
        let deep_cohorts = match model.config.retain_deep {
            RetainDeep::All => (0..model.n_cohorts()).collect(),
            RetainDeep::Future => (model.n_observed()..model.n_cohorts()).collect(),
            RetainDeep::None => Vec::new(),
        };
        Self {
            cohort_ids: model.cohort_ids.clone(),
            n_observed: model.n_observed(),
            depth: model.config.depth,
            gp_depth: model.config.gp_depth,
            deep_cohorts,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iteration.is_empty()
    }

    pub fn n_cohorts(&self) -> usize {
        self.cohort_ids.len()
    }

    fn n_gp(&self) -> usize {
        (1 << self.gp_depth) - 1
    }

    fn n_deep(&self) -> usize {
        (1 << self.depth) - (1 << self.gp_depth)
    }

    pub fn z(&self, draw: usize, node: usize, cohort: usize) -> f64 {
        self.z[(draw * self.n_gp() + node) * self.n_cohorts() + cohort]
    }

    pub fn median(&self, draw: usize, cohort: usize) -> f64 {
        self.medians[draw * self.n_cohorts() + cohort]
    }

    fn record(&mut self, state: &ChainState, model: &Model) {
        self.chain.push(state.chain);
        self.iteration.push(state.iteration);
        for zk in &state.z {
            self.z.extend_from_slice(zk);
        }
        let g = model.n_gp_splits();
        for &i in &self.deep_cohorts {
            self.deep.extend_from_slice(&state.splits[i][g..]);
        }
        for i in 0..model.n_cohorts() {
            self.medians.push(state.distribution(model, i).inv_cdf(0.5));
        }
    }

    /// Full split vector of a retained cohort, or `None` when its deep levels were not kept.
    pub fn splits(&self, draw: usize, cohort: usize) -> Option<Vec<f64>> {
        let pos = self.deep_cohorts.iter().position(|&c| c == cohort)?;
        let mut s: Vec<f64> = (0..self.n_gp()).map(|k| expit(self.z(draw, k, cohort)).clamp(SPLIT_FLOOR, 1.0 - SPLIT_FLOOR)).collect();
        let nd = self.n_deep();
        let start = (draw * self.deep_cohorts.len() + pos) * nd;
        s.extend_from_slice(&self.deep[start..start + nd]);
        Some(s)
    }

    /// Split vector with unretained deep levels redrawn from their prior.
    pub fn splits_or_prior<R: Rng + ?Sized>(&self, model: &Model, draw: usize, cohort: usize, rng: &mut R) -> Vec<f64> {
        if let Some(s) = self.splits(draw, cohort) {
            return s;
        }
        let mut s: Vec<f64> = (0..self.n_gp()).map(|k| expit(self.z(draw, k, cohort)).clamp(SPLIT_FLOOR, 1.0 - SPLIT_FLOOR)).collect();
        for h in self.n_gp()..(1 << self.depth) - 1 {
            let a = model.alpha(NodePath::from_heap_index(h).level as usize);
            s.push(Beta::new(a, a).expect("positive alpha").sample(rng));
        }
        s
    }

    /// Concatenates chains in the given order.
    pub fn merge(parts: Vec<PosteriorDraws>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| Error::Estimation("no chains to merge".into()))?;
        for p in it {
            if p.cohort_ids != out.cohort_ids || p.deep_cohorts != out.deep_cohorts || p.depth != out.depth {
                return Err(Error::Estimation("chains disagree on layout".into()));
            }
            out.chain.extend(p.chain);
            out.iteration.extend(p.iteration);
            out.z.extend(p.z);
            out.deep.extend(p.deep);
            out.medians.extend(p.medians);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: crate::sampler::config::FitConfig,
    pub state: ChainState,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

pub struct ChainOutput {
    pub draws: PosteriorDraws,
    pub state: ChainState,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    pub resume: Option<ChainState>,
    /// Stop after this iteration instead of the configured total.
    pub stop_after: Option<usize>,
    pub checkpoint: Option<&'a Path>,
}

fn write_splits_from_z(model: &Model, state: &mut ChainState, k: usize, node: NodePath) {
    let h = node.heap_index();
    for i in 0..model.n_cohorts() {
        state.splits[i][h] = expit(state.z[k][i]).clamp(SPLIT_FLOOR, 1.0 - SPLIT_FLOOR);
    }
}

pub fn initial_state(model: &Model, chain: u32) -> Result<(ChainState, Vec<String>)> {
    let cfg = &model.config;
    let nodes = gp_nodes(cfg.gp_depth);
    let mut state = ChainState {
        chain,
        iteration: 0,
        z: Vec::with_capacity(nodes.len()),
        splits: vec![vec![0.5; model.n_splits()]; model.n_cohorts()],
        latent: Vec::with_capacity(model.n_observed()),
        targets: Vec::with_capacity(model.n_observed()),
    };
    let mut rng = stream(cfg.seed, chain as u64, Module::Init, 0, 0);
    for (k, node) in nodes.iter().enumerate() {
        let prior = &model.priors[k].spec;
        let xi = DVector::from_fn(prior.dim(), |_, _| StandardNormal.sample(&mut rng));
        state.z.push((&prior.mean + model.factor(k) * xi).as_slice().to_vec());
        write_splits_from_z(model, &mut state, k, *node);
    }
    for i in 0..model.n_cohorts() {
        for h in model.n_gp_splits()..model.n_splits() {
            state.splits[i][h] = deep_level_update(0, 0, model.alpha(NodePath::from_heap_index(h).level as usize), &mut rng)?;
        }
    }
    let mut fallbacks = Vec::new();
    for (i, c) in model.observed.iter().enumerate() {
        let mut r = stream(cfg.seed, chain as u64, Module::Init, 1 + i as u64, 0);
        let g = state.distribution(model, i);
        let (latent, achieved) = initialize_latent(&model.targets[i], c.n, &g, &cfg.censoring, &mut r)?;
        if achieved != model.targets[i] {
            fallbacks.push(c.cohort_id.clone());
        }
        state.latent.push(latent);
        state.targets.push(achieved);
    }
    Ok((state, fallbacks))
}

/// One full sweep; returns per-cohort latent change indicators.
pub fn sweep(model: &Model, state: &mut ChainState) -> Result<Vec<u64>> {
    let cfg = &model.config;
    let it = state.iteration + 1;
    let chain = state.chain as u64;
    let n_obs = model.n_observed();

    // (a) latent refresh
    let splits = &state.splits;
    let moved: Vec<u64> = state
        .latent
        .par_iter_mut()
        .enumerate()
        .map(|(i, latent)| {
            let mut rng = stream(cfg.seed, chain, Module::Latent, i as u64, it);
            let g = TreeDistribution::new(&model.trees[i], &splits[i]);
            let class = model.observed[i].censor_class;
            let target = &state.targets[i];
            (0..cfg.latent_moves)
                .map(|_| {
                    let kind = MoveKind::for_class(class, &mut rng);
                    mh_latent_step(latent, target, &g, &cfg.censoring, kind, &mut rng) as u64
                })
                .sum()
        })
        .collect();

    // (b) counts
    let counts: Vec<CountsTable> =
        state.latent.iter().enumerate().map(|(i, l)| CountsTable::from_times(&l.t, &model.trees[i])).collect();

    // (c) GP nodes
    for (k, node) in gp_nodes(cfg.gp_depth).into_iter().enumerate() {
        let node_counts: Vec<(u32, u32)> = counts.iter().map(|c| c.split(node)).collect();
        let mut rng = stream(cfg.seed, chain, Module::Node, k as u64, it);
        let z = DVector::from_column_slice(&state.z[k]);
        let z = pg_node_update(node, &node_counts, &model.priors[k].spec, model.factor(k), &z, &mut rng)?;
        state.z[k] = z.as_slice().to_vec();
        write_splits_from_z(model, state, k, node);
    }

    // (d) deep levels
    let g = model.n_gp_splits();
    state.splits.par_iter_mut().enumerate().try_for_each(|(i, s)| -> Result<()> {
        let mut rng = stream(cfg.seed, chain, Module::Deep, i as u64, it);
        for h in g..model.n_splits() {
            let node = NodePath::from_heap_index(h);
            let (n0, n1) = if i < n_obs {
                let (l, n) = counts[i].split(node);
                (l, n - l)
            } else {
                (0, 0)
            };
            s[h] = deep_level_update(n0, n1, model.alpha(node.level as usize), &mut rng)?;
        }
        Ok(())
    })?;
    state.iteration = it;
    Ok(moved)
}

fn check_invariant(state: &ChainState, diag: &mut ChainDiagnostics, model: &Model) {
    for (i, latent) in state.latent.iter().enumerate() {
        diag.invariant_checks += 1;
        if !state.targets[i].matches(latent) {
            diag.invariant_failures += 1;
            log::error!("latent data of cohort {} no longer reproduce its summary", model.cohort_ids[i]);
        }
    }
}

/// Runs (or resumes) one chain.
pub fn run_chain(model: &Model, chain: u32, opts: RunOptions<'_>) -> Result<ChainOutput> {
    let cfg = &model.config;
    let mut diag = ChainDiagnostics { latent_moves: vec![0; model.n_observed()], ..Default::default() };
    let mut state = match opts.resume {
        Some(s) => {
            if s.chain != chain || s.splits.len() != model.n_cohorts() {
                return Err(Error::Checkpoint("checkpoint does not match this model/chain".into()));
            }
            s
        }
        None => {
            let (s, fallbacks) = initial_state(model, chain)?;
            diag.fallback_cohorts = fallbacks;
            s
        }
    };
    let mut draws = PosteriorDraws::new(model);
    let stop = opts.stop_after.unwrap_or(cfg.iterations).min(cfg.iterations);
    let check_all = cfg!(debug_assertions);
    while (state.iteration as usize) < stop {
        let before = state.clone();
        match sweep(model, &mut state) {
            Ok(moved) => {
                for (d, m) in diag.latent_moves.iter_mut().zip(moved) {
                    *d += m;
                }
                diag.latent_proposals += (cfg.latent_moves * model.n_observed()) as u64;
            }
            Err(e) => {
                if let Some(path) = opts.checkpoint {
                    Checkpoint { version: CHECKPOINT_VERSION, config: cfg.clone(), state: before }.write(path)?;
                }
                return Err(e);
            }
        }
        let it = state.iteration as usize;
        let keep = cfg.keeps(it);
        if check_all || keep || it % cfg.check_every.max(1) == 0 {
            check_invariant(&state, &mut diag, model);
        }
        if keep {
            draws.record(&state, model);
        }
    }
    if let Some(path) = opts.checkpoint {
        Checkpoint { version: CHECKPOINT_VERSION, config: cfg.clone(), state: state.clone() }.write(path)?;
    }
    Ok(ChainOutput { draws, state, diagnostics: diag })
}

pub struct FitOutput {
    pub draws: PosteriorDraws,
    pub states: Vec<ChainState>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

/// Runs the configured number of chains in parallel and merges them in chain order.
pub fn run_chains(model: &Model) -> Result<FitOutput> {
    let outs = (0..model.config.chains as u32)
        .into_par_iter()
        .map(|c| run_chain(model, c, RunOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    let mut states = Vec::new();
    let mut diagnostics = Vec::new();
    let mut parts = Vec::new();
    for o in outs {
        parts.push(o.draws);
        states.push(o.state);
        diagnostics.push(o.diagnostics);
    }
    Ok(FitOutput { draws: PosteriorDraws::merge(parts)?, states, diagnostics })
}
