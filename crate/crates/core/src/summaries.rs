//! Posterior functionals of retained draws.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Module};
use crate::sampler::{ChainState, Model, PosteriorDraws};
use crate::scalar::expit;
use crate::special::{Conditioner, Law, MvnSpec};
use crate::tree_dist::TreeDistribution;

pub const MIN_DRAWS: usize = 50;

pub fn median_of_draw(model: &Model, state: &ChainState, cohort: usize) -> f64 {
    state.distribution(model, cohort).inv_cdf(0.5)
}

/// t solving Σ π_i F_i(t) = 0.5.
pub fn mixture_median<L: Law<f64>>(dists: &[L], weights: &[f64]) -> Result<f64> {
    if dists.is_empty() || dists.len() != weights.len() {
        return Err(Error::Domain("mixture needs one weight per component".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || !(total > 0.0) {
        return Err(Error::Domain("mixture weights must be nonnegative with positive sum".into()));
    }
    if dists.len() == 1 {
        return Ok(dists[0].inv_cdf(0.5));
    }
    let meds: Vec<f64> = dists.iter().map(|d| d.inv_cdf(0.5)).collect();
    let (mut lo, mut hi) = meds.iter().fold((f64::INFINITY, 0.0f64), |(a, b), m| (a.min(*m), b.max(*m)));
    let f = |t: f64| dists.iter().zip(weights).map(|(d, w)| w * d.cdf(t)).sum::<f64>() / total;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linear-interpolation quantile of sorted values (midpoint of the central pair at p = 0.5).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, frac) = (h.floor() as usize, h - h.floor());
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior median with an equal-tailed interval.
pub fn posterior_interval(values: &[f64], level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level {level} outside (0, 1)")));
    }
    if values.len() < 2 || (values.len() as f64) * (1.0 - level) / 2.0 < 1.0 {
        return Err(Error::Estimation(format!("{} draws are too few for a {level} interval", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Interval {
        estimate: quantile_sorted(&v, 0.5),
        lower: quantile_sorted(&v, (1.0 - level) / 2.0),
        upper: quantile_sorted(&v, (1.0 + level) / 2.0),
    })
}

/// Conditional mean tree of a future cohort given observed logits.
///
/// The same standard normal draws are reused for every posterior draw.
pub struct MeanTree {
    conditioners: Vec<Conditioner>,
    normals: Vec<f64>,
}

impl MeanTree {
    pub fn new(model: &Model, cohort: usize, n_mc: usize, seed: u64) -> Result<Self> {
        if cohort < model.n_observed() || cohort >= model.n_cohorts() {
            return Err(Error::Domain(format!("cohort index {cohort} is not a future cohort")));
        }
        if n_mc == 0 {
            return Err(Error::Config("mean-median needs at least one Monte Carlo draw".into()));
        }
        let keep: Vec<usize> = (0..model.n_observed()).chain(std::iter::once(cohort)).collect();
        let observed: Vec<usize> = (0..model.n_observed()).collect();
        let conditioners = model
            .priors
            .iter()
            .map(|p| {
                let sub = MvnSpec {
                    mean: DVector::from_fn(keep.len(), |r, _| p.spec.mean[keep[r]]),
                    covariance: DMatrix::from_fn(keep.len(), keep.len(), |r, c| p.spec.covariance[(keep[r], keep[c])]),
                };
                Conditioner::new(&sub, &observed, &p.node.to_string())
            })
            .collect::<Result<_>>()?;
        let mut rng = stream(seed, cohort as u64, Module::Summary, 0, 0);
        let normals = (0..n_mc).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self { conditioners, normals })
    }

    /// Split vector: E[expit(Z_i) | Z_obs] on GP nodes, 0.5 below.
    pub fn splits(&self, model: &Model, draws: &PosteriorDraws, draw: usize) -> Vec<f64> {
        let n_obs = model.n_observed();
        let mut s = vec![0.5; model.n_splits()];
        for (k, cond) in self.conditioners.iter().enumerate() {
            let obs = DVector::from_fn(n_obs, |r, _| draws.z(draw, k, r));
            let mean = cond.mean(&obs)[0];
            let sd = cond.covariance[(0, 0)].max(0.0).sqrt();
            let e = if sd == 0.0 {
                expit(mean)
            } else {
                self.normals.iter().map(|z| expit(mean + sd * z)).sum::<f64>() / self.normals.len() as f64
            };
            s[model.priors[k].node.heap_index()] = e;
        }
        s
    }
}

/// Per-draw medians of the conditional mean distribution of a future cohort.
pub fn mean_median(model: &Model, draws: &PosteriorDraws, cohort: usize, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    let mt = MeanTree::new(model, cohort, n_mc, seed)?;
    Ok((0..draws.len())
        .into_par_iter()
        .map(|d| TreeDistribution::new(&model.trees[cohort], &mt.splits(model, draws, d)).inv_cdf(0.5))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryTarget {
    /// M_i (a mixture M_P when several cohorts are listed)
    #[default]
    CohortMedian,
    /// M̄_i of future cohorts (mixture of conditional means when several)
    MeanMedian,
    MixtureMedian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortGroup {
    pub cohorts: Vec<String>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub name: String,
    #[serde(default)]
    pub target: QueryTarget,
    #[serde(flatten)]
    pub group: CohortGroup,
    /// Negative arm for a comparison log(M⁺/M⁻).
    #[serde(default)]
    pub against: Option<CohortGroup>,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query: String,
    pub target: QueryTarget,
    pub kind: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// P(M⁺ > M⁻ | data) for comparisons.
    pub prob_positive: Option<f64>,
    pub n_draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

struct ResolvedGroup {
    idx: Vec<usize>,
    weights: Vec<f64>,
}

fn resolve(model: &Model, g: &CohortGroup, target: QueryTarget) -> Result<ResolvedGroup> {
    if g.cohorts.is_empty() {
        return Err(Error::Config("query lists no cohorts".into()));
    }
    let idx = g
        .cohorts
        .iter()
        .map(|c| model.index_of(c).ok_or_else(|| Error::Config(format!("unknown cohort {c:?} in query"))))
        .collect::<Result<Vec<_>>>()?;
    if target == QueryTarget::MeanMedian {
        if let Some(&i) = idx.iter().find(|&&i| i < model.n_observed()) {
            return Err(Error::Config(format!("mean-median needs future cohorts; {} is observed", model.cohort_ids[i])));
        }
    }
    let weights = match &g.weights {
        Some(w) if w.len() == idx.len() && w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0 => {
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        }
        Some(_) => return Err(Error::Config("weights must match cohorts, be nonnegative and sum to a positive value".into())),
        None => vec![1.0 / idx.len() as f64; idx.len()],
    };
    Ok(ResolvedGroup { idx, weights })
}

/// Per-draw median of a (weighted) group of cohort distributions.
fn group_medians(
    model: &Model,
    draws: &PosteriorDraws,
    g: &ResolvedGroup,
    target: QueryTarget,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if target != QueryTarget::MeanMedian && g.idx.len() == 1 {
        return Ok((0..draws.len()).map(|d| draws.median(d, g.idx[0])).collect());
    }
    let means = if target == QueryTarget::MeanMedian {
        Some(g.idx.iter().map(|&i| MeanTree::new(model, i, n_mc, seed)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    (0..draws.len())
        .into_par_iter()
        .map(|d| {
            let splits: Vec<Vec<f64>> = g
                .idx
                .iter()
                .enumerate()
                .map(|(k, &i)| match &means {
                    Some(m) => m[k].splits(model, draws, d),
                    None => draws.splits_or_prior(model, d, i, &mut stream(seed, i as u64, Module::Summary, d as u64, 1)),
                })
                .collect();
            let dists: Vec<TreeDistribution> =
                g.idx.iter().zip(&splits).map(|(&i, s)| TreeDistribution::new(&model.trees[i], s)).collect();
            mixture_median(&dists, &g.weights)
        })
        .collect()
}

pub struct SummaryOptions {
    pub mean_draws: usize,
    pub seed: u64,
    pub keep_draws: bool,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self { mean_draws: 200, seed: 1, keep_draws: false }
    }
}

pub fn summarize(model: &Model, draws: &PosteriorDraws, queries: &[QuerySpec], opts: &SummaryOptions) -> Result<Vec<ReportRow>> {
    if draws.len() < MIN_DRAWS {
        return Err(Error::Estimation(format!("{} retained draws; at least {MIN_DRAWS} are needed", draws.len())));
    }
    queries
        .iter()
        .map(|q| {
            let pos = resolve(model, &q.group, q.target)?;
            let mp = group_medians(model, draws, &pos, q.target, opts.mean_draws, opts.seed)?;
            let (values, prob, kind) = match &q.against {
                None => (mp, None, "median"),
                Some(neg) => {
                    let neg = resolve(model, neg, q.target)?;
                    let mn = group_medians(model, draws, &neg, q.target, opts.mean_draws, opts.seed)?;
                    let lr: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| (a / b).ln()).collect();
                    let p = lr.iter().filter(|x| **x > 0.0).count() as f64 / lr.len() as f64;
                    (lr, Some(p), "log-ratio")
                }
            };
            let iv = posterior_interval(&values, q.level)?;
            Ok(ReportRow {
                query: q.name.clone(),
                target: q.target,
                kind: kind.into(),
                estimate: iv.estimate,
                lower: iv.lower,
                upper: iv.upper,
                prob_positive: prob,
                n_draws: values.len(),
                draws: opts.keep_draws.then_some(values),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub cohort_id: String,
    pub t: f64,
    pub density_mean: f64,
    pub density_lower: f64,
    pub density_upper: f64,
    pub survival_mean: f64,
    pub survival_lower: f64,
    pub survival_upper: f64,
}

/// Pointwise posterior mean and 95% band of density and survival on a grid.
pub fn density_grid(model: &Model, draws: &PosteriorDraws, cohorts: &[usize], grid: &[f64], seed: u64) -> Result<Vec<DensityRow>> {
    if draws.is_empty() {
        return Err(Error::Estimation("no draws".into()));
    }
    let mut rows = Vec::new();
    for &i in cohorts {
        let per_draw: Vec<(Vec<f64>, Vec<f64>)> = (0..draws.len())
            .into_par_iter()
            .map(|d| {
                let mut rng = stream(seed, i as u64, Module::Summary, d as u64, 2);
                let s = draws.splits_or_prior(model, d, i, &mut rng);
                let g = TreeDistribution::new(&model.trees[i], &s);
                (grid.iter().map(|&t| g.pdf(t)).collect(), grid.iter().map(|&t| g.sf(t)).collect())
            })
            .collect();
        for (k, &t) in grid.iter().enumerate() {
            let mut dens: Vec<f64> = per_draw.iter().map(|(p, _)| p[k]).collect();
            let mut surv: Vec<f64> = per_draw.iter().map(|(_, s)| s[k]).collect();
            dens.sort_by(f64::total_cmp);
            surv.sort_by(f64::total_cmp);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            rows.push(DensityRow {
                cohort_id: model.cohort_ids[i].clone(),
                t,
                density_mean: mean(&dens),
                density_lower: quantile_sorted(&dens, 0.025),
                density_upper: quantile_sorted(&dens, 0.975),
                survival_mean: mean(&surv),
                survival_lower: quantile_sorted(&surv, 0.025),
                survival_upper: quantile_sorted(&surv, 0.975),
            });
        }
    }
    Ok(rows)
}
