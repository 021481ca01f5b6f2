mod common;

use common::oracles::{batch_means_se, expit_posterior_moments};
use mvpt::data::{CensorClass, CohortSummary, CountsTable};
use mvpt::kernel::{Biomarker, CovariateVector, KernelWeights};
use mvpt::rng::{stream, Module};
use mvpt::sampler::{
    deep_level_update, pg_node_update, run_chain, run_chains, Checkpoint, Elicitation, FitConfig, FutureCohort, Model,
    PosteriorDraws, RunOptions,
};
use mvpt::simulation::{future_cohorts, generate_dataset, ScenarioSpec};
use mvpt::special::ks::{ks_one_sample, ks_two_sample};
use mvpt::special::{cholesky_jittered, trigamma, MvnSpec};
use mvpt::{NodePath, Triple};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ContinuousCDF, Normal};

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn covs(study: &str, tumor: &str) -> CovariateVector {
    CovariateVector {
        study: study.into(),
        biomarker: Biomarker::Positive,
        tumor: tumor.into(),
        agent: "A".into(),
        phase: "2".into(),
        line: "1".into(),
        therapy_type: "mono".into(),
    }
}

fn cohort(id: &str, tumor: &str, triple: Triple<f64>) -> CohortSummary {
    CohortSummary {
        cohort_id: id.into(),
        covariates: covs(id, tumor),
        triple,
        n: 20,
        n_events: Some(20),
        censor_class: CensorClass::ExactPattern,
        conf_level: 0.95,
    }
}

fn small_config(iterations: usize) -> FitConfig {
    FitConfig { iterations, burn_in: iterations / 4, thin: 2, depth: 5, elicit_draws: 1000, seed: 3, ..FitConfig::default() }
}

fn small_model(config: FitConfig) -> Model {
    let spec = ScenarioSpec::table1();
    let data = generate_dataset(&spec, 21).unwrap();
    let observed: Vec<CohortSummary> = data.cohorts.into_iter().take(6).collect();
    let future: Vec<FutureCohort> = future_cohorts(&spec).into_iter().take(2).collect();
    Model::build(observed, future, config).unwrap()
}

#[test]
fn identical_seeds_give_identical_draws() {
    let model = small_model(FitConfig { chains: 2, ..small_config(200) });
    let a = run_chains(&model).unwrap();
    let b = run_chains(&model).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.draws.len(), 2 * model.config.retained());
    assert!(a.diagnostics.iter().all(|d| d.invariant_failures == 0 && d.invariant_checks > 0));
    let other = small_model(FitConfig { chains: 2, seed: 4, ..small_config(200) });
    assert_ne!(run_chains(&other).unwrap().draws.z, a.draws.z);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let model = small_model(small_config(240));
    let full = run_chain(&model, 0, RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain0.json");
    let first = run_chain(&model, 0, RunOptions { stop_after: Some(117), checkpoint: Some(&path), ..Default::default() }).unwrap();
    assert_eq!(first.state.iteration, 117);
    let ck = Checkpoint::read(&path).unwrap();
    assert_eq!(ck.state, first.state);
    assert_eq!(ck.config, model.config);
    let second = run_chain(&model, 0, RunOptions { resume: Some(ck.state), ..Default::default() }).unwrap();
    assert_eq!(second.state, full.state);
    assert_eq!(PosteriorDraws::merge(vec![first.draws, second.draws]).unwrap(), full.draws);
}

#[test]
fn model_survives_serialization() {
    let model = small_model(small_config(60));
    let json = serde_json::to_string(&model).unwrap();
    let mut back: Model = serde_json::from_str(&json).unwrap();
    back.prepare().unwrap();
    assert_eq!(run_chains(&back).unwrap().draws, run_chains(&model).unwrap().draws);
}

#[test]
fn no_observed_cohorts_yields_prior_draws() {
    let future = vec![FutureCohort { cohort_id: "new".into(), covariates: covs("new", "T"), triple: None }];
    let config = FitConfig { iterations: 3000, burn_in: 0, thin: 1, elicit_draws: 20_000, ..small_config(0) };
    let model = Model::build(vec![], future, config).unwrap();
    let prior = &model.priors[0].spec;
    let (mu, var) = (prior.mean[0], prior.covariance[(0, 0)]);
    let v = 2.0 * trigamma(20.0f64).unwrap();
    assert!((var / v - 1.0).abs() < 0.1, "{var} vs {v}");
    let fit = run_chains(&model).unwrap();
    let z: Vec<f64> = (0..fit.draws.len()).map(|d| fit.draws.z(d, 0, 0)).collect();
    let normal = Normal::new(mu, var.sqrt()).unwrap();
    let (_, p) = ks_one_sample(&z, |x| normal.cdf(x));
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn single_cohort_root_matches_quadrature() {
    let c = cohort("a", "T", Triple::full(2.0, 3.0, 5.0));
    let config = FitConfig { iterations: 40_000, burn_in: 1000, thin: 1, depth: 4, ..small_config(0) };
    let model = Model::build(vec![c], vec![], config).unwrap();
    let out = run_chain(&model, 0, RunOptions::default()).unwrap();
    let counts = CountsTable::from_times(&out.state.latent[0].t, &model.trees[0]);
    let (n0, n) = counts.split(NodePath::ROOT);
    assert_eq!((n0, n), (9, 20));
    let prior = &model.priors[0].spec;
    let (mean, var) = expit_posterior_moments(prior.mean[0], prior.covariance[(0, 0)], n0, n);
    let y: Vec<f64> = (0..out.draws.len()).map(|d| expit(out.draws.z(d, 0, 0))).collect();
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let v = y.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
    let se = batch_means_se(&y, 50);
    assert!((m - mean).abs() < 3.0 * se, "mean {m} vs {mean} (se {se})");
    assert!((v / var - 1.0).abs() < 0.05, "var {v} vs {var}");
}

#[test]
fn unrelated_cohort_does_not_move_posterior() {
    let kernel = KernelWeights { study: 0.0, biomarker: 0.0, tumor: 0.0, agent: 0.0, phase: 0.0, line: 0.0, therapy_type: 0.0, nugget: 1.0 };
    let config = FitConfig {
        iterations: 25_000,
        burn_in: 1000,
        thin: 8,
        depth: 4,
        kernel,
        elicitation: Elicitation::Shared,
        ..small_config(0)
    };
    let a = cohort("a", "T", Triple::full(2.0, 3.0, 5.0));
    let b = cohort("b", "U", Triple::full(0.5, 0.9, 1.6));
    let alone = Model::build(vec![a.clone()], vec![], config.clone()).unwrap();
    let joint = Model::build(vec![a, b], vec![], FitConfig { seed: 99, ..config }).unwrap();
    assert_eq!(joint.kernel, DMatrix::identity(2, 2));
    let root = |m: &Model| {
        let d = run_chains(m).unwrap().draws;
        (0..d.len()).map(|k| d.z(k, 0, 0)).collect::<Vec<_>>()
    };
    let (_, p) = ks_two_sample(&root(&alone), &root(&joint));
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn geweke_joint_distribution_two_cohorts() {
    let v = 2.0 * trigamma(20.0f64).unwrap();
    let prior = MvnSpec::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[v, 0.5 * v, 0.5 * v, v])).unwrap();
    let lower = cholesky_jittered(&prior.covariance, "root").unwrap().chol.l();
    let n = 10u64;
    let binom = |p: f64, rng: &mut dyn rand::RngCore| Binomial::new(n, p).unwrap().sample(rng) as u32;
    let draws = 10_000;
    let mut rng = stream(11, 0, Module::Node, 0, 0);

    let mut forward = Vec::with_capacity(draws);
    let mut forward_deep = Vec::with_capacity(draws);
    for _ in 0..draws {
        forward.push(expit(prior.sample_with(&lower, &mut rng)[0]));
        forward_deep.push(deep_level_update(0, 0, 80.0, &mut rng).unwrap());
    }

    let mut z = prior.sample_with(&lower, &mut rng);
    let mut y = deep_level_update(0, 0, 80.0, &mut rng).unwrap();
    let mut gibbs = Vec::with_capacity(draws);
    let mut gibbs_deep = Vec::with_capacity(draws);
    for it in 0..draws * 5 {
        let counts: Vec<(u32, u32)> = (0..2).map(|i| (binom(expit(z[i]), &mut rng), n as u32)).collect();
        z = pg_node_update(NodePath::ROOT, &counts, &prior, &lower, &z, &mut rng).unwrap();
        let k = binom(y, &mut rng);
        y = deep_level_update(k, n as u32 - k, 80.0, &mut rng).unwrap();
        if it % 5 == 4 {
            gibbs.push(expit(z[0]));
            gibbs_deep.push(y);
        }
    }
    let (_, p) = ks_two_sample(&forward, &gibbs);
    assert!(p > 0.01, "node KS p = {p}");
    let (_, p) = ks_two_sample(&forward_deep, &gibbs_deep);
    assert!(p > 0.01, "deep KS p = {p}");
    let _ = rng.random::<f64>();
}
