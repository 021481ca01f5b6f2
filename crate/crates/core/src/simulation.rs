//! Synthetic meta-analysis study with a classical random-effects baseline.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_summary, BandTransform, CensorClass, CohortSummary};
use crate::data::km::normal_quantile;
use crate::error::{Error, Result};
use crate::kernel::{Biomarker, CovariateVector, KernelWeights};
use crate::rng::{derive_seed, stream, Module};
use crate::sampler::{run_chains, ChainDiagnostics, FitConfig, FutureCohort, Model, RetainDeep};
use crate::special::{DistributionSpec, Law};
use crate::summaries::{mixture_median, summarize, CohortGroup, QuerySpec, QueryTarget, SummaryOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellLaw {
    Exponential,
    HalfNormal,
    /// Equal-weight exponential and half-normal sharing the median.
    Mixture,
}

impl CellLaw {
    pub fn law(self, median: f64) -> DistributionSpec<f64> {
        match self {
            CellLaw::Exponential => DistributionSpec::exponential(median),
            CellLaw::HalfNormal => DistributionSpec::half_normal(median),
            CellLaw::Mixture => DistributionSpec::mixture(median, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub tumor: String,
    pub agent: String,
    pub law: CellLaw,
    /// Marker-negative median before agent offset and random effect.
    pub base_median: f64,
    pub agent_offset: f64,
    pub studies: usize,
}

impl CellSpec {
    pub fn label(&self) -> String {
        cell_label(&self.tumor, &self.agent)
    }

    pub fn median(&self, biomarker: Biomarker, offset: f64) -> f64 {
        let neg = self.base_median + self.agent_offset;
        match biomarker {
            Biomarker::Positive => neg + offset,
            Biomarker::Negative => neg,
        }
    }
}

pub fn cell_label(tumor: &str, agent: &str) -> String {
    format!("{tumor}:{agent}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub cells: Vec<CellSpec>,
    pub biomarker_offset: f64,
    pub n_per_cohort: usize,
    pub alpha_range: (f64, f64),
    pub conf_level: f64,
    pub transform: BandTransform,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::table1()
    }
}

impl ScenarioSpec {
    pub fn table1() -> Self {
        let mut cells = Vec::new();
        for (agent, offset, studies) in [("A0", 0.0, [5, 5, 3]), ("A1", 1.0, [5, 5, 2])] {
            for (k, (tumor, law, base)) in
                [("TT1", CellLaw::Exponential, 2.5), ("TT2", CellLaw::HalfNormal, 3.0), ("TT3", CellLaw::Mixture, 3.5)].into_iter().enumerate()
            {
                cells.push(CellSpec {
                    tumor: tumor.into(),
                    agent: agent.into(),
                    law,
                    base_median: base,
                    agent_offset: offset,
                    studies: studies[k],
                });
            }
        }
        Self { cells, biomarker_offset: 0.5, n_per_cohort: 20, alpha_range: (0.8, 1.2), conf_level: 0.95, transform: BandTransform::Log }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.cells.iter().all(|c| c.studies == 0) {
            return Err(Error::Config("scenario has no studies".into()));
        }
        let (a, b) = self.alpha_range;
        if !(a > 0.0 && a <= b) {
            return Err(Error::Config(format!("random-effect range ({a}, {b}) must be positive and ordered")));
        }
        for c in &self.cells {
            for bm in [Biomarker::Positive, Biomarker::Negative] {
                if !(c.median(bm, self.biomarker_offset) > 0.0) {
                    return Err(Error::Config(format!("cell {} has a nonpositive median", c.label())));
                }
            }
        }
        if self.n_per_cohort < 2 {
            return Err(Error::Config("cohorts need at least two subjects".into()));
        }
        if !(self.conf_level > 0.0 && self.conf_level < 1.0) {
            return Err(Error::Config(format!("conf_level {} outside (0, 1)", self.conf_level)));
        }
        Ok(())
    }

    pub fn n_studies(&self) -> usize {
        self.cells.iter().map(|c| c.studies).sum()
    }

    /// log(M⁺/M⁻) per cell; the study effect cancels.
    pub fn cell_truth(&self, cell: &CellSpec) -> f64 {
        (cell.median(Biomarker::Positive, self.biomarker_offset) / cell.median(Biomarker::Negative, self.biomarker_offset)).ln()
    }

    /// log ratio of the study-count weighted mixture medians at unit study effect.
    pub fn overall_truth(&self) -> Result<f64> {
        let w: Vec<f64> = self.cells.iter().map(|c| c.studies as f64).collect();
        let arm = |bm| {
            let laws: Vec<_> = self.cells.iter().map(|c| c.law.law(c.median(bm, self.biomarker_offset))).collect();
            mixture_median(&laws, &w)
        };
        Ok((arm(Biomarker::Positive)? / arm(Biomarker::Negative)?).ln())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub cohort_id: String,
    pub study: String,
    pub tumor: String,
    pub agent: String,
    pub biomarker: Biomarker,
    pub alpha: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cohorts: Vec<CohortSummary>,
    pub truth: Vec<TruthRecord>,
}

fn covariates(study: &str, tumor: &str, agent: &str, biomarker: Biomarker) -> CovariateVector {
    CovariateVector {
        study: study.into(),
        biomarker,
        tumor: tumor.into(),
        agent: agent.into(),
        phase: "NA".into(),
        line: "NA".into(),
        therapy_type: "NA".into(),
    }
}

/// Event times by inverse-CDF sampling.
pub fn simulate_times<L: Law<f64>, R: Rng + ?Sized>(law: &L, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| law.inv_cdf(rng.random::<f64>())).collect()
}

pub fn generate_dataset(spec: &ScenarioSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut cohorts = Vec::with_capacity(2 * spec.n_studies());
    let mut truth = Vec::with_capacity(2 * spec.n_studies());
    let mut s = 0u64;
    for cell in &spec.cells {
        for _ in 0..cell.studies {
            s += 1;
            let study = format!("S{s:02}");
            let mut rng = stream(seed, 0, Module::Simulation, s, 0);
            let (a, b) = spec.alpha_range;
            let alpha = a + (b - a) * rng.random::<f64>();
            for bm in [Biomarker::Positive, Biomarker::Negative] {
                let median = cell.median(bm, spec.biomarker_offset) * alpha;
                let times = simulate_times(&cell.law.law(median), spec.n_per_cohort, &mut rng);
                let events = vec![true; times.len()];
                let triple = derive_summary(&times, &events, spec.conf_level, spec.transform)?;
                let cohort_id = format!("{study}-{}", bm.short());
                cohorts.push(CohortSummary {
                    cohort_id: cohort_id.clone(),
                    covariates: covariates(&study, &cell.tumor, &cell.agent, bm),
                    triple,
                    n: spec.n_per_cohort,
                    n_events: Some(spec.n_per_cohort),
                    censor_class: CensorClass::ExactPattern,
                    conf_level: spec.conf_level,
                });
                truth.push(TruthRecord {
                    cohort_id,
                    study: study.clone(),
                    tumor: cell.tumor.clone(),
                    agent: cell.agent.clone(),
                    biomarker: bm,
                    alpha,
                    median,
                });
            }
        }
    }
    Ok(Dataset { cohorts, truth })
}

pub fn future_id(cell: &CellSpec, bm: Biomarker) -> String {
    format!("F-{}-{}-{}", cell.tumor, cell.agent, bm.short())
}

/// One future cohort per cell and biomarker status.
pub fn future_cohorts(spec: &ScenarioSpec) -> Vec<FutureCohort> {
    spec.cells
        .iter()
        .flat_map(|c| {
            [Biomarker::Positive, Biomarker::Negative].map(|bm| FutureCohort {
                cohort_id: future_id(c, bm),
                covariates: covariates(&future_id(c, bm), &c.tumor, &c.agent, bm),
                triple: None,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub y: f64,
    pub v: f64,
    pub tumor: String,
    pub agent: String,
    pub study: String,
}

/// Log median ratio per study with a variance from the CI widths of both arms.
pub fn effect_estimates(cohorts: &[CohortSummary]) -> Result<Vec<EffectEstimate>> {
    let mut out = Vec::new();
    let mut studies: Vec<&str> = cohorts.iter().map(|c| c.study_id()).collect();
    studies.dedup();
    for study in studies {
        let arm = |bm| cohorts.iter().find(|c| c.study_id() == study && c.covariates.biomarker == bm);
        let (Some(p), Some(n)) = (arm(Biomarker::Positive), arm(Biomarker::Negative)) else {
            continue;
        };
        let width = |c: &CohortSummary| -> Result<f64> {
            match (c.triple.lower, c.triple.upper) {
                (Some(l), Some(h)) => Ok(h.ln() - l.ln()),
                _ => Err(Error::Estimation(format!("cohort {} lacks a closed interval", c.cohort_id))),
            }
        };
        let z = normal_quantile(p.conf_level)?;
        let v = (width(p)?.powi(2) + width(n)?.powi(2)) / (2.0 * z).powi(2);
        if !(v > 0.0) {
            return Err(Error::Estimation(format!("study {study} has a zero-width interval")));
        }
        out.push(EffectEstimate {
            y: (p.triple.median / n.triple.median).ln(),
            v,
            tumor: p.covariates.tumor.clone(),
            agent: p.covariates.agent.clone(),
            study: study.to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetaDesign {
    InterceptOnly,
    /// One indicator per listed `tumor:agent` cell.
    Interaction(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFit {
    pub tau2: f64,
    pub q: f64,
    pub coefficients: Vec<Coefficient>,
}

fn design_matrix(effects: &[EffectEstimate], design: &MetaDesign) -> Result<(DMatrix<f64>, Vec<String>)> {
    match design {
        MetaDesign::InterceptOnly => Ok((DMatrix::from_element(effects.len(), 1, 1.0), vec!["intercept".into()])),
        MetaDesign::Interaction(cells) => {
            let missing: Vec<String> =
                cells.iter().filter(|c| !effects.iter().any(|e| &cell_label(&e.tumor, &e.agent) == *c)).cloned().collect();
            if !missing.is_empty() {
                return Err(Error::RankDeficient(missing));
            }
            let x = DMatrix::from_fn(effects.len(), cells.len(), |r, c| {
                f64::from(cell_label(&effects[r].tumor, &effects[r].agent) == cells[c])
            });
            Ok((x, cells.clone()))
        }
    }
}

fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xtw = x.transpose() * DMatrix::from_diagonal(w);
    let info = &xtw * x;
    let inv = info.clone().try_inverse().ok_or_else(|| Error::Estimation("singular information matrix".into()))?;
    Ok((&inv * (&xtw * y), inv))
}

/// DerSimonian-Laird random-effects meta-regression.
pub fn re_meta_analysis(effects: &[EffectEstimate], design: &MetaDesign) -> Result<MetaFit> {
    if effects.len() < 2 {
        return Err(Error::Estimation(format!("{} effects; at least 2 are needed", effects.len())));
    }
    if let Some(e) = effects.iter().find(|e| !(e.v > 0.0) || !e.y.is_finite()) {
        return Err(Error::Estimation(format!("study {} has an invalid effect or variance", e.study)));
    }
    let (x, names) = design_matrix(effects, design)?;
    let (k, p) = (x.nrows(), x.ncols());
    let y = DVector::from_iterator(k, effects.iter().map(|e| e.y));
    let w = DVector::from_iterator(k, effects.iter().map(|e| 1.0 / e.v));
    let (beta, inv) = wls(&x, &y, &w)?;
    let resid = &y - &x * &beta;
    let q: f64 = resid.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum();
    let w2 = DMatrix::from_diagonal(&w.component_mul(&w));
    let denom = w.sum() - (&inv * (x.transpose() * w2 * &x)).trace();
    let tau2 = if k > p && denom > 0.0 { ((q - (k - p) as f64) / denom).max(0.0) } else { 0.0 };
    let ws = DVector::from_iterator(k, effects.iter().map(|e| 1.0 / (e.v + tau2)));
    let (beta, cov) = wls(&x, &y, &ws)?;
    let coefficients =
        names.into_iter().enumerate().map(|(j, name)| Coefficient { name, estimate: beta[j], se: cov[(j, j)].sqrt() }).collect();
    Ok(MetaFit { tau2, q, coefficients })
}

pub const METHOD_MEDIAN: &str = "mvpt-median";
pub const METHOD_MEAN_MEDIAN: &str = "mvpt-mean-median";
pub const METHOD_DL_REGRESSION: &str = "dl-meta-regression";
pub const METHOD_DL_INTERCEPT: &str = "dl-intercept";
pub const OVERALL: &str = "overall";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub replicate: usize,
    pub estimand: String,
    pub cell: String,
    pub method: String,
    pub bias: f64,
    pub estimate: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub replicates: usize,
    pub seed: u64,
    pub mean_draws: usize,
    pub scenario: ScenarioSpec,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replicates: 10,
            seed: 7,
            mean_draws: 200,
            scenario: ScenarioSpec::table1(),
            fit: FitConfig { kernel: KernelWeights::simulation(), retain_deep: RetainDeep::Future, ..FitConfig::default() },
        }
    }
}

pub struct ReplicateOutput {
    pub replicate: usize,
    pub dataset: Dataset,
    pub rows: Vec<BiasRow>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

pub fn replicate_seeds(seed: u64, replicate: usize) -> (u64, u64) {
    let r = replicate as u64;
    (derive_seed(seed, &[Module::Simulation as u64, r, 0]), derive_seed(seed, &[Module::Simulation as u64, r, 1]))
}

fn cell_queries(spec: &ScenarioSpec, target: QueryTarget) -> Vec<QuerySpec> {
    let one = |id: String| CohortGroup { cohorts: vec![id], weights: None };
    let mut q: Vec<QuerySpec> = spec
        .cells
        .iter()
        .map(|c| QuerySpec {
            name: c.label(),
            target,
            group: one(future_id(c, Biomarker::Positive)),
            against: Some(one(future_id(c, Biomarker::Negative))),
            level: 0.95,
        })
        .collect();
    let weights = Some(spec.cells.iter().map(|c| c.studies as f64).collect());
    let arm = |bm| CohortGroup { cohorts: spec.cells.iter().map(|c| future_id(c, bm)).collect(), weights: weights.clone() };
    q.push(QuerySpec {
        name: OVERALL.into(),
        target,
        group: arm(Biomarker::Positive),
        against: Some(arm(Biomarker::Negative)),
        level: 0.95,
    });
    q
}

pub fn run_replicate(cfg: &StudyConfig, replicate: usize) -> Result<ReplicateOutput> {
    let spec = &cfg.scenario;
    let (data_seed, fit_seed) = replicate_seeds(cfg.seed, replicate);
    let dataset = generate_dataset(spec, data_seed)?;
    let fit_config = FitConfig { seed: fit_seed, ..cfg.fit.clone() };
    let model = Model::build(dataset.cohorts.clone(), future_cohorts(spec), fit_config)?;
    let fit = run_chains(&model)?;

    let mut rows = Vec::new();
    let mut push = |cell: &str, method: &str, estimate: f64, truth: f64| {
        rows.push(BiasRow {
            replicate,
            estimand: "log-median-ratio".into(),
            cell: cell.into(),
            method: method.into(),
            bias: estimate - truth,
            estimate,
            truth,
        })
    };
    let overall_truth = spec.overall_truth()?;
    let truth_of = |name: &str| {
        spec.cells.iter().find(|c| c.label() == name).map_or(overall_truth, |c| spec.cell_truth(c))
    };
    let opts = SummaryOptions { mean_draws: cfg.mean_draws, seed: fit_seed, keep_draws: false };
    for (target, method) in [(QueryTarget::CohortMedian, METHOD_MEDIAN), (QueryTarget::MeanMedian, METHOD_MEAN_MEDIAN)] {
        for row in summarize(&model, &fit.draws, &cell_queries(spec, target), &opts)? {
            push(&row.query, method, row.estimate, truth_of(&row.query));
        }
    }
    let effects = effect_estimates(&dataset.cohorts)?;
    let labels: Vec<String> = spec.cells.iter().filter(|c| c.studies > 0).map(CellSpec::label).collect();
    for c in re_meta_analysis(&effects, &MetaDesign::Interaction(labels))?.coefficients {
        push(&c.name, METHOD_DL_REGRESSION, c.estimate, truth_of(&c.name));
    }
    let pooled = re_meta_analysis(&effects, &MetaDesign::InterceptOnly)?.coefficients[0].estimate;
    push(OVERALL, METHOD_DL_INTERCEPT, pooled, overall_truth);
    Ok(ReplicateOutput { replicate, dataset, rows, diagnostics: fit.diagnostics })
}

/// Replicates run in parallel and are returned in replicate order.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<ReplicateOutput>> {
    if cfg.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    cfg.scenario.validate()?;
    cfg.fit.validate()?;
    (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect()
}

pub fn write_bias_csv<W: Write>(writer: W, rows: &[BiasRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TruthCsvRow<'a> {
    replicate: usize,
    cohort_id: &'a str,
    study: &'a str,
    tumor: &'a str,
    agent: &'a str,
    biomarker: &'static str,
    alpha: f64,
    median: f64,
}

pub fn write_truth_csv<W: Write>(writer: W, replicate: usize, truth: &[TruthRecord], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(writer);
    for t in truth {
        w.serialize(TruthCsvRow {
            replicate,
            cohort_id: &t.cohort_id,
            study: &t.study,
            tumor: &t.tumor,
            agent: &t.agent,
            biomarker: t.biomarker.short(),
            alpha: t.alpha,
            median: t.median,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_correlation_matrix;
    use crate::special::mvn::min_eigenvalue;

    fn effect(y: f64, v: f64, tumor: &str, agent: &str, s: usize) -> EffectEstimate {
        EffectEstimate { y, v, tumor: tumor.into(), agent: agent.into(), study: format!("S{s}") }
    }

    #[test]
    fn table1_medians() {
        let spec = ScenarioSpec::table1();
        assert_eq!(spec.n_studies(), 25);
        let get = |t: &str, a: &str| spec.cells.iter().find(|c| c.tumor == t && c.agent == a).unwrap();
        assert_eq!(get("TT1", "A0").median(Biomarker::Positive, 0.5), 3.0);
        assert_eq!(get("TT3", "A1").median(Biomarker::Negative, 0.5), 4.5);
        assert_eq!(spec.cells.iter().map(|c| c.studies).collect::<Vec<_>>(), vec![5, 5, 3, 5, 5, 2]);
        assert!((DistributionSpec::exponential(3.0f64).exp_rate() - 0.231_049).abs() < 1e-6);
        for c in &spec.cells {
            let t = spec.cell_truth(c);
            assert!((t - ((c.base_median + c.agent_offset + 0.5) / (c.base_median + c.agent_offset)).ln()).abs() < 1e-15);
            assert!(t > 0.0);
        }
        let o = spec.overall_truth().unwrap();
        assert!(o > 0.0 && o < 0.2, "{o}");
    }

    #[test]
    fn raw_draw_medians_match_cells() {
        let spec = ScenarioSpec::table1();
        for (k, c) in spec.cells.iter().enumerate() {
            let mut rng = stream(3, 0, Module::Simulation, k as u64, 0);
            let target = c.median(Biomarker::Positive, 0.5) * 1.1;
            let mut t = simulate_times(&c.law.law(target), 100_000, &mut rng);
            t.sort_by(f64::total_cmp);
            let m = 0.5 * (t[49_999] + t[50_000]);
            assert!((m / target - 1.0).abs() < 0.01, "{} {m} {target}", c.label());
        }
    }

    #[test]
    fn dataset_shape_and_reproducibility() {
        let spec = ScenarioSpec::table1();
        let a = generate_dataset(&spec, 11).unwrap();
        assert_eq!(a.cohorts.len(), 50);
        assert_eq!(a, generate_dataset(&spec, 11).unwrap());
        assert_ne!(a, generate_dataset(&spec, 12).unwrap());
        for (c, t) in a.cohorts.iter().zip(&a.truth) {
            c.validate().unwrap();
            assert!((0.8..=1.2).contains(&t.alpha));
            assert!(c.triple.lower.is_some() && c.triple.upper.is_some());
        }
        assert_eq!(future_cohorts(&spec).len(), 12);
    }

    #[test]
    fn simulation_kernel_is_psd() {
        let spec = ScenarioSpec::table1();
        let d = generate_dataset(&spec, 5).unwrap();
        let mut covs: Vec<_> = d.cohorts.iter().map(|c| c.covariates.clone()).collect();
        covs.extend(future_cohorts(&spec).into_iter().map(|f| f.covariates));
        let r = build_correlation_matrix(&covs, &KernelWeights::simulation()).unwrap();
        assert!(min_eigenvalue(&r.matrix) > -1e-10);
    }

    #[test]
    fn dl_two_effects() {
        let e = [effect(0.0, 1.0, "T", "A", 1), effect(1.0, 1.0, "T", "A", 2)];
        let f = re_meta_analysis(&e, &MetaDesign::InterceptOnly).unwrap();
        assert_eq!(f.tau2, 0.0);
        assert!((f.q - 0.5).abs() < 1e-12);
        assert!((f.coefficients[0].estimate - 0.5).abs() < 1e-12);
        assert!((f.coefficients[0].se - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dl_identical_and_fixed_effect_limit() {
        let e: Vec<_> = (0..4).map(|s| effect(0.3, 0.2, "T", "A", s)).collect();
        let f = re_meta_analysis(&e, &MetaDesign::InterceptOnly).unwrap();
        assert_eq!(f.tau2, 0.0);
        assert!((f.coefficients[0].estimate - 0.3).abs() < 1e-12);
        let e = [effect(0.1, 1.0, "T", "A", 1), effect(0.2, 2.0, "T", "A", 2), effect(0.15, 4.0, "T", "A", 3)];
        let f = re_meta_analysis(&e, &MetaDesign::InterceptOnly).unwrap();
        assert_eq!(f.tau2, 0.0);
        let iv = (0.1 / 1.0 + 0.2 / 2.0 + 0.15 / 4.0) / (1.0 + 0.5 + 0.25);
        assert!((f.coefficients[0].estimate - iv).abs() < 1e-12);
    }

    #[test]
    fn dl_heterogeneous_hand_computed() {
        let e = [effect(0.0, 0.1, "T", "A", 1), effect(1.0, 0.1, "T", "A", 2), effect(2.0, 0.1, "T", "A", 3)];
        let f = re_meta_analysis(&e, &MetaDesign::InterceptOnly).unwrap();
        // Q = 10·(1 + 0 + 1) = 20, denom = 30 − 300/30 = 20
        assert!((f.tau2 - 0.9).abs() < 1e-12);
        assert!((f.coefficients[0].estimate - 1.0).abs() < 1e-12);
        assert!((f.coefficients[0].se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dl_regression_matches_normal_equations_when_homogeneous() {
        let cells = vec!["T1:A".to_string(), "T2:A".to_string()];
        let e = [
            effect(0.1, 1.0, "T1", "A", 1),
            effect(0.1, 2.0, "T1", "A", 2),
            effect(0.4, 0.5, "T2", "A", 3),
            effect(0.4, 3.0, "T2", "A", 4),
        ];
        let f = re_meta_analysis(&e, &MetaDesign::Interaction(cells)).unwrap();
        assert_eq!(f.tau2, 0.0);
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let w = DMatrix::from_diagonal(&DVector::from_vec(e.iter().map(|e| 1.0 / e.v).collect()));
        let y = DVector::from_vec(e.iter().map(|e| e.y).collect());
        let beta = (x.transpose() * &w * &x).lu().solve(&(x.transpose() * &w * y)).unwrap();
        for j in 0..2 {
            assert!((f.coefficients[j].estimate - beta[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn dl_rank_deficiency_names_cells() {
        let e = [effect(0.1, 1.0, "T1", "A", 1), effect(0.2, 1.0, "T1", "A", 2)];
        let err = re_meta_analysis(&e, &MetaDesign::Interaction(vec!["T1:A".into(), "T9:B".into()])).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(ref m) if m == &vec!["T9:B".to_string()]));
        assert!(re_meta_analysis(&e[..1], &MetaDesign::InterceptOnly).is_err());
    }

    #[test]
    fn effect_variance_from_widths() {
        let d = generate_dataset(&ScenarioSpec::table1(), 2).unwrap();
        let e = effect_estimates(&d.cohorts).unwrap();
        assert_eq!(e.len(), 25);
        let (p, n) = (&d.cohorts[0], &d.cohorts[1]);
        let w = |c: &CohortSummary| (c.triple.upper.unwrap() / c.triple.lower.unwrap()).ln();
        let z = 1.959_963_984_540_054;
        assert!((e[0].v - (w(p).powi(2) + w(n).powi(2)) / (2.0 * z * 2.0 * z)).abs() < 1e-9);
        assert!((e[0].y - (p.triple.median / n.triple.median).ln()).abs() < 1e-15);
    }
}
