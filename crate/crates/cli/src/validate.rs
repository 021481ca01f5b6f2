//! Schema detection and checks for every file the tool reads or writes.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mvpt::data::{read_cohorts_path, CensorClass};
use mvpt::simulation::{BiasRow, ScenarioSpec};
use mvpt::summaries::{DensityRow, QuerySpec};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{read_csv, read_future_path, BiasSummaryRow, ReportCsvRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Cohorts,
    Future,
    Truth,
    Bias,
    BiasSummary,
    Report,
    MergedReport,
    Density,
    Diagnostics,
    Queries,
    Config,
    Scenario,
}

impl Schema {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cohorts => "cohorts",
            Self::Future => "future cohorts",
            Self::Truth => "truth",
            Self::Bias => "bias",
            Self::BiasSummary => "bias summary",
            Self::Report => "report",
            Self::MergedReport => "merged report",
            Self::Density => "density grid",
            Self::Diagnostics => "replicate diagnostics",
            Self::Queries => "queries",
            Self::Config => "run config",
            Self::Scenario => "scenario",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCsvRow {
    pub replicate: usize,
    pub cohort_id: String,
    pub study: String,
    pub tumor: String,
    pub agent: String,
    pub biomarker: String,
    pub alpha: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsCsvRow {
    pub replicate: usize,
    pub chain: usize,
    pub invariant_checks: u64,
    pub invariant_failures: u64,
    pub latent_proposals: u64,
    pub latent_moves: u64,
    pub fallback_cohorts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedReportRow {
    pub source: String,
    pub query: String,
    pub target: String,
    pub kind: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub prob_positive: Option<f64>,
    pub n_draws: usize,
}

pub fn detect(path: &Path) -> Result<Schema> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => return Ok(Schema::Queries),
        Some("toml") => {
            let text = std::fs::read_to_string(path)?;
            return Ok(if toml::from_str::<ScenarioSpec>(&text).is_ok() && toml::from_str::<RunConfig>(&text).is_err() {
                Schema::Scenario
            } else {
                Schema::Config
            });
        }
        _ => {}
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let has = |c: &str| header.iter().any(|h| h == c);
    Ok(if has("censor_class") {
        Schema::Cohorts
    } else if has("therapy_type") && has("cohort_id") {
        Schema::Future
    } else if has("alpha") && has("replicate") {
        Schema::Truth
    } else if has("iqr") && has("method") {
        Schema::BiasSummary
    } else if has("bias") && has("method") {
        Schema::Bias
    } else if has("query") && has("source") {
        Schema::MergedReport
    } else if has("query") && has("kind") {
        Schema::Report
    } else if has("density_mean") {
        Schema::Density
    } else if has("invariant_failures") {
        Schema::Diagnostics
    } else {
        bail!("unrecognized header: {}", header.join(","))
    })
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn ordered(lower: f64, estimate: f64, upper: f64) -> bool {
    lower <= estimate && estimate <= upper
}

/// Checks one file and returns a one-line description.
pub fn check(path: &Path) -> Result<String> {
    let schema = detect(path).with_context(|| format!("{}", path.display()))?;
    let detail = check_as(path, schema).with_context(|| format!("{} ({})", path.display(), schema.name()))?;
    Ok(format!("{}: ok ({}, {detail})", path.display(), schema.name()))
}

fn check_as(path: &Path, schema: Schema) -> Result<String> {
    let nonempty = |n: usize| if n == 0 { bail!("no rows") } else { Ok(format!("{n} rows")) };
    match schema {
        Schema::Cohorts => {
            let c = read_cohorts_path(path)?;
            if c.is_empty() {
                bail!("no cohorts");
            }
            let count = |k: CensorClass| c.iter().filter(|x| x.censor_class == k).count();
            Ok(format!(
                "{} cohorts, {} exact-pattern, {} count-known, {} unknown, {} without l, {} without h",
                c.len(),
                count(CensorClass::ExactPattern),
                count(CensorClass::CountKnown),
                count(CensorClass::Unknown),
                c.iter().filter(|x| x.triple.lower.is_none()).count(),
                c.iter().filter(|x| x.triple.upper.is_none()).count(),
            ))
        }
        Schema::Future => nonempty(read_future_path(path)?.len()),
        Schema::Truth => {
            let rows: Vec<TruthCsvRow> = read_csv(path)?;
            if let Some(r) = rows.iter().find(|r| !(r.median > 0.0 && r.alpha > 0.0)) {
                bail!("cohort {}: median and alpha must be positive", r.cohort_id);
            }
            nonempty(rows.len())
        }
        Schema::Bias => {
            let rows: Vec<BiasRow> = read_csv(path)?;
            if let Some(r) = rows.iter().find(|r| !all_finite(&[r.bias, r.estimate, r.truth])) {
                bail!("replicate {} {} {}: non-finite value", r.replicate, r.cell, r.method);
            }
            nonempty(rows.len())
        }
        Schema::BiasSummary => nonempty(read_csv::<BiasSummaryRow>(path)?.len()),
        Schema::Report => {
            let rows: Vec<ReportCsvRow> = read_csv(path)?;
            if let Some(r) = rows.iter().find(|r| !ordered(r.lower, r.estimate, r.upper)) {
                bail!("query {}: interval does not contain the estimate", r.query);
            }
            nonempty(rows.len())
        }
        Schema::MergedReport => nonempty(read_csv::<MergedReportRow>(path)?.len()),
        Schema::Density => {
            let rows: Vec<DensityRow> = read_csv(path)?;
            if let Some(r) = rows.iter().find(|r| {
                !(r.t >= 0.0 && r.density_lower >= 0.0 && r.survival_lower >= 0.0 && r.survival_upper <= 1.0 + 1e-12)
            }) {
                bail!("cohort {} at t = {}: values out of range", r.cohort_id, r.t);
            }
            nonempty(rows.len())
        }
        Schema::Diagnostics => nonempty(read_csv::<DiagnosticsCsvRow>(path)?.len()),
        Schema::Queries => {
            let q: Vec<QuerySpec> = crate::io::read_json(path)?;
            if let Some(bad) = q.iter().find(|q| q.group.cohorts.is_empty() || !(q.level > 0.0 && q.level < 1.0)) {
                bail!("query {}: needs cohorts and a level in (0, 1)", bad.name);
            }
            nonempty(q.len()).map(|_| format!("{} queries", q.len()))
        }
        Schema::Config => {
            let cfg = RunConfig::load(Some(path))?;
            cfg.fit.validate()?;
            cfg.simulation.scenario.validate()?;
            Ok("valid".into())
        }
        Schema::Scenario => {
            let s: ScenarioSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
            s.validate()?;
            Ok(format!("{} cells", s.cells.len()))
        }
    }
}
