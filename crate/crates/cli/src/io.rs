//! File formats owned by the command-line tool.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mvpt::kernel::{Biomarker, CovariateVector};
use mvpt::sampler::FutureCohort;
use mvpt::simulation::BiasRow;
use mvpt::summaries::{quantile_sorted, ReportRow};
use mvpt::Triple;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FUTURE_HEADER: [&str; 11] =
    ["study_id", "cohort_id", "biomarker", "tumor", "agent", "phase", "line", "therapy_type", "l", "m", "h"];

fn bound(s: &str, line: u64, name: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| anyhow!("line {line}: {name}: not a number: {s:?}"))?;
    Ok((v > 0.0 && v.is_finite()).then_some(v))
}

/// Future cohorts: covariates plus an optional partition anchor (l, m, h).
pub fn read_future<R: Read>(reader: R) -> Result<Vec<FutureCohort>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = [usize::MAX; 11];
    for (k, name) in FUTURE_HEADER.iter().enumerate() {
        match col(name) {
            Some(i) => idx[k] = i,
            None if k >= 8 => {}
            None => bail!("line 1: missing column {name}"),
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| if idx[k] == usize::MAX { "" } else { rec.get(idx[k]).unwrap_or("") };
        let cohort_id = get(1);
        if cohort_id.is_empty() || get(0).is_empty() {
            bail!("line {line}: study_id and cohort_id are required");
        }
        let biomarker = Biomarker::parse(get(2)).map_err(|e| anyhow!("line {line}: {e}"))?;
        let triple = match bound(get(9), line, "m")? {
            None => None,
            Some(m) => {
                let t = Triple::new(bound(get(8), line, "l")?, m, bound(get(10), line, "h")?);
                t.validate(cohort_id).map_err(|e| anyhow!("line {line}: {e}"))?;
                Some(t)
            }
        };
        out.push(FutureCohort {
            cohort_id: cohort_id.into(),
            covariates: CovariateVector {
                study: get(0).into(),
                biomarker,
                tumor: get(3).into(),
                agent: get(4).into(),
                phase: get(5).into(),
                line: get(6).into(),
                therapy_type: get(7).into(),
            },
            triple,
        });
    }
    let mut ids: Vec<&str> = out.iter().map(|c| c.cohort_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate future cohort id {:?}", w[0]);
    }
    Ok(out)
}

pub fn read_future_path(path: &Path) -> Result<Vec<FutureCohort>> {
    read_future(File::open(path).with_context(|| format!("opening {}", path.display()))?)
        .with_context(|| format!("reading future cohorts from {}", path.display()))
}

pub fn write_future<W: Write>(writer: W, future: &[FutureCohort]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FUTURE_HEADER)?;
    for f in future {
        let x = &f.covariates;
        let (l, m, h) = match &f.triple {
            Some(t) => (t.lower.map(|v| v.to_string()), Some(t.median.to_string()), t.upper.map(|v| v.to_string())),
            None => (None, None, None),
        };
        w.write_record([
            x.study.as_str(),
            f.cohort_id.as_str(),
            x.biomarker.short(),
            x.tumor.as_str(),
            x.agent.as_str(),
            x.phase.as_str(),
            x.line.as_str(),
            x.therapy_type.as_str(),
            l.as_deref().unwrap_or(""),
            m.as_deref().unwrap_or(""),
            h.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Flat form of a report row, as consumed by the plotting tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCsvRow {
    pub query: String,
    pub target: String,
    pub kind: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub prob_positive: Option<f64>,
    pub n_draws: usize,
}

impl From<&ReportRow> for ReportCsvRow {
    fn from(r: &ReportRow) -> Self {
        let target = serde_json::to_value(r.target).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        Self {
            query: r.query.clone(),
            target,
            kind: r.kind.clone(),
            estimate: r.estimate,
            lower: r.lower,
            upper: r.upper,
            prob_positive: r.prob_positive,
            n_draws: r.n_draws,
        }
    }
}

pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>();
    rows.with_context(|| format!("reading {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSummaryRow {
    pub estimand: String,
    pub cell: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

/// Groups realized bias by (estimand, cell, method) in first-appearance order.
pub fn summarize_bias(rows: &[BiasRow]) -> Vec<BiasSummaryRow> {
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let k = (r.estimand.as_str(), r.cell.as_str(), r.method.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(estimand, cell, method)| {
            let mut b: Vec<f64> = rows
                .iter()
                .filter(|r| r.estimand == estimand && r.cell == cell && r.method == method)
                .map(|r| r.bias)
                .collect();
            b.sort_by(f64::total_cmp);
            let (q25, q75) = (quantile_sorted(&b, 0.25), quantile_sorted(&b, 0.75));
            BiasSummaryRow {
                estimand: estimand.into(),
                cell: cell.into(),
                method: method.into(),
                n: b.len(),
                mean: b.iter().sum::<f64>() / b.len() as f64,
                median: quantile_sorted(&b, 0.5),
                q25,
                q75,
                iqr: q75 - q25,
            }
        })
        .collect()
}
