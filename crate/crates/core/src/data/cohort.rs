//! Cohort summaries and their CSV representation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Biomarker, CovariateVector};
use crate::partition::Triple;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensorClass {
    ExactPattern,
    CountKnown,
    Unknown,
}

impl CensorClass {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "exact" | "exact-pattern" => Ok(Self::ExactPattern),
            "count" | "count-known" => Ok(Self::CountKnown),
            "unknown" | "" => Ok(Self::Unknown),
            other => Err(Error::Domain(format!("unknown censor class {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExactPattern => "exact-pattern",
            Self::CountKnown => "count-known",
            Self::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort_id: String,
    pub covariates: CovariateVector,
    pub triple: Triple<f64>,
    pub n: usize,
    pub n_events: Option<usize>,
    pub censor_class: CensorClass,
    pub conf_level: f64,
}

impl CohortSummary {
    pub fn study_id(&self) -> &str {
        &self.covariates.study
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation { cohort: self.cohort_id.clone(), msg });
        self.triple.validate(&self.cohort_id)?;
        if self.n == 0 {
            return bad("sample size must be positive".into());
        }
        if let Some(e) = self.n_events {
            if e > self.n {
                return bad(format!("n_events {e} exceeds n {}", self.n));
            }
            if e == 0 {
                return bad("a reported median needs at least one event".into());
            }
        }
        if self.censor_class == CensorClass::CountKnown && self.n_events.is_none() {
            return bad("count-known cohorts need n_events".into());
        }
        if !(self.conf_level > 0.0 && self.conf_level < 1.0) {
            return bad(format!("conf_level {} outside (0, 1)", self.conf_level));
        }
        Ok(())
    }
}

pub const HEADER: [&str; 15] = [
    "study_id", "cohort_id", "biomarker", "tumor", "agent", "phase", "line", "therapy_type", "l", "m", "h", "n", "n_events",
    "censor_class", "conf_level",
];

fn parse_bound(s: &str, line: usize, name: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| Error::Parse { line, msg: format!("{name}: not a number: {s:?}") })?;
    Ok((v > 0.0 && v.is_finite()).then_some(v))
}

/// Reads and validates cohort rows; any failure names its line.
pub fn read_cohorts<R: Read>(reader: R) -> Result<Vec<CohortSummary>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = [0usize; 15];
    for (k, name) in HEADER.iter().enumerate() {
        idx[k] = match col(name) {
            Some(i) => i,
            None if *name == "conf_level" => usize::MAX,
            None => return Err(Error::Parse { line: 1, msg: format!("missing column {name}") }),
        };
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let need = |k: usize| -> Result<&str> {
            let v = get(k);
            if v.is_empty() {
                Err(Error::Parse { line, msg: format!("{} is empty", HEADER[k]) })
            } else {
                Ok(v)
            }
        };
        let biomarker = Biomarker::parse(need(2)?).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let covariates = CovariateVector {
            study: need(0)?.into(),
            biomarker,
            tumor: get(3).into(),
            agent: get(4).into(),
            phase: get(5).into(),
            line: get(6).into(),
            therapy_type: get(7).into(),
        };
        let m: f64 = need(9)?.parse().map_err(|_| Error::Parse { line, msg: format!("m: not a number: {:?}", get(9)) })?;
        let triple = Triple { lower: parse_bound(get(8), line, "l")?, median: m, upper: parse_bound(get(10), line, "h")? };
        let n: usize = need(11)?.parse().map_err(|_| Error::Parse { line, msg: format!("n: not an integer: {:?}", get(11)) })?;
        let n_events = match get(12) {
            "" => None,
            s => Some(s.parse().map_err(|_| Error::Parse { line, msg: format!("n_events: not an integer: {s:?}") })?),
        };
        let censor_class = CensorClass::parse(get(13)).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let conf_level = match if idx[14] == usize::MAX { "" } else { get(14) } {
            "" => 0.95,
            s => s.parse().map_err(|_| Error::Parse { line, msg: format!("conf_level: not a number: {s:?}") })?,
        };
        let c = CohortSummary { cohort_id: need(1)?.into(), covariates, triple, n, n_events, censor_class, conf_level };
        c.validate()?;
        out.push(c);
    }
    let mut ids: Vec<&str> = out.iter().map(|c| c.cohort_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation { cohort: w[0].into(), msg: "duplicate cohort id".into() });
    }
    Ok(out)
}

pub fn read_cohorts_path(path: &Path) -> Result<Vec<CohortSummary>> {
    read_cohorts(std::fs::File::open(path)?)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn write_cohorts<W: Write>(writer: W, cohorts: &[CohortSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for c in cohorts {
        let x = &c.covariates;
        w.write_record([
            x.study.clone(),
            c.cohort_id.clone(),
            x.biomarker.short().into(),
            x.tumor.clone(),
            x.agent.clone(),
            x.phase.clone(),
            x.line.clone(),
            x.therapy_type.clone(),
            c.triple.lower.map_or("0".into(), fmt_f),
            fmt_f(c.triple.median),
            c.triple.upper.map_or("inf".into(), fmt_f),
            c.n.to_string(),
            c.n_events.map_or(String::new(), |e| e.to_string()),
            c.censor_class.as_str().into(),
            fmt_f(c.conf_level),
        ])?;
    }
    w.flush()?;
    Ok(())
}
