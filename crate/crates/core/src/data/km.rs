//! Kaplan-Meier estimator with Greenwood confidence bands and the reported-triple map.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::partition::Triple;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandTransform {
    Plain,
    #[default]
    Log,
    LogLog,
}

impl std::str::FromStr for BandTransform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "log" => Ok(Self::Log),
            "log-log" | "loglog" => Ok(Self::LogLog),
            _ => Err(Error::Config(format!("unknown band transform {s:?}"))),
        }
    }
}

/// Survival and band values just after each distinct event time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub surv: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn normal_quantile(conf_level: f64) -> Result<f64> {
    if !(conf_level > 0.0 && conf_level <= 1.0) {
        return Err(Error::Domain(format!("confidence level {conf_level} outside (0, 1]")));
    }
    if conf_level == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(Normal::standard().inverse_cdf(0.5 + conf_level / 2.0))
}

/// Bands from Ŝ and the Greenwood sum Σ d/(n(n−d)).
fn bands(s: f64, gw: f64, z: f64, transform: BandTransform) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 1.0);
    }
    let se = gw.sqrt();
    let (lo, hi) = match transform {
        BandTransform::Plain => (s - z * s * se, s + z * s * se),
        BandTransform::Log => (s * (-z * se).exp(), s * (z * se).exp()),
        BandTransform::LogLog => {
            if s >= 1.0 {
                (1.0, 1.0)
            } else {
                let k = z * se / s.ln().abs();
                (s.powf(k.exp()), s.powf((-k).exp()))
            }
        }
    };
    let fix = |v: f64, fallback: f64| if v.is_nan() { fallback } else { v.clamp(0.0, 1.0) };
    (fix(lo, 0.0), fix(hi, 1.0))
}

/// Product-limit estimate from observed times and event indicators.
pub fn km_with_greenwood(times: &[f64], events: &[bool], conf_level: f64, transform: BandTransform) -> Result<KmCurve> {
    if times.len() != events.len() {
        return Err(Error::Estimation("times and indicators differ in length".into()));
    }
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Estimation("observed times must be positive".into()));
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::Estimation("no events".into()));
    }
    let z = normal_quantile(conf_level)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    // events precede censorings at tied times
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(events[b].cmp(&events[a])));
    let mut curve = KmCurve::default();
    let (mut s, mut gw) = (1.0, 0.0);
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let (mut d, mut removed) = (0usize, 0usize);
        while k < order.len() && times[order[k]] == t {
            d += events[order[k]] as usize;
            removed += 1;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            gw += if at_risk > d { d as f64 / (at_risk as f64 * (at_risk - d) as f64) } else { f64::INFINITY };
            let (lo, hi) = bands(s, gw, z, transform);
            curve.times.push(t);
            curve.surv.push(s);
            curve.lower.push(lo);
            curve.upper.push(hi);
        }
        at_risk -= removed;
    }
    Ok(curve)
}

impl KmCurve {
    fn first_at_or_below(values: &[f64], times: &[f64]) -> Option<f64> {
        values.iter().position(|v| *v <= 0.5).map(|i| times[i])
    }

    /// (ℓ, m, h): first event times where the lower band, Ŝ and the upper band reach 0.5.
    pub fn triple(&self) -> Result<Triple<f64>> {
        let m = Self::first_at_or_below(&self.surv, &self.times).ok_or(Error::MedianUndefined)?;
        let l = Self::first_at_or_below(&self.lower, &self.times);
        let h = Self::first_at_or_below(&self.upper, &self.times);
        Ok(Triple { lower: l, median: m, upper: h })
    }

    /// Indices (into the event-time list) of the three crossings.
    pub fn crossing_indices(&self) -> (Option<usize>, Option<usize>, Option<usize>) {
        let f = |v: &[f64]| v.iter().position(|x| *x <= 0.5);
        (f(&self.lower), f(&self.surv), f(&self.upper))
    }
}

pub fn derive_summary(times: &[f64], events: &[bool], conf_level: f64, transform: BandTransform) -> Result<Triple<f64>> {
    km_with_greenwood(times, events, conf_level, transform)?.triple()
}
