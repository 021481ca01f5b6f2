//! Similarity kernel, GP node moments and deep-level beta parameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{mvn::min_eigenvalue, trigamma};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Biomarker {
    Positive,
    Negative,
}

impl Biomarker {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pos" | "positive" | "+" | "1" => Ok(Self::Positive),
            "neg" | "negative" | "-" | "0" => Ok(Self::Negative),
            other => Err(Error::Domain(format!("unknown biomarker status {other:?}"))),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Self::Positive => "pos",
            Self::Negative => "neg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovariateVector {
    pub study: String,
    pub biomarker: Biomarker,
    pub tumor: String,
    pub agent: String,
    pub phase: String,
    pub line: String,
    pub therapy_type: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelWeights<T> {
    pub study: T,
    pub biomarker: T,
    pub tumor: T,
    pub agent: T,
    pub phase: T,
    pub line: T,
    pub therapy_type: T,
    pub nugget: T,
}

impl<T: Real> Default for KernelWeights<T> {
    fn default() -> Self {
        Self {
            study: T::one(),
            biomarker: T::c(0.5),
            tumor: T::c(2.0),
            agent: T::c(2.0),
            phase: T::c(0.5),
            line: T::c(0.5),
            therapy_type: T::c(0.5),
            nugget: T::one(),
        }
    }
}

impl<T: Real> KernelWeights<T> {
    /// Tumor, agent and biomarker rules only (plus study and nugget).
    pub fn simulation() -> Self {
        Self { phase: T::zero(), line: T::zero(), therapy_type: T::zero(), ..Self::default() }
    }

    pub fn normalizer(&self) -> T {
        self.nugget + self.study + self.biomarker + self.tumor + self.agent + self.phase + self.line + self.therapy_type
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.study, self.biomarker, self.tumor, self.agent, self.phase, self.line, self.therapy_type, self.nugget];
        if all.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Config("kernel weights must be finite and non-negative".into()));
        }
        if !(self.normalizer() > T::zero()) {
            return Err(Error::Config("kernel weights sum to zero".into()));
        }
        Ok(())
    }
}

fn unnormalized<T: Real>(x: &CovariateVector, y: &CovariateVector, same_cohort: bool, w: &KernelWeights<T>) -> T {
    if same_cohort {
        return w.normalizer();
    }
    let ind = |b: bool| if b { T::one() } else { T::zero() };
    let mut s = w.study * ind(x.study == y.study);
    if x.biomarker == y.biomarker {
        let tumor = x.tumor == y.tumor && !x.tumor.eq_ignore_ascii_case("other");
        s = s
            + w.biomarker
            + w.tumor * ind(tumor)
            + w.agent * ind(x.agent == y.agent)
            + w.phase * ind(x.phase == y.phase)
            + w.line * ind(x.line == y.line)
            + w.therapy_type * ind(x.therapy_type == y.therapy_type);
    }
    s
}

/// R(x, x′) for two cohorts; `same_cohort` switches on the nugget term.
pub fn similarity<T: Real>(x: &CovariateVector, y: &CovariateVector, same_cohort: bool, w: &KernelWeights<T>) -> T {
    unnormalized(x, y, same_cohort, w) / w.normalizer()
}

#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
    /// Extra nugget added to restore positive semi-definiteness (0 when none was needed).
    pub repair: f64,
}

pub fn build_correlation_matrix(covs: &[CovariateVector], w: &KernelWeights<f64>) -> Result<CorrelationMatrix> {
    w.validate()?;
    let n = covs.len();
    let total = w.normalizer();
    let s = DMatrix::from_fn(n, n, |i, j| unnormalized(&covs[i], &covs[j], i == j, w));
    let lambda = min_eigenvalue(&s) / total;
    if lambda >= -1e-8 {
        return Ok(CorrelationMatrix { matrix: s / total, repair: 0.0 });
    }
    let delta = -lambda * total + 1e-8 * total;
    log::warn!("similarity matrix not PSD (min eigenvalue {lambda:.3e}); nugget increased by {delta:.3e}");
    let repaired = (s + DMatrix::identity(n, n) * delta) / (total + delta);
    Ok(CorrelationMatrix { matrix: repaired, repair: delta })
}

/// Logit-normal moments (0, 2ψ′(c(d+1)²)) for child level `d`.
pub fn marginal_moments<T: Real>(d: usize, c: T) -> Result<(T, T)> {
    if d < 1 || !(c > T::zero()) {
        return Err(Error::Domain(format!("marginal moments need d >= 1 and c > 0, got d={d}, c={c}")));
    }
    let a = c * T::from_usize_lossy((d + 1) * (d + 1));
    Ok((T::zero(), T::c(2.0) * trigamma(a)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// α = c·(d+1)²
    #[default]
    Continuous,
    /// α = c·d²
    Squared,
}

/// Symmetric beta parameter for child level `d`.
pub fn deep_beta_params<T: Real>(d: usize, c: T, rule: AlphaRule) -> T {
    let k = match rule {
        AlphaRule::Continuous => d + 1,
        AlphaRule::Squared => d,
    };
    c * T::from_usize_lossy(k * k)
}
