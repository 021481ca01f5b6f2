//! Event-time laws on [0, ∞) parameterized by their median.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Φ⁻¹(0.75): the median of |N(0, 1)|.
pub const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family<T> {
    Exponential,
    HalfNormal,
    HalfCauchy,
    /// Exponential and half-normal components sharing one median.
    Mixture { weights: [T; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec<T> {
    #[serde(flatten)]
    pub family: Family<T>,
    pub median: T,
}

/// A continuous law on [0, ∞) with enough structure for inverse-CDF sampling.
pub trait Law<T: Real> {
    fn cdf(&self, x: T) -> T;
    /// Survival function 1 − cdf, computed without cancellation where possible.
    fn sf(&self, x: T) -> T {
        T::one() - self.cdf(x)
    }
    /// ln sf(x), finite far beyond the point where sf underflows.
    fn ln_sf(&self, x: T) -> T {
        self.sf(x).ln()
    }
    fn pdf(&self, x: T) -> T;
    /// Inverse CDF for p in [0, 1).
    fn inv_cdf(&self, p: T) -> T;
    /// Inverse survival function for q in (0, 1].
    fn inv_sf(&self, q: T) -> T {
        self.inv_cdf(T::one() - q)
    }
    /// Mass of (lower, upper).
    fn mass(&self, lower: T, upper: T) -> T {
        if self.cdf(lower) > T::c(0.5) {
            self.sf(lower) - self.sf(upper)
        } else {
            self.cdf(upper) - self.cdf(lower)
        }
    }
}

impl<T: Real> DistributionSpec<T> {
    pub fn new(family: Family<T>, median: T) -> Result<Self> {
        if !(median > T::zero()) || !median.is_finite() {
            return Err(Error::Domain(format!("median must be positive, got {median}")));
        }
        if let Family::Mixture { weights } = family {
            let [a, b] = weights;
            if a < T::zero() || b < T::zero() || ((a + b) - T::one()).abs() > T::c(1e-9) {
                return Err(Error::Domain("mixture weights must be nonnegative and sum to 1".into()));
            }
        }
        Ok(Self { family, median })
    }

    pub fn exponential(median: T) -> Self {
        Self { family: Family::Exponential, median }
    }

    /// Exponential law with the given mean.
    pub fn exponential_mean(mean: T) -> Self {
        Self::exponential(mean * T::LN_2())
    }

    pub fn half_normal(median: T) -> Self {
        Self { family: Family::HalfNormal, median }
    }

    pub fn half_cauchy(scale: T) -> Self {
        Self { family: Family::HalfCauchy, median: scale }
    }

    pub fn mixture(median: T, exp_weight: T) -> Self {
        Self { family: Family::Mixture { weights: [exp_weight, T::one() - exp_weight] }, median }
    }

    /// Scale parameter of the underlying family (rate for exponential).
    pub fn exp_rate(&self) -> T {
        T::LN_2() / self.median
    }

    pub fn half_normal_scale(&self) -> T {
        self.median / T::c(HALF_NORMAL_MEDIAN)
    }

    /// Quantile with domain checking.
    pub fn quantile(&self, p: T) -> Result<T> {
        if !(p >= T::zero() && p < T::one()) {
            return Err(Error::Domain(format!("quantile level must lie in [0, 1), got {p}")));
        }
        Ok(self.inv_cdf(p))
    }

    fn component(&self, idx: usize) -> Self {
        let family = if idx == 0 { Family::Exponential } else { Family::HalfNormal };
        Self { family, median: self.median }
    }

    fn bisect(&self, target: T, upper_tail: bool) -> T {
        let (e, h) = (self.component(0), self.component(1));
        let (q0, q1) = if upper_tail {
            (e.inv_sf(target), h.inv_sf(target))
        } else {
            (e.inv_cdf(target), h.inv_cdf(target))
        };
        let (mut lo, mut hi) = if q0 < q1 { (q0, q1) } else { (q1, q0) };
        let tol = T::c(1e-10).min(T::root_tol());
        for _ in 0..300 {
            if hi - lo <= tol * (T::one() + hi.abs()) {
                break;
            }
            let mid = (lo + hi) * T::c(0.5);
            let below = if upper_tail { self.sf(mid) > target } else { self.cdf(mid) < target };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) * T::c(0.5)
    }
}

fn erf_t<T: Real>(x: T) -> T {
    T::c(erf::erf(x.f64()))
}

fn erfc_t<T: Real>(x: T) -> T {
    T::c(erf::erfc(x.f64()))
}

/// ln erfc(z) for z ≥ 0, switching to the asymptotic series where erfc underflows.
fn ln_erfc_t<T: Real>(z: T) -> T {
    if z < T::c(20.0) {
        return erfc_t(z).ln();
    }
    let w = T::one() / (z * z);
    let series = T::one() - w * T::c(0.5) + w * w * T::c(0.75) - w * w * w * T::c(1.875);
    -(z * z) - (z * T::PI().sqrt()).ln() + series.ln()
}

impl<T: Real> Law<T> for DistributionSpec<T> {
    fn cdf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        if x.is_infinite() {
            return T::one();
        }
        match self.family {
            Family::Exponential => -(-self.exp_rate() * x).exp_m1(),
            Family::HalfNormal => erf_t(x / (self.half_normal_scale() * T::SQRT_2())),
            Family::HalfCauchy => T::FRAC_2_PI() * (x / self.median).atan(),
            Family::Mixture { weights } => {
                weights[0] * self.component(0).cdf(x) + weights[1] * self.component(1).cdf(x)
            }
        }
    }

    fn sf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::one();
        }
        if x.is_infinite() {
            return T::zero();
        }
        match self.family {
            Family::Exponential => (-self.exp_rate() * x).exp(),
            Family::HalfNormal => erfc_t(x / (self.half_normal_scale() * T::SQRT_2())),
            Family::HalfCauchy => T::FRAC_2_PI() * (self.median / x).atan(),
            Family::Mixture { weights } => {
                weights[0] * self.component(0).sf(x) + weights[1] * self.component(1).sf(x)
            }
        }
    }

    fn ln_sf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        if x.is_infinite() {
            return T::neg_infinity();
        }
        match self.family {
            Family::Exponential => -self.exp_rate() * x,
            Family::HalfNormal => ln_erfc_t(x / (self.half_normal_scale() * T::SQRT_2())),
            Family::HalfCauchy => self.sf(x).ln(),
            Family::Mixture { weights } => {
                let terms: Vec<T> = (0..2)
                    .filter(|&k| weights[k] > T::zero())
                    .map(|k| weights[k].ln() + self.component(k).ln_sf(x))
                    .collect();
                let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
                if m == T::neg_infinity() {
                    return m;
                }
                m + terms.iter().map(|&t| (t - m).exp()).fold(T::zero(), |a, b| a + b).ln()
            }
        }
    }

    fn pdf(&self, x: T) -> T {
        if x < T::zero() || x.is_infinite() {
            return T::zero();
        }
        match self.family {
            Family::Exponential => {
                let r = self.exp_rate();
                r * (-r * x).exp()
            }
            Family::HalfNormal => {
                let s = self.half_normal_scale();
                let u = x / s;
                T::SQRT_2() / (s * T::PI().sqrt()) * (-(u * u) * T::c(0.5)).exp()
            }
            Family::HalfCauchy => {
                let u = x / self.median;
                T::FRAC_2_PI() / (self.median * (T::one() + u * u))
            }
            Family::Mixture { weights } => {
                weights[0] * self.component(0).pdf(x) + weights[1] * self.component(1).pdf(x)
            }
        }
    }

    fn inv_cdf(&self, p: T) -> T {
        if !(p > T::zero()) {
            return T::zero();
        }
        if p >= T::one() {
            return T::infinity();
        }
        match self.family {
            Family::Exponential => -(-p).ln_1p() / self.exp_rate(),
            Family::HalfNormal => {
                self.half_normal_scale() * T::SQRT_2() * T::c(erf::erf_inv(p.f64()))
            }
            Family::HalfCauchy => self.median * (T::FRAC_PI_2() * p).tan(),
            Family::Mixture { .. } => {
                if p > T::c(0.5) {
                    self.bisect(T::one() - p, true)
                } else {
                    self.bisect(p, false)
                }
            }
        }
    }

    fn inv_sf(&self, q: T) -> T {
        if !(q > T::zero()) {
            return T::infinity();
        }
        if q >= T::one() {
            return T::zero();
        }
        match self.family {
            Family::Exponential => -q.ln() / self.exp_rate(),
            Family::HalfNormal => {
                self.half_normal_scale() * T::SQRT_2() * T::c(erf::erfc_inv(q.f64()))
            }
            Family::HalfCauchy => self.median / (T::FRAC_PI_2() * q).tan(),
            Family::Mixture { .. } => {
                if q < T::c(0.5) {
                    self.bisect(q, true)
                } else {
                    self.bisect(T::one() - q, false)
                }
            }
        }
    }
}

/// Draws from `law` restricted to (lower, upper) by inverse-CDF sampling.
///
/// Works in survival space when the interval sits in the upper half of the
/// law so that tail intervals keep their relative precision.
pub fn sample_truncated<T: Real, L: Law<T> + ?Sized, R: Rng + ?Sized>(
    law: &L,
    lower: T,
    upper: T,
    rng: &mut R,
) -> Result<T> {
    if !(lower < upper) {
        return Err(Error::ZeroMass { lower: lower.f64(), upper: upper.f64() });
    }
    let upper_tail = law.cdf(lower) > T::c(0.5);
    let (a, b) = if upper_tail { (law.sf(upper), law.sf(lower)) } else { (law.cdf(lower), law.cdf(upper)) };
    if !(b > a) {
        if upper_tail {
            return sample_log_tail(law, lower, upper, rng);
        }
        return Err(Error::ZeroMass { lower: lower.f64(), upper: upper.f64() });
    }
    let mut x = lower;
    for _ in 0..32 {
        let u: f64 = rng.random();
        let p = a + (b - a) * T::c(u);
        x = if upper_tail { law.inv_sf(p) } else { law.inv_cdf(p) };
        if x > lower && x < upper {
            return Ok(x);
        }
    }
    // rounding pushed every draw onto an endpoint; fall back to the nearest interior point
    if x.is_nan() || x <= lower || (x >= upper && !upper.is_finite()) {
        x = lower + (upper - lower).min(lower.abs().max(T::one()) * T::epsilon());
    }
    if x >= upper {
        x = upper - (upper - lower) * T::epsilon();
    }
    Ok(x)
}

/// Truncated draw in log-survival space, for intervals whose survival mass underflows.
fn sample_log_tail<T: Real, L: Law<T> + ?Sized, R: Rng + ?Sized>(law: &L, lower: T, upper: T, rng: &mut R) -> Result<T> {
    let zero_mass = || Error::ZeroMass { lower: lower.f64(), upper: upper.f64() };
    let (lb, la) = (law.ln_sf(lower), law.ln_sf(upper));
    if !(lb > la) || !lb.is_finite() {
        return Err(zero_mass());
    }
    let r = (la - lb).exp();
    let u: f64 = rng.random();
    let target = lb + (r + T::c(u) * (T::one() - r)).ln();
    let mut lo = lower;
    let mut hi = upper;
    if !hi.is_finite() {
        let mut step = lower.abs().max(T::one());
        hi = lower + step;
        while law.ln_sf(hi) > target {
            step = step + step;
            hi = lower + step;
            if !hi.is_finite() {
                return Err(zero_mass());
            }
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::c(0.5);
        if !(mid > lo && mid < hi) {
            break;
        }
        if law.ln_sf(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = (lo + hi) * T::c(0.5);
    Ok(if x > lower && x < upper { x } else { lower + (upper - lower).min(lower.abs() * T::epsilon()) })
}
