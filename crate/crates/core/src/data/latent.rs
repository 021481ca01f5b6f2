//! Patient-level latent data consistent with a reported triple.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::cohort::{CensorClass, CohortSummary};
use crate::data::km::{km_with_greenwood, BandTransform};
use crate::error::Result;
use crate::partition::Triple;
use crate::special::{sample_truncated, Law};

/// Imputed event and censoring times; subject j is an event iff T_j < C_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    #[serde(with = "crate::b64")]
    pub t: Vec<f64>,
    #[serde(with = "crate::b64")]
    pub c: Vec<f64>,
}

impl LatentState {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn is_event(&self, j: usize) -> bool {
        self.t[j] < self.c[j]
    }

    pub fn observed(&self) -> Vec<f64> {
        self.t.iter().zip(&self.c).map(|(t, c)| t.min(*c)).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        (0..self.len()).map(|j| self.is_event(j)).collect()
    }

    pub fn n_events(&self) -> usize {
        (0..self.len()).filter(|&j| self.is_event(j)).count()
    }
}

/// The summary the latent data must reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub triple: Triple<f64>,
    pub n_events: Option<usize>,
    pub conf_level: f64,
    pub transform: BandTransform,
}

impl Target {
    pub fn from_cohort(c: &CohortSummary, transform: BandTransform) -> Self {
        let n_events = match c.censor_class {
            CensorClass::CountKnown => c.n_events,
            CensorClass::ExactPattern => c.n_events.or(Some(c.n)),
            CensorClass::Unknown => None,
        };
        Self { triple: c.triple, n_events, conf_level: c.conf_level, transform }
    }

    pub fn summary(&self, state: &LatentState) -> Result<Triple<f64>> {
        km_with_greenwood(&state.observed(), &state.events(), self.conf_level, self.transform)?.triple()
    }

    /// ABC match: equal median, equal reported bounds, equal event count when known.
    pub fn matches(&self, state: &LatentState) -> bool {
        if self.n_events.is_some_and(|e| e != state.n_events()) {
            return false;
        }
        let Ok(s) = self.summary(state) else { return false };
        s.median == self.triple.median
            && self.triple.lower.is_none_or(|l| s.lower == Some(l))
            && self.triple.upper.is_none_or(|h| s.upper == Some(h))
    }

    /// Reported values that pin order statistics, ascending.
    pub fn anchors(&self) -> Vec<f64> {
        [self.triple.lower, Some(self.triple.median), self.triple.upper].into_iter().flatten().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    Q1,
    Q2,
    DirectGibbs,
}

impl MoveKind {
    /// Move used for one latent refresh under the cohort-class policy.
    pub fn for_class<R: Rng + ?Sized>(class: CensorClass, rng: &mut R) -> Self {
        match class {
            CensorClass::ExactPattern => Self::DirectGibbs,
            CensorClass::CountKnown => Self::Q1,
            CensorClass::Unknown => {
                if rng.random_bool(0.5) {
                    Self::Q1
                } else {
                    Self::Q2
                }
            }
        }
    }
}

fn segment(anchors: &[f64], x: f64) -> (f64, f64) {
    let k = anchors.partition_point(|a| *a <= x);
    let a = if k == 0 { 0.0 } else { anchors[k - 1] };
    let b = anchors.get(k).copied().unwrap_or(f64::INFINITY);
    (a, b)
}

fn draw<L: Law<f64> + ?Sized, R: Rng + ?Sized>(law: &L, rng: &mut R) -> f64 {
    sample_truncated(law, 0.0, f64::INFINITY, rng).unwrap_or_else(|_| law.inv_cdf(0.5))
}

/// Crossing ranks (0-based) of the KM curve for a rank-ordered event pattern.
fn pattern_crossings(pattern: &[bool], target: &Target) -> Result<(Option<usize>, Option<usize>, Option<usize>)> {
    let times: Vec<f64> = (1..=pattern.len()).map(|r| r as f64).collect();
    let s = km_with_greenwood(&times, pattern, target.conf_level, target.transform)?.triple()?;
    let rank = |t: f64| t as usize - 1;
    Ok((s.lower.map(rank), Some(rank(s.median)), s.upper.map(rank)))
}

fn censoring_patterns(n: usize, events: usize) -> Vec<Vec<bool>> {
    let censored = n - events;
    if censored == 0 {
        return vec![vec![true; n]];
    }
    let tail: Vec<bool> = (0..n).map(|r| r < events).collect();
    let head: Vec<bool> = (0..n).map(|r| r >= censored).collect();
    let mut spread = vec![true; n];
    for i in 0..censored {
        let r = ((i + 1) * n) / (censored + 1);
        spread[r.min(n - 1)] = false;
    }
    let mut out = vec![tail, spread, head];
    out.dedup();
    out
}

/// Places anchors at `ranks` and fills the remaining ranks from G truncated between anchors.
fn fill<G: Law<f64> + ?Sized, H: Law<f64> + ?Sized, R: Rng + ?Sized>(
    pattern: &[bool],
    anchors: &[(usize, f64)],
    g: &G,
    h: &H,
    rng: &mut R,
) -> Result<LatentState> {
    let n = pattern.len();
    let mut x = vec![f64::NAN; n];
    for &(r, v) in anchors {
        x[r] = v;
    }
    let mut bounds: Vec<(usize, f64)> = Vec::with_capacity(anchors.len() + 2);
    bounds.push((usize::MAX, 0.0));
    bounds.extend_from_slice(anchors);
    bounds.push((n, f64::INFINITY));
    for w in bounds.windows(2) {
        let first = w[0].0.wrapping_add(1);
        let ranks = first..w[1].0;
        let mut vals = ranks.clone().map(|_| sample_truncated(g, w[0].1, w[1].1, rng)).collect::<Result<Vec<_>>>()?;
        vals.sort_by(f64::total_cmp);
        for (r, v) in ranks.zip(vals) {
            x[r] = v;
        }
    }
    let mut state = LatentState { t: vec![0.0; n], c: vec![0.0; n] };
    for r in 0..n {
        if pattern[r] {
            state.t[r] = x[r];
            state.c[r] = sample_truncated(h, x[r], f64::INFINITY, rng)?;
        } else {
            state.c[r] = x[r];
            state.t[r] = sample_truncated(g, x[r], f64::INFINITY, rng)?;
        }
    }
    Ok(state)
}

/// A state reproducing `target`, starting from the all-event pattern; returns the target actually met.
pub fn initialize_latent<G: Law<f64> + ?Sized, H: Law<f64> + ?Sized, R: Rng + ?Sized>(
    target: &Target,
    n: usize,
    g: &G,
    h: &H,
    rng: &mut R,
) -> Result<(LatentState, Target)> {
    let events = target.n_events.unwrap_or(n).min(n);
    let patterns = censoring_patterns(n, events);
    let s = &target.triple;
    for pattern in &patterns {
        let Ok((rl, rm, rh)) = pattern_crossings(pattern, target) else { continue };
        let rm = rm.expect("median crossing");
        let mut anchors = Vec::new();
        if let Some(l) = s.lower {
            match rl {
                Some(r) if r < rm => anchors.push((r, l)),
                _ => continue,
            }
        }
        anchors.push((rm, s.median));
        if let Some(u) = s.upper {
            match rh {
                Some(r) if r > rm => anchors.push((r, u)),
                _ => continue,
            }
        }
        let state = fill(pattern, &anchors, g, h, rng)?;
        if target.matches(&state) {
            return Ok((state, target.clone()));
        }
    }
    // nearest achievable: anchor what the first pattern allows and adopt its summary
    let pattern = &patterns[0];
    let (rl, rm, rh) = pattern_crossings(pattern, target)?;
    let rm = rm.expect("median crossing");
    let mut anchors = Vec::new();
    if let (Some(l), Some(r)) = (s.lower, rl) {
        if r < rm {
            anchors.push((r, l));
        }
    }
    anchors.push((rm, s.median));
    if let (Some(u), Some(r)) = (s.upper, rh) {
        if r > rm {
            anchors.push((r, u));
        }
    }
    let state = fill(pattern, &anchors, g, h, rng)?;
    let achieved = Target { triple: target.summary(&state)?, n_events: target.n_events.map(|_| state.n_events()), ..target.clone() };
    log::warn!(
        "reported summary {:?} (n = {n}) is not reproducible; using nearest achievable {:?}",
        target.triple,
        achieved.triple
    );
    Ok((state, achieved))
}

/// Gap around subject `s`: open interval between neighbouring observed times of the others.
pub fn gap(state: &LatentState, s: usize) -> (f64, f64) {
    let x = state.t[s].min(state.c[s]);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for j in 0..state.len() {
        if j == s {
            continue;
        }
        let y = state.t[j].min(state.c[j]);
        if y < x {
            lo = lo.max(y);
        } else if y > x {
            hi = hi.min(y);
        }
    }
    (lo, hi)
}

/// Metropolis-Hastings ratio of a flip move inside gap `i`.
pub fn q2_ratio<G: Law<f64> + ?Sized, H: Law<f64> + ?Sized>(
    g: &G,
    h: &H,
    i: (f64, f64),
    old: (f64, f64),
    new: (f64, f64),
) -> f64 {
    let (g_i, h_i) = (g.mass(i.0, i.1), h.mass(i.0, i.1));
    let (t_old, c_old) = old;
    let (t_new, c_new) = new;
    if t_old < c_old {
        h_i * g.sf(c_new) / (g_i * h.sf(t_old))
    } else {
        g_i * h.sf(t_new) / (h_i * g.sf(c_old))
    }
}

/// Replaces subjects `j` and `k` and keeps the change iff the target still matches.
pub fn apply_q1(state: &mut LatentState, target: &Target, moves: &[(usize, f64, f64)]) -> bool {
    let old: Vec<(usize, f64, f64)> = moves.iter().map(|&(j, _, _)| (j, state.t[j], state.c[j])).collect();
    for &(j, t, c) in moves {
        state.t[j] = t;
        state.c[j] = c;
    }
    if target.matches(state) {
        return true;
    }
    for (j, t, c) in old {
        state.t[j] = t;
        state.c[j] = c;
    }
    false
}

fn direct_gibbs<G: Law<f64> + ?Sized, H: Law<f64> + ?Sized, R: Rng + ?Sized>(
    state: &mut LatentState,
    target: &Target,
    g: &G,
    h: &H,
    rng: &mut R,
) -> bool {
    let anchors = target.anchors();
    let check = (0..state.len()).any(|j| !state.is_event(j));
    let mut changed = false;
    for j in 0..state.len() {
        let (t0, c0) = (state.t[j], state.c[j]);
        if t0 < c0 {
            if anchors.contains(&t0) {
                if let Ok(c) = sample_truncated(h, t0, f64::INFINITY, rng) {
                    state.c[j] = c;
                }
                continue;
            }
            let (a, b) = segment(&anchors, t0);
            let Ok(t) = sample_truncated(g, a, b.min(c0), rng) else { continue };
            let Ok(c) = sample_truncated(h, t, f64::INFINITY, rng) else { continue };
            state.t[j] = t;
            state.c[j] = c;
        } else {
            let (a, b) = segment(&anchors, c0);
            let Ok(c) = sample_truncated(h, a, b.min(t0), rng) else { continue };
            let Ok(t) = sample_truncated(g, c, f64::INFINITY, rng) else { continue };
            state.t[j] = t;
            state.c[j] = c;
        }
        if check && !target.matches(state) {
            state.t[j] = t0;
            state.c[j] = c0;
        } else {
            changed = true;
        }
    }
    changed
}

/// One latent transition; returns whether the state changed.
pub fn mh_latent_step<G: Law<f64> + ?Sized, H: Law<f64> + ?Sized, R: Rng + ?Sized>(
    state: &mut LatentState,
    target: &Target,
    g: &G,
    h: &H,
    kind: MoveKind,
    rng: &mut R,
) -> bool {
    let n = state.len();
    match kind {
        MoveKind::DirectGibbs => direct_gibbs(state, target, g, h, rng),
        MoveKind::Q1 => {
            let j = rng.random_range(0..n);
            let mut moves = vec![(j, draw(g, rng), draw(h, rng))];
            if n > 1 {
                let mut k = rng.random_range(0..n - 1);
                if k >= j {
                    k += 1;
                }
                moves.push((k, draw(g, rng), draw(h, rng)));
            }
            apply_q1(state, target, &moves)
        }
        MoveKind::Q2 => {
            let s = rng.random_range(0..n);
            let (t0, c0) = (state.t[s], state.c[s]);
            let i = gap(state, s);
            let proposal = if t0 < c0 {
                sample_truncated(h, i.0, i.1, rng).and_then(|c| Ok((sample_truncated(g, c, f64::INFINITY, rng)?, c)))
            } else {
                sample_truncated(g, i.0, i.1, rng).and_then(|t| Ok((t, sample_truncated(h, t, f64::INFINITY, rng)?)))
            };
            let Ok((t1, c1)) = proposal else { return false };
            let r = q2_ratio(g, h, i, (t0, c0), (t1, c1));
            if !(rng.random::<f64>() < r) {
                return false;
            }
            apply_q1(state, target, &[(s, t1, c1)])
        }
    }
}
