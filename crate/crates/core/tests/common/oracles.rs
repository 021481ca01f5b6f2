//! Independent numerical oracles shared by integration and acceptance tests.

use std::collections::BTreeMap;

use mvpt::data::{derive_summary, initialize_latent, mh_latent_step, BandTransform, CensorClass, CountsTable, LatentState, MoveKind, Target};
use mvpt::partition::PartitionTree;
use mvpt::rng::{stream, Module};
use mvpt::special::{DistributionSpec, Law};

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Posterior mean and variance of expit(Z) for Z ~ N(mu, var) and a binomial count (n0 of n).
pub fn expit_posterior_moments(mu: f64, var: f64, n0: u32, n: u32) -> (f64, f64) {
    let sd = var.sqrt();
    let m = 40_000;
    let (a, b) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let h = (b - a) / m as f64;
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for k in 0..=m {
        let z = a + k as f64 * h;
        let simpson = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let p = expit(z);
        let lw = -0.5 * ((z - mu) / sd).powi(2) + n0 as f64 * p.ln() + (n - n0) as f64 * (1.0 - p).ln();
        let w = simpson * lw.exp();
        w0 += w;
        w1 += w * p;
        w2 += w * p * p;
    }
    let mean = w1 / w0;
    (mean, w2 / w0 - mean * mean)
}

/// Standard error of a mean from non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub struct StationarityRow {
    pub counts: Vec<u32>,
    pub expected: f64,
    pub observed: f64,
    pub se: f64,
}

/// Five subjects, event times G = Exp(median 2), censoring H = Exp(mean 4), 50% bands, ℓ not reported.
pub struct StationaritySetup {
    pub g: DistributionSpec<f64>,
    pub h: DistributionSpec<f64>,
    pub target: Target,
    pub tree: PartitionTree<f64>,
}

impl StationaritySetup {
    pub fn new(class: CensorClass) -> Self {
        let g = DistributionSpec::exponential(2.0);
        let h = DistributionSpec::exponential_mean(4.0);
        let times = [0.4, 1.1, 1.7, 2.6, 4.5];
        let full = derive_summary(&times, &[true; 5], 0.5, BandTransform::Log).unwrap();
        assert_eq!((full.lower, full.median, full.upper), (Some(1.1), 1.7, Some(2.6)));
        let triple = mvpt::Triple { lower: None, ..full };
        let n_events = match class {
            CensorClass::CountKnown => Some(4),
            CensorClass::ExactPattern => Some(5),
            CensorClass::Unknown => None,
        };
        let target = Target { triple, n_events, conf_level: 0.5, transform: BandTransform::Log };
        let tree = PartitionTree::build("s", &triple, &DistributionSpec::half_cauchy(3.5), 2).unwrap();
        Self { g, h, target, tree }
    }

    /// Exact level-2 count law by enumerating ordered configurations of the free subjects.
    ///
    /// Anchors are fixed events. A free subject has observed time X ~ Exp(λ_G + λ_H) and an
    /// independent event indicator; a censored subject has T − X ~ G by memorylessness. Each
    /// configuration fixes the match outcome, and its mass is an ordered integral in CDF space
    /// evaluated by cumulative sums.
    pub fn enumerate(&self) -> BTreeMap<Vec<u32>, f64> {
        let anchors = self.target.anchors();
        let free = 5 - anchors.len();
        let (lg, lh) = (self.g.exp_rate(), self.h.exp_rate());
        let lam = lg + lh;
        let p_event = lg / lam;
        let fx = |x: f64| if x.is_finite() { 1.0 - (-lam * x).exp() } else { 1.0 };
        let inv = |u: f64| -(1.0 - u).ln() / lam;
        let iv: Vec<(f64, f64)> = (0..4).map(|i| self.tree.interval(mvpt::NodePath::new(2, i))).collect();
        let mut cuts: Vec<f64> = iv.iter().map(|v| v.0).chain(anchors.iter().copied()).chain([f64::INFINITY]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let n_cells = cuts.len() - 1;
        let interval_of = |x: f64| self.tree.locate(x, 2).index as usize;
        let cell_interval: Vec<usize> = (0..n_cells).map(|c| interval_of(inv(0.5 * (fx(cuts[c]) + fx(cuts[c + 1]))))).collect();

        let m = 3000;
        let mut grid_x = Vec::new();
        let mut grid_w = Vec::new();
        let mut grid_cell = Vec::new();
        for c in 0..n_cells {
            let (ua, ub) = (fx(cuts[c]), fx(cuts[c + 1]));
            for j in 0..m {
                grid_x.push(inv(ua + (j as f64 + 0.5) / m as f64 * (ub - ua)));
                grid_w.push((ub - ua) / m as f64);
                grid_cell.push(c);
            }
        }
        let censored_law: Vec<[f64; 4]> = grid_x
            .iter()
            .map(|&x| {
                let sx = self.g.sf(x);
                let mut p = [0.0; 4];
                for (k, &(a, b)) in iv.iter().enumerate() {
                    let lo = a.max(x);
                    if lo < b {
                        p[k] = (self.g.sf(lo) - self.g.sf(b)) / sx;
                    }
                }
                p
            })
            .collect();
        let mut base = vec![0u32; 4];
        for &a in &anchors {
            base[interval_of(a)] += 1;
        }

        let mut law: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut cells = vec![0usize; free];
        let mut events = vec![true; free];
        let factorial: f64 = (1..=free).map(|k| k as f64).product();
        loop {
            for mask in 0..(1u32 << free) {
                for (i, e) in events.iter_mut().enumerate() {
                    *e = mask & (1 << i) != 0;
                }
                if !self.configuration_matches(&anchors, &cuts, &cells, &events, &fx, &inv) {
                    continue;
                }
                let censored: Vec<usize> = (0..free).filter(|&i| !events[i]).collect();
                for choice in 0..4usize.pow(censored.len() as u32) {
                    let mut t_interval = vec![0usize; free];
                    let mut rest = choice;
                    for &i in &censored {
                        t_interval[i] = rest % 4;
                        rest /= 4;
                    }
                    let phi = |i: usize, j: usize| -> f64 {
                        if grid_cell[j] != cells[i] {
                            0.0
                        } else if events[i] {
                            p_event
                        } else {
                            (1.0 - p_event) * censored_law[j][t_interval[i]]
                        }
                    };
                    let mut a: Vec<f64> = (0..grid_x.len()).map(|j| phi(0, j)).collect();
                    for i in 1..free {
                        let mut cum = 0.0;
                        let mut next = vec![0.0; grid_x.len()];
                        for j in 0..grid_x.len() {
                            let here = a[j] * grid_w[j];
                            next[j] = phi(i, j) * (cum + 0.5 * here);
                            cum += here;
                        }
                        a = next;
                    }
                    let mass: f64 = a.iter().zip(&grid_w).map(|(v, w)| v * w).sum::<f64>() * factorial;
                    if mass > 0.0 {
                        let mut counts = base.clone();
                        for i in 0..free {
                            counts[if events[i] { cell_interval[cells[i]] } else { t_interval[i] }] += 1;
                        }
                        *law.entry(counts).or_default() += mass;
                    }
                }
            }
            // next nondecreasing cell sequence
            let Some(i) = (0..free).rev().find(|&i| cells[i] + 1 < n_cells) else { break };
            cells[i] += 1;
            for k in i + 1..free {
                cells[k] = cells[i];
            }
        }
        let total: f64 = law.values().sum();
        law.values_mut().for_each(|v| *v /= total);
        law
    }

    fn configuration_matches(
        &self,
        anchors: &[f64],
        cuts: &[f64],
        cells: &[usize],
        events: &[bool],
        fx: &dyn Fn(f64) -> f64,
        inv: &dyn Fn(f64) -> f64,
    ) -> bool {
        let mut t = anchors.to_vec();
        let mut c = vec![1e9; anchors.len()];
        for (i, (&cell, &ev)) in cells.iter().zip(events).enumerate() {
            let same = cells.iter().filter(|&&x| x == cell).count();
            let rank = cells[..i].iter().filter(|&&x| x == cell).count();
            let (ua, ub) = (fx(cuts[cell]), fx(cuts[cell + 1]));
            let x = inv(ua + (rank + 1) as f64 / (same + 1) as f64 * (ub - ua));
            if ev {
                t.push(x);
                c.push(x + 1.0);
            } else {
                t.push(x + 1.0);
                c.push(x);
            }
        }
        self.target.matches(&LatentState { t, c })
    }

    /// Long-run level-2 count frequencies of the latent sampler against the enumeration.
    pub fn compare(&self, class: CensorClass, steps: usize, seed: u64) -> Vec<StationarityRow> {
        let mut rng = stream(seed, 0, Module::Latent, 0, 0);
        let (mut state, achieved) = initialize_latent(&self.target, 5, &self.g, &self.h, &mut rng).unwrap();
        assert_eq!(achieved, self.target);
        let expected = self.enumerate();
        let burn = steps / 10;
        let mut series: BTreeMap<Vec<u32>, Vec<f64>> = expected.keys().map(|k| (k.clone(), Vec::with_capacity(steps))).collect();
        for it in 0..burn + steps {
            let kind = MoveKind::for_class(class, &mut rng);
            mh_latent_step(&mut state, &self.target, &self.g, &self.h, kind, &mut rng);
            assert!(self.target.matches(&state));
            if it >= burn {
                let c = CountsTable::from_times(&state.t, &self.tree).level(2);
                assert!(expected.contains_key(&c), "unexpected count vector {c:?}");
                for (k, s) in series.iter_mut() {
                    s.push(f64::from(u8::from(*k == c)));
                }
            }
        }
        expected
            .into_iter()
            .map(|(counts, expected)| {
                let s = &series[&counts];
                StationarityRow {
                    observed: s.iter().sum::<f64>() / s.len() as f64,
                    se: batch_means_se(s, 100),
                    counts,
                    expected,
                }
            })
            .collect()
    }
}
