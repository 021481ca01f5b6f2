//! Cohort-specific nested binary partitions of [0, ∞).
//!
//! Levels 1 and 2 are anchored at the reported triple (ℓ, m, h); every
//! deeper interval is split at its G₀-conditional median.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{DistributionSpec, Law};

/// Path to a partitioning subset: `level` bits read most-significant first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePath {
    pub level: u8,
    pub index: u32,
}

impl NodePath {
    pub const ROOT: NodePath = NodePath { level: 0, index: 0 };

    pub fn new(level: u8, index: u32) -> Self {
        debug_assert!(level < 32 && (index as u64) < (1u64 << level));
        Self { level, index }
    }

    pub fn parse(bits: &str) -> Result<Self> {
        let mut p = Self::ROOT;
        for c in bits.chars() {
            p = match c {
                '0' => p.child(0),
                '1' => p.child(1),
                _ => return Err(Error::Domain(format!("invalid node path {bits:?}"))),
            };
        }
        Ok(p)
    }

    pub fn child(self, bit: u32) -> Self {
        Self { level: self.level + 1, index: self.index * 2 + bit }
    }

    pub fn parent(self) -> Option<Self> {
        (self.level > 0).then(|| Self { level: self.level - 1, index: self.index / 2 })
    }

    /// Position in a breadth-first (heap) layout.
    pub fn heap_index(self) -> usize {
        (1usize << self.level) - 1 + self.index as usize
    }

    pub fn from_heap_index(h: usize) -> Self {
        let level = (usize::BITS - 1 - (h + 1).leading_zeros()) as u8;
        Self { level, index: (h + 1 - (1usize << level)) as u32 }
    }

    /// All paths at `level` in lexicographic order.
    pub fn level_nodes(level: u8) -> impl Iterator<Item = NodePath> {
        (0..(1u32 << level)).map(move |index| NodePath { level, index })
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.level == 0 {
            return write!(f, "root");
        }
        for b in (0..self.level).rev() {
            write!(f, "{}", (self.index >> b) & 1)?;
        }
        Ok(())
    }
}

/// Reported (ℓ, m, h); `None` marks an unobserved bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple<T> {
    pub lower: Option<T>,
    pub median: T,
    pub upper: Option<T>,
}

impl<T: Real> Triple<T> {
    pub fn new(lower: Option<T>, median: T, upper: Option<T>) -> Self {
        let lower = lower.filter(|l| *l > T::zero());
        let upper = upper.filter(|h| h.is_finite());
        Self { lower, median, upper }
    }

    pub fn full(lower: T, median: T, upper: T) -> Self {
        Self::new(Some(lower), median, Some(upper))
    }

    pub fn validate(&self, cohort: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation { cohort: cohort.into(), msg });
        if !(self.median > T::zero()) || !self.median.is_finite() {
            return bad(format!("median must be positive and finite, got {}", self.median));
        }
        if let Some(l) = self.lower {
            if !(l < self.median) {
                return bad(format!("lower bound {l} must be below median {}", self.median));
            }
        }
        if let Some(h) = self.upper {
            if !(h > self.median) {
                return bad(format!("upper bound {h} must exceed median {}", self.median));
            }
        }
        Ok(())
    }

    /// Componentwise median of observed triples, used for future cohorts.
    pub fn componentwise_median(triples: &[Triple<T>]) -> Option<Self> {
        fn med<T: Real>(mut v: Vec<T>) -> Option<T> {
            if v.is_empty() {
                return None;
            }
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let n = v.len();
            Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) * T::c(0.5) })
        }
        let m = med(triples.iter().map(|t| t.median).collect())?;
        let l = med(triples.iter().filter_map(|t| t.lower).collect()).filter(|l| *l < m);
        let h = med(triples.iter().filter_map(|t| t.upper).collect()).filter(|h| *h > m);
        Some(Self::new(l, m, h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PartitionTree<T> {
    pub cohort_id: String,
    pub depth: usize,
    pub g0: DistributionSpec<T>,
    /// Per level d = 0..=depth, the 2^d + 1 interval edges from 0 to ∞.
    #[serde(with = "crate::b64::real_nested")]
    pub edges: Vec<Vec<T>>,
    pub lower_observed: bool,
    pub upper_observed: bool,
}

fn conditional_median<T: Real>(g0: &DistributionSpec<T>, a: T, b: T) -> T {
    let fa = g0.cdf(a);
    if fa <= T::c(0.5) {
        g0.inv_cdf((fa + g0.cdf(b)) * T::c(0.5))
    } else {
        g0.inv_sf((g0.sf(a) + g0.sf(b)) * T::c(0.5))
    }
}

impl<T: Real> PartitionTree<T> {
    /// Partition anchored at `s` on levels 1-2 with dyadic G₀ splits below.
    pub fn build(cohort_id: &str, s: &Triple<T>, g0: &DistributionSpec<T>, depth: usize) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Domain(format!("partition depth must be >= 2, got {depth}")));
        }
        s.validate(cohort_id)?;
        let inf = T::infinity();
        let m = s.median;
        let l = s.lower.unwrap_or_else(|| conditional_median(g0, T::zero(), m));
        let h = s.upper.unwrap_or_else(|| conditional_median(g0, m, inf));
        let mut edges = vec![vec![T::zero(), inf], vec![T::zero(), m, inf], vec![T::zero(), l, m, h, inf]];
        Self::refine(&mut edges, g0, depth);
        Ok(Self {
            cohort_id: cohort_id.into(),
            depth,
            g0: *g0,
            edges,
            lower_observed: s.lower.is_some(),
            upper_observed: s.upper.is_some(),
        })
    }

    /// Partition at dyadic G₀ quantiles on every level.
    pub fn dyadic(cohort_id: &str, g0: &DistributionSpec<T>, depth: usize) -> Self {
        let mut edges = vec![vec![T::zero(), T::infinity()]];
        Self::refine(&mut edges, g0, depth);
        Self {
            cohort_id: cohort_id.into(),
            depth,
            g0: *g0,
            edges,
            lower_observed: true,
            upper_observed: true,
        }
    }

    fn refine(edges: &mut Vec<Vec<T>>, g0: &DistributionSpec<T>, depth: usize) {
        while edges.len() <= depth {
            let prev = edges.last().expect("level 0 present");
            let mut next = Vec::with_capacity(2 * prev.len() - 1);
            for w in prev.windows(2) {
                next.push(w[0]);
                next.push(conditional_median(g0, w[0], w[1]));
            }
            next.push(T::infinity());
            edges.push(next);
        }
    }

    pub fn interval(&self, path: NodePath) -> (T, T) {
        let e = &self.edges[path.level as usize];
        (e[path.index as usize], e[path.index as usize + 1])
    }

    /// Split point between the two children of `path`.
    pub fn split_point(&self, path: NodePath) -> T {
        self.edges[path.level as usize + 1][2 * path.index as usize + 1]
    }

    /// The level-`level` node containing `t`; intervals are left-closed.
    pub fn locate(&self, t: T, level: usize) -> NodePath {
        let e = &self.edges[level];
        let k = e.partition_point(|x| *x <= t).saturating_sub(1).min(e.len() - 2);
        NodePath::new(level as u8, k as u32)
    }

    pub fn g0_mass(&self, path: NodePath) -> T {
        let (a, b) = self.interval(path);
        self.g0.mass(a, b)
    }

    /// G₀(B_{path·0} | B_path).
    pub fn g0_conditional(&self, path: NodePath) -> Result<T> {
        if path.level as usize >= self.depth {
            return Err(Error::Domain(format!("node {path} has no children at depth {}", self.depth)));
        }
        if path.level >= 2 {
            return Ok(T::c(0.5));
        }
        let parent = self.g0_mass(path);
        if !(parent > T::zero()) {
            return Err(Error::Numerical { node: path.to_string(), msg: "parent interval has zero G0 mass".into() });
        }
        Ok(self.g0_mass(path.child(0)) / parent)
    }

    /// Number of internal (splitting) nodes.
    pub fn n_splits(&self) -> usize {
        (1usize << self.depth) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hc() -> DistributionSpec<f64> {
        DistributionSpec::half_cauchy(3.5)
    }

    #[test]
    fn path_display_and_heap() {
        let p = NodePath::parse("10").unwrap();
        assert_eq!(p.to_string(), "10");
        assert_eq!(p.heap_index(), 5);
        assert_eq!(NodePath::from_heap_index(5), p);
        assert_eq!(NodePath::ROOT.to_string(), "root");
        assert_eq!(p.parent().unwrap().to_string(), "1");
        for h in 0..100 {
            assert_eq!(NodePath::from_heap_index(h).heap_index(), h);
        }
    }

    #[test]
    fn anchored_levels_and_level3_split() {
        let t = PartitionTree::build("c", &Triple::full(2.0, 3.5, 6.0), &hc(), 8).unwrap();
        assert_eq!(t.edges[1], vec![0.0, 3.5, f64::INFINITY]);
        assert_eq!(&t.edges[2][1..4], &[2.0, 3.5, 6.0]);
        let f2 = 2.0 / std::f64::consts::PI * (2.0f64 / 3.5).atan();
        assert!((f2 - 0.330_50).abs() < 1e-5);
        assert!((t.edges[3][1] - 0.929).abs() < 5e-4);
        assert!((t.edges[3][1] - 3.5 * (std::f64::consts::PI * f2 / 4.0).tan()).abs() < 1e-12);
    }

    #[test]
    fn g0_anchored_tree_is_dyadic() {
        let g0 = hc();
        let s = Triple::full(g0.inv_cdf(0.25), g0.inv_cdf(0.5), g0.inv_cdf(0.75));
        let t = PartitionTree::build("c", &s, &g0, 6).unwrap();
        for h in 0..t.n_splits() {
            let p = NodePath::from_heap_index(h);
            let left = t.g0_mass(p.child(0)) / t.g0_mass(p);
            assert!((left - 0.5).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn g0_conditional_values() {
        let t = PartitionTree::build("c", &Triple::full(2.0, 3.5, 6.0), &hc(), 8).unwrap();
        assert!((t.g0_conditional(NodePath::ROOT).unwrap() - 0.5).abs() < 1e-12);
        let v = t.g0_conditional(NodePath::parse("0").unwrap()).unwrap();
        let f2 = 2.0 / std::f64::consts::PI * (2.0f64 / 3.5).atan();
        assert!((v - f2 / 0.5).abs() < 1e-12);
        assert!((1.0 - v - 0.339).abs() < 1e-3);
        assert_eq!(t.g0_conditional(NodePath::parse("011").unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn absent_bounds_use_conditional_medians() {
        let g0 = hc();
        let t = PartitionTree::build("c", &Triple::new(None, 3.5, None), &g0, 4).unwrap();
        assert!(!t.lower_observed && !t.upper_observed);
        assert!((t.edges[2][1] - g0.inv_cdf(0.25)).abs() < 1e-10);
        assert!((t.edges[2][3] - g0.inv_cdf(0.75)).abs() < 1e-10);
        // 0 and inf in the input mean absent
        let t2 = PartitionTree::build("c", &Triple::new(Some(0.0), 3.5, Some(f64::INFINITY)), &g0, 4).unwrap();
        assert_eq!(t.edges, t2.edges);
    }

    #[test]
    fn rejects_unordered() {
        let err = PartitionTree::build("cohort-7", &Triple::full(4.0, 3.5, 6.0), &hc(), 4).unwrap_err();
        assert!(err.to_string().contains("cohort-7"));
        assert!(PartitionTree::build("c", &Triple::full(1.0, 3.5, 6.0), &hc(), 1).is_err());
    }

    #[test]
    fn locate_boundaries() {
        let t = PartitionTree::build("c", &Triple::full(2.0, 3.5, 6.0), &hc(), 8).unwrap();
        assert_eq!(t.locate(3.5, 1).to_string(), "1");
        for d in 1..=8 {
            let p = t.locate(0.0, d);
            assert_eq!(p.index, 0);
            assert_eq!(p.level as usize, d);
        }
        assert_eq!(t.locate(6.0 - 1e-9, 2).to_string(), "10");
        assert_eq!(t.locate(1e12, 3).index, 7);
        for d in 1..=8 {
            for (k, &e) in t.edges[d].iter().enumerate().take(t.edges[d].len() - 1) {
                assert_eq!(t.locate(e, d).index as usize, k, "level {d} edge {k}");
            }
        }
    }

    #[test]
    fn future_triple_rule() {
        let ts = vec![Triple::full(1.0, 2.0, 3.0), Triple::full(2.0, 4.0, 9.0), Triple::new(None, 3.0, Some(5.0))];
        let f = Triple::componentwise_median(&ts).unwrap();
        assert_eq!(f, Triple::full(1.5, 3.0, 5.0));
    }

    #[test]
    fn f32_tree() {
        let t = PartitionTree::build("c", &Triple::full(2.0f32, 3.5, 6.0), &DistributionSpec::half_cauchy(3.5f32), 5).unwrap();
        assert!((t.edges[3][1] - 0.929).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn level_masses_sum_and_refine(l in 0.2f64..3.0, dm in 0.1f64..3.0, dh in 0.1f64..10.0) {
            let s = Triple::full(l, l + dm, l + dm + dh);
            let t = PartitionTree::build("p", &s, &hc(), 7).unwrap();
            for d in 1..=7u8 {
                let total: f64 = NodePath::level_nodes(d).map(|p| t.g0_mass(p)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                if d < 7 {
                    for p in NodePath::level_nodes(d) {
                        let sum = t.g0_mass(p.child(0)) + t.g0_mass(p.child(1));
                        prop_assert!((sum - t.g0_mass(p)).abs() < 1e-12);
                    }
                }
            }
            for d in 1..=7 {
                prop_assert!(t.edges[d].windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
