//! Random distribution defined by split probabilities on a partition tree.

use crate::partition::{NodePath, PartitionTree};
use crate::special::Law;

/// Splits are heap-indexed left-child conditional probabilities for every internal node.
#[derive(Clone, Copy, Debug)]
pub struct TreeDistribution<'a> {
    pub tree: &'a PartitionTree<f64>,
    pub splits: &'a [f64],
}

/// Fraction of the G₀ mass of [a, b) lying in [a, t) and in [t, b).
fn leaf_fractions(g0: &crate::DistributionSpec, a: f64, b: f64, t: f64) -> (f64, f64) {
    let whole = g0.mass(a, b);
    if !(whole > 0.0) {
        return (0.5, 0.5);
    }
    let left = (g0.mass(a, t) / whole).clamp(0.0, 1.0);
    let right = (g0.mass(t, b) / whole).clamp(0.0, 1.0);
    (left, right)
}

impl<'a> TreeDistribution<'a> {
    pub fn new(tree: &'a PartitionTree<f64>, splits: &'a [f64]) -> Self {
        debug_assert_eq!(splits.len(), tree.n_splits());
        Self { tree, splits }
    }

    /// Walk to the leaf containing `t`: (leaf, mass strictly left of leaf, leaf mass, mass strictly right).
    fn descend(&self, t: f64) -> (NodePath, f64, f64, f64) {
        let mut node = NodePath::ROOT;
        let (mut left, mut mass, mut right) = (0.0, 1.0, 0.0);
        for _ in 0..self.tree.depth {
            let y = self.splits[node.heap_index()];
            if t < self.tree.split_point(node) {
                right += mass * (1.0 - y);
                mass *= y;
                node = node.child(0);
            } else {
                left += mass * y;
                mass *= 1.0 - y;
                node = node.child(1);
            }
        }
        (node, left, mass, right)
    }

    pub fn leaf_mass(&self, leaf: NodePath) -> f64 {
        let mut mass = 1.0;
        let mut node = NodePath::ROOT;
        for b in (0..leaf.level).rev() {
            let bit = (leaf.index >> b) & 1;
            let y = self.splits[node.heap_index()];
            mass *= if bit == 0 { y } else { 1.0 - y };
            node = node.child(bit);
        }
        mass
    }

    /// Mass assigned to an arbitrary node.
    pub fn node_mass(&self, path: NodePath) -> f64 {
        self.leaf_mass(path)
    }

    /// Point inside `[a, b)` at G₀-conditional fraction `frac`.
    fn leaf_inverse(&self, a: f64, b: f64, frac: f64) -> f64 {
        let g0 = &self.tree.g0;
        let m = g0.mass(a, b);
        let t = if g0.cdf(a) <= 0.5 {
            g0.inv_cdf((g0.cdf(a) + frac * m).min(1.0))
        } else {
            g0.inv_sf((g0.sf(a) - frac * m).max(0.0))
        };
        t.clamp(a, b)
    }
}

impl Law<f64> for TreeDistribution<'_> {
    fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        let (leaf, left, mass, _) = self.descend(t);
        let (a, b) = self.tree.interval(leaf);
        (left + mass * leaf_fractions(&self.tree.g0, a, b, t).0).clamp(0.0, 1.0)
    }

    fn sf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        let (leaf, _, mass, right) = self.descend(t);
        let (a, b) = self.tree.interval(leaf);
        (right + mass * leaf_fractions(&self.tree.g0, a, b, t).1).clamp(0.0, 1.0)
    }

    fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 || !t.is_finite() {
            return 0.0;
        }
        let (leaf, _, mass, _) = self.descend(t);
        let g0_mass = self.tree.g0_mass(leaf);
        if !(g0_mass > 0.0) {
            return 0.0;
        }
        mass * self.tree.g0.pdf(t) / g0_mass
    }

    fn inv_cdf(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let mut node = NodePath::ROOT;
        let (mut base, mut mass) = (0.0, 1.0);
        for _ in 0..self.tree.depth {
            let y = self.splits[node.heap_index()];
            if p < base + mass * y {
                mass *= y;
                node = node.child(0);
            } else {
                base += mass * y;
                mass *= 1.0 - y;
                node = node.child(1);
            }
        }
        let (a, b) = self.tree.interval(node);
        let frac = if mass > 0.0 { ((p - base) / mass).clamp(0.0, 1.0) } else { 0.5 };
        self.leaf_inverse(a, b, frac)
    }

    fn inv_sf(&self, q: f64) -> f64 {
        if q >= 1.0 {
            return 0.0;
        }
        if q <= 0.0 {
            return f64::INFINITY;
        }
        // Descend by survival mass to keep precision in the upper tail.
        let mut node = NodePath::ROOT;
        let (mut above, mut mass) = (0.0, 1.0);
        for _ in 0..self.tree.depth {
            let y = self.splits[node.heap_index()];
            let right = mass * (1.0 - y);
            if q <= above + right {
                mass = right;
                node = node.child(1);
            } else {
                above += right;
                mass *= y;
                node = node.child(0);
            }
        }
        let (a, b) = self.tree.interval(node);
        let frac_above = if mass > 0.0 { ((q - above) / mass).clamp(0.0, 1.0) } else { 0.5 };
        self.leaf_inverse(a, b, 1.0 - frac_above)
    }
}
