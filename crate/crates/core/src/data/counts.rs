//! Per-node observation counts of imputed event times.

use serde::{Deserialize, Serialize};

use crate::partition::{NodePath, PartitionTree};

/// Heap-indexed counts over levels 0..=depth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    pub depth: usize,
    pub counts: Vec<u32>,
}

impl CountsTable {
    pub fn empty(depth: usize) -> Self {
        Self { depth, counts: vec![0; (1usize << (depth + 1)) - 1] }
    }

    pub fn from_times(times: &[f64], tree: &PartitionTree<f64>) -> Self {
        let mut table = Self::empty(tree.depth);
        for &t in times {
            let mut node = tree.locate(t, tree.depth);
            loop {
                table.counts[node.heap_index()] += 1;
                match node.parent() {
                    Some(p) => node = p,
                    None => break,
                }
            }
        }
        table
    }

    pub fn get(&self, path: NodePath) -> u32 {
        self.counts[path.heap_index()]
    }

    /// (N_{ε0}, N_ε) for the split at `path`.
    pub fn split(&self, path: NodePath) -> (u32, u32) {
        (self.get(path.child(0)), self.get(path))
    }

    pub fn level(&self, level: u8) -> Vec<u32> {
        NodePath::level_nodes(level).map(|p| self.get(p)).collect()
    }
}

/// Level-2 counts implied by anchoring (ℓ, m, h) at order statistics (L, k+1, H) of an uncensored N = 2k+1 sample.
pub fn order_statistic_counts(n: usize, l: usize, h: usize) -> [usize; 4] {
    let k = (n - 1) / 2;
    [l - 1, k + 1 - l, h - (k + 1), n - h + 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Triple;
    use crate::special::DistributionSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn order_statistic_identity_n21() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut t: Vec<f64> = (0..21).map(|_| rng.random_range(0.1..20.0)).collect();
        t.sort_by(f64::total_cmp);
        let tree = PartitionTree::build("c", &Triple::full(t[6], t[10], t[14]), &DistributionSpec::half_cauchy(3.5), 8).unwrap();
        let c = CountsTable::from_times(&t, &tree);
        assert_eq!(c.level(2), vec![6, 4, 4, 7]);
        assert_eq!(order_statistic_counts(21, 7, 15), [6, 4, 4, 7]);
    }

    proptest! {
        #[test]
        fn conservation(times in proptest::collection::vec(0.0f64..50.0, 1..60)) {
            let tree = PartitionTree::build("c", &Triple::full(2.0, 3.5, 6.0), &DistributionSpec::half_cauchy(3.5), 6).unwrap();
            let c = CountsTable::from_times(&times, &tree);
            prop_assert_eq!(c.get(NodePath::ROOT) as usize, times.len());
            for level in 0..6u8 {
                for p in NodePath::level_nodes(level) {
                    prop_assert_eq!(c.get(p.child(0)) + c.get(p.child(1)), c.get(p));
                }
            }
            for level in 0..=6u8 {
                prop_assert_eq!(c.level(level).iter().sum::<u32>() as usize, times.len());
            }
        }
    }
}
