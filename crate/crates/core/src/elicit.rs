//! Monte Carlo elicitation of per-node GP moments for cohort-specific partitions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{deep_beta_params, marginal_moments, AlphaRule};
use crate::partition::{NodePath, PartitionTree};
use crate::rng::{stream, Module};
use crate::scalar::logit;
use crate::special::{min_eigenvalue, psd_sqrt, Law, MvnSpec};

pub const LOGIT_CLAMP: f64 = 12.0;
const CHUNK: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePrior {
    pub node: NodePath,
    pub spec: MvnSpec,
}

#[derive(Clone, Debug)]
pub struct ElicitSpec {
    pub c: f64,
    pub gp_depth: usize,
    pub alpha_rule: AlphaRule,
    pub n_mc: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ElicitDiagnostics {
    /// Per GP node, number of (draw, cohort) logits that hit the clamp.
    pub clamped: Vec<usize>,
    /// Per GP node, diagonal increment restoring positive semi-definiteness after zeroing pairs with R = 0.
    #[serde(default)]
    pub repair: Vec<f64>,
}

/// GP nodes in sweep order: by level, then lexicographic.
pub fn gp_nodes(gp_depth: usize) -> Vec<NodePath> {
    (0..gp_depth as u8).flat_map(NodePath::level_nodes).collect()
}

/// Node priors when every cohort shares the G₀-dyadic partition: (0, σ²_d R).
pub fn shared_node_priors(r: &DMatrix<f64>, c: f64, gp_depth: usize) -> Result<Vec<NodePrior>> {
    gp_nodes(gp_depth)
        .into_iter()
        .map(|node| {
            let (_, var) = marginal_moments(node.level as usize + 1, c)?;
            Ok(NodePrior { node, spec: MvnSpec { mean: DVector::zeros(r.nrows()), covariance: r * var } })
        })
        .collect()
}

struct SharedProcess<'a> {
    tree: &'a PartitionTree<f64>,
    gp_len: usize,
    betas: Vec<Beta<f64>>,
}

impl SharedProcess<'_> {
    /// F*(t) for one cohort, drawing deep splits on demand into `memo`.
    fn cdf<R: Rng + ?Sized>(&self, gp: &[f64], memo: &mut Vec<(usize, f64)>, t: f64, rng: &mut R) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if !t.is_finite() {
            return 1.0;
        }
        let mut node = NodePath::ROOT;
        let (mut left, mut mass) = (0.0, 1.0);
        for level in 0..self.tree.depth {
            let h = node.heap_index();
            let y = if h < self.gp_len {
                gp[h]
            } else if let Some(&(_, y)) = memo.iter().find(|(k, _)| *k == h) {
                y
            } else {
                let y = self.betas[level].sample(rng);
                memo.push((h, y));
                y
            };
            if t < self.tree.split_point(node) {
                mass *= y;
                node = node.child(0);
            } else {
                left += mass * y;
                mass *= 1.0 - y;
                node = node.child(1);
            }
        }
        let (a, b) = self.tree.interval(node);
        let g0 = &self.tree.g0;
        let whole = g0.mass(a, b);
        let frac = if whole > 0.0 { (g0.mass(a, t) / whole).clamp(0.0, 1.0) } else { 0.5 };
        left + mass * frac
    }
}

struct Accumulator {
    sum: Vec<DVector<f64>>,
    cross: Vec<DMatrix<f64>>,
    clamped: Vec<usize>,
}

impl Accumulator {
    fn new(nodes: usize, dim: usize) -> Self {
        Self {
            sum: vec![DVector::zeros(dim); nodes],
            cross: vec![DMatrix::zeros(dim, dim); nodes],
            clamped: vec![0; nodes],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for k in 0..self.sum.len() {
            self.sum[k] += &other.sum[k];
            self.cross[k] += &other.cross[k];
            self.clamped[k] += other.clamped[k];
        }
        self
    }
}

/// Empirical mean and covariance of each cohort-specific node logit under the shared process.
pub fn elicit_node_moments(
    trees: &[PartitionTree<f64>],
    r: &DMatrix<f64>,
    spec: &ElicitSpec,
) -> Result<(Vec<NodePrior>, ElicitDiagnostics)> {
    let dim = trees.len();
    if dim == 0 || r.nrows() != dim || r.ncols() != dim {
        return Err(Error::Domain("kernel dimension does not match the number of partitions".into()));
    }
    if spec.n_mc < 2 {
        return Err(Error::Domain("elicitation needs at least 2 Monte Carlo draws".into()));
    }
    let depth = trees.iter().map(|t| t.depth).max().expect("non-empty");
    if spec.gp_depth < 1 || spec.gp_depth > depth {
        return Err(Error::Domain(format!("GP depth {} outside 1..={depth}", spec.gp_depth)));
    }
    let shared_tree = PartitionTree::dyadic("shared", &trees[0].g0, depth);
    let betas = (0..depth)
        .map(|level| {
            let a = deep_beta_params(level + 1, spec.c, spec.alpha_rule);
            Beta::new(a, a).map_err(|e| Error::Domain(format!("beta({a}): {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let nodes = gp_nodes(spec.gp_depth);
    let shared = SharedProcess { tree: &shared_tree, gp_len: nodes.len(), betas };
    let lower = psd_sqrt(r);
    let sds = nodes
        .iter()
        .map(|n| marginal_moments(n.level as usize + 1, spec.c).map(|(_, v)| v.sqrt()))
        .collect::<Result<Vec<_>>>()?;
    // Breakpoints at GP depth for every cohort, with 0 and ∞ at the ends.
    let edges: Vec<&Vec<f64>> = trees.iter().map(|t| &t.edges[spec.gp_depth]).collect();

    let n_chunks = spec.n_mc.div_ceil(CHUNK);
    let parts: Vec<Accumulator> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream(spec.seed, 0, Module::Elicit, chunk as u64, 0);
            let mut acc = Accumulator::new(nodes.len(), dim);
            let draws = CHUNK.min(spec.n_mc - chunk * CHUNK);
            let mut gp = vec![DVector::zeros(dim); nodes.len()];
            let mut cohort_gp = vec![0.0; nodes.len()];
            let mut memo = Vec::with_capacity(4 * depth);
            let mut f = Vec::new();
            let mut z = vec![DVector::zeros(dim); nodes.len()];
            for _ in 0..draws {
                for (k, g) in gp.iter_mut().enumerate() {
                    let xi = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                    *g = (&lower * xi * sds[k]).map(crate::scalar::expit);
                }
                for i in 0..dim {
                    for k in 0..nodes.len() {
                        cohort_gp[k] = gp[k][i];
                    }
                    memo.clear();
                    f.clear();
                    for &t in edges[i].iter() {
                        f.push(shared.cdf(&cohort_gp, &mut memo, t, &mut rng));
                    }
                    let tree = &trees[i];
                    for (k, node) in nodes.iter().enumerate() {
                        // edge indices at GP depth spanned by this node and its left child
                        let span = 1usize << (spec.gp_depth - node.level as usize);
                        let a = node.index as usize * span;
                        let (fa, fs, fb) = (f[a], f[a + span / 2], f[a + span]);
                        debug_assert_eq!(tree.split_point(*node), edges[i][a + span / 2]);
                        let p = (fs - fa) / (fb - fa);
                        let mut v = logit(p);
                        if !v.is_finite() || v.abs() > LOGIT_CLAMP {
                            acc.clamped[k] += 1;
                            v = if v.is_nan() { 0.0 } else { v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP) };
                        }
                        z[k][i] = v;
                    }
                }
                for k in 0..nodes.len() {
                    acc.sum[k] += &z[k];
                    acc.cross[k].ger(1.0, &z[k], &z[k], 1.0);
                }
            }
            acc
        })
        .collect();
    let acc = parts.into_iter().reduce(Accumulator::merge).expect("at least one chunk");
    let n = spec.n_mc as f64;
    let priors = nodes
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            let mean = &acc.sum[k] / n;
            let mut cov = (&acc.cross[k] - &mean * mean.transpose() * n) / (n - 1.0);
            cov = (&cov + cov.transpose()) * 0.5;
            // cohorts with R = 0 are independent
            for i in 0..dim {
                for j in 0..dim {
                    if i != j && r[(i, j)] == 0.0 {
                        cov[(i, j)] = 0.0;
                    }
                }
            }
            let lambda = min_eigenvalue(&cov);
            let delta = if lambda < 0.0 { -lambda * (1.0 + 1e-6) } else { 0.0 };
            if delta > 0.0 {
                log::warn!("elicitation: node {node} covariance repaired by {delta:.3e}");
                for i in 0..dim {
                    cov[(i, i)] += delta;
                }
            }
            (NodePrior { node, spec: MvnSpec { mean, covariance: cov } }, delta)
        })
        .collect::<Vec<_>>();
    let (priors, repair): (Vec<NodePrior>, Vec<f64>) = priors.into_iter().unzip();
    for (k, &c) in acc.clamped.iter().enumerate() {
        if c > 0 {
            log::warn!("elicitation: {c} clamped logits at node {}", nodes[k]);
        }
    }
    Ok((priors, ElicitDiagnostics { clamped: acc.clamped, repair }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Triple;
    use crate::special::{mvn::min_eigenvalue, DistributionSpec};
    use statrs::distribution::{Beta as SBeta, ContinuousCDF};

    fn g0() -> DistributionSpec<f64> {
        DistributionSpec::half_cauchy(3.5)
    }

    fn dyadic_tree(id: &str) -> PartitionTree<f64> {
        let g = g0();
        PartitionTree::build(id, &Triple::full(g.inv_cdf(0.25), g.inv_cdf(0.5), g.inv_cdf(0.75)), &g, 6).unwrap()
    }

    fn spec(n_mc: usize, gp_depth: usize) -> ElicitSpec {
        ElicitSpec { c: 5.0, gp_depth, alpha_rule: AlphaRule::Continuous, n_mc, seed: 3 }
    }

    #[test]
    fn shared_partition_recovers_gp_moments() {
        let trees: Vec<_> = (0..3).map(|i| dyadic_tree(&format!("c{i}"))).collect();
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let n = 20_000;
        let (priors, diag) = elicit_node_moments(&trees, &r, &spec(n, 2)).unwrap();
        assert_eq!(priors.len(), 3);
        assert!(diag.clamped.iter().all(|&c| c == 0));
        for p in &priors {
            let (_, var) = marginal_moments(p.node.level as usize + 1, 5.0).unwrap();
            for i in 0..3 {
                assert!(p.spec.mean[i].abs() < 3.0 * (var / n as f64).sqrt(), "{} mean", p.node);
                for j in 0..3 {
                    let target = var * r[(i, j)];
                    // SE of a sample covariance of bivariate normals
                    let se = (var * var * (1.0 + r[(i, j)].powi(2)) / n as f64).sqrt();
                    assert!((p.spec.covariance[(i, j)] - target).abs() < 3.0 * se, "{} ({i},{j})", p.node);
                }
            }
        }
    }

    #[test]
    fn all_ones_kernel_gives_unit_correlation() {
        let trees: Vec<_> = (0..2).map(|i| dyadic_tree(&format!("c{i}"))).collect();
        let r = DMatrix::from_element(2, 2, 1.0);
        let (priors, _) = elicit_node_moments(&trees, &r, &spec(2000, 2)).unwrap();
        for p in &priors {
            let c = &p.spec.covariance;
            let rho = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
            assert!(rho > 0.999_9);
        }
    }

    #[test]
    fn covariance_psd_after_jitter() {
        let g = g0();
        let trees = vec![
            PartitionTree::build("a", &Triple::full(2.0, 3.5, 6.0), &g, 8).unwrap(),
            PartitionTree::build("b", &Triple::full(0.8, 1.5, 2.2), &g, 8).unwrap(),
            PartitionTree::build("c", &Triple::new(None, 9.0, None), &g, 8).unwrap(),
        ];
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.75, 0.125, 0.75, 1.0, 0.0, 0.125, 0.0, 1.0]);
        let (priors, _) = elicit_node_moments(&trees, &r, &spec(2000, 2)).unwrap();
        for p in priors {
            let m = &p.spec.covariance + DMatrix::identity(3, 3) * 1e-8;
            assert!(min_eigenvalue(&m) >= -1e-10);
        }
    }

    #[test]
    fn reproducible() {
        let trees: Vec<_> = (0..2).map(|i| dyadic_tree(&format!("c{i}"))).collect();
        let r = DMatrix::identity(2, 2);
        let a = elicit_node_moments(&trees, &r, &spec(1000, 2)).unwrap().0;
        let b = elicit_node_moments(&trees, &r, &spec(1000, 2)).unwrap().0;
        assert_eq!(a, b);
    }

    /// Cohort A splits at the G₀ median, cohort B at the G₀ upper quartile, with one GP level.
    #[test]
    fn quadrature_oracle_single_gp_level() {
        let g = g0();
        let a = PartitionTree::build("a", &Triple::new(None, 3.5, None), &g, 6).unwrap();
        let b = PartitionTree::build("b", &Triple::new(None, g.inv_cdf(0.75), None), &g, 6).unwrap();
        let rho = 0.5;
        let r = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let n = 40_000;
        let (priors, _) = elicit_node_moments(&[a, b], &r, &spec(n, 1)).unwrap();
        let p = &priors[0].spec;

        // logit(Y + (1 - Y) W), Y = expit(Z), Z ~ N(0, s²), W ~ Be(45, 45)
        let (_, s2) = marginal_moments(1, 5.0f64).unwrap();
        let s = s2.sqrt();
        let alpha = deep_beta_params(2, 5.0, AlphaRule::Continuous);
        let beta = SBeta::new(alpha, alpha).unwrap();
        let nw = 400;
        let ws: Vec<f64> = (0..nw).map(|k| beta.inverse_cdf((k as f64 + 0.5) / nw as f64)).collect();
        let nz = 2001;
        let (lo, hi) = (-9.0 * s, 9.0 * s);
        let h = (hi - lo) / (nz - 1) as f64;
        let (mut m1, mut m2, mut m3, mut m4, mut mz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..nz {
            let z = lo + h * k as f64;
            let wt = h * (-0.5 * z * z / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
            let y = crate::scalar::expit(z);
            let (mut e1, mut e2, mut e3, mut e4) = (0.0, 0.0, 0.0, 0.0);
            for &w in &ws {
                let v = logit(y + (1.0 - y) * w);
                e1 += v / nw as f64;
                e2 += v * v / nw as f64;
                e3 += v.powi(3) / nw as f64;
                e4 += v.powi(4) / nw as f64;
            }
            m1 += wt * e1;
            m2 += wt * e2;
            m3 += wt * e3;
            m4 += wt * e4;
            mz += wt * z * e1;
        }
        let var_b = m2 - m1 * m1;
        let cov_ab = rho * mz;
        let se_mean = (var_b / n as f64).sqrt();
        assert!((p.mean[1] - m1).abs() < 3.0 * se_mean, "{} vs {m1}", p.mean[1]);
        let mu4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1.powi(4);
        let se_var = ((mu4 - var_b * var_b) / n as f64).sqrt();
        assert!((p.covariance[(1, 1)] - var_b).abs() < 3.0 * se_var, "{} vs {var_b}", p.covariance[(1, 1)]);
        let se_cov = ((s2 * var_b + cov_ab * cov_ab) / n as f64).sqrt();
        assert!((p.covariance[(0, 1)] - cov_ab).abs() < 3.0 * se_cov);
        assert!((p.covariance[(0, 0)] - s2).abs() < 3.0 * s2 * (2.0 / n as f64).sqrt());
    }
}
