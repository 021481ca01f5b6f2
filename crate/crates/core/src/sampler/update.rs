//! Conditional updates of splitting probabilities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::partition::NodePath;
use crate::special::{cholesky_jittered, sample_polya_gamma, MvnSpec};

/// Pólya-Gamma update of one GP node's logits.
///
/// `counts[i] = (N_{ε0}, N_ε)` for the first `counts.len()` coordinates; the rest carry no data.
/// Given ω, the Gaussian conditional is sampled by perturbing a prior draw (Matheron's rule).
pub fn pg_node_update<R: Rng + ?Sized>(
    node: NodePath,
    counts: &[(u32, u32)],
    prior: &MvnSpec,
    lower: &DMatrix<f64>,
    z: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = prior.dim();
    let xi = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let f = &prior.mean + lower * xi;
    let active: Vec<usize> = (0..counts.len()).filter(|&i| counts[i].1 > 0).collect();
    if active.is_empty() {
        return Ok(f);
    }
    let na = active.len();
    let mut resid = DVector::zeros(na);
    let mut noise = DVector::zeros(na);
    for (r, &i) in active.iter().enumerate() {
        let (n0, n) = counts[i];
        if n0 > n {
            return Err(Error::Numerical { node: node.to_string(), msg: format!("left count {n0} exceeds total {n}") });
        }
        let omega = sample_polya_gamma(n, z[i], rng)?;
        let kappa = n0 as f64 - n as f64 / 2.0;
        let e: f64 = StandardNormal.sample(rng);
        noise[r] = 1.0 / omega;
        resid[r] = kappa / omega - f[i] - e * noise[r].sqrt();
    }
    let k = &prior.covariance;
    let mut kaa = DMatrix::from_fn(na, na, |r, c| k[(active[r], active[c])]);
    for r in 0..na {
        kaa[(r, r)] += noise[r];
    }
    let fac = cholesky_jittered(&kaa, &node.to_string())?;
    let w = fac.chol.solve(&resid);
    let k_xa = DMatrix::from_fn(dim, na, |r, c| k[(r, active[c])]);
    Ok(f + k_xa * w)
}

/// Conjugate beta update of a deep-level split.
pub fn deep_level_update<R: Rng + ?Sized>(n0: u32, n1: u32, alpha: f64, rng: &mut R) -> Result<f64> {
    let b = Beta::new(alpha + n0 as f64, alpha + n1 as f64).map_err(|e| Error::Domain(format!("beta update: {e}")))?;
    Ok(b.sample(rng).clamp(1e-300, 1.0 - 1e-16))
}
