//! Multivariate normal conditioning and sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal increments tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvnSpec {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Cholesky factor with the diagonal jitter that made it succeed.
#[derive(Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Cholesky factorization escalating through [`JITTER_LADDER`].
pub fn cholesky_jittered(m: &DMatrix<f64>, node: &str) -> Result<Factor> {
    if m.nrows() != m.ncols() {
        return Err(Error::Numerical { node: node.into(), msg: "matrix not square".into() });
    }
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok(Factor { chol, jitter });
        }
    }
    Err(Error::Numerical {
        node: node.into(),
        msg: format!("Cholesky failed after jitter {}", JITTER_LADDER[JITTER_LADDER.len() - 1]),
    })
}

impl MvnSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::Domain("mean and covariance dimensions differ".into()));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw using a precomputed lower factor of the covariance.
    pub fn sample_with<R: Rng + ?Sized>(&self, lower: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + lower * xi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, node: &str) -> Result<DVector<f64>> {
        if self.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let f = cholesky_jittered(&self.covariance, node)?;
        Ok(self.sample_with(&f.chol.l(), rng))
    }
}

/// Precomputed regression of unobserved on observed coordinates.
#[derive(Clone, Debug)]
pub struct Conditioner {
    pub observed: Vec<usize>,
    pub free: Vec<usize>,
    mean_free: DVector<f64>,
    mean_obs: DVector<f64>,
    /// K_∅1 K_11⁻¹
    gain: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

impl Conditioner {
    pub fn new(spec: &MvnSpec, observed: &[usize], node: &str) -> Result<Self> {
        let d = spec.dim();
        let mut seen = vec![false; d];
        for &i in observed {
            if i >= d || seen[i] {
                return Err(Error::Domain(format!("observed index {i} duplicated or out of range {d}")));
            }
            seen[i] = true;
        }
        let free: Vec<usize> = (0..d).filter(|&i| !seen[i]).collect();
        let k = &spec.covariance;
        let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| k[(rows[r], cols[c])]);
        let k11 = sub(observed, observed);
        let kf1 = sub(&free, observed);
        let kff = sub(&free, &free);
        let mean_free = DVector::from_fn(free.len(), |r, _| spec.mean[free[r]]);
        let mean_obs = DVector::from_fn(observed.len(), |r, _| spec.mean[observed[r]]);
        if observed.is_empty() {
            return Ok(Self {
                observed: vec![],
                free,
                mean_free,
                mean_obs,
                gain: DMatrix::zeros(d, 0),
                covariance: kff,
            });
        }
        let f = cholesky_jittered(&k11, node)?;
        // gain = K_f1 K_11⁻¹ = (K_11⁻¹ K_1f)ᵀ
        let gain = f.chol.solve(&kf1.transpose()).transpose();
        let mut covariance = kff - &gain * kf1.transpose();
        covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self { observed: observed.to_vec(), free, mean_free, mean_obs, gain, covariance })
    }

    pub fn mean(&self, observed_values: &DVector<f64>) -> DVector<f64> {
        if self.observed.is_empty() {
            return self.mean_free.clone();
        }
        &self.mean_free + &self.gain * (observed_values - &self.mean_obs)
    }

    pub fn condition(&self, observed_values: &DVector<f64>) -> MvnSpec {
        MvnSpec { mean: self.mean(observed_values), covariance: self.covariance.clone() }
    }
}

/// Distribution of the unobserved coordinates given the observed ones.
pub fn mvn_condition(spec: &MvnSpec, observed: &[usize], values: &DVector<f64>) -> Result<MvnSpec> {
    if values.len() != observed.len() {
        return Err(Error::Domain("observed values and indices differ in length".into()));
    }
    Ok(Conditioner::new(spec, observed, "mvn_condition")?.condition(values))
}

/// Symmetric square root A with AAᵀ = m, exact for singular PSD matrices (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}
