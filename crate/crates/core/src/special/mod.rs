//! Special functions, event-time laws and samplers.

pub mod dist;
pub mod gamma;
pub mod ks;
pub mod mvn;
pub mod polya_gamma;

pub use dist::{sample_truncated, DistributionSpec, Family, Law};
pub use gamma::trigamma;
pub use mvn::{cholesky_jittered, min_eigenvalue, mvn_condition, psd_sqrt, Conditioner, MvnSpec};
pub use polya_gamma::{pg_mean, pg_variance, sample_polya_gamma};
