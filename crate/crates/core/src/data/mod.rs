//! Cohort ingestion, Kaplan-Meier forward model, latent imputation and counts.

pub mod cohort;
pub mod counts;
pub mod km;
pub mod latent;

pub use cohort::{read_cohorts, read_cohorts_path, write_cohorts, CensorClass, CohortSummary};
pub use counts::CountsTable;
pub use km::{derive_summary, km_with_greenwood, BandTransform, KmCurve};
pub use latent::{initialize_latent, mh_latent_step, LatentState, MoveKind, Target};
