//! Continuous-time structural failure time models.
//!
//! Estimation of the effect of treatment discontinuation on a failure time
//! by doubly robust inverse-probability-of-censoring-weighted g-estimation,
//! together with the competitor estimators it is benchmarked against and a
//! simulator for the benchmark data-generating process.

pub mod bench;
pub mod cohort;
pub mod config;
pub mod cox;
pub mod dgp;
pub mod discrete;
pub mod error;
pub mod estimation;
pub mod estimators;
pub mod io;
pub mod jackknife;
pub mod linalg;
pub mod logistic;
pub mod msm;
pub mod scalar;
pub mod sftm;

pub use cohort::{Cohort, StepFunction, SubjectPath};
pub use config::{CVariant, EstimatorConfig, EstimatorKind, MeanDesign};
pub use cox::{fit_cox, CoxFit, EventKind, EventSpec, Feature};
pub use dgp::{generate_cohort, generate_setting, DgpConfig, Setting};
pub use error::{Error, Result};
pub use estimation::{solve_psi, PsiEstimate};
pub use estimators::{estimate, estimate_point};
pub use scalar::Scalar;
pub use sftm::{sftm_gradient, sftm_transform, PsiParams};

pub type Cohort64 = Cohort<f64>;
pub type Cohort32 = Cohort<f32>;
pub type SubjectPath64 = SubjectPath<f64>;
pub type SubjectPath32 = SubjectPath<f32>;
pub type StepFunction64 = StepFunction<f64>;
pub type StepFunction32 = StepFunction<f32>;
