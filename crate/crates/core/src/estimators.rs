//! Estimator dispatch: naive, ipcw, dr, msm and disc behind one entry point.

use crate::cohort::Cohort;
use crate::config::{EstimatorConfig, EstimatorKind};
use crate::discrete::{estimate_discrete_g, DiscreteGrid};
use crate::error::Result;
use crate::estimation::{solve_psi, PsiEstimate};
use crate::jackknife::jackknife_around;
use crate::msm::estimate_msm;

/// `U` integrated to `X` for everyone, no censoring weights.
pub fn estimate_naive(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    solve_psi(cohort, &EstimatorConfig { estimator: EstimatorKind::Naive, ..cfg.clone() })
}

/// Censoring-weighted equation without the mean-model augmentation.
pub fn estimate_ipcw_simple(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    solve_psi(cohort, &EstimatorConfig { estimator: EstimatorKind::Ipcw, ..cfg.clone() })
}

/// Point estimate of the configured estimator.
pub fn estimate_point(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    match cfg.estimator {
        EstimatorKind::Naive | EstimatorKind::Ipcw | EstimatorKind::Dr => solve_psi(cohort, cfg),
        EstimatorKind::Msm => estimate_msm(cohort, cfg),
        EstimatorKind::Disc => estimate_discrete_g(cohort, &DiscreteGrid::for_cohort(cohort, cfg.grid_size)?, cfg),
    }
}

/// Point estimate plus jackknife inference when `jackknife_groups >= 2`.
pub fn estimate(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    cfg.validate()?;
    let point = estimate_point(cohort, cfg)?;
    if cfg.jackknife_groups < 2 {
        return Ok(point);
    }
    let jk = jackknife_around(cohort, cfg, cfg.jackknife_groups, &point.psi_hat.to_vec())?;
    Ok(point.with_jackknife(jk.summary()))
}
