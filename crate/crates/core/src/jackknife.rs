//! Delete-a-group jackknife variance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::config::EstimatorConfig;
use crate::error::{Error, Result};
use crate::estimation::JackknifeSummary;
use crate::estimators::estimate_point;
use crate::scalar::Scalar;

/// Assigns subjects `0..n` to `groups` groups round-robin over a seeded
/// permutation.
pub fn jackknife_groups(n: usize, groups: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::with_capacity(n / groups.max(1) + 1); groups];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % groups].push(i);
    }
    out
}

/// `(G - 1) / G * sum_k (psi^(k) - psi)^2` per component, `G` being the
/// number of replicates.
pub fn jackknife_formula<F: Scalar>(full: &[F], replicates: &[Vec<F>]) -> Vec<F> {
    let g = F::from_usize(replicates.len()).expect("count fits");
    let factor = (g - F::one()) / g;
    (0..full.len())
        .map(|k| {
            let ss: F = replicates.iter().map(|r| (r[k] - full[k]) * (r[k] - full[k])).sum();
            factor * ss
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeResult {
    pub variance: Vec<f64>,
    /// Leave-one-group-out estimates in group order; `None` if it failed.
    pub replicates: Vec<Option<Vec<f64>>>,
    pub failed: usize,
    pub groups: usize,
    pub seed: u64,
}

impl JackknifeResult {
    pub fn summary(&self) -> JackknifeSummary {
        JackknifeSummary {
            groups: self.groups,
            failed: self.failed,
            seed: self.seed,
            variance: self.variance.clone(),
        }
    }
}

/// Jackknife around a known full-sample estimate `full`.
pub fn jackknife_around(cohort: &Cohort<f64>, cfg: &EstimatorConfig, n_groups: usize, full: &[f64]) -> Result<JackknifeResult> {
    if n_groups < 2 || n_groups > cohort.len() {
        return Err(Error::Config(format!(
            "jackknife needs 2 <= groups <= n, got {n_groups} groups for n = {}",
            cohort.len()
        )));
    }
    let groups = jackknife_groups(cohort.len(), n_groups, cfg.seed);
    let replicates: Vec<Option<Vec<f64>>> = groups
        .par_iter()
        .map(|drop| {
            let mut keep = vec![true; cohort.len()];
            drop.iter().for_each(|&i| keep[i] = false);
            let idx: Vec<usize> = (0..cohort.len()).filter(|&i| keep[i]).collect();
            estimate_point(&cohort.subset(&idx), cfg)
                .ok()
                .filter(|e| e.solver.converged)
                .map(|e| e.psi_hat.to_vec())
        })
        .collect();
    let ok: Vec<Vec<f64>> = replicates.iter().flatten().cloned().collect();
    let failed = n_groups - ok.len();
    if failed as f64 > 0.05 * n_groups as f64 || ok.len() < 2 {
        return Err(Error::JackknifeFailures {
            failed,
            groups: n_groups,
        });
    }
    Ok(JackknifeResult {
        variance: jackknife_formula(full, &ok),
        replicates,
        failed,
        groups: n_groups,
        seed: cfg.seed,
    })
}

/// Full pipeline: point estimate, then leave-one-group-out replicates.
pub fn jackknife_variance(cohort: &Cohort<f64>, cfg: &EstimatorConfig, n_groups: usize) -> Result<JackknifeResult> {
    let full = estimate_point(cohort, cfg)?.psi_hat.to_vec();
    jackknife_around(cohort, cfg, n_groups, &full)
}
