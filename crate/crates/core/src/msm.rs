//! Cox marginal structural model fitted by inverse probability of treatment
//! and censoring weighting.
//!
//! For a subject at risk at `t`, the stabilized treatment weight is
//! `theta(V) / f_V(V)` after an observed discontinuation (`V < t`, `Gamma = 1`)
//! and `theta_bar(t) / K_V(t)` while still treated, with
//! `theta(t) = lambda_0(t) exp(-Lambda_0(t))` from the Breslow baseline of the
//! treatment model. Hazard integrals are left limits, so the weight used at a
//! failure time is `omega(t-)`. The final weight multiplies by
//! `Delta / K_C(T | H_T)`, so only uncensored subjects carry weight.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectPath};
use crate::config::{EstimatorConfig, EstimatorKind};
use crate::cox::{CoxFit, SurvivalOptions};
use crate::error::{Error, Result};
use crate::estimation::{fit_nuisance, ipcw_weights, NuisanceDiagnostics, PsiEstimate, SolverDiagnostics};
use crate::sftm::PsiParams;

/// Weights `omega_i(t_j-)` at the distinct failure times `t_j <= X_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IptWeightPath {
    pub event_times: Vec<f64>,
    /// `weights[i][j]` for `j < weights[i].len()`; empty for censored subjects.
    pub weights: Vec<Vec<f64>>,
    pub cap: f64,
    pub trimmed: usize,
}

struct TreatmentAtom {
    time: f64,
    d_lambda: f64,
    multiplier: f64,
}

fn treatment_atoms(fit: &CoxFit, path: &SubjectPath<f64>) -> Vec<TreatmentAtom> {
    let mut atoms = Vec::new();
    fit.for_each_block(path, path.v_time, |lo, hi, m| {
        for j in lo..=hi {
            atoms.push(TreatmentAtom {
                time: fit.event_times[j],
                d_lambda: m * fit.increments[j],
                multiplier: m,
            });
        }
    });
    atoms
}

/// Stabilized treatment weight `omega(t-)` for `path` (no censoring factor).
pub fn treatment_weight(fit: &CoxFit, path: &SubjectPath<f64>, t: f64) -> f64 {
    let atoms = treatment_atoms(fit, path);
    let before = |s: f64| {
        let k = fit.event_times.partition_point(|&u| u < s);
        let base = if k == 0 { 0.0 } else { fit.baseline_cumulative(fit.event_times[k - 1]) };
        let own: f64 = atoms.iter().take_while(|a| a.time < s).map(|a| a.d_lambda).sum();
        (base, own)
    };
    if path.gamma && path.v_time < t {
        let (base, own) = before(path.v_time);
        let m = atoms
            .iter()
            .find(|a| a.time == path.v_time)
            .map_or_else(|| fit.risk_multiplier(path, path.v_time), |a| a.multiplier);
        (-base + own).exp() / m
    } else {
        let (base, own) = before(t);
        (-base + own).exp()
    }
}

/// Treatment-times-censoring weights at every failure time, trimmed at the
/// `trim_quantile` quantile of all positive weights.
pub fn compute_msm_weights(
    cohort: &Cohort<f64>,
    treat_fit: &CoxFit,
    cens_fit: Option<&CoxFit>,
    opts: &SurvivalOptions,
    trim_quantile: f64,
) -> Result<(IptWeightPath, usize)> {
    let (cens_w, clamped) = ipcw_weights(cohort, cens_fit, opts)?;
    let mut event_times: Vec<f64> = cohort.subjects().iter().filter(|s| s.delta).map(|s| s.x_time).collect();
    if event_times.is_empty() {
        return Err(Error::NoFailures);
    }
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let base_before: Vec<f64> = event_times
        .iter()
        .map(|&t| {
            let k = treat_fit.event_times.partition_point(|&u| u < t);
            if k == 0 {
                0.0
            } else {
                treat_fit.baseline_cumulative(treat_fit.event_times[k - 1])
            }
        })
        .collect();

    let mut weights = Vec::with_capacity(cohort.len());
    for (path, &cw) in cohort.subjects().iter().zip(&cens_w) {
        if cw == 0.0 {
            weights.push(Vec::new());
            continue;
        }
        let atoms = treatment_atoms(treat_fit, path);
        let last = event_times.partition_point(|&t| t <= path.x_time);
        let mut row = Vec::with_capacity(last);
        let mut k = 0;
        let mut own = 0.0;
        let mut after_v: Option<f64> = None;
        for (j, &t) in event_times[..last].iter().enumerate() {
            if path.gamma && path.v_time < t {
                let w = *after_v.get_or_insert_with(|| treatment_weight(treat_fit, path, t));
                row.push(w * cw);
                continue;
            }
            while k < atoms.len() && atoms[k].time < t {
                own += atoms[k].d_lambda;
                k += 1;
            }
            row.push((-base_before[j] + own).exp() * cw);
        }
        weights.push(row);
    }

    let mut pool: Vec<f64> = weights.iter().flatten().copied().filter(|&w| w > 0.0).collect();
    let cap = if pool.is_empty() || trim_quantile >= 1.0 {
        f64::INFINITY
    } else {
        let idx = ((trim_quantile * pool.len() as f64).ceil() as usize).clamp(1, pool.len()) - 1;
        *pool.select_nth_unstable_by(idx, f64::total_cmp).1
    };
    let mut trimmed = 0;
    for w in weights.iter_mut().flatten() {
        if *w > cap {
            *w = cap;
            trimmed += 1;
        }
    }
    Ok((
        IptWeightPath {
            event_times,
            weights,
            cap,
            trimmed,
        },
        clamped,
    ))
}

/// Weighted Cox fit with the single time-varying regressor `A_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCoxFit {
    pub coef: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub score: f64,
}

struct RiskTotals {
    on: Vec<f64>,
    off: Vec<f64>,
    event_on: Vec<f64>,
    event_total: Vec<f64>,
}

fn risk_totals(cohort: &Cohort<f64>, w: &IptWeightPath) -> RiskTotals {
    let e = w.event_times.len();
    let mut t = RiskTotals {
        on: vec![0.0; e],
        off: vec![0.0; e],
        event_on: vec![0.0; e],
        event_total: vec![0.0; e],
    };
    for (path, row) in cohort.subjects().iter().zip(&w.weights) {
        for (j, &wt) in row.iter().enumerate() {
            let tj = w.event_times[j];
            let on = path.treatment_at(tj);
            if on {
                t.on[j] += wt;
            } else {
                t.off[j] += wt;
            }
            if path.delta && path.x_time == tj {
                t.event_total[j] += wt;
                if on {
                    t.event_on[j] += wt;
                }
            }
        }
    }
    t
}

fn weighted_eval(t: &RiskTotals, beta: f64) -> (f64, f64, f64) {
    let eb = beta.exp();
    let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
    for j in 0..t.on.len() {
        let d = t.event_total[j];
        if d == 0.0 {
            continue;
        }
        let s0 = t.off[j] + t.on[j] * eb;
        let p = t.on[j] * eb / s0;
        ll += t.event_on[j] * beta - d * s0.ln();
        score += t.event_on[j] - d * p;
        info += d * p * (1.0 - p);
    }
    (ll, score, info)
}

/// Newton-Raphson on the weighted Breslow partial likelihood.
pub fn fit_weighted_cox(cohort: &Cohort<f64>, weights: &IptWeightPath) -> Result<WeightedCoxFit> {
    let totals = risk_totals(cohort, weights);
    let scale = totals.event_total.iter().sum::<f64>().max(1.0);
    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = weighted_eval(&totals, beta);
    let mut iterations = 0;
    while (score / scale).abs() >= 1e-12 {
        if iterations >= 50 {
            return Err(Error::CoxNonConvergence {
                iterations,
                score_norm: score.abs(),
            });
        }
        if !(info > 0.0) {
            return Err(Error::Singular("weighted Cox information"));
        }
        let step = score / info;
        let mut lambda = 1.0;
        let mut next;
        loop {
            next = weighted_eval(&totals, beta + lambda * step);
            if next.0 >= ll - 1e-12 * ll.abs() || lambda < 1e-8 {
                break;
            }
            lambda *= 0.5;
        }
        beta += lambda * step;
        iterations += 1;
        if !beta.is_finite() || beta.abs() > 20.0 {
            return Err(Error::CoxDivergence {
                iteration: iterations,
                magnitude: beta.abs(),
            });
        }
        let converged = (next.0 - ll).abs() <= 1e-15 * ll.abs().max(1.0);
        (ll, score, info) = next;
        if converged {
            break;
        }
    }
    Ok(WeightedCoxFit {
        coef: beta,
        loglik: ll,
        iterations,
        score,
    })
}

pub fn estimate_msm(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    let fits = fit_nuisance(cohort, cfg, true)?;
    let (weights, clamped) = compute_msm_weights(
        cohort,
        &fits.treat,
        fits.cens.as_ref(),
        &cfg.survival_options(),
        cfg.weight_trim_quantile,
    )?;
    let fit = fit_weighted_cox(cohort, &weights)?;
    let mut nuisance = NuisanceDiagnostics::for_cohort(cohort);
    nuisance.treatment_coef = fits.treat.gamma.clone();
    nuisance.treatment_iterations = fits.treat.iterations;
    nuisance.censoring_coef = fits.cens.as_ref().map(|f| f.gamma.clone());
    nuisance.censoring_iterations = fits.cens.as_ref().map(|f| f.iterations);
    nuisance.kc_clamped = clamped;
    nuisance.weights_trimmed = weights.trimmed;
    let solver = SolverDiagnostics {
        iterations: fit.iterations,
        final_residual: fit.score.abs(),
        converged: true,
        start: 0.0,
        evaluations: fit.iterations + 1,
    };
    Ok(PsiEstimate::new(EstimatorKind::Msm, None, PsiParams::scalar(fit.coef), solver, nuisance))
}
