//! Discrete-time g-estimation on an equally spaced grid.
//!
//! Follow-up is cut at `t_m = m tau / (K - 1)`. Interval `m` covers
//! `(t_{m-1}, t_m]`; its covariate is the time average of `L` over the
//! interval and its treatment status is `A_{t_m}`. Discontinuation and
//! censoring probabilities per interval come from pooled logistic models,
//! and the estimating equation is the discrete-sum analogue of the
//! continuous one, with `dN` replaced by the interval discontinuation
//! indicator and the compensator by the fitted probability.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::config::{resolve_features, CVariant, EstimatorConfig, EstimatorKind, MeanDesign};
use crate::cox::Feature;
use crate::error::{Error, Result};
use crate::estimation::{solve_system, EquationSystem, NuisanceDiagnostics, PsiEstimate, SubjectTerms};
use crate::linalg::SquareMatrix;
use crate::logistic::{fit_logistic, LogisticFit};
use crate::sftm::{Segment, TransformSegments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteGrid {
    pub grid_size: usize,
    pub tau: f64,
}

impl DiscreteGrid {
    pub fn new(grid_size: usize, tau: f64) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("grid horizon must be positive, got {tau}")));
        }
        Ok(Self { grid_size, tau })
    }

    /// Grid from 0 to the maximum follow-up of `cohort`.
    pub fn for_cohort(cohort: &Cohort<f64>, grid_size: usize) -> Result<Self> {
        Self::new(grid_size, cohort.max_follow_up())
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.tau / (self.grid_size - 1) as f64
    }

    #[inline]
    pub fn point(&self, m: usize) -> f64 {
        if m == self.grid_size - 1 {
            self.tau
        } else {
            m as f64 * self.spacing()
        }
    }

    /// Index `m >= 1` of the interval `(t_{m-1}, t_m]` containing `t`.
    pub fn interval_of(&self, t: f64) -> usize {
        let mut m = ((t / self.spacing()).ceil() as usize).clamp(1, self.grid_size - 1);
        while m > 1 && self.point(m - 1) >= t {
            m -= 1;
        }
        while m < self.grid_size - 1 && self.point(m) < t {
            m += 1;
        }
        m
    }
}

/// One subject-interval of the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub m: usize,
    /// Treated at `t_{m-1}`: at risk of discontinuing in this interval.
    pub a_prev: bool,
    /// Treated at `t_m`.
    pub a_cur: bool,
    /// Average covariates over `(t_{m-1}, t_m]`.
    pub l_avg: Vec<f64>,
    pub discontinued: bool,
    pub censored: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePanel {
    pub grid: DiscreteGrid,
    /// Rows per subject, in cohort order.
    pub subjects: Vec<Vec<PanelRow>>,
}

pub fn discretize(cohort: &Cohort<f64>, grid: &DiscreteGrid) -> DiscretePanel {
    let subjects = cohort
        .subjects()
        .iter()
        .map(|s| {
            let last = grid.interval_of(s.x_time);
            (1..=last)
                .map(|m| {
                    let (lo, hi) = (grid.point(m - 1), grid.point(m));
                    let a_prev = s.treatment_at(lo);
                    let a_cur = s.treatment_at(hi);
                    PanelRow {
                        m,
                        a_prev,
                        a_cur,
                        l_avg: s.covariates.average(lo, hi),
                        discontinued: a_prev && !a_cur,
                        censored: m == last && !s.delta,
                        failed: m == last && s.delta,
                    }
                })
                .collect()
        })
        .collect();
    DiscretePanel {
        grid: *grid,
        subjects,
    }
}

fn design_row(features: &[Feature], baseline: &[f64], row: &PanelRow, grid: &DiscreteGrid, out: &mut Vec<f64>) {
    out.push(1.0);
    for f in features {
        out.push(match *f {
            Feature::Baseline(k) => baseline[k],
            Feature::Covariate(k) => row.l_avg[k],
            Feature::Time => grid.point(row.m - 1),
            Feature::Treatment => f64::from(u8::from(row.a_prev)),
        });
    }
}

fn pooled_fit(
    cohort: &Cohort<f64>,
    panel: &DiscretePanel,
    features: &[Feature],
    include: impl Fn(&PanelRow) -> bool,
    outcome: impl Fn(&PanelRow) -> bool,
) -> Result<Option<LogisticFit>> {
    let k = 1 + features.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (s, rows) in cohort.subjects().iter().zip(&panel.subjects) {
        for row in rows.iter().filter(|r| include(r)) {
            design_row(features, &s.baseline, row, &panel.grid, &mut x);
            y.push(f64::from(u8::from(outcome(row))));
        }
    }
    if !y.contains(&1.0) {
        return Ok(None);
    }
    fit_logistic(&x, k, &y).map(Some)
}

pub fn estimate_discrete_g(cohort: &Cohort<f64>, grid: &DiscreteGrid, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    let panel = discretize(cohort, grid);
    let treat_features = resolve_features(cohort, cfg.treatment_features.as_deref())?;
    let cens_features = resolve_features(cohort, cfg.censoring_features.as_deref())?;
    let modifiers = cfg.modifier_indices(cohort)?;
    let treat = pooled_fit(cohort, &panel, &treat_features, |r| r.a_prev, |r| r.discontinued)?
        .ok_or_else(|| Error::NonIdentifiable("no discontinuations on the grid".into()))?;
    let cens = pooled_fit(cohort, &panel, &cens_features, |_| true, |r| r.censored)?;

    let dt = grid.spacing();
    let p = 1 + modifiers.len();
    let mut terms = Vec::new();
    let mut gram: Option<SquareMatrix<f64>> = None;
    let mut clamped = 0;
    let mut xrow = Vec::new();
    let mut mrow = Vec::new();
    for (index, (s, rows)) in cohort.subjects().iter().zip(&panel.subjects).enumerate() {
        if !s.delta {
            continue;
        }
        let mut kc = 1.0;
        if let Some(cf) = &cens {
            for row in &rows[..rows.len() - 1] {
                xrow.clear();
                design_row(&cens_features, &s.baseline, row, grid, &mut xrow);
                kc *= 1.0 - cf.predict(&xrow);
            }
        }
        if kc < cfg.trim_floor {
            kc = cfg.trim_floor;
            clamped += 1;
        }
        let weight = 1.0 / kc;
        let mean_row = |row: Option<&PanelRow>, out: &mut Vec<f64>| {
            out.clear();
            out.push(1.0);
            out.extend_from_slice(&s.baseline);
            match row {
                None => out.extend_from_slice(s.covariates_at(0.0)),
                Some(r) => {
                    out.extend_from_slice(&r.l_avg);
                    out.push(grid.point(r.m - 1));
                }
            }
        };
        let d = 1 + s.baseline.len() + s.covariates.dim() + usize::from(cfg.mean_model == MeanDesign::AtRisk);
        let g = gram.get_or_insert_with(|| SquareMatrix::zeros(d));
        let mut sv = vec![0.0; p];
        let mut q = vec![0.0; p * d];
        let mut r = vec![0.0; d];
        if cfg.mean_model == MeanDesign::BaselineOnly {
            mean_row(None, &mut mrow);
            r.copy_from_slice(&mrow);
            g.add_outer(&mrow, weight);
        }
        let mut segments = Vec::with_capacity(rows.len());
        for row in rows {
            segments.push(Segment {
                length: dt,
                treated: row.a_cur,
                modifiers: modifiers.iter().map(|&k| row.l_avg[k]).collect(),
            });
            if !row.a_prev {
                continue;
            }
            xrow.clear();
            design_row(&treat_features, &s.baseline, row, grid, &mut xrow);
            let prob = treat.predict(&xrow);
            let d_m = f64::from(u8::from(row.discontinued)) - prob;
            let base = match cfg.c_variant {
                CVariant::Simple => 1.0,
                CVariant::Optimal => dt / prob,
            };
            let c: Vec<f64> = std::iter::once(base)
                .chain(modifiers.iter().map(|&k| base * row.l_avg[k]))
                .collect();
            if cfg.mean_model == MeanDesign::AtRisk {
                mean_row(Some(row), &mut mrow);
                for (acc, v) in r.iter_mut().zip(&mrow) {
                    *acc += v;
                }
                g.add_outer(&mrow, weight);
            }
            for (k, ck) in c.iter().enumerate() {
                sv[k] += ck * d_m;
                for (acc, v) in q[k * d..(k + 1) * d].iter_mut().zip(&mrow) {
                    *acc += ck * d_m * v;
                }
            }
        }
        terms.push(SubjectTerms {
            index,
            weight,
            transform: TransformSegments::from_segments(segments),
            s: sv,
            q,
            r,
        });
    }
    if terms.is_empty() {
        return Err(Error::NoFailures);
    }
    let sys = EquationSystem::from_terms(cohort.len(), p, terms, gram);
    let (psi, solver) = solve_system(&sys, &cfg.solver)?;
    let mut nuisance = NuisanceDiagnostics::for_cohort(cohort);
    nuisance.treatment_coef = treat.beta.clone();
    nuisance.treatment_iterations = treat.iterations;
    nuisance.censoring_coef = cens.as_ref().map(|f| f.beta.clone());
    nuisance.censoring_iterations = cens.as_ref().map(|f| f.iterations);
    nuisance.kc_clamped = clamped;
    nuisance.logistic_iterations = Some(std::iter::once(treat.iterations).chain(cens.as_ref().map(|f| f.iterations)).collect());
    Ok(PsiEstimate::new(EstimatorKind::Disc, Some(cfg.c_variant), psi, solver, nuisance))
}
