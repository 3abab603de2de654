//! Cox proportional hazards models with time-dependent covariates.
//!
//! The same machinery fits the treatment-discontinuation hazard (events at
//! `V` with `gamma = 1`, at risk while `V >= t`) and the censoring hazard
//! (events at `X` with `delta = 0`, at risk while `X >= t`). Ties use
//! Breslow's method and the baseline hazard is the Breslow estimator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectPath};
use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, SquareMatrix};

/// Which transition is treated as the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Discontinuation,
    Censoring,
    /// Failure at `X` with `delta = 1`.
    Failure,
}

impl EventKind {
    #[inline]
    pub fn exit_time(self, path: &SubjectPath<f64>) -> f64 {
        match self {
            EventKind::Discontinuation => path.v_time,
            EventKind::Censoring | EventKind::Failure => path.x_time,
        }
    }

    #[inline]
    pub fn is_event(self, path: &SubjectPath<f64>) -> bool {
        match self {
            EventKind::Discontinuation => path.gamma,
            EventKind::Censoring => !path.delta,
            EventKind::Failure => path.delta,
        }
    }

    fn label(self) -> &'static str {
        match self {
            EventKind::Discontinuation => "treatment discontinuation",
            EventKind::Censoring => "censoring",
            EventKind::Failure => "failure",
        }
    }
}

/// One component of the hazard-model covariate vector `g(t, H_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Baseline(usize),
    Covariate(usize),
    /// On-treatment indicator at `t`.
    Treatment,
    /// Study time `t`.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub event: EventKind,
    pub features: Vec<Feature>,
}

impl EventSpec {
    pub fn new(event: EventKind, features: Vec<Feature>) -> Self {
        Self { event, features }
    }

    /// Null model: no covariates, i.e. Nelson-Aalen / Kaplan-Meier.
    pub fn null(event: EventKind) -> Self {
        Self::new(event, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn evaluate_into(&self, path: &SubjectPath<f64>, t: f64, out: &mut [f64]) {
        let mut cov: Option<&[f64]> = None;
        for (slot, f) in out.iter_mut().zip(&self.features) {
            *slot = match *f {
                Feature::Baseline(k) => path.baseline[k],
                Feature::Covariate(k) => cov.get_or_insert_with(|| path.covariates_at(t))[k],
                Feature::Treatment => {
                    if path.treatment_at(t) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Feature::Time => t,
            };
        }
    }

    pub fn evaluate(&self, path: &SubjectPath<f64>, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(path, t, &mut out);
        out
    }

    fn varies_continuously(&self) -> bool {
        self.features.contains(&Feature::Time)
    }

    /// Times in `(0, upto]` at which the feature vector may jump.
    fn change_points(&self, path: &SubjectPath<f64>, upto: f64, out: &mut Vec<f64>) {
        out.clear();
        if self.features.iter().any(|f| matches!(f, Feature::Covariate(_))) {
            out.extend(
                path.covariates
                    .breakpoints()
                    .iter()
                    .skip(1)
                    .copied()
                    .filter(|&b| b <= upto),
            );
        }
        if self.features.contains(&Feature::Treatment) && path.gamma && path.v_time > 0.0 && path.v_time <= upto {
            out.push(path.v_time);
            out.sort_by(f64::total_cmp);
            out.dedup();
        }
    }
}

/// Maximal runs of event indices `lo..=hi` over which a subject's features
/// are constant, restricted to event times `<= upto`.
pub(crate) fn constant_blocks(
    spec: &EventSpec,
    times: &[f64],
    path: &SubjectPath<f64>,
    upto: f64,
    scratch: &mut Vec<f64>,
    mut emit: impl FnMut(usize, usize),
) {
    let end = times.partition_point(|&t| t <= upto);
    if end == 0 {
        return;
    }
    if spec.varies_continuously() {
        for j in 0..end {
            emit(j, j);
        }
        return;
    }
    spec.change_points(path, upto, scratch);
    let mut lo = 0usize;
    for &cp in scratch.iter() {
        let next = times.partition_point(|&t| t < cp).min(end);
        if next > lo {
            emit(lo, next - 1);
            lo = next;
        }
    }
    if lo < end {
        emit(lo, end - 1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub rel_loglik_tol: f64,
    /// Coefficients beyond this magnitude are reported as divergence.
    pub max_abs_coef: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            score_tol: 1e-9,
            rel_loglik_tol: 1e-12,
            max_abs_coef: 20.0,
        }
    }
}

/// Risk-set design: distinct event times plus constant-feature blocks.
struct RiskDesign {
    p: usize,
    times: Vec<f64>,
    counts: Vec<f64>,
    event_feature_sum: Vec<f64>,
    block_lo: Vec<usize>,
    block_hi: Vec<usize>,
    block_features: Vec<f64>,
}

struct Evaluation {
    loglik: f64,
    score: Vec<f64>,
    info: SquareMatrix<f64>,
    s0: Vec<f64>,
}

impl RiskDesign {
    fn build(cohort: &Cohort<f64>, spec: &EventSpec) -> Result<Self> {
        let kind = spec.event;
        let p = spec.dim();
        let mut event_times: Vec<f64> = cohort
            .subjects()
            .iter()
            .filter(|s| kind.is_event(s))
            .map(|s| kind.exit_time(s))
            .collect();
        if event_times.is_empty() {
            return Err(Error::NoEvents(kind.label()));
        }
        event_times.sort_by(f64::total_cmp);
        let mut times = Vec::new();
        let mut counts = Vec::new();
        for t in event_times {
            if times.last() == Some(&t) {
                *counts.last_mut().unwrap() += 1.0;
            } else {
                times.push(t);
                counts.push(1.0);
            }
        }

        let mut event_feature_sum = vec![0.0; p];
        let mut g = vec![0.0; p];
        let mut block_lo = Vec::new();
        let mut block_hi = Vec::new();
        let mut block_features = Vec::new();
        let mut scratch = Vec::new();
        for s in cohort.subjects() {
            let exit = kind.exit_time(s);
            if kind.is_event(s) {
                spec.evaluate_into(s, exit, &mut g);
                for (acc, v) in event_feature_sum.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            constant_blocks(spec, &times, s, exit, &mut scratch, |lo, hi| {
                block_lo.push(lo);
                block_hi.push(hi);
                let at = block_features.len();
                block_features.resize(at + p, 0.0);
                spec.evaluate_into(s, times[lo], &mut block_features[at..at + p]);
            });
        }
        Ok(Self {
            p,
            times,
            counts,
            event_feature_sum,
            block_lo,
            block_hi,
            block_features,
        })
    }

    fn evaluate(&self, gamma: &[f64], with_derivatives: bool) -> Result<Evaluation> {
        let p = self.p;
        let e = self.times.len();
        let mut s0 = vec![0.0; e + 1];
        let mut s1 = if with_derivatives { vec![0.0; (e + 1) * p] } else { Vec::new() };
        let mut s2 = if with_derivatives { vec![0.0; (e + 1) * p * p] } else { Vec::new() };
        for b in 0..self.block_lo.len() {
            let g = &self.block_features[b * p..(b + 1) * p];
            let w = dot(gamma, g).exp();
            let (lo, hi1) = (self.block_lo[b], self.block_hi[b] + 1);
            s0[lo] += w;
            s0[hi1] -= w;
            if with_derivatives {
                for r in 0..p {
                    let wr = w * g[r];
                    s1[lo * p + r] += wr;
                    s1[hi1 * p + r] -= wr;
                    for c in 0..=r {
                        let v = wr * g[c];
                        s2[(lo * p + r) * p + c] += v;
                        s2[(hi1 * p + r) * p + c] -= v;
                    }
                }
            }
        }
        let mut loglik = dot(gamma, &self.event_feature_sum);
        let mut score = self.event_feature_sum.clone();
        let mut info = SquareMatrix::zeros(p);
        let mut run0 = 0.0;
        let mut run1 = vec![0.0; p];
        let mut run2 = vec![0.0; p * p];
        for j in 0..e {
            run0 += s0[j];
            s0[j] = run0;
            if !(run0 > 0.0) {
                return Err(Error::EmptyRiskSet(self.times[j]));
            }
            let d = self.counts[j];
            loglik -= d * run0.ln();
            if with_derivatives {
                for r in 0..p {
                    run1[r] += s1[j * p + r];
                    for c in 0..=r {
                        run2[r * p + c] += s2[(j * p + r) * p + c];
                    }
                }
                for r in 0..p {
                    let mr = run1[r] / run0;
                    score[r] -= d * mr;
                    for c in 0..=r {
                        let v = d * (run2[r * p + c] / run0 - mr * run1[c] / run0);
                        info.add_to(r, c, v);
                        if c != r {
                            info.add_to(c, r, v);
                        }
                    }
                }
            }
        }
        s0.truncate(e);
        Ok(Evaluation {
            loglik,
            score,
            info,
            s0,
        })
    }
}

/// Fitted proportional hazards model with Breslow baseline increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub gamma: Vec<f64>,
    pub spec: EventSpec,
    /// Distinct event times, strictly increasing.
    pub event_times: Vec<f64>,
    /// Breslow increments `dLambda_0` at `event_times`.
    pub increments: Vec<f64>,
    cumulative: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub score_norm: f64,
}

pub fn fit_cox(cohort: &Cohort<f64>, spec: &EventSpec) -> Result<CoxFit> {
    fit_cox_with(cohort, spec, &CoxOptions::default())
}

pub fn fit_cox_with(cohort: &Cohort<f64>, spec: &EventSpec, opts: &CoxOptions) -> Result<CoxFit> {
    let design = RiskDesign::build(cohort, spec)?;
    let mut gamma = vec![0.0; design.p];
    let mut current = design.evaluate(&gamma, true)?;
    let mut iterations = 0;
    loop {
        let score_norm = max_abs(&current.score);
        if score_norm < opts.score_tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::CoxNonConvergence {
                iterations,
                score_norm,
            });
        }
        let step = current
            .info
            .cholesky_solve(&current.score)
            .ok_or(Error::Singular("Cox information matrix"))?;
        let mut scale = 1.0;
        let mut candidate;
        let mut next;
        let mut halvings = 0;
        loop {
            candidate = gamma.iter().zip(&step).map(|(g, s)| g + scale * s).collect::<Vec<_>>();
            next = design.evaluate(&candidate, true)?;
            if next.loglik >= current.loglik - 1e-12 * current.loglik.abs() || halvings >= 30 {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        iterations += 1;
        let magnitude = max_abs(&candidate);
        if !magnitude.is_finite() || magnitude > opts.max_abs_coef {
            return Err(Error::CoxDivergence {
                iteration: iterations,
                magnitude,
            });
        }
        let rel = (next.loglik - current.loglik).abs() / current.loglik.abs().max(1.0);
        gamma = candidate;
        current = next;
        if rel < opts.rel_loglik_tol {
            break;
        }
    }
    let increments = design
        .counts
        .iter()
        .zip(&current.s0)
        .map(|(d, s0)| d / s0)
        .collect::<Vec<_>>();
    Ok(CoxFit::from_parts(
        gamma,
        spec.clone(),
        design.times,
        increments,
        current.loglik,
        iterations,
        max_abs(&current.score),
    ))
}

/// Log partial likelihood (Breslow ties) at an arbitrary coefficient vector.
pub fn log_partial_likelihood(cohort: &Cohort<f64>, spec: &EventSpec, gamma: &[f64]) -> Result<f64> {
    Ok(RiskDesign::build(cohort, spec)?.evaluate(gamma, false)?.loglik)
}

/// Score vector of the log partial likelihood.
pub fn partial_likelihood_score(cohort: &Cohort<f64>, spec: &EventSpec, gamma: &[f64]) -> Result<Vec<f64>> {
    Ok(RiskDesign::build(cohort, spec)?.evaluate(gamma, true)?.score)
}

/// Recomputes Breslow increments for `fit.gamma` on `cohort`:
/// `dLambda_0(t_j) = d_j / sum_{i at risk} exp(gamma' g_i(t_j))`.
pub fn breslow_baseline(cohort: &Cohort<f64>, fit: &CoxFit) -> Result<CoxFit> {
    let design = RiskDesign::build(cohort, &fit.spec)?;
    let eval = design.evaluate(&fit.gamma, false)?;
    let increments = design.counts.iter().zip(&eval.s0).map(|(d, s0)| d / s0).collect();
    Ok(CoxFit::from_parts(
        fit.gamma.clone(),
        fit.spec.clone(),
        design.times,
        increments,
        eval.loglik,
        fit.iterations,
        fit.score_norm,
    ))
}

/// How `K(t) = P(no event before t | history)` is evaluated from the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalForm {
    #[default]
    ProductLimit,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalOptions {
    pub floor: f64,
    pub form: SurvivalForm,
}

impl Default for SurvivalOptions {
    fn default() -> Self {
        Self {
            floor: 1e-3,
            form: SurvivalForm::ProductLimit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalProb {
    pub value: f64,
    pub clamped: bool,
}

/// One atom of the discrete martingale measure at a cohort event time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleAtom {
    pub time: f64,
    pub event_index: usize,
    pub d_n: f64,
    pub d_lambda: f64,
}

impl MartingaleAtom {
    #[inline]
    pub fn d_m(&self) -> f64 {
        self.d_n - self.d_lambda
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MartingalePath {
    pub atoms: Vec<MartingaleAtom>,
}

impl MartingalePath {
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(MartingaleAtom::d_m).sum()
    }
}

impl CoxFit {
    pub fn from_parts(
        gamma: Vec<f64>,
        spec: EventSpec,
        event_times: Vec<f64>,
        increments: Vec<f64>,
        loglik: f64,
        iterations: usize,
        score_norm: f64,
    ) -> Self {
        let mut run = 0.0;
        let cumulative = increments
            .iter()
            .map(|d| {
                run += d;
                run
            })
            .collect();
        Self {
            gamma,
            spec,
            event_times,
            increments,
            cumulative,
            loglik,
            iterations,
            score_norm,
        }
    }

    pub fn num_events(&self) -> usize {
        self.event_times.len()
    }

    /// Baseline cumulative hazard `Lambda_0(t)`.
    pub fn baseline_cumulative(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&u| u <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Sum of increments over event indices `lo..=hi`.
    #[inline]
    pub(crate) fn increment_sum(&self, lo: usize, hi: usize) -> f64 {
        let before = if lo == 0 { 0.0 } else { self.cumulative[lo - 1] };
        self.cumulative[hi] - before
    }

    /// `exp(gamma' g(t, H_t))` for `path`.
    pub fn risk_multiplier(&self, path: &SubjectPath<f64>, t: f64) -> f64 {
        let g = self.spec.evaluate(path, t);
        dot(&self.gamma, &g).exp()
    }

    /// Visits `(lo, hi, multiplier)` for constant-multiplier runs of event
    /// indices with event time `<= upto`.
    pub fn for_each_block(&self, path: &SubjectPath<f64>, upto: f64, mut visit: impl FnMut(usize, usize, f64)) {
        let mut scratch = Vec::new();
        let mut g = vec![0.0; self.spec.dim()];
        constant_blocks(&self.spec, &self.event_times, path, upto, &mut scratch, |lo, hi| {
            self.spec.evaluate_into(path, self.event_times[lo], &mut g);
            visit(lo, hi, dot(&self.gamma, &g).exp());
        });
    }

    /// `Lambda(t | H_t) = sum_{u <= t} exp(gamma' g(u)) dLambda_0(u)`.
    pub fn cumulative_hazard(&self, path: &SubjectPath<f64>, t: f64) -> f64 {
        let mut total = 0.0;
        self.for_each_block(path, t, |lo, hi, m| total += m * self.increment_sum(lo, hi));
        total
    }

    /// `K(t | H_t)`: product-limit (default) or exponential form, clamped to
    /// `[opts.floor, 1]`.
    pub fn survival_prob(&self, path: &SubjectPath<f64>, t: f64, opts: &SurvivalOptions) -> Result<SurvivalProb> {
        let raw = match opts.form {
            SurvivalForm::Exponential => (-self.cumulative_hazard(path, t)).exp(),
            SurvivalForm::ProductLimit => {
                let mut prod = 1.0;
                let mut violation = None;
                self.for_each_block(path, t, |lo, hi, m| {
                    if violation.is_some() {
                        return;
                    }
                    for j in lo..=hi {
                        let inc = m * self.increments[j];
                        if inc >= 1.0 {
                            violation = Some((self.event_times[j], inc));
                            return;
                        }
                        prod *= 1.0 - inc;
                    }
                });
                if let Some((time, increment)) = violation {
                    return Err(Error::Positivity {
                        id: path.id.clone(),
                        time,
                        increment,
                    });
                }
                prod
            }
        };
        Ok(if raw < opts.floor {
            SurvivalProb {
                value: opts.floor,
                clamped: true,
            }
        } else {
            SurvivalProb {
                value: raw.min(1.0),
                clamped: false,
            }
        })
    }

    /// Martingale measure `dM_i(u) = dN_i(u) - exp(gamma' g_i(u)) dLambda_0(u) Y_i(u)`
    /// on the event times at which the subject is at risk.
    pub fn martingale_path(&self, path: &SubjectPath<f64>) -> MartingalePath {
        let kind = self.spec.event;
        let exit = kind.exit_time(path);
        let event = kind.is_event(path);
        let mut atoms = Vec::new();
        self.for_each_block(path, exit, |lo, hi, m| {
            for j in lo..=hi {
                let time = self.event_times[j];
                atoms.push(MartingaleAtom {
                    time,
                    event_index: j,
                    d_n: if event && time == exit { 1.0 } else { 0.0 },
                    d_lambda: m * self.increments[j],
                });
            }
        });
        MartingalePath { atoms }
    }

    /// Baseline hazard rate at event index `j`, smoothed over a window of
    /// `ceil(sqrt(E))` neighbouring event times on each side.
    pub fn smoothed_baseline_rate(&self, j: usize) -> f64 {
        let e = self.event_times.len();
        let k = (e as f64).sqrt().ceil() as usize;
        let lo = j.saturating_sub(k);
        let hi = (j + k).min(e - 1);
        if hi > lo {
            (self.cumulative[hi] - self.cumulative[lo]) / (self.event_times[hi] - self.event_times[lo])
        } else if self.event_times[0] > 0.0 {
            self.cumulative[0] / self.event_times[0]
        } else {
            self.increments[0]
        }
    }

    /// Index of the event time nearest to `u`.
    pub fn nearest_event_index(&self, u: f64) -> usize {
        let k = self.event_times.partition_point(|&t| t < u);
        if k == 0 {
            0
        } else if k == self.event_times.len() {
            k - 1
        } else if (self.event_times[k] - u) < (u - self.event_times[k - 1]) {
            k
        } else {
            k - 1
        }
    }

    /// Smoothed hazard rate `lambda(u | H_u)` for `path`.
    pub fn hazard_rate(&self, path: &SubjectPath<f64>, u: f64) -> f64 {
        self.smoothed_baseline_rate(self.nearest_event_index(u)) * self.risk_multiplier(path, u)
    }

    /// Diagnostic dump of the baseline increments as `time,dLambda0`.
    pub fn write_baseline_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "dLambda0"])?;
        for (t, d) in self.event_times.iter().zip(&self.increments) {
            w.write_record([t.to_string(), d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("baseline", e))?;
        Ok(())
    }
}

/// Martingale paths for every subject of `cohort`, in cohort order.
pub fn martingale_increments(fit: &CoxFit, cohort: &Cohort<f64>) -> Vec<MartingalePath> {
    cohort.subjects().iter().map(|s| fit.martingale_path(s)).collect()
}
