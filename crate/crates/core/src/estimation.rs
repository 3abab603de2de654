//! The IPCW doubly robust estimating equation
//!
//! `G(psi) = P_n[ w_i int c(H_u) {U_i(psi) - E(U(psi) | H_u, V >= u; xi)} dM_V,i(u) ]`
//!
//! with `w_i = Delta_i / K_C(T_i | H_{T_i})`, its Newton solver and the
//! per-subject reductions that make each evaluation `O(n)`.
//!
//! The index `c` does not depend on `psi`, so for every subject the
//! martingale integrals `S_i = int c dM` and `Q_i = int c x(u)' dM` are
//! computed once. The working mean model is linear in regressors `x`, so
//! `G(psi) = n^-1 sum_i w_i {U_i(psi) S_i - Q_i xi(psi)}`, where `xi(psi)`
//! solves fixed weighted normal equations with right-hand side
//! `sum_i w_i U_i(psi) r_i`.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectPath};
use crate::config::{CVariant, EstimatorConfig, EstimatorKind, MeanDesign, SolverConfig};
use crate::cox::{fit_cox, CoxFit, SurvivalOptions};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, SquareMatrix};
use crate::sftm::{PsiParams, TransformSegments};

/// Index function `c(H_u)`.
#[derive(Debug, Clone, Copy)]
pub enum CIndexChoice<'a> {
    /// `A_{u-} (1, g(L_u))`.
    Simple,
    /// `lambda_V(u | H_u)^-1 (1, g(L_u))` from the fitted treatment model.
    Optimal(&'a CoxFit),
}

/// `c^opt(H_u)` under the exponential approximation of the residual time to
/// discontinuation and constant conditional variance of `U(psi)`.
pub fn c_optimal(treat_fit: &CoxFit, path: &SubjectPath<f64>, u: f64, modifiers: &[usize]) -> Vec<f64> {
    let rate = treat_fit.hazard_rate(path, u);
    let inv = 1.0 / rate;
    let cov = path.covariates_at(u);
    std::iter::once(inv).chain(modifiers.iter().map(|&k| inv * cov[k])).collect()
}

/// Regressors of the working mean model.
pub fn mean_regressors(design: MeanDesign, path: &SubjectPath<f64>, u: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(&path.baseline);
    match design {
        MeanDesign::BaselineOnly => out.extend_from_slice(path.covariates_at(0.0)),
        MeanDesign::AtRisk => {
            out.extend_from_slice(path.covariates_at(u));
            out.push(u);
        }
    }
}

/// Fitted linear model for `E{U(psi) | H_u, V >= u}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanModel {
    pub design: MeanDesign,
    pub xi: Vec<f64>,
}

impl ConditionalMeanModel {
    pub fn predict(&self, path: &SubjectPath<f64>, u: f64) -> f64 {
        let mut x = Vec::new();
        mean_regressors(self.design, path, u, &mut x);
        x.iter().zip(&self.xi).map(|(a, b)| a * b).sum()
    }
}

/// Per-subject reductions of the estimating function.
#[derive(Debug, Clone)]
pub struct SubjectTerms {
    /// Position of the subject in its cohort.
    pub index: usize,
    pub weight: f64,
    pub transform: TransformSegments<f64>,
    /// `int c dM`, length `p`.
    pub s: Vec<f64>,
    /// `int c x' dM`, `p x d` row-major.
    pub q: Vec<f64>,
    /// Sum of mean-model regressor rows, length `d`.
    pub r: Vec<f64>,
}

/// How subjects are weighted and where `U(psi)` is integrated to.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Every subject with weight one and `U` integrated to `X`.
    Naive,
    /// `Delta / K_C(T-)`; `None` means no censoring (`K_C = 1`).
    Ipcw {
        cens_fit: Option<&'a CoxFit>,
        opts: SurvivalOptions,
    },
}

/// Inputs fixing the shape of an estimating equation.
#[derive(Debug, Clone, Copy)]
pub struct EquationSpec<'a> {
    pub treat_fit: &'a CoxFit,
    pub c_choice: CIndexChoice<'a>,
    /// Positive constant multiplying `c`.
    pub c_scale: f64,
    pub design: Option<MeanDesign>,
    pub modifiers: &'a [usize],
}

impl<'a> EquationSpec<'a> {
    pub fn new(treat_fit: &'a CoxFit, c_choice: CIndexChoice<'a>, design: Option<MeanDesign>, modifiers: &'a [usize]) -> Self {
        Self {
            treat_fit,
            c_choice,
            c_scale: 1.0,
            design,
            modifiers,
        }
    }
}

/// Weights `Delta_i / K_C(T_i- | H)` and the number of clamped `K_C`.
pub fn ipcw_weights(cohort: &Cohort<f64>, cens_fit: Option<&CoxFit>, opts: &SurvivalOptions) -> Result<(Vec<f64>, usize)> {
    let mut clamped = 0;
    let mut weights = Vec::with_capacity(cohort.len());
    for s in cohort.subjects() {
        if !s.delta {
            weights.push(0.0);
            continue;
        }
        let k = match cens_fit {
            Some(fit) => {
                // left limit: censoring at T itself does not precede failure
                let kc = fit.survival_prob(s, s.x_time.next_down(), opts)?;
                clamped += usize::from(kc.clamped);
                kc.value
            }
            None => 1.0,
        };
        weights.push(1.0 / k);
    }
    Ok((weights, clamped))
}

/// The estimating function as a map `psi -> G(psi)`.
#[derive(Debug, Clone)]
pub struct EquationSystem {
    n: usize,
    p: usize,
    d: usize,
    terms: Vec<SubjectTerms>,
    gram: Option<SquareMatrix<f64>>,
    clamped: usize,
}

impl EquationSystem {
    /// Assembles a system from precomputed terms; `gram` is the weighted
    /// normal-equation matrix when a mean model is used.
    pub fn from_terms(n: usize, p: usize, terms: Vec<SubjectTerms>, gram: Option<SquareMatrix<f64>>) -> Self {
        let d = gram.as_ref().map_or(0, SquareMatrix::dim);
        Self {
            n,
            p,
            d,
            terms,
            gram,
            clamped: 0,
        }
    }

    pub fn build(cohort: &Cohort<f64>, spec: &EquationSpec<'_>, weighting: Weighting<'_>) -> Result<Self> {
        let (weights, clamped) = match weighting {
            Weighting::Naive => (vec![1.0; cohort.len()], 0),
            Weighting::Ipcw { cens_fit, opts } => ipcw_weights(cohort, cens_fit, &opts)?,
        };
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::NoFailures);
        }
        let fit = spec.treat_fit;
        let p = 1 + spec.modifiers.len();
        let shared_rates: Option<Vec<f64>> = match spec.c_choice {
            CIndexChoice::Optimal(cf) if std::ptr::eq(cf, fit) => {
                Some((0..fit.num_events()).map(|j| fit.smoothed_baseline_rate(j)).collect())
            }
            _ => None,
        };
        let mut d = 0;
        let mut gram: Option<SquareMatrix<f64>> = None;
        let mut x = Vec::new();
        let mut c = vec![0.0; p];
        let mut terms = Vec::new();
        for (index, (path, &weight)) in cohort.subjects().iter().zip(&weights).enumerate() {
            if weight == 0.0 {
                continue;
            }
            if let Some(design) = spec.design {
                mean_regressors(design, path, 0.0, &mut x);
                if gram.is_none() {
                    d = x.len();
                    gram = Some(SquareMatrix::zeros(d));
                }
            }
            let mut s = vec![0.0; p];
            let mut q = vec![0.0; p * d];
            let mut r = vec![0.0; d];
            if spec.design == Some(MeanDesign::BaselineOnly) {
                r.copy_from_slice(&x);
                gram.as_mut().expect("gram").add_outer(&x, weight);
            }
            let needs_cov = !spec.modifiers.is_empty();
            fit.for_each_block(path, path.v_time, |lo, hi, m| {
                for j in lo..=hi {
                    let u = fit.event_times[j];
                    let d_n = if path.gamma && u == path.v_time { 1.0 } else { 0.0 };
                    let d_m = d_n - m * fit.increments[j];
                    let base = match spec.c_choice {
                        CIndexChoice::Simple => 1.0,
                        CIndexChoice::Optimal(cf) => match &shared_rates {
                            Some(rates) => 1.0 / (rates[j] * m),
                            None => 1.0 / cf.hazard_rate(path, u),
                        },
                    } * spec.c_scale;
                    c[0] = base;
                    if needs_cov {
                        let cov = path.covariates_at(u);
                        for (slot, &k) in c[1..].iter_mut().zip(spec.modifiers) {
                            *slot = base * cov[k];
                        }
                    }
                    for (acc, ck) in s.iter_mut().zip(&c) {
                        *acc += ck * d_m;
                    }
                    if let Some(design) = spec.design {
                        if design == MeanDesign::AtRisk {
                            mean_regressors(design, path, u, &mut x);
                            for (acc, xv) in r.iter_mut().zip(&x) {
                                *acc += xv;
                            }
                            gram.as_mut().expect("gram").add_outer(&x, weight);
                        }
                        for (row, ck) in c.iter().enumerate() {
                            let f = ck * d_m;
                            for (acc, xv) in q[row * d..(row + 1) * d].iter_mut().zip(&x) {
                                *acc += f * xv;
                            }
                        }
                    }
                }
            });
            let end = path.x_time;
            terms.push(SubjectTerms {
                index,
                weight,
                transform: TransformSegments::new(path, end, spec.modifiers),
                s,
                q,
                r,
            });
        }
        let mut sys = Self::from_terms(cohort.len(), p, terms, gram);
        sys.clamped = clamped;
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn terms(&self) -> &[SubjectTerms] {
        &self.terms
    }

    /// Number of `K_C` values raised to the trim floor.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// True when every martingale integral vanishes, so `G` is identically 0.
    pub fn is_degenerate(&self) -> bool {
        self.terms.iter().all(|t| t.s.iter().chain(&t.q).all(|&v| v == 0.0))
    }

    /// Mean-model coefficients at `psi` (weighted least squares).
    pub fn fit_mean(&self, psi: &PsiParams) -> Result<Option<Vec<f64>>> {
        let Some(gram) = &self.gram else {
            return Ok(None);
        };
        let mut rhs = vec![0.0; self.d];
        for t in &self.terms {
            let wu = t.weight * t.transform.transform(psi);
            for (acc, rv) in rhs.iter_mut().zip(&t.r) {
                *acc += wu * rv;
            }
        }
        gram.cholesky_solve(&rhs)
            .filter(|xi| xi.iter().all(|v| v.is_finite()))
            .map(Some)
            .ok_or(Error::RankDeficient("conditional mean model"))
    }

    /// `G(psi)` with the mean model refit at `psi`.
    pub fn evaluate(&self, psi: &PsiParams) -> Result<Vec<f64>> {
        let xi = self.fit_mean(psi)?;
        Ok(self.evaluate_with(psi, xi.as_deref()))
    }

    /// `G(psi)` at fixed mean-model coefficients (`None`: mean model 0).
    pub fn evaluate_with(&self, psi: &PsiParams, xi: Option<&[f64]>) -> Vec<f64> {
        let mut g = vec![0.0; self.p];
        for t in &self.terms {
            let contrib = self.term_value(t, psi, xi);
            for (acc, v) in g.iter_mut().zip(&contrib) {
                *acc += v;
            }
        }
        let n = self.n as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn term_value(&self, t: &SubjectTerms, psi: &PsiParams, xi: Option<&[f64]>) -> Vec<f64> {
        let u = t.transform.transform(psi);
        (0..self.p)
            .map(|k| {
                let mut v = u * t.s[k];
                if let Some(xi) = xi {
                    if self.d > 0 {
                        v -= t.q[k * self.d..(k + 1) * self.d].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                t.weight * v
            })
            .collect()
    }

    /// Per-subject contributions (cohort order; zero for weightless subjects).
    pub fn contributions(&self, psi: &PsiParams) -> Result<Vec<Vec<f64>>> {
        let xi = self.fit_mean(psi)?;
        let mut out = vec![vec![0.0; self.p]; self.n];
        for t in &self.terms {
            out[t.index] = self.term_value(t, psi, xi.as_deref());
        }
        Ok(out)
    }
}

/// Outcome of the Newton search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub start: f64,
    pub evaluations: usize,
}

/// Newton-Raphson with a central-difference Jacobian, step halving and
/// restarts from each `opts.starts` value of the first component.
pub fn newton_solve(
    p: usize,
    opts: &SolverConfig,
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    let mut evaluations = 0usize;
    let mut total_iterations = 0usize;
    let mut best = f64::INFINITY;
    let mut eval = |x: &[f64], evaluations: &mut usize| -> Option<Vec<f64>> {
        *evaluations += 1;
        f(x).ok().filter(|g| g.iter().all(|v| v.is_finite()))
    };
    for &start in &opts.starts {
        let mut x = vec![0.0; p];
        x[0] = start;
        let Some(mut g) = eval(&x, &mut evaluations) else {
            continue;
        };
        let mut res = max_abs(&g);
        let mut iterations = 0;
        loop {
            best = best.min(res);
            if res < opts.tol {
                return Ok((
                    x,
                    SolverDiagnostics {
                        iterations,
                        final_residual: res,
                        converged: true,
                        start,
                        evaluations,
                    },
                ));
            }
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut jac = SquareMatrix::zeros(p);
            let mut ok = true;
            for k in 0..p {
                let h = 1e-5 * x[k].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                match (eval(&xp, &mut evaluations), eval(&xm, &mut evaluations)) {
                    (Some(gp), Some(gm)) => {
                        for r in 0..p {
                            jac.set(r, k, (gp[r] - gm[r]) / (2.0 * h));
                        }
                    }
                    _ => ok = false,
                }
            }
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let Some(step) = ok.then(|| jac.lu_solve(&neg)).flatten() else {
                break;
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda > 1e-8 {
                let xn: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
                if let Some(gn) = eval(&xn, &mut evaluations) {
                    let rn = max_abs(&gn);
                    if rn < res {
                        x = xn;
                        g = gn;
                        res = rn;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        total_iterations += iterations;
    }
    Err(Error::NoRoot {
        best_residual: best,
        iterations: total_iterations,
        starts: opts.starts.len(),
    })
}

/// Nuisance fits, sample counts and trimming diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub n: usize,
    pub failures: usize,
    pub discontinuations: usize,
    pub treatment_coef: Vec<f64>,
    pub treatment_iterations: usize,
    pub censoring_coef: Option<Vec<f64>>,
    pub censoring_iterations: Option<usize>,
    /// Subjects whose `K_C` was raised to the trim floor.
    pub kc_clamped: usize,
    /// Weights capped at the trimming quantile (msm).
    pub weights_trimmed: usize,
    /// IRLS iterations of the pooled logistic models (disc).
    pub logistic_iterations: Option<Vec<usize>>,
}

impl NuisanceDiagnostics {
    pub fn for_cohort(cohort: &Cohort<f64>) -> Self {
        Self {
            n: cohort.len(),
            failures: cohort.subjects().iter().filter(|s| s.delta).count(),
            discontinuations: cohort.subjects().iter().filter(|s| s.gamma).count(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackknifeSummary {
    pub groups: usize,
    pub failed: usize,
    pub seed: u64,
    pub variance: Vec<f64>,
}

/// Point estimate with optional jackknife inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub estimator: EstimatorKind,
    pub c_variant: Option<CVariant>,
    pub psi_hat: PsiParams,
    pub exp_psi1: f64,
    pub se: Option<Vec<f64>>,
    pub ci_lo: Option<Vec<f64>>,
    pub ci_hi: Option<Vec<f64>>,
    /// `exp` of the `psi_1` interval endpoints.
    pub exp_ci: Option<[f64; 2]>,
    pub solver: SolverDiagnostics,
    pub nuisance: NuisanceDiagnostics,
    pub jackknife: Option<JackknifeSummary>,
}

pub const WALD_Z: f64 = 1.959_963_984_540_054;

impl PsiEstimate {
    pub fn new(
        estimator: EstimatorKind,
        c_variant: Option<CVariant>,
        psi_hat: PsiParams,
        solver: SolverDiagnostics,
        nuisance: NuisanceDiagnostics,
    ) -> Self {
        Self {
            estimator,
            c_variant,
            exp_psi1: psi_hat.psi1.exp(),
            psi_hat,
            se: None,
            ci_lo: None,
            ci_hi: None,
            exp_ci: None,
            solver,
            nuisance,
            jackknife: None,
        }
    }

    /// Attaches jackknife variances and 95% Wald intervals.
    pub fn with_jackknife(mut self, summary: JackknifeSummary) -> Self {
        let est = self.psi_hat.to_vec();
        let se: Vec<f64> = summary.variance.iter().map(|v| v.sqrt()).collect();
        let lo: Vec<f64> = est.iter().zip(&se).map(|(e, s)| e - WALD_Z * s).collect();
        let hi: Vec<f64> = est.iter().zip(&se).map(|(e, s)| e + WALD_Z * s).collect();
        self.exp_ci = Some([lo[0].exp(), hi[0].exp()]);
        self.se = Some(se);
        self.ci_lo = Some(lo);
        self.ci_hi = Some(hi);
        self.jackknife = Some(summary);
        self
    }

    pub fn covers(&self, psi1: f64) -> Option<bool> {
        Some(self.ci_lo.as_ref()?[0] <= psi1 && psi1 <= self.ci_hi.as_ref()?[0])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

/// Treatment and censoring models fitted per the configuration.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub treat: CoxFit,
    /// `None` when nobody is censored.
    pub cens: Option<CoxFit>,
}

pub fn fit_nuisance(cohort: &Cohort<f64>, cfg: &EstimatorConfig, with_censoring: bool) -> Result<NuisanceFits> {
    let treat = match fit_cox(cohort, &cfg.treatment_spec(cohort)?) {
        Err(Error::NoEvents(_)) => {
            return Err(Error::NonIdentifiable("no treatment discontinuations observed".into()))
        }
        other => other?,
    };
    let cens = if with_censoring && cohort.subjects().iter().any(|s| !s.delta) {
        Some(fit_cox(cohort, &cfg.censoring_spec(cohort)?)?)
    } else {
        None
    };
    Ok(NuisanceFits { treat, cens })
}

/// `G(psi)` at a fixed mean model (`None`: mean model 0).
pub fn estimating_function(
    cohort: &Cohort<f64>,
    psi: &PsiParams,
    c_choice: CIndexChoice<'_>,
    mean_model: Option<&ConditionalMeanModel>,
    treat_fit: &CoxFit,
    cens_fit: Option<&CoxFit>,
    opts: &SurvivalOptions,
    modifiers: &[usize],
) -> Result<Vec<f64>> {
    let spec = EquationSpec::new(treat_fit, c_choice, mean_model.map(|m| m.design), modifiers);
    let sys = EquationSystem::build(cohort, &spec, Weighting::Ipcw { cens_fit, opts: *opts })?;
    Ok(sys.evaluate_with(psi, mean_model.map(|m| m.xi.as_slice())))
}

/// Weighted least-squares fit of the working mean model at `psi`.
pub fn fit_mean_model(
    cohort: &Cohort<f64>,
    psi: &PsiParams,
    cens_fit: Option<&CoxFit>,
    treat_fit: &CoxFit,
    design: MeanDesign,
    opts: &SurvivalOptions,
    modifiers: &[usize],
) -> Result<ConditionalMeanModel> {
    let spec = EquationSpec::new(treat_fit, CIndexChoice::Simple, Some(design), modifiers);
    let sys = EquationSystem::build(cohort, &spec, Weighting::Ipcw { cens_fit, opts: *opts })?;
    let xi = sys.fit_mean(psi)?.expect("design present");
    Ok(ConditionalMeanModel { design, xi })
}

/// Builds the estimating equation of a naive, ipcw or dr configuration.
pub fn build_system(cohort: &Cohort<f64>, cfg: &EstimatorConfig, fits: &NuisanceFits, modifiers: &[usize]) -> Result<EquationSystem> {
    let c_choice = match cfg.c_variant {
        CVariant::Simple => CIndexChoice::Simple,
        CVariant::Optimal => CIndexChoice::Optimal(&fits.treat),
    };
    let (design, weighting) = match cfg.estimator {
        EstimatorKind::Naive => (Some(cfg.mean_model), Weighting::Naive),
        EstimatorKind::Ipcw => (
            None,
            Weighting::Ipcw {
                cens_fit: fits.cens.as_ref(),
                opts: cfg.survival_options(),
            },
        ),
        EstimatorKind::Dr => (
            Some(cfg.mean_model),
            Weighting::Ipcw {
                cens_fit: fits.cens.as_ref(),
                opts: cfg.survival_options(),
            },
        ),
        other => return Err(Error::Config(format!("{} is not an estimating-equation estimator", other.as_str()))),
    };
    let spec = EquationSpec::new(&fits.treat, c_choice, design, modifiers);
    EquationSystem::build(cohort, &spec, weighting)
}

/// Solves a prepared system for `psi`.
pub fn solve_system(sys: &EquationSystem, solver: &SolverConfig) -> Result<(PsiParams, SolverDiagnostics)> {
    if sys.is_degenerate() {
        return Err(Error::NonIdentifiable("all martingale integrals vanish".into()));
    }
    let (x, diag) = newton_solve(sys.dim(), solver, |x| sys.evaluate(&PsiParams::from_slice(x)))?;
    Ok((PsiParams::from_slice(&x), diag))
}

/// Point estimate for the naive, ipcw and dr estimators.
pub fn solve_psi(cohort: &Cohort<f64>, cfg: &EstimatorConfig) -> Result<PsiEstimate> {
    let modifiers = cfg.modifier_indices(cohort)?;
    let fits = fit_nuisance(cohort, cfg, cfg.estimator != EstimatorKind::Naive)?;
    let sys = build_system(cohort, cfg, &fits, &modifiers)?;
    let (psi, solver) = solve_system(&sys, &cfg.solver)?;
    let mut nuisance = NuisanceDiagnostics::for_cohort(cohort);
    nuisance.treatment_coef = fits.treat.gamma.clone();
    nuisance.treatment_iterations = fits.treat.iterations;
    nuisance.censoring_coef = fits.cens.as_ref().map(|f| f.gamma.clone());
    nuisance.censoring_iterations = fits.cens.as_ref().map(|f| f.iterations);
    nuisance.kc_clamped = sys.clamped();
    Ok(PsiEstimate::new(cfg.estimator, Some(cfg.c_variant), psi, solver, nuisance))
}
