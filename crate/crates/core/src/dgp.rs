//! Synthetic cohorts with time-varying confounding of treatment
//! discontinuation.
//!
//! Per subject: `U ~ Exp(u_rate)`, `X_0 ~ Bernoulli(x0_prob)`, and a
//! Gaussian covariate vector at the measurement times with mean
//! `coef * U + offset` and AR correlation `ar_corr^|i-j|`. Discontinuation
//! `V_1` follows a proportional hazards model in `(X_0, L_t)`. The failure
//! time solves `U = int_0^T exp(psi* A_u + b X_0) du` exactly. After `V_1`
//! the observed covariate drifts by `log(t - V_1)`, recorded on a geometric
//! grid, and censoring follows a proportional hazards model in the observed
//! trajectory.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, StepFunction, SubjectPath};
use crate::config::EstimatorConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `base * exp(coef_x0 * X_0 + coef_l * L_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardModel {
    pub base: f64,
    pub coef_x0: f64,
    pub coef_l: f64,
}

impl HazardModel {
    #[inline]
    pub fn rate(&self, x0: f64, l: f64) -> f64 {
        self.base * (self.coef_x0 * x0 + self.coef_l * l).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub psi_star: f64,
    pub n: usize,
    pub u_rate: f64,
    pub x0_prob: f64,
    /// Covariate mean is `covariate_mean_coef * U + covariate_mean_offset`.
    pub covariate_mean_coef: f64,
    pub covariate_mean_offset: f64,
    pub ar_corr: f64,
    pub measurement_times: Vec<f64>,
    pub v_hazard: HazardModel,
    pub c_hazard: HazardModel,
    /// Coefficient `b` of `X_0` in the time transform.
    pub setting2_baseline_coef: f64,
    /// Number of grid points recording the post-discontinuation drift.
    pub densify_points: usize,
    /// First drift grid point, as an offset after `V_1`.
    pub densify_offset: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            psi_star: 0.0,
            n: 1000,
            u_rate: 0.2,
            x0_prob: 0.55,
            covariate_mean_coef: 0.2,
            covariate_mean_offset: -4.0,
            ar_corr: 0.7,
            measurement_times: vec![0.0, 5.0, 10.0],
            v_hazard: HazardModel {
                base: 0.15,
                coef_x0: 0.15,
                coef_l: 0.15,
            },
            c_hazard: HazardModel {
                base: 0.025,
                coef_x0: 0.15,
                coef_l: 0.15,
            },
            setting2_baseline_coef: 0.0,
            densify_points: 32,
            densify_offset: 1e-3,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn new(psi_star: f64, n: usize, seed: u64) -> Self {
        Self {
            psi_star,
            n,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !self.psi_star.is_finite() {
            return bad("psi_star must be finite");
        }
        if !(self.u_rate > 0.0) || !(self.v_hazard.base > 0.0) || !(self.c_hazard.base > 0.0) {
            return bad("rates must be positive");
        }
        if !(self.x0_prob > 0.0 && self.x0_prob < 1.0) {
            return bad("x0_prob must lie in (0, 1)");
        }
        if !(self.ar_corr > -1.0 && self.ar_corr < 1.0) {
            return bad("ar_corr must lie in (-1, 1)");
        }
        let m = &self.measurement_times;
        if m.first() != Some(&0.0) || m.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("measurement_times must start at 0 and increase strictly");
        }
        if self.densify_points == 0 || !(self.densify_offset > 0.0) {
            return bad("densify_points >= 1 and densify_offset > 0 required");
        }
        Ok(())
    }
}

/// Constant hazard `rate` on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment<F> {
    pub start: F,
    pub end: F,
    pub rate: F,
}

/// Time at which the cumulative hazard of contiguous `segments` first
/// reaches `e`; infinity if the total hazard stays below `e`.
pub fn invert_cumulative_hazard<F: Scalar>(segments: &[RateSegment<F>], e: F) -> F {
    let mut acc = F::zero();
    for s in segments {
        if s.rate <= F::zero() {
            continue;
        }
        let mass = s.rate * (s.end - s.start);
        if acc + mass >= e {
            return s.start + (e - acc) / s.rate;
        }
        acc = acc + mass;
    }
    F::infinity()
}

/// Exact draw from a piecewise-constant hazard by inverse transform.
pub fn sample_piecewise_exponential<F: Scalar, R: Rng + ?Sized>(segments: &[RateSegment<F>], rng: &mut R) -> F {
    let e: f64 = Exp1.sample(rng);
    invert_cumulative_hazard(segments, F::lit(e))
}

/// Hidden quantities retained for oracle analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub u: f64,
    pub t: f64,
    pub c: f64,
    pub v1: f64,
}

/// Failure time solving `U = int_0^T exp(psi A_u + b x0) du` for a subject
/// treated on `[0, v1)`.
pub fn invert_failure_time(u: f64, v1: f64, psi: f64, b: f64, x0: f64) -> f64 {
    let r1 = (psi + b * x0).exp();
    let r0 = (b * x0).exp();
    let t1 = u / r1;
    if t1 < v1 {
        t1
    } else {
        v1 + (u - v1 * r1) / r0
    }
}

fn lower_cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn step_segments(times: &[f64], rates: &[f64]) -> Vec<RateSegment<f64>> {
    (0..times.len())
        .map(|k| RateSegment {
            start: times[k],
            end: times.get(k + 1).copied().unwrap_or(f64::INFINITY),
            rate: rates[k],
        })
        .collect()
}

/// Independent, reproducible random stream for subject `index`.
pub fn subject_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate_subject(cfg: &DgpConfig, chol: &[Vec<f64>], index: usize) -> (SubjectPath<f64>, TruthRecord) {
    let mut rng = subject_rng(cfg.seed, index as u64);
    let u: f64 = Exp::new(cfg.u_rate).expect("positive rate").sample(&mut rng);
    let x0 = if rng.random::<f64>() < cfg.x0_prob { 1.0 } else { 0.0 };
    let m = cfg.measurement_times.len();
    let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mean = cfg.covariate_mean_coef * u + cfg.covariate_mean_offset;
    let l_base: Vec<f64> = (0..m)
        .map(|i| mean + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
        .collect();

    let v_rates: Vec<f64> = l_base.iter().map(|&l| cfg.v_hazard.rate(x0, l)).collect();
    let v1 = sample_piecewise_exponential(&step_segments(&cfg.measurement_times, &v_rates), &mut rng);
    let t = invert_failure_time(u, v1, cfg.psi_star, cfg.setting2_baseline_coef, x0);

    // Observed trajectory: measurements plus the drift grid on (V_1, T].
    let mut drift_times: Vec<f64> = Vec::new();
    if v1 < t {
        let span = t - v1;
        let d0 = cfg.densify_offset;
        let k = cfg.densify_points;
        if span <= d0 || k == 1 {
            drift_times.push(d0);
        } else {
            let ratio = span / d0;
            drift_times.extend((0..k).map(|j| d0 * ratio.powf(j as f64 / (k - 1) as f64)));
            drift_times[k - 1] = span;
        }
    }
    let mut times: Vec<f64> = cfg.measurement_times.clone();
    times.extend(drift_times.iter().map(|d| v1 + d));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let values: Vec<f64> = times
        .iter()
        .map(|&s| {
            let base = l_base[cfg.measurement_times.partition_point(|&mt| mt <= s) - 1];
            let n_drift = drift_times.partition_point(|&d| v1 + d <= s);
            if n_drift == 0 {
                base
            } else {
                base + drift_times[n_drift - 1].ln()
            }
        })
        .collect();

    let c_rates: Vec<f64> = values.iter().map(|&l| cfg.c_hazard.rate(x0, l)).collect();
    let c = sample_piecewise_exponential(&step_segments(&times, &c_rates), &mut rng);

    let x = t.min(c);
    let delta = t < c;
    let gamma = v1 < x;
    let v = v1.min(x);
    let keep = times.partition_point(|&s| s <= x);
    let covariates = StepFunction::new(
        times[..keep].to_vec(),
        values[..keep].iter().map(|&l| vec![l]).collect(),
    )
    .expect("valid generated trajectory");
    let path = SubjectPath {
        id: (index + 1).to_string(),
        baseline: vec![x0],
        covariates,
        x_time: x,
        delta,
        v_time: v,
        gamma,
    };
    (path, TruthRecord { u, t, c, v1 })
}

/// Generates `cfg.n` subjects in parallel; the result depends only on `cfg`.
pub fn generate_cohort(cfg: &DgpConfig) -> Result<(Cohort<f64>, Vec<TruthRecord>)> {
    cfg.validate()?;
    let m = cfg.measurement_times.len();
    let corr: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| cfg.ar_corr.powi((i as i32 - j as i32).abs())).collect())
        .collect();
    let chol = lower_cholesky(&corr);
    let (subjects, truth): (Vec<_>, Vec<_>) = (0..cfg.n)
        .into_par_iter()
        .map(|i| simulate_subject(cfg, &chol, i))
        .unzip();
    let cohort = Cohort::new(subjects, vec!["l".into()], vec!["x0".into()])?;
    Ok((cohort, truth))
}

pub fn write_truth_csv<W: Write>(cohort: &Cohort<f64>, truth: &[TruthRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "u", "t", "c", "v1"])?;
    for (s, r) in cohort.subjects().iter().zip(truth) {
        w.write_record([
            s.id.clone(),
            r.u.to_string(),
            r.t.to_string(),
            r.c.to_string(),
            r.v1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("truth.csv", e))?;
    Ok(())
}

pub fn save_truth(cohort: &Cohort<f64>, truth: &[TruthRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth_csv(cohort, truth, std::io::BufWriter::new(file))
}

/// Benchmark settings: two treatment-model scenarios and two
/// misspecification settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Correct treatment and censoring models.
    Scenario1,
    /// Kaplan-Meier (covariate-free) treatment-discontinuation model.
    Scenario2,
    /// Covariate-free censoring model.
    Setting1,
    /// `0.5 X_0` enters the time transform but not the analysis.
    Setting2,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Scenario1, Setting::Scenario2, Setting::Setting1, Setting::Setting2];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Scenario1 => "scenario1",
            Setting::Scenario2 => "scenario2",
            Setting::Setting1 => "setting1",
            Setting::Setting2 => "setting2",
        }
    }

    /// DGP for this setting.
    pub fn dgp(self, base: &DgpConfig) -> DgpConfig {
        let mut cfg = base.clone();
        if self == Setting::Setting2 {
            cfg.setting2_baseline_coef = 0.5;
        }
        cfg
    }

    /// Adjusts an analysis configuration to this setting's nuisance models.
    pub fn apply(self, cfg: &mut EstimatorConfig) {
        match self {
            Setting::Scenario2 => cfg.treatment_features = Some(Vec::new()),
            Setting::Setting1 => cfg.censoring_features = Some(Vec::new()),
            Setting::Scenario1 | Setting::Setting2 => {}
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?} (expected scenario1, scenario2, setting1 or setting2)")))
    }
}

/// A generated cohort together with the analysis adjustments of its setting.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub setting: Setting,
    pub dgp: DgpConfig,
    pub cohort: Cohort<f64>,
    pub truth: Vec<TruthRecord>,
}

impl ScenarioBundle {
    pub fn configure(&self, base: &EstimatorConfig) -> EstimatorConfig {
        let mut cfg = base.clone();
        self.setting.apply(&mut cfg);
        cfg
    }
}

pub fn generate_setting(base: &DgpConfig, setting: Setting) -> Result<ScenarioBundle> {
    let dgp = setting.dgp(base);
    let (cohort, truth) = generate_cohort(&dgp)?;
    Ok(ScenarioBundle {
        setting,
        dgp,
        cohort,
        truth,
    })
}
