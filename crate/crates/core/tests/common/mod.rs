//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code under test except to read
//! plain data.

#![allow(dead_code)]

use rand::Rng;
use sftm_core::cox::{EventKind, Feature};
use sftm_core::{Cohort, StepFunction, SubjectPath};

/// Random subject: a step covariate with up to 5 jumps, treatment stopping
/// somewhere (or never) before the exit time.
pub fn random_path<R: Rng>(rng: &mut R, id: usize) -> SubjectPath<f64> {
    let x_time = rng.random_range(0.1..30.0);
    let jumps = rng.random_range(0..=5usize);
    let mut times: Vec<f64> = (0..jumps).map(|_| rng.random_range(0.0..x_time)).collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let values = times.iter().map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
    let gamma = rng.random_bool(0.6);
    let v_time = if gamma { rng.random_range(0.0..x_time) } else { x_time };
    SubjectPath {
        id: id.to_string(),
        baseline: vec![f64::from(u8::from(rng.random_bool(0.5)))],
        covariates: StepFunction::new(times, values).unwrap(),
        x_time,
        delta: rng.random_bool(0.7),
        v_time,
        gamma,
    }
}

pub fn random_cohort<R: Rng>(rng: &mut R, n: usize) -> Cohort<f64> {
    let subjects = (0..n).map(|i| random_path(rng, i)).collect();
    Cohort::new(subjects, vec!["l".into()], vec!["x0".into()]).unwrap()
}

fn covariate(path: &SubjectPath<f64>, t: f64) -> f64 {
    let b = path.covariates.breakpoints();
    let k = b.iter().rposition(|&s| s <= t).unwrap_or(0);
    path.covariates.value(k)[0]
}

fn treated(path: &SubjectPath<f64>, t: f64) -> bool {
    !path.gamma || t < path.v_time
}

/// Midpoint-rule integral of `exp{(psi1 + psi2 L_u) A_u}` over `[0, end]`.
pub fn riemann_transform(path: &SubjectPath<f64>, end: f64, psi1: f64, psi2: Option<f64>, steps: usize) -> f64 {
    let h = end / steps as f64;
    (0..steps)
        .map(|k| {
            let u = (k as f64 + 0.5) * h;
            if treated(path, u) {
                (psi1 + psi2.map_or(0.0, |c| c * covariate(path, u))).exp()
            } else {
                1.0
            }
        })
        .sum::<f64>()
        * h
}

fn event_of(kind: EventKind, s: &SubjectPath<f64>) -> (f64, bool) {
    match kind {
        EventKind::Discontinuation => (s.v_time, s.gamma),
        EventKind::Censoring => (s.x_time, !s.delta),
        EventKind::Failure => (s.x_time, s.delta),
    }
}

fn feature_value(f: Feature, s: &SubjectPath<f64>, t: f64) -> f64 {
    match f {
        Feature::Baseline(k) => s.baseline[k],
        Feature::Covariate(_) => covariate(s, t),
        Feature::Treatment => f64::from(u8::from(treated(s, t))),
        Feature::Time => t,
    }
}

/// Breslow log partial likelihood of a one-feature model, by brute force
/// over event times and risk sets.
pub fn brute_loglik(cohort: &Cohort<f64>, kind: EventKind, feature: Feature, gamma: f64) -> f64 {
    let mut times: Vec<f64> = cohort
        .subjects()
        .iter()
        .filter_map(|s| {
            let (t, e) = event_of(kind, s);
            e.then_some(t)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut ll = 0.0;
    for &t in &times {
        let mut denom = 0.0;
        let mut num = 0.0;
        let mut d = 0.0;
        for s in cohort.subjects() {
            let (exit, e) = event_of(kind, s);
            if exit >= t {
                denom += (gamma * feature_value(feature, s, t)).exp();
            }
            if e && exit == t {
                num += gamma * feature_value(feature, s, t);
                d += 1.0;
            }
        }
        ll += num - d * denom.ln();
    }
    ll
}

/// Maximiser of a unimodal `f` on `[lo, hi]`: coarse grid, then golden
/// section around the best grid point.
pub fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|k| lo + k as f64 * h)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = (best - h, best + h);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-9 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Nelson-Aalen increments `(t_j, d_j / Y(t_j))` for the event kind.
pub fn nelson_aalen(cohort: &Cohort<f64>, kind: EventKind) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = cohort
        .subjects()
        .iter()
        .filter_map(|s| {
            let (t, e) = event_of(kind, s);
            e.then_some(t)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let at_risk = cohort.subjects().iter().filter(|s| event_of(kind, s).0 >= t).count() as f64;
            let d = cohort
                .subjects()
                .iter()
                .filter(|s| {
                    let (x, e) = event_of(kind, s);
                    e && x == t
                })
                .count() as f64;
            (t, d / at_risk)
        })
        .collect()
}

/// Four subjects with a covariate that changes over time and distinct
/// discontinuation times.
pub fn four_subjects() -> Cohort<f64> {
    let mk = |id: &str, times: Vec<f64>, values: Vec<f64>, v: f64, gamma: bool| SubjectPath {
        id: id.into(),
        baseline: vec![0.0],
        covariates: StepFunction::new(times, values.into_iter().map(|x| vec![x]).collect()).unwrap(),
        x_time: 10.0,
        delta: true,
        v_time: v,
        gamma,
    };
    Cohort::new(
        vec![
            mk("a", vec![0.0, 1.5], vec![0.2, 1.4], 2.0, true),
            mk("b", vec![0.0], vec![0.9], 3.0, true),
            mk("c", vec![0.0, 2.5], vec![-0.4, 0.6], 5.0, true),
            mk("d", vec![0.0, 4.0], vec![1.1, -0.7], 10.0, false),
        ],
        vec!["l".into()],
        vec!["x0".into()],
    )
    .unwrap()
}

/// Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Adaptive Simpson quadrature; refines around jumps until the local error
/// estimate falls below `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

/// `exp{(psi1 + psi2 L_u) A_u}` along `path` as a plain function of `u`.
pub fn transform_integrand(path: &SubjectPath<f64>, psi1: f64, psi2: Option<f64>) -> impl Fn(f64) -> f64 + '_ {
    move |u| {
        if treated(path, u) {
            (psi1 + psi2.map_or(0.0, |c| c * covariate(path, u))).exp()
        } else {
            1.0
        }
    }
}
