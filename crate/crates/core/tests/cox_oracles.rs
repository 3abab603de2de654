mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sftm_core::cox::{
    breslow_baseline, log_partial_likelihood, martingale_increments, partial_likelihood_score, SurvivalForm,
    SurvivalOptions,
};
use sftm_core::{fit_cox, Cohort, CoxFit, EventKind, EventSpec, Feature, StepFunction, SubjectPath};

fn binary_four() -> Cohort<f64> {
    let mk = |id: &str, x0: f64, v: f64, gamma: bool| SubjectPath {
        id: id.into(),
        baseline: vec![x0],
        covariates: StepFunction::constant(vec![]),
        x_time: 10.0,
        delta: true,
        v_time: v,
        gamma,
    };
    Cohort::new(
        vec![mk("a", 1.0, 1.0, true), mk("b", 0.0, 2.0, true), mk("c", 1.0, 3.0, true), mk("d", 0.0, 10.0, false)],
        vec![],
        vec!["x0".into()],
    )
    .unwrap()
}

#[test]
fn binary_feature_matches_exhaustive_grid() {
    let cohort = binary_four();
    let feature = Feature::Baseline(0);
    let fit = fit_cox(&cohort, &EventSpec::new(EventKind::Discontinuation, vec![feature])).unwrap();
    let best = (0..=100_000)
        .map(|k| -5.0 + k as f64 * 1e-4)
        .max_by(|a, b| {
            common::brute_loglik(&cohort, EventKind::Discontinuation, feature, *a)
                .total_cmp(&common::brute_loglik(&cohort, EventKind::Discontinuation, feature, *b))
        })
        .unwrap();
    assert!((fit.gamma[0] - best).abs() < 1e-4, "{} vs {best}", fit.gamma[0]);
}

#[test]
fn time_varying_feature_matches_grid_oracle() {
    let cohort = common::four_subjects();
    let fit = fit_cox(&cohort, &EventSpec::new(EventKind::Discontinuation, vec![Feature::Covariate(0)])).unwrap();
    let oracle = common::grid_argmax(
        |g| common::brute_loglik(&cohort, EventKind::Discontinuation, Feature::Covariate(0), g),
        -10.0,
        10.0,
    );
    assert!((fit.gamma[0] - oracle).abs() < 1e-4);
}

#[test]
fn loglik_matches_brute_force_and_score_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cohort = common::random_cohort(&mut rng, 120);
    for (kind, feature) in [
        (EventKind::Discontinuation, Feature::Covariate(0)),
        (EventKind::Censoring, Feature::Baseline(0)),
        (EventKind::Failure, Feature::Treatment),
    ] {
        let spec = EventSpec::new(kind, vec![feature]);
        for g in [-0.8, 0.0, 0.35] {
            let ll = log_partial_likelihood(&cohort, &spec, &[g]).unwrap();
            assert!((ll - common::brute_loglik(&cohort, kind, feature, g)).abs() < 1e-9 * ll.abs().max(1.0));
            let h = 1e-6;
            let fd = (log_partial_likelihood(&cohort, &spec, &[g + h]).unwrap()
                - log_partial_likelihood(&cohort, &spec, &[g - h]).unwrap())
                / (2.0 * h);
            let score = partial_likelihood_score(&cohort, &spec, &[g]).unwrap()[0];
            assert!((score - fd).abs() <= 1e-4 * score.abs().max(1.0), "{score} vs {fd}");
        }
        let fit = fit_cox(&cohort, &spec).unwrap();
        assert!(partial_likelihood_score(&cohort, &spec, &fit.gamma).unwrap()[0].abs() < 1e-9);
    }
}

#[test]
fn null_model_is_nelson_aalen() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cohort = common::random_cohort(&mut rng, 200);
    for kind in [EventKind::Discontinuation, EventKind::Censoring, EventKind::Failure] {
        let fit = fit_cox(&cohort, &EventSpec::null(kind)).unwrap();
        let na = common::nelson_aalen(&cohort, kind);
        assert_eq!(fit.event_times.len(), na.len());
        for ((t, d), (u, e)) in na.iter().zip(fit.event_times.iter().zip(&fit.increments)) {
            assert_eq!(t, u);
            assert!((d - e).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_nelson_aalen() {
    let mk = |id: &str, v: f64, gamma: bool| SubjectPath {
        id: id.into(),
        baseline: vec![],
        covariates: StepFunction::constant(vec![]),
        x_time: 5.0,
        delta: true,
        v_time: v,
        gamma,
    };
    let cohort = Cohort::new(vec![mk("a", 1.0, true), mk("b", 2.0, true), mk("c", 5.0, false)], vec![], vec![]).unwrap();
    let fit = fit_cox(&cohort, &EventSpec::null(EventKind::Discontinuation)).unwrap();
    assert_eq!(fit.event_times, vec![1.0, 2.0]);
    assert!((fit.increments[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((fit.increments[1] - 0.5).abs() < 1e-15);
}

#[test]
fn zero_features_with_nonzero_gamma_give_null_increments() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base = common::random_cohort(&mut rng, 80);
    let zeroed: Vec<SubjectPath<f64>> = base
        .subjects()
        .iter()
        .map(|s| SubjectPath {
            baseline: vec![0.0],
            ..s.clone()
        })
        .collect();
    let cohort = Cohort::new(zeroed, vec!["l".into()], vec!["x0".into()]).unwrap();
    let null = fit_cox(&cohort, &EventSpec::null(EventKind::Discontinuation)).unwrap();
    let mut fit = fit_cox(&cohort, &EventSpec::null(EventKind::Discontinuation)).unwrap();
    fit.spec = EventSpec::new(EventKind::Discontinuation, vec![Feature::Baseline(0)]);
    fit.gamma = vec![1.7];
    let refit = breslow_baseline(&cohort, &fit).unwrap();
    assert_eq!(refit.increments, null.increments);
}

#[test]
fn duplicated_cohort_keeps_increments() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cohort = common::random_cohort(&mut rng, 60);
    let doubled: Vec<SubjectPath<f64>> = cohort
        .subjects()
        .iter()
        .flat_map(|s| {
            [s.clone(), SubjectPath {
                id: format!("{}-copy", s.id),
                ..s.clone()
            }]
        })
        .collect();
    let doubled = Cohort::new(doubled, vec!["l".into()], vec!["x0".into()]).unwrap();
    let spec = EventSpec::new(EventKind::Discontinuation, vec![Feature::Covariate(0)]);
    let a = fit_cox(&cohort, &spec).unwrap();
    let b = fit_cox(&doubled, &spec).unwrap();
    assert!((a.gamma[0] - b.gamma[0]).abs() < 1e-9);
    for (x, y) in a.increments.iter().zip(&b.increments) {
        assert!((x - y).abs() < 1e-9 * x);
    }
}

#[test]
fn martingale_increments_sum_to_zero_at_every_event_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cohort = common::random_cohort(&mut rng, 250);
    let spec = EventSpec::new(EventKind::Discontinuation, vec![Feature::Covariate(0), Feature::Baseline(0)]);
    let fit = fit_cox(&cohort, &spec).unwrap();
    let paths = martingale_increments(&fit, &cohort);
    let mut per_time = vec![0.0; fit.num_events()];
    for p in &paths {
        for a in &p.atoms {
            assert!(a.d_lambda >= 0.0);
            per_time[a.event_index] += a.d_m();
        }
    }
    assert!(per_time.iter().all(|s| s.abs() < 1e-8));
    assert!(paths.iter().map(|p| p.total()).sum::<f64>().abs() < 1e-8);
}

#[test]
fn subject_leaving_before_first_event_has_empty_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut subjects: Vec<SubjectPath<f64>> = common::random_cohort(&mut rng, 30).subjects().to_vec();
    subjects.push(SubjectPath {
        id: "early".into(),
        baseline: vec![0.0],
        covariates: StepFunction::constant(vec![0.0]),
        x_time: 1e-9,
        delta: false,
        v_time: 1e-9,
        gamma: false,
    });
    let cohort = Cohort::new(subjects, vec!["l".into()], vec!["x0".into()]).unwrap();
    let fit = fit_cox(&cohort, &EventSpec::null(EventKind::Discontinuation)).unwrap();
    let paths = martingale_increments(&fit, &cohort);
    assert!(paths.last().unwrap().atoms.is_empty());
}

#[test]
fn loglik_invariant_under_monotone_time_warp() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cohort = common::random_cohort(&mut rng, 90);
    let warp = |t: f64| t * t + 3.0 * t;
    let warped: Vec<SubjectPath<f64>> = cohort
        .subjects()
        .iter()
        .map(|s| SubjectPath {
            covariates: StepFunction::new(
                s.covariates.breakpoints().iter().map(|&t| warp(t)).collect(),
                (0..s.covariates.len()).map(|k| s.covariates.value(k).to_vec()).collect(),
            )
            .unwrap(),
            x_time: warp(s.x_time),
            v_time: warp(s.v_time),
            ..s.clone()
        })
        .collect();
    let warped = Cohort::new(warped, vec!["l".into()], vec!["x0".into()]).unwrap();
    let spec = EventSpec::new(EventKind::Discontinuation, vec![Feature::Covariate(0), Feature::Treatment]);
    for g in [[0.4, -0.2], [-1.0, 0.0]] {
        let a = log_partial_likelihood(&cohort, &spec, &g).unwrap();
        let b = log_partial_likelihood(&warped, &spec, &g).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }
}

#[test]
fn constant_hazard_survival() {
    let times: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
    let fit = CoxFit::from_parts(
        vec![],
        EventSpec::null(EventKind::Censoring),
        times,
        vec![0.025 * 0.05; 400],
        0.0,
        0,
        0.0,
    );
    let path = SubjectPath {
        id: "s".into(),
        baseline: vec![],
        covariates: StepFunction::constant(vec![]),
        x_time: 20.0,
        delta: false,
        v_time: 20.0,
        gamma: false,
    };
    let exp_form = SurvivalOptions {
        form: SurvivalForm::Exponential,
        ..SurvivalOptions::default()
    };
    let e = fit.survival_prob(&path, 10.0, &exp_form).unwrap().value;
    assert!((e - (-0.25f64).exp()).abs() < 1e-12);
    let pl = fit.survival_prob(&path, 10.0, &SurvivalOptions::default()).unwrap().value;
    assert!((pl - e).abs() < 0.01);
    assert!((pl - e).abs() <= 200.0 * (0.025f64 * 0.05).powi(2));
}
