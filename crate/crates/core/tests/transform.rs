mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sftm_core::{sftm_gradient, sftm_transform, PsiParams, StepFunction, SubjectPath};

fn discontinued_at_four() -> SubjectPath<f64> {
    SubjectPath {
        id: "s".into(),
        baseline: vec![],
        covariates: StepFunction::constant(vec![0.0]),
        x_time: 10.0,
        delta: true,
        v_time: 4.0,
        gamma: true,
    }
}

#[test]
fn discontinued_path_matches_quadrature() {
    let p = discontinued_at_four();
    let oracle = common::adaptive_simpson(&common::transform_integrand(&p, 0.5, None), 0.0, 10.0, 1e-12);
    let u = sftm_transform(&p, 10.0, &PsiParams::scalar(0.5), &[]);
    assert!((u - oracle).abs() < 1e-8, "{u} vs {oracle}");
    assert!((u - 12.594_885_082_800_5).abs() < 1e-9);
}

#[test]
fn random_paths_match_quadrature_with_modifier() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..60 {
        let p = common::random_path(&mut rng, i);
        let psi = PsiParams { psi1: -0.7, psi2: vec![0.25] };
        let u = sftm_transform(&p, p.x_time, &psi, &[0]);
        let oracle = common::adaptive_simpson(&common::transform_integrand(&p, -0.7, Some(0.25)), 0.0, p.x_time, 1e-11);
        assert!((u - oracle).abs() < 1e-8 * u.max(1.0), "path {i}: {u} vs {oracle}");
    }
}

#[test]
fn zero_psi_returns_end_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let p = common::random_path(&mut rng, i);
        assert_eq!(sftm_transform(&p, p.x_time, &PsiParams::scalar(0.0), &[]), p.x_time);
        let zero = PsiParams { psi1: 0.0, psi2: vec![0.0] };
        assert_eq!(sftm_transform(&p, p.x_time, &zero, &[0]), p.x_time);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for i in 0..100 {
        let p = common::random_path(&mut rng, i);
        let psi = PsiParams { psi1: 0.3, psi2: vec![-0.2] };
        let g = sftm_gradient(&p, p.x_time, &psi, &[0]);
        for k in 0..2 {
            let (mut hi, mut lo) = (psi.to_vec(), psi.to_vec());
            hi[k] += h;
            lo[k] -= h;
            let fd = (sftm_transform(&p, p.x_time, &PsiParams::from_slice(&hi), &[0])
                - sftm_transform(&p, p.x_time, &PsiParams::from_slice(&lo), &[0]))
                / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-6 * g[k].abs().max(1.0), "path {i}, component {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..50 {
        let p = common::random_path(&mut rng, i);
        let p32 = SubjectPath::<f32> {
            id: p.id.clone(),
            baseline: p.baseline.iter().map(|&v| v as f32).collect(),
            covariates: StepFunction::new(
                p.covariates.breakpoints().iter().map(|&t| t as f32).collect(),
                (0..p.covariates.len()).map(|k| vec![p.covariates.value(k)[0] as f32]).collect(),
            )
            .unwrap(),
            x_time: p.x_time as f32,
            delta: p.delta,
            v_time: p.v_time as f32,
            gamma: p.gamma,
        };
        let u64_ = sftm_transform(&p, p.x_time, &PsiParams::scalar(-0.5), &[]);
        let u32_ = sftm_transform(&p32, p32.x_time, &PsiParams::scalar(-0.5f32), &[]);
        assert!((f64::from(u32_) - u64_).abs() < 1e-4 * u64_.max(1.0));
    }
}
