//! The structural failure time transform
//! `U(psi) = int_0^end exp[{psi_1 + psi_2' g(L_u)} A_u] du` and its gradient.
//!
//! Both are evaluated in closed form over the segments on which the
//! treatment indicator and the effect modifiers are constant.

use serde::{Deserialize, Serialize};

use crate::cohort::SubjectPath;
use crate::scalar::Scalar;

/// Treatment-effect parameters: main effect plus effect-modification
/// coefficients on selected covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiParams<F = f64> {
    pub psi1: F,
    pub psi2: Vec<F>,
}

impl<F: Scalar> PsiParams<F> {
    pub fn scalar(psi1: F) -> Self {
        Self {
            psi1,
            psi2: Vec::new(),
        }
    }

    pub fn from_slice(v: &[F]) -> Self {
        Self {
            psi1: v[0],
            psi2: v[1..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.psi2.len()
    }

    pub fn to_vec(&self) -> Vec<F> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.psi1);
        v.extend_from_slice(&self.psi2);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.psi1.is_finite() && self.psi2.iter().all(|x| x.is_finite())
    }
}

/// Covariate indices forming the effect modifier `g(L_u)`.
pub type Modifier<'a> = &'a [usize];

/// One piece of `[0, end)` with constant treatment and modifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<F> {
    pub length: F,
    pub treated: bool,
    pub modifiers: Vec<F>,
}

/// Precomputed segmentation of one subject's path on `[0, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSegments<F> {
    end: F,
    segments: Vec<Segment<F>>,
}

impl<F: Scalar> TransformSegments<F> {
    pub fn new(path: &SubjectPath<F>, end: F, modifier: Modifier<'_>) -> Self {
        let mut cuts: Vec<F> = Vec::new();
        if !modifier.is_empty() {
            cuts.extend(
                path.covariates
                    .breakpoints()
                    .iter()
                    .copied()
                    .filter(|&b| b > F::zero() && b < end),
            );
        }
        if path.gamma && path.v_time > F::zero() && path.v_time < end {
            cuts.push(path.v_time);
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        cuts.dedup();
        let mut segments = Vec::with_capacity(cuts.len() + 1);
        let mut start = F::zero();
        for stop in cuts.into_iter().chain(std::iter::once(end)) {
            if stop > start {
                let cov = path.covariates_at(start);
                segments.push(Segment {
                    length: stop - start,
                    treated: path.treatment_at(start),
                    modifiers: modifier.iter().map(|&k| cov[k]).collect(),
                });
            }
            start = stop;
        }
        Self { end, segments }
    }

    /// Segmentation given explicitly, e.g. on a discrete time grid.
    pub fn from_segments(segments: Vec<Segment<F>>) -> Self {
        Self {
            end: segments.iter().map(|s| s.length).sum(),
            segments,
        }
    }

    pub fn segments(&self) -> &[Segment<F>] {
        &self.segments
    }

    #[inline]
    fn linear(seg: &Segment<F>, psi: &PsiParams<F>) -> F {
        let mut lin = psi.psi1;
        for (c, g) in psi.psi2.iter().zip(&seg.modifiers) {
            lin = lin + *c * *g;
        }
        lin
    }

    #[inline]
    fn rate(seg: &Segment<F>, psi: &PsiParams<F>) -> F {
        if seg.treated {
            Self::linear(seg, psi).exp()
        } else {
            F::one()
        }
    }

    /// Evaluated as `end + sum_treated length * expm1(lin)`, exact at `psi = 0`.
    pub fn transform(&self, psi: &PsiParams<F>) -> F {
        self.end
            + self
                .segments
                .iter()
                .filter(|s| s.treated)
                .map(|s| s.length * Self::linear(s, psi).exp_m1())
                .sum::<F>()
    }

    pub fn gradient(&self, psi: &PsiParams<F>) -> Vec<F> {
        let mut grad = vec![F::zero(); psi.dim()];
        for s in self.segments.iter().filter(|s| s.treated) {
            let w = s.length * Self::rate(s, psi);
            grad[0] = grad[0] + w;
            for (slot, g) in grad[1..].iter_mut().zip(&s.modifiers) {
                *slot = *slot + w * *g;
            }
        }
        grad
    }
}

/// `U(psi)` over `[0, end]`. With `psi = 0` this returns `end`.
pub fn sftm_transform<F: Scalar>(path: &SubjectPath<F>, end: F, psi: &PsiParams<F>, modifier: Modifier<'_>) -> F {
    TransformSegments::new(path, end, modifier).transform(psi)
}

/// `dU(psi)/dpsi`, dimension `1 + len(psi2)`.
pub fn sftm_gradient<F: Scalar>(path: &SubjectPath<F>, end: F, psi: &PsiParams<F>, modifier: Modifier<'_>) -> Vec<F> {
    TransformSegments::new(path, end, modifier).gradient(psi)
}
