//! Longitudinal survival data model: piecewise-constant covariate paths,
//! treatment discontinuation and follow-up.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Right-continuous step function of a vector-valued covariate process.
///
/// Value `k` applies on `[breakpoints[k], breakpoints[k + 1])`; the last
/// value is carried forward indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<F> {
    breakpoints: Vec<F>,
    values: Vec<F>,
    dim: usize,
}

impl<F: Scalar> StepFunction<F> {
    pub fn new(breakpoints: Vec<F>, values: Vec<Vec<F>>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidCohort("step function needs at least one breakpoint".into()));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidCohort(format!(
                "{} breakpoints but {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != F::zero() {
            return Err(Error::InvalidCohort("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidCohort("breakpoints must be strictly increasing".into()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidCohort("value vectors differ in dimension".into()));
        }
        Ok(Self {
            breakpoints,
            values: values.into_iter().flatten().collect(),
            dim,
        })
    }

    /// A constant function; `dim = 0` models a cohort without covariates.
    pub fn constant(value: Vec<F>) -> Self {
        Self {
            breakpoints: vec![F::zero()],
            dim: value.len(),
            values: value,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn breakpoints(&self) -> &[F] {
        &self.breakpoints
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    #[inline]
    pub fn value(&self, k: usize) -> &[F] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the piece containing `t` (right-continuous).
    #[inline]
    pub fn piece_index(&self, t: F) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    #[inline]
    pub fn at(&self, t: F) -> &[F] {
        self.value(self.piece_index(t))
    }

    /// Time average over `(a, b]`, carrying the last value forward.
    pub fn average(&self, a: F, b: F) -> Vec<F> {
        let mut acc = vec![F::zero(); self.dim];
        if !(b > a) {
            return self.at(a).to_vec();
        }
        let mut k = self.piece_index(a);
        let mut start = a;
        while start < b {
            let end = self
                .breakpoints
                .get(k + 1)
                .copied()
                .map_or(b, |next| next.min(b));
            let w = end - start;
            for (slot, &v) in acc.iter_mut().zip(self.value(k)) {
                *slot = *slot + w * v;
            }
            start = end;
            k += 1;
        }
        let len = b - a;
        acc.into_iter().map(|v| v / len).collect()
    }
}

/// One subject's observed record.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPath<F> {
    pub id: String,
    pub baseline: Vec<F>,
    pub covariates: StepFunction<F>,
    /// End of follow-up `X = min(T, C)`.
    pub x_time: F,
    /// Failure observed at `x_time`.
    pub delta: bool,
    /// `V = min(discontinuation, failure, censoring)`.
    pub v_time: F,
    /// Treatment discontinued at `v_time`.
    pub gamma: bool,
}

impl<F: Scalar> SubjectPath<F> {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.x_time >= F::zero()) || !self.x_time.is_finite() {
            return Err(format!("x_time must be finite and non-negative, got {}", self.x_time));
        }
        if !(self.v_time >= F::zero()) || !self.v_time.is_finite() {
            return Err(format!("v_time must be finite and non-negative, got {}", self.v_time));
        }
        if self.v_time > self.x_time {
            return Err(format!(
                "v_time {} exceeds x_time {}",
                self.v_time, self.x_time
            ));
        }
        if !self.gamma && self.v_time != self.x_time {
            return Err("gamma = 0 requires v_time == x_time".into());
        }
        if self.gamma && self.delta && self.v_time == self.x_time {
            return Err("discontinuation and failure at the same time (gamma = 1, delta = 1, v_time = x_time)".into());
        }
        if let Some(&last) = self.covariates.breakpoints().last() {
            if last > self.x_time {
                return Err(format!(
                    "covariate record at time {} beyond x_time {}",
                    last, self.x_time
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn covariates_at(&self, t: F) -> &[F] {
        self.covariates.at(t)
    }

    /// On-treatment indicator `A_t`: 1 on `[0, V)` and 0 on `[V, inf)` when
    /// treatment was discontinued, 1 throughout otherwise.
    #[inline]
    pub fn treatment_at(&self, t: F) -> bool {
        !(self.gamma && t >= self.v_time)
    }

    /// Observed failure time `T`, when `delta = 1`.
    pub fn failure_time(&self) -> Option<F> {
        self.delta.then_some(self.x_time)
    }
}

/// Immutable collection of subjects sharing a covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<F> {
    subjects: Vec<SubjectPath<F>>,
    covariate_names: Vec<String>,
    baseline_names: Vec<String>,
}

impl<F: Scalar> Cohort<F> {
    pub fn new(
        subjects: Vec<SubjectPath<F>>,
        covariate_names: Vec<String>,
        baseline_names: Vec<String>,
    ) -> Result<Self> {
        let mut ids = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidCohort(format!("duplicate subject id {:?}", s.id)));
            }
            if s.baseline.len() != baseline_names.len() {
                return Err(Error::InvalidCohort(format!(
                    "subject {:?} has {} baseline values, expected {}",
                    s.id,
                    s.baseline.len(),
                    baseline_names.len()
                )));
            }
            if s.covariates.dim() != covariate_names.len() {
                return Err(Error::InvalidCohort(format!(
                    "subject {:?} has {} covariates, expected {}",
                    s.id,
                    s.covariates.dim(),
                    covariate_names.len()
                )));
            }
            s.validate()
                .map_err(|m| Error::InvalidCohort(format!("subject {:?}: {m}", s.id)))?;
        }
        Ok(Self {
            subjects,
            covariate_names,
            baseline_names,
        })
    }

    #[inline]
    pub fn subjects(&self) -> &[SubjectPath<F>] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    /// Cohort restricted to the given subject indices (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            baseline_names: self.baseline_names.clone(),
        }
    }

    pub fn max_follow_up(&self) -> F {
        self.subjects
            .iter()
            .fold(F::zero(), |m, s| m.max(s.x_time))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step() -> StepFunction<f64> {
        StepFunction::new(vec![0.0, 5.0, 10.0], vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap()
    }

    fn path(gamma: bool, v: f64, x: f64) -> SubjectPath<f64> {
        SubjectPath {
            id: "a".into(),
            baseline: vec![],
            covariates: step(),
            x_time: x,
            delta: false,
            v_time: v,
            gamma,
        }
    }

    #[test]
    fn right_continuous_lookup() {
        let s = step();
        assert_eq!(s.at(5.0), &[2.0]);
        assert_eq!(s.at(12.0), &[3.0]);
        assert_eq!(s.at(0.0), &[1.0]);
        assert_eq!(s.at(4.999), &[1.0]);
    }

    #[test]
    fn treatment_drops_at_discontinuation() {
        let p = path(true, 4.0, 12.0);
        assert!(p.treatment_at(3.0));
        assert!(!p.treatment_at(4.0));
        let q = path(false, 12.0, 12.0);
        assert!(q.treatment_at(0.0) && q.treatment_at(12.0));
    }

    #[test]
    fn average_is_length_weighted() {
        let s = step();
        // (4, 6]: 1 on (4,5), 2 on [5,6)
        assert!((s.average(4.0, 6.0)[0] - 1.5).abs() < 1e-15);
        assert!((s.average(10.0, 20.0)[0] - 3.0).abs() < 1e-15);
        assert!((s.average(2.5, 7.5)[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_step_functions() {
        assert!(StepFunction::new(vec![1.0], vec![vec![1.0]]).is_err());
        assert!(StepFunction::new(vec![0.0, 0.0], vec![vec![1.0], vec![2.0]]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0], vec![vec![1.0], vec![]]).is_err());
    }

    #[test]
    fn subject_invariants() {
        assert!(path(true, 4.0, 12.0).validate().is_ok());
        assert!(path(true, 13.0, 12.0).validate().is_err());
        assert!(path(false, 4.0, 12.0).validate().is_err());
        let mut tie = path(true, 12.0, 12.0);
        tie.delta = true;
        assert!(tie.validate().is_err());
        // covariate breakpoint beyond follow-up
        assert!(path(true, 4.0, 9.0).validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = path(true, 4.0, 12.0);
        let err = Cohort::new(vec![p.clone(), p], vec!["l".into()], vec![]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn generic_over_f32() {
        let s = StepFunction::<f32>::new(vec![0.0, 1.0], vec![vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(s.at(1.5), &[2.0_f32]);
    }

    proptest! {
        #[test]
        fn treatment_is_non_increasing(v in 0.0..20.0f64, extra in 0.01..10.0f64, gamma: bool) {
            let x = v + extra;
            let p = SubjectPath {
                id: "p".into(),
                baseline: vec![],
                covariates: StepFunction::constant(vec![]),
                x_time: x,
                delta: false,
                v_time: if gamma { v } else { x },
                gamma,
            };
            let mut prev = true;
            for k in 0..1000 {
                let t = x * k as f64 / 999.0;
                let a = p.treatment_at(t);
                prop_assert!(prev || !a);
                prev = a;
            }
        }

        #[test]
        fn lookup_matches_linear_scan(
            gaps in proptest::collection::vec(0.01..5.0f64, 1..12),
            queries in proptest::collection::vec(0.0..80.0f64, 1..50),
        ) {
            let mut bps = vec![0.0];
            for g in &gaps {
                let next = bps.last().unwrap() + g;
                bps.push(next);
            }
            let values: Vec<Vec<f64>> = (0..bps.len()).map(|k| vec![k as f64]).collect();
            let s = StepFunction::new(bps.clone(), values).unwrap();
            for t in queries {
                let mut expected = 0usize;
                for (k, &b) in bps.iter().enumerate() {
                    if b <= t {
                        expected = k;
                    }
                }
                prop_assert_eq!(s.at(t)[0], expected as f64);
            }
        }
    }
}
