//! Estimator configuration (JSON, `"schema": 1`).

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::cox::{EventKind, EventSpec, Feature, SurvivalForm, SurvivalOptions};
use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Ipcw,
    Dr,
    Msm,
    Disc,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Naive,
        EstimatorKind::Ipcw,
        EstimatorKind::Dr,
        EstimatorKind::Msm,
        EstimatorKind::Disc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Ipcw => "ipcw",
            EstimatorKind::Dr => "dr",
            EstimatorKind::Msm => "msm",
            EstimatorKind::Disc => "disc",
        }
    }

    /// Whether the estimator depends on the index function `c`.
    pub fn uses_c(self) -> bool {
        !matches!(self, EstimatorKind::Msm)
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?} (expected naive, ipcw, dr, msm or disc)")))
    }
}

/// Index function `c(H_u)`: the on-treatment indicator or the
/// exponential-approximation optimal choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CVariant {
    #[serde(alias = "c")]
    Simple,
    #[serde(alias = "c_opt", alias = "copt")]
    Optimal,
}

impl CVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CVariant::Simple => "c",
            CVariant::Optimal => "c_opt",
        }
    }
}

impl std::str::FromStr for CVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" | "simple" => Ok(CVariant::Simple),
            "c_opt" | "copt" | "optimal" => Ok(CVariant::Optimal),
            _ => Err(Error::Config(format!("unknown c variant {s:?}"))),
        }
    }
}

/// Regressors of the working model for `E{U(psi) | H_u, V >= u}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanDesign {
    /// `(1, X_0, L_0)`, one row per subject.
    BaselineOnly,
    /// `(1, X_0, L_u, u)`, one row per subject and at-risk event time.
    AtRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub starts: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            starts: vec![0.0, -1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub schema: u32,
    pub estimator: EstimatorKind,
    pub c_variant: CVariant,
    pub mean_model: MeanDesign,
    /// Hazard-model covariates by name (`time`, `treatment`, or a baseline /
    /// covariate column). `None` uses every baseline and covariate column.
    pub treatment_features: Option<Vec<String>>,
    pub censoring_features: Option<Vec<String>>,
    /// Covariates modifying the treatment effect (`psi_2`).
    pub effect_modifiers: Vec<String>,
    pub trim_floor: f64,
    pub kc_form: SurvivalForm,
    pub solver: SolverConfig,
    pub jackknife_groups: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub weight_trim_quantile: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            estimator: EstimatorKind::Dr,
            c_variant: CVariant::Optimal,
            mean_model: MeanDesign::BaselineOnly,
            treatment_features: None,
            censoring_features: None,
            effect_modifiers: Vec::new(),
            trim_floor: 1e-3,
            kc_form: SurvivalForm::ProductLimit,
            solver: SolverConfig::default(),
            jackknife_groups: 0,
            seed: 1,
            grid_size: 51,
            weight_trim_quantile: 0.995,
        }
    }
}

impl EstimatorConfig {
    pub fn for_estimator(estimator: EstimatorKind, c_variant: CVariant) -> Self {
        Self {
            estimator,
            c_variant,
            ..Self::default()
        }
    }

    /// Parses and validates a JSON document; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: EstimatorConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at key `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "at key `schema`: unsupported schema {} (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if !(self.trim_floor > 0.0 && self.trim_floor < 1.0) {
            return Err(Error::Config("at key `trim_floor`: must lie in (0, 1)".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 || self.solver.starts.is_empty() {
            return Err(Error::Config("at key `solver`: tol > 0, max_iter > 0 and at least one start required".into()));
        }
        if self.jackknife_groups == 1 {
            return Err(Error::Config("at key `jackknife_groups`: need 0 (off) or at least 2".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("at key `grid_size`: must be at least 2".into()));
        }
        if !(self.weight_trim_quantile > 0.0 && self.weight_trim_quantile <= 1.0) {
            return Err(Error::Config("at key `weight_trim_quantile`: must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn survival_options(&self) -> SurvivalOptions {
        SurvivalOptions {
            floor: self.trim_floor,
            form: self.kc_form,
        }
    }

    pub fn treatment_spec(&self, cohort: &Cohort<f64>) -> Result<EventSpec> {
        Ok(EventSpec::new(
            EventKind::Discontinuation,
            resolve_features(cohort, self.treatment_features.as_deref())?,
        ))
    }

    pub fn censoring_spec(&self, cohort: &Cohort<f64>) -> Result<EventSpec> {
        Ok(EventSpec::new(
            EventKind::Censoring,
            resolve_features(cohort, self.censoring_features.as_deref())?,
        ))
    }

    pub fn modifier_indices(&self, cohort: &Cohort<f64>) -> Result<Vec<usize>> {
        self.effect_modifiers
            .iter()
            .map(|name| {
                cohort
                    .covariate_names()
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Config(format!("at key `effect_modifiers`: unknown covariate {name:?}")))
            })
            .collect()
    }
}

/// Maps feature names onto cohort columns.
pub fn resolve_features(cohort: &Cohort<f64>, names: Option<&[String]>) -> Result<Vec<Feature>> {
    let Some(names) = names else {
        let mut all: Vec<Feature> = (0..cohort.baseline_names().len()).map(Feature::Baseline).collect();
        all.extend((0..cohort.covariate_names().len()).map(Feature::Covariate));
        return Ok(all);
    };
    names
        .iter()
        .map(|name| match name.as_str() {
            "time" => Ok(Feature::Time),
            "treatment" => Ok(Feature::Treatment),
            other => {
                if let Some(k) = cohort.baseline_names().iter().position(|b| b == other) {
                    Ok(Feature::Baseline(k))
                } else if let Some(k) = cohort.covariate_names().iter().position(|c| c == other) {
                    Ok(Feature::Covariate(k))
                } else {
                    Err(Error::Config(format!("unknown feature {other:?}")))
                }
            }
        })
        .collect()
}
