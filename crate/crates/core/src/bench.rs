//! Monte Carlo benchmark: repeated generate-then-estimate over a grid of
//! settings, true effects and estimators.

use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CVariant, EstimatorConfig, EstimatorKind};
use crate::dgp::{generate_setting, DgpConfig, Setting};
use crate::error::{Error, Result};
use crate::estimators::estimate;

pub const CSV_HEADER: [&str; 10] = [
    "scenario",
    "estimator",
    "c_variant",
    "psi_star",
    "replicates",
    "bias",
    "sd",
    "rmse",
    "coverage",
    "mean_runtime_s",
];

/// Share of failed replicates above which a cell is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub settings: Vec<Setting>,
    pub psi_stars: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    /// Variants run for estimators that take an index function.
    pub c_variants: Vec<CVariant>,
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
    /// 0 disables the jackknife and leaves coverage empty.
    pub jackknife_groups: usize,
    /// Template for the analysis configuration of every cell.
    pub base: EstimatorConfig,
    /// Template for the data-generating process; `psi_star`, `n` and `seed`
    /// are overwritten per replicate.
    pub dgp: DgpConfig,
    pub record_timing: bool,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        Self {
            settings: vec![Setting::Scenario1],
            psi_stars: vec![-0.5, 0.0, 0.5],
            estimators: EstimatorKind::ALL.to_vec(),
            c_variants: vec![CVariant::Simple, CVariant::Optimal],
            replicates: 200,
            n: 1000,
            seed: 1,
            jackknife_groups: 100,
            base: EstimatorConfig::default(),
            dgp: DgpConfig::new(0.0, 1000, 1),
            record_timing: true,
        }
    }
}

/// One row of the result table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub setting: Setting,
    /// Index into `BenchmarkPlan::psi_stars`.
    pub psi_index: usize,
    pub estimator: EstimatorKind,
    pub c_variant: Option<CVariant>,
}

impl BenchmarkPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.settings.is_empty() || self.psi_stars.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("benchmark needs at least one setting, psi* and estimator".into()));
        }
        if self.c_variants.is_empty() && self.estimators.iter().any(|e| e.uses_c()) {
            return Err(Error::Config("no c variant selected".into()));
        }
        if self.jackknife_groups == 1 || self.jackknife_groups > self.n {
            return Err(Error::Config(format!(
                "jackknife groups must be 0 or in 2..={}, got {}",
                self.n, self.jackknife_groups
            )));
        }
        self.base.validate()?;
        let mut dgp = self.dgp.clone();
        dgp.n = self.n;
        dgp.validate()
    }

    /// Cells in output order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &setting in &self.settings {
            for psi_index in 0..self.psi_stars.len() {
                for &estimator in &self.estimators {
                    if estimator.uses_c() {
                        for &c in &self.c_variants {
                            out.push(CellKey {
                                setting,
                                psi_index,
                                estimator,
                                c_variant: Some(c),
                            });
                        }
                    } else {
                        out.push(CellKey {
                            setting,
                            psi_index,
                            estimator,
                            c_variant: None,
                        });
                    }
                }
            }
        }
        out
    }

    fn cell_config(&self, key: &CellKey, seed: u64) -> EstimatorConfig {
        let mut cfg = self.base.clone();
        cfg.estimator = key.estimator;
        if let Some(c) = key.c_variant {
            cfg.c_variant = c;
        }
        cfg.jackknife_groups = self.jackknife_groups;
        cfg.seed = seed;
        key.setting.apply(&mut cfg);
        cfg
    }
}

/// Seed of replicate `r`: a function of the base seed and `r` only.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(r as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub cell: CellKey,
    pub replicate: usize,
    pub outcome: std::result::Result<ReplicateValue, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateValue {
    pub exp_psi: f64,
    pub covered: Option<bool>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub scenario: String,
    pub estimator: String,
    pub c_variant: Option<String>,
    pub psi_star: f64,
    /// Successful replicates entering the summaries.
    pub replicates: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub mean_runtime_s: Option<f64>,
    #[serde(skip)]
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortedCell {
    pub cell: CellKey,
    pub psi_star: f64,
    pub failures: usize,
    pub replicates: usize,
    pub first_error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub results: Vec<BenchmarkResult>,
    pub aborted: Vec<AbortedCell>,
}

/// Bias, SD and RMSE of `values` around `truth` with divisor `len`, so
/// that `rmse^2 = bias^2 + sd^2`.
pub fn summarize(values: &[f64], truth: f64) -> (f64, f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / r;
    (mean - truth, var.sqrt(), mse.sqrt())
}

/// Runs every replicate of every cell. Records come back sorted by cell
/// and replicate.
pub fn run_replicates(plan: &BenchmarkPlan) -> Result<Vec<ReplicateRecord>> {
    plan.validate()?;
    let cells = plan.cells();
    let jobs: Vec<(Setting, usize, usize)> = plan
        .settings
        .iter()
        .flat_map(|&s| (0..plan.psi_stars.len()).flat_map(move |p| (0..plan.replicates).map(move |r| (s, p, r))))
        .collect();
    let mut records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(setting, psi_index, replicate)| -> Result<Vec<ReplicateRecord>> {
            let seed = replicate_seed(plan.seed, replicate);
            let mut dgp = plan.dgp.clone();
            dgp.psi_star = plan.psi_stars[psi_index];
            dgp.n = plan.n;
            dgp.seed = seed;
            let bundle = generate_setting(&dgp, setting)?;
            Ok(cells
                .iter()
                .filter(|k| k.setting == setting && k.psi_index == psi_index)
                .map(|key| {
                    let cfg = plan.cell_config(key, seed);
                    let start = Instant::now();
                    let outcome = estimate(&bundle.cohort, &cfg)
                        .map(|est| ReplicateValue {
                            exp_psi: est.exp_psi1,
                            covered: est.covers(dgp.psi_star),
                            runtime_s: start.elapsed().as_secs_f64(),
                        })
                        .map_err(|e| e.to_string());
                    ReplicateRecord {
                        cell: *key,
                        replicate,
                        outcome,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    records.sort_by_key(|r| (r.cell, r.replicate));
    Ok(records)
}

/// Aggregates sorted replicate records into result rows.
pub fn aggregate(plan: &BenchmarkPlan, records: &[ReplicateRecord]) -> BenchmarkReport {
    let mut results = Vec::new();
    let mut aborted = Vec::new();
    for key in plan.cells() {
        let cell: Vec<&ReplicateRecord> = records.iter().filter(|r| r.cell == key).collect();
        let psi_star = plan.psi_stars[key.psi_index];
        let ok: Vec<ReplicateValue> = cell.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
        let failures = cell.len() - ok.len();
        if ok.is_empty() || failures as f64 > MAX_FAILURE_RATE * cell.len() as f64 {
            aborted.push(AbortedCell {
                cell: key,
                psi_star,
                failures,
                replicates: cell.len(),
                first_error: cell
                    .iter()
                    .find_map(|r| r.outcome.as_ref().err().cloned())
                    .unwrap_or_default(),
            });
            continue;
        }
        let values: Vec<f64> = ok.iter().map(|v| v.exp_psi).collect();
        let (bias, sd, rmse) = summarize(&values, psi_star.exp());
        let coverage = ok
            .iter()
            .map(|v| v.covered)
            .collect::<Option<Vec<bool>>>()
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64);
        let mean_runtime_s = plan
            .record_timing
            .then(|| ok.iter().map(|v| v.runtime_s).sum::<f64>() / ok.len() as f64);
        results.push(BenchmarkResult {
            scenario: key.setting.as_str().to_string(),
            estimator: key.estimator.as_str().to_string(),
            c_variant: key.c_variant.map(|c| c.as_str().to_string()),
            psi_star,
            replicates: ok.len(),
            bias,
            sd,
            rmse,
            coverage,
            mean_runtime_s,
            failures,
        });
    }
    BenchmarkReport { results, aborted }
}

pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkReport> {
    let records = run_replicates(plan)?;
    Ok(aggregate(plan, &records))
}

impl BenchmarkReport {
    pub fn find(&self, scenario: Setting, estimator: EstimatorKind, c: Option<CVariant>, psi_star: f64) -> Option<&BenchmarkResult> {
        self.results.iter().find(|r| {
            r.scenario == scenario.as_str()
                && r.estimator == estimator.as_str()
                && r.c_variant.as_deref() == c.map(CVariant::as_str)
                && r.psi_star == psi_star
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.results {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("flushing CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// One line per scenario/estimator/c with bias, SD, RMSE and coverage
    /// grouped by true effect.
    pub fn to_markdown(&self) -> String {
        let mut psis: Vec<f64> = Vec::new();
        let mut rows: Vec<(&str, &str, Option<&str>)> = Vec::new();
        for r in &self.results {
            if !psis.contains(&r.psi_star) {
                psis.push(r.psi_star);
            }
            let label = (r.scenario.as_str(), r.estimator.as_str(), r.c_variant.as_deref());
            if !rows.contains(&label) {
                rows.push(label);
            }
        }
        let mut out = String::from("| scenario | estimator | c |");
        for p in &psis {
            out.push_str(&format!(" bias ({p}) | sd ({p}) | rmse ({p}) | coverage ({p}) |"));
        }
        out.push_str("\n|---|---|---|");
        out.push_str(&"---|---|---|---|".repeat(psis.len()));
        out.push('\n');
        for (scenario, estimator, c) in rows {
            out.push_str(&format!("| {scenario} | {estimator} | {} |", c.unwrap_or("")));
            for &p in &psis {
                match self.results.iter().find(|r| {
                    r.scenario == scenario && r.estimator == estimator && r.c_variant.as_deref() == c && r.psi_star == p
                }) {
                    Some(r) => out.push_str(&format!(
                        " {:.3} | {:.3} | {:.3} | {} |",
                        r.bias,
                        r.sd,
                        r.rmse,
                        r.coverage.map_or_else(|| "-".to_string(), |c| format!("{:.1}", 100.0 * c))
                    )),
                    None => out.push_str(" - | - | - | - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}
