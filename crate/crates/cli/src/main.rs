//! `sftm`: simulate cohorts, estimate treatment effects, run benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sftm_core::bench::{run_benchmark, BenchmarkPlan};
use sftm_core::dgp::save_truth;
use sftm_core::io::{load_cohort, save_cohort};
use sftm_core::{estimate, generate_setting, CVariant, DgpConfig, Error, EstimatorConfig, EstimatorKind, Setting};

const EXIT_DATA: u8 = 3;
const EXIT_ESTIMATION: u8 = 4;

#[derive(Parser)]
#[command(name = "sftm", version, about = "Structural failure time models with time-varying treatment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort from the benchmark data-generating process.
    Simulate(SimulateArgs),
    /// Estimate the treatment effect on a cohort.
    Estimate(EstimateArgs),
    /// Monte Carlo benchmark over settings, true effects and estimators.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    psi: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "scenario1")]
    setting: Setting,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON file with DGP parameters; --psi, --n and --seed take precedence.
    #[arg(long)]
    dgp_config: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    subjects: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    /// Estimator configuration JSON (`"schema": 1`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    c_variant: Option<CVariant>,
    /// Number of jackknife groups; 0 skips the variance.
    #[arg(long)]
    jackknife_groups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Applies the nuisance-model choices of a benchmark setting.
    #[arg(long)]
    setting: Option<Setting>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "scenario1")]
    scenarios: Vec<Setting>,
    #[arg(long = "psi", value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0,0.5")]
    psi_stars: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "naive,ipcw,dr,msm,disc")]
    estimators: Vec<EstimatorKind>,
    #[arg(long, value_delimiter = ',', default_value = "c,c_opt")]
    c_variants: Vec<CVariant>,
    /// Replicates per cell; the published tables used 1000.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Jackknife groups per replicate; 0 disables coverage.
    #[arg(long, default_value_t = 100)]
    jackknife_groups: usize,
    /// Estimator configuration template applied to every cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dgp_config: Option<PathBuf>,
    /// Leave the runtime column empty so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_data_error() { EXIT_DATA } else { EXIT_ESTIMATION },
            message: e.to_string(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_dgp(path: Option<&Path>) -> Result<DgpConfig, Failure> {
    match path {
        None => Ok(DgpConfig::default()),
        Some(p) => {
            let text = read_text(p)?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| Failure {
                code: EXIT_DATA,
                message: format!("{}: at key `{}`: {}", p.display(), e.path(), e.inner()),
            })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EstimatorConfig, Failure> {
    match path {
        None => Ok(EstimatorConfig::default()),
        Some(p) => EstimatorConfig::from_json(&read_text(p)?).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", p.display()),
        }),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut dgp = load_dgp(args.dgp_config.as_deref())?;
    dgp.psi_star = args.psi;
    dgp.n = args.n as usize;
    dgp.seed = args.seed;
    let bundle = generate_setting(&dgp, args.setting)?;
    create_dir(&args.out_dir)?;
    save_cohort(&bundle.cohort, &args.out_dir.join("subjects.csv"), &args.out_dir.join("covariates.csv"))?;
    save_truth(&bundle.cohort, &bundle.truth, &args.out_dir.join("truth.csv"))?;
    let manifest = json!({
        "setting": args.setting.as_str(),
        "dgp": bundle.dgp,
        "analysis": bundle.configure(&EstimatorConfig::default()),
        "files": ["subjects.csv", "covariates.csv", "truth.csv"],
    });
    write_text(
        &args.out_dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )
}

fn estimate_cmd(args: EstimateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(e) = args.estimator {
        cfg.estimator = e;
    }
    if let Some(c) = args.c_variant {
        cfg.c_variant = c;
    }
    if let Some(g) = args.jackknife_groups {
        cfg.jackknife_groups = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(setting) = args.setting {
        setting.apply(&mut cfg);
    }
    let cohort = load_cohort(&args.subjects, &args.covariates)?;
    let est = estimate(&cohort, &cfg).map_err(|e| {
        let failure = Failure::from(e);
        Failure {
            message: format!("{} estimator failed on {} subjects: {}", cfg.estimator.as_str(), cohort.len(), failure.message),
            ..failure
        }
    })?;
    let text = est.to_json() + "\n";
    match args.out {
        Some(p) => write_text(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn benchmark(args: BenchmarkArgs) -> Result<(), Failure> {
    let plan = BenchmarkPlan {
        settings: args.scenarios,
        psi_stars: args.psi_stars,
        estimators: args.estimators,
        c_variants: args.c_variants,
        replicates: args.replicates as usize,
        n: args.n as usize,
        seed: args.seed,
        jackknife_groups: args.jackknife_groups,
        base: load_config(args.config.as_deref())?,
        dgp: load_dgp(args.dgp_config.as_deref())?,
        record_timing: !args.no_timing,
    };
    let report = run_benchmark(&plan)?;
    create_dir(&args.out_dir)?;
    report.write_csv(&args.out_dir.join("results.csv"))?;
    let md = report.to_markdown();
    write_text(&args.out_dir.join("results.md"), &md)?;
    print!("{md}");
    if report.aborted.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report
        .aborted
        .iter()
        .map(|a| {
            format!(
                "aborted {} {}{} psi* = {}: {}/{} replicates failed, first error: {}",
                a.cell.setting.as_str(),
                a.cell.estimator.as_str(),
                a.cell.c_variant.map(|c| format!("/{}", c.as_str())).unwrap_or_default(),
                a.psi_star,
                a.failures,
                a.replicates,
                a.first_error
            )
        })
        .collect();
    Err(Failure {
        code: EXIT_ESTIMATION,
        message: lines.join("\n"),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
