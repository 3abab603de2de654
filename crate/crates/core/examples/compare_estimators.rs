//! Simulates one cohort and runs every estimator on it.
//!
//! ```text
//! cargo run --release --example compare_estimators -- -0.5 2000 7
//! ```

use sftm_core::{estimate_point, generate_cohort, CVariant, DgpConfig, EstimatorConfig, EstimatorKind};

fn main() -> sftm_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let psi: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(-0.5);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let (cohort, _) = generate_cohort(&DgpConfig::new(psi, n, seed))?;
    println!("psi* = {psi}, exp(psi*) = {:.4}, n = {n}", psi.exp());
    for kind in EstimatorKind::ALL {
        let variants: &[CVariant] = if kind.uses_c() { &[CVariant::Simple, CVariant::Optimal] } else { &[CVariant::Simple] };
        for &c in variants {
            let cfg = EstimatorConfig::for_estimator(kind, c);
            let label = if kind.uses_c() { format!("{}/{}", kind.as_str(), c.as_str()) } else { kind.as_str().to_string() };
            match estimate_point(&cohort, &cfg) {
                Ok(est) => println!("{label:>10}  psi = {:+.4}  exp(psi) = {:.4}", est.psi_hat.psi1, est.exp_psi1),
                Err(e) => println!("{label:>10}  failed: {e}"),
            }
        }
    }
    Ok(())
}
