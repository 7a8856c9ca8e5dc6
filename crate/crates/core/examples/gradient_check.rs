//! Finite-difference check of every architecture in its tiny profile.
//!
//! cargo run --release --example gradient_check -- [seed]

use dlen::experiment::commands::run_gradcheck;
use dlen::experiment::ExperimentConfig;
use dlen::model::ModelKind;
use dlen::nn::GRAD_CHECK_TOLERANCE;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |a| a.parse())?;
    for kind in [ModelKind::Mmoe, ModelKind::Cgc, ModelKind::Dlen] {
        let report = run_gradcheck(&ExperimentConfig::desk(kind, seed))?;
        println!(
            "{kind:<5} max rel error {:.2e} at {}[{}]  checked {}  kinks skipped {}  {}",
            report.max_rel_error,
            report.worst_param,
            report.worst_index,
            report.checked,
            report.skipped_kinks,
            if report.passed(GRAD_CHECK_TOLERANCE) { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
