//! MMOE, CGC and DLEN on the same data, split and batch order over a few
//! seeds.
//!
//! cargo run --release --example bench_models -- [n_samples] [n_seeds]

use dlen::experiment::commands::run_bench;
use dlen::experiment::ExperimentConfig;
use dlen::model::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk(ModelKind::Dlen, 1);
    cfg.data.generator.as_mut().expect("desk profile generates").n_samples =
        args.next().map_or(Ok(30_000), |a| a.parse())?;
    cfg.bench.n_seeds = args.next().map_or(Ok(2), |a| a.parse())?;

    let result = run_bench(&cfg, |_, _, _, _| Ok(()), |line| eprintln!("{line}"))?;
    print!("{}", result.table());
    Ok(())
}
