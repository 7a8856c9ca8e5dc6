//! Generates a feed with a hidden "user is engaged" state, writes the
//! training TSV plus the ground-truth sidecar, and checks that every task's
//! pooled rate sits between its engaged and non-engaged rates.
//!
//! cargo run --release --example synthetic_feed -- [n_samples] [seed]

use dlen::metrics::auc;
use dlen::synth::{generate, verify_mediant, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(20_000), |a| a.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |a| a.parse())?;

    let config = GeneratorConfig {
        n_samples: n,
        ..GeneratorConfig::default()
    };
    let (world, data) = generate(&config, seed)?;

    let dir = std::env::temp_dir().join(format!("dlen-feed-{seed}"));
    std::fs::create_dir_all(&dir)?;
    data.save(&dir.join("dataset.tsv"), &dir.join("sidecar.tsv"))?;
    println!("{} rows written to {}", data.dataset.len(), dir.display());

    let engaged = data.sidecar.iter().filter(|r| r.latent_u == 1).count();
    println!("engaged share {:.3}", engaged as f64 / n as f64);

    let counts = data.counts();
    for t in 0..counts.tasks.len() {
        let m = verify_mediant(&counts, t)?;
        println!(
            "{:<6} engaged {:.4} >= pooled {:.4} >= not engaged {:.4}: {}",
            counts.tasks[t], m.up_rate, m.pooled_rate, m.not_up_rate, m.holds
        );
    }

    // The best any model can do at recovering the hidden state.
    let posterior: Vec<f64> = data.sidecar.iter().map(|r| r.true_posterior).collect();
    let u: Vec<u8> = data.sidecar.iter().map(|r| r.latent_u).collect();
    println!("bayes-optimal latent auc {:.4}", auc(&posterior, &u)?);

    let x = data.dataset.sample(0);
    let oracle = world.oracle_prediction(&x);
    println!("row 0: posterior {:.4}, composed {:?}", oracle.p_up,
        oracle.tasks.iter().map(|t| (t.composed * 1e4).round() / 1e4).collect::<Vec<_>>());
    Ok(())
}
