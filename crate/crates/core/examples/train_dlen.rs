//! Trains DLEN on a generated feed and compares its latent estimate with the
//! hidden state the generator recorded.
//!
//! cargo run --release --example train_dlen -- [n_samples] [epochs]

use dlen::experiment::{evaluate, prepare_data, run_training, ExperimentConfig, StreamSeeds};
use dlen::model::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk(ModelKind::Dlen, 1);
    if let Some(n) = args.next() {
        cfg.data.generator.as_mut().expect("desk profile generates").n_samples = n.parse()?;
    }
    if let Some(e) = args.next() {
        cfg.training.epochs = e.parse()?;
    }

    let prepared = prepare_data(&cfg.data, &cfg.evaluation, StreamSeeds::new(cfg.seed))?;
    let (model, log) = run_training(&cfg, &prepared)?;
    for r in &log {
        println!(
            "epoch {} {:<6} loss {:>8} auc {:.4}",
            r.epoch,
            r.task,
            r.train_loss.map_or("-".into(), |l| format!("{l:.5}")),
            r.eval_auc.unwrap_or(f64::NAN)
        );
    }

    let eval = evaluate(&model, &prepared, &prepared.split.eval)?;
    let show = |v: Option<f64>| v.map_or("NA".into(), |v| format!("{v:.4}"));
    println!("latent auc vs any interaction: {}", show(eval.latent_auc));
    println!("latent auc vs hidden state:   {}", show(eval.latent_recovery_auc));
    println!("bayes-optimal:                {}", show(eval.bayes_latent_auc));
    println!("alpha caps: {:?}", model.alphas());
    Ok(())
}
