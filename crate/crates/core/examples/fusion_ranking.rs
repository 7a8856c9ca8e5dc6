//! Ranking with and without the latent state, first on three hand-made
//! candidates, then on impression sets scored by the generating oracle.
//!
//! cargo run --release --example fusion_ranking

use dlen::bayes::DecomposedPrediction;
use dlen::experiment::commands::{compare_modes, oracle_predictions, SimGround};
use dlen::experiment::{prepare_data, ExperimentConfig, StreamSeeds};
use dlen::fusion::{rank_topk, FusionMode, FusionWeights};
use dlen::model::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // b is the engaging item; c is clicked mostly by people who then regret it.
    let candidates = vec![
        DecomposedPrediction::from_heads(0.50, &[(0.30, 0.02)])?,
        DecomposedPrediction::from_heads(0.90, &[(0.20, 0.01)])?,
        DecomposedPrediction::from_heads(0.20, &[(0.60, 0.15)])?,
    ];
    for mode in [FusionMode::LatentJoint, FusionMode::Composed] {
        let ranked = rank_topk(&candidates, &FusionWeights::uniform(1, mode), 3)?;
        let names: Vec<char> = ranked.items.iter().map(|&i| (b'a' + i as u8) as char).collect();
        println!("{:<9} {names:?} {:.4?}", mode.to_string(), ranked.scores);
    }

    let mut cfg = ExperimentConfig::desk(ModelKind::Dlen, 1);
    cfg.data.generator.as_mut().expect("desk profile generates").n_samples = 50_000;
    let prepared = prepare_data(&cfg.data, &cfg.evaluation, StreamSeeds::new(cfg.seed))?;
    let idx = &prepared.split.eval;
    let ground = SimGround::new(&prepared, idx)?;
    let oracle = oracle_predictions(&prepared, idx)?;
    for gamma in [0.0, 1.0, 2.0] {
        cfg.fusion.weights = Some(FusionWeights::new(vec![1.0; 3], gamma, FusionMode::LatentJoint)?);
        for (r, _) in compare_modes(&cfg, &oracle, &ground)? {
            println!(
                "gamma {gamma} {:<9} sets {}  detest {:.4}  expected detest {:.4}  interactions {:.3}",
                r.mode.to_string(), r.n_sets, r.detest_fraction, r.expected_detest, r.expected_interactions
            );
        }
    }
    Ok(())
}
