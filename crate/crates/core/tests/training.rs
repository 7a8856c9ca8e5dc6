//! Library-level runs on the default generated feed.

use std::path::Path;

use dlen::experiment::{prepare_data, run_training, ExperimentConfig, StreamSeeds};
use dlen::model::ModelKind;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn shipped_configs_match_the_desk_profile() {
    assert_eq!(config("dlen.toml"), ExperimentConfig::desk(ModelKind::Dlen, 1));
    assert_eq!(config("mmoe.toml"), ExperimentConfig::desk(ModelKind::Mmoe, 1));
    let smoke = config("smoke.toml");
    assert_eq!(smoke.data.generator.unwrap().n_samples, 1000);
}

#[test]
fn dlen_improves_on_its_initialization() {
    let cfg = ExperimentConfig::desk(ModelKind::Dlen, 1);
    let prepared = prepare_data(&cfg.data, &cfg.evaluation, StreamSeeds::new(cfg.seed)).unwrap();
    let (model, log) = run_training(&cfg, &prepared).unwrap();
    let n_tasks = model.config().n_tasks();
    let first = &log[..n_tasks];
    let last = &log[log.len() - n_tasks..];
    assert_eq!(last[0].epoch, cfg.training.epochs);
    for (a, b) in first.iter().zip(last) {
        assert!(b.eval_auc.unwrap() >= a.eval_auc.unwrap(), "{}: {:?} -> {:?}", a.task, a.eval_auc, b.eval_auc);
        assert!(b.train_loss.unwrap().is_finite());
    }
    assert!(last[0].latent_auc.unwrap() > 0.5);
}

#[test]
fn models_of_one_seed_share_the_split() {
    let dlen = ExperimentConfig::desk(ModelKind::Dlen, 4);
    let mmoe = ExperimentConfig::desk(ModelKind::Mmoe, 4);
    let a = prepare_data(&dlen.data, &dlen.evaluation, StreamSeeds::new(4)).unwrap();
    let b = prepare_data(&mmoe.data, &mmoe.evaluation, StreamSeeds::new(4)).unwrap();
    assert_eq!(a.split, b.split);
    assert_eq!(a.dataset, b.dataset);
}
