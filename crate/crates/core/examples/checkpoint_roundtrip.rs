//! Saves a freshly built DLEN, reloads it into a new model and checks that
//! every parameter and prediction comes back bit for bit.
//!
//! cargo run --example checkpoint_roundtrip

use dlen::bayes::AlphaPolicy;
use dlen::model::{Batch, CategoricalField, FeatureSchema, ModelConfig, MtlModel, SampleFeatures};
use dlen::nn::checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = FeatureSchema {
        categorical: vec![CategoricalField {
            name: "user".into(),
            vocab_size: 10,
            embedding_dim: 4,
        }],
        numeric: vec!["freshness".into()],
    };
    let mut config = ModelConfig::dlen(&["click", "like"]);
    config.alpha = Some(AlphaPolicy::Fixed { values: vec![0.05, 0.02] });
    let model = MtlModel::new(config.clone(), schema.clone(), 42)?;

    let path = std::env::temp_dir().join("dlen-roundtrip.ckpt");
    checkpoint::save(&path, model.params())?;
    let bytes = std::fs::read(&path)?;
    println!("{} parameters, {} bytes at {}", model.params().len(), bytes.len(), path.display());
    let manifest_end = bytes.windows(2).position(|w| w == b"\n\n").unwrap_or(0);
    for line in String::from_utf8_lossy(&bytes[..manifest_end]).lines().take(4) {
        println!("  {line}");
    }

    // A different init seed, then the checkpoint on top.
    let mut restored = MtlModel::new(config, schema, 7)?;
    checkpoint::restore(restored.params_mut(), &checkpoint::load(&path)?)?;
    for (a, b) in model.params().iter().zip(restored.params().iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{} differs", a.name);
    }

    let batch = Batch::from_samples(
        &(0..5)
            .map(|i| SampleFeatures {
                categorical: vec![i],
                numeric: vec![i as f32 / 5.0],
            })
            .collect::<Vec<_>>(),
        None,
    );
    assert_eq!(model.predict(&batch)?, restored.predict(&batch)?);
    println!("parameters and predictions identical after reload");
    Ok(())
}
