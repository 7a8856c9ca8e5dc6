//! Rank-statistic AUC, the any-interaction latent label and per-task gains.
//!
//! cargo run --example auc_metrics

use dlen::metrics::{any_interaction_labels, auc, latent_auc, mtl_gain, AucReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0, 0, 1, 1];
    println!("auc({scores:?}, {labels:?}) = {}", auc(&scores, &labels)?);

    // Tied scores count half a pair.
    println!("all tied: {}", auc(&[0.5; 4], &labels)?);

    let tasks = vec!["click".to_string(), "like".to_string()];
    let click: &[u8] = &[1, 0, 0, 1, 0, 0];
    let like: &[u8] = &[0, 0, 1, 1, 0, 0];
    let model = AucReport::compute(
        &tasks,
        &[vec![0.9, 0.2, 0.4, 0.7, 0.3, 0.1], vec![0.2, 0.1, 0.6, 0.8, 0.3, 0.4]],
        &[click, like],
    )?;
    let baseline = AucReport::compute(
        &tasks,
        &[vec![0.45, 0.5, 0.4, 0.7, 0.3, 0.1], vec![0.2, 0.65, 0.6, 0.8, 0.3, 0.4]],
        &[click, like],
    )?;
    for (t, g) in model.tasks.iter().zip(mtl_gain(&model, &baseline)?.tasks) {
        println!("{:<6} auc {:.4}  gain {:+.4}", t.task, t.auc.unwrap_or(f64::NAN), g.gain);
    }

    // A sample interacted if any task fired.
    println!("any interaction: {:?}", any_interaction_labels(&[click, like]));
    let p_up = [0.9, 0.1, 0.7, 0.95, 0.3, 0.2];
    println!("latent auc: {:.4}", latent_auc(Some(&p_up), &[click, like])?);
    Ok(())
}
