//! Composing a task probability from the latent state, and which way each
//! task's loss pushes that state.
//!
//! cargo run --example probability_algebra

use dlen::bayes::{compose_task_probability, game_gradient_diagnostic, DecomposedPrediction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (up, p_up, not_up) = (0.42, 0.7, 0.01);
    let p = compose_task_probability(up, p_up, not_up)?;
    println!("P(click) = {up} * {p_up} + {not_up} * (1 - {p_up}) = {p:.6}");

    // The complementary outcome composes the same way; the two sum to one.
    let q = compose_task_probability(1.0 - up, p_up, 1.0 - not_up)?;
    println!("P(click) + P(no click) = {:.15}", p + q);

    // A certain latent state selects one branch exactly.
    assert_eq!(compose_task_probability(up, 1.0, not_up)?, up);
    assert_eq!(compose_task_probability(up, 0.0, not_up)?, not_up);

    // Three tasks sharing one latent state.
    let pred = DecomposedPrediction::from_heads(p_up, &[(0.42, 0.01), (0.18, 0.004), (0.09, 0.002)])?;
    for (name, t) in ["click", "like", "share"].iter().zip(&pred.tasks) {
        println!(
            "{name:<6} given up {:.3}  given not up {:.3}  composed {:.4}  joint prefer {:.4}",
            t.p_given_up, t.p_given_not_up, t.composed, t.joint_prefer
        );
    }

    // A click pulls the latent state up; the two ignored tasks pull it down.
    let game = game_gradient_diagnostic(&pred, &[1, 0, 0])?;
    for (t, (g, push)) in game.per_task.iter().zip(&game.per_task_push).enumerate() {
        println!("task {t}: dL/dp_up = {g:+.4} ({push:?})");
    }
    println!("total {:+.4} ({:?})", game.total, game.total_push);
    Ok(())
}
