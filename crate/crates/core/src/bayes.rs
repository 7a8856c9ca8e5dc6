//! Label decomposition through a shared latent preference state.
//!
//! For every task `t` the observed positive probability is written as a
//! mixture over the latent "user prefers the item" state `UP`:
//!
//! ```text
//! P(t) = P(t | UP) * P(UP) + P(t | not UP) * (1 - P(UP))
//! ```
//!
//! `P(UP)` is one scalar per sample shared by all tasks. `P(t | not UP)` is
//! capped by a per-task constant `alpha_t`, and the joint score
//! `P(t, UP) = P(t | UP) * P(UP)` is what ranking consumes. The complement
//! `P(not UP)` is never stored; it is always `1 - p_up`.

use serde::{Deserialize, Serialize};

use crate::nn::{kernels, Graph, NnError, Real, Var, PROB_EPS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BayesError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("task {task}: base rate {rate} must lie strictly between 0 and 1")]
    DegenerateTask { task: usize, rate: f64 },
    #[error("alpha policy: {0}")]
    InvalidPolicy(String),
    #[error("no label for task {0}")]
    MissingLabel(usize),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("empty batch")]
    EmptyBatch,
}

fn unit(name: &'static str, value: f64) -> Result<f64, BayesError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(BayesError::OutOfRange { name, value })
    }
}

/// Total probability of a task positive given the latent state.
pub fn compose_task_probability(
    p_given_up: f64,
    p_up: f64,
    p_given_not_up: f64,
) -> Result<f64, BayesError> {
    unit("p_given_up", p_given_up)?;
    unit("p_up", p_up)?;
    unit("p_given_not_up", p_given_not_up)?;
    Ok(p_given_up * p_up + p_given_not_up * (1.0 - p_up))
}

/// Probability that the user both prefers the item and performs the task.
pub fn joint_prefer_score(p_given_up: f64, p_up: f64) -> f64 {
    p_given_up * p_up
}

/// Recorded composition, differentiable in all three inputs.
pub fn compose_graph<T: Real>(
    g: &mut Graph<T>,
    p_given_up: Var,
    p_up: Var,
    p_given_not_up: Var,
) -> Result<Var, NnError> {
    let prefer = g.mul(p_given_up, p_up)?;
    let not_up = g.one_minus(p_up);
    let other = g.mul(p_given_not_up, not_up)?;
    g.add(prefer, other)
}

/// How the cap on `P(t | not UP)` is chosen per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// Explicit cap per task.
    Fixed { values: Vec<f64> },
    /// `alpha_t = multiplier * base_rate_t`, multiplier in `[0.1, 0.5]`.
    /// Base rates are the empirical positive rates of the training data and
    /// are filled in before the model is built.
    RateScaled {
        multiplier: f64,
        #[serde(default)]
        task_base_rates: Vec<f64>,
    },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::RateScaled {
            multiplier: 0.5,
            task_base_rates: Vec::new(),
        }
    }
}

impl AlphaPolicy {
    pub fn with_base_rates(&self, rates: &[f64]) -> Self {
        match self {
            AlphaPolicy::RateScaled { multiplier, .. } => AlphaPolicy::RateScaled {
                multiplier: *multiplier,
                task_base_rates: rates.to_vec(),
            },
            fixed => fixed.clone(),
        }
    }

    pub fn validate_shape(&self) -> Result<(), BayesError> {
        match self {
            AlphaPolicy::Fixed { values } => {
                for (t, &a) in values.iter().enumerate() {
                    if !(a > 0.0 && a < 1.0) {
                        return Err(BayesError::InvalidPolicy(format!(
                            "fixed alpha for task {t} is {a}, expected (0, 1)"
                        )));
                    }
                }
                Ok(())
            }
            AlphaPolicy::RateScaled { multiplier, .. } => {
                if (0.1..=0.5).contains(multiplier) {
                    Ok(())
                } else {
                    Err(BayesError::InvalidPolicy(format!(
                        "multiplier {multiplier} outside [0.1, 0.5]"
                    )))
                }
            }
        }
    }

    /// Resolved caps for the first `n_tasks` tasks.
    pub fn alphas(&self, n_tasks: usize) -> Result<Vec<f64>, BayesError> {
        (0..n_tasks).map(|t| alpha_for_task(self, t)).collect()
    }
}

pub fn alpha_for_task(policy: &AlphaPolicy, task: usize) -> Result<f64, BayesError> {
    policy.validate_shape()?;
    match policy {
        AlphaPolicy::Fixed { values } => values.get(task).copied().ok_or_else(|| {
            BayesError::InvalidPolicy(format!("no fixed alpha for task {task}"))
        }),
        AlphaPolicy::RateScaled {
            multiplier,
            task_base_rates,
        } => {
            let rate = *task_base_rates.get(task).ok_or_else(|| {
                BayesError::InvalidPolicy(format!("no base rate for task {task}"))
            })?;
            if !(rate > 0.0 && rate < 1.0) {
                return Err(BayesError::DegenerateTask { task, rate });
            }
            Ok(multiplier * rate)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDecomposition {
    pub p_given_up: f64,
    pub p_given_not_up: f64,
    pub composed: f64,
    pub joint_prefer: f64,
}

/// One sample's latent state and per-task decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedPrediction {
    pub p_up: f64,
    pub tasks: Vec<TaskDecomposition>,
}

impl DecomposedPrediction {
    /// Builds the decomposition from `(p_given_up, p_given_not_up)` heads.
    pub fn from_heads(p_up: f64, heads: &[(f64, f64)]) -> Result<Self, BayesError> {
        let tasks = heads
            .iter()
            .map(|&(up, not_up)| {
                Ok(TaskDecomposition {
                    p_given_up: up,
                    p_given_not_up: not_up,
                    composed: compose_task_probability(up, p_up, not_up)?,
                    joint_prefer: joint_prefer_score(up, p_up),
                })
            })
            .collect::<Result<_, BayesError>>()?;
        Ok(Self { p_up, tasks })
    }

    /// Prediction from a model without a latent head: only composed
    /// probabilities are meaningful, `p_up` is fixed at 1.
    pub fn from_composed(composed: &[f64]) -> Self {
        Self {
            p_up: 1.0,
            tasks: composed
                .iter()
                .map(|&p| TaskDecomposition {
                    p_given_up: p,
                    p_given_not_up: 0.0,
                    composed: p,
                    joint_prefer: p,
                })
                .collect(),
        }
    }

    pub fn p_not_up(&self) -> f64 {
        1.0 - self.p_up
    }
}

fn check_labels(labels: &[u8], n_tasks: usize) -> Result<(), BayesError> {
    if labels.len() < n_tasks {
        return Err(BayesError::MissingLabel(labels.len()));
    }
    for &y in labels {
        if y > 1 {
            return Err(BayesError::InvalidLabel(y));
        }
    }
    Ok(())
}

/// Sum over tasks of the mean cross-entropy of the composed probability.
/// `labels[i][t]` is sample `i`'s label for task `t`. The latent state enters
/// only through the composition.
pub fn dlen_loss(
    preds: &[DecomposedPrediction],
    labels: &[Vec<u8>],
    task_weights: Option<&[f64]>,
) -> Result<f64, BayesError> {
    let first = preds.first().ok_or(BayesError::EmptyBatch)?;
    let n_tasks = first.tasks.len();
    if labels.len() != preds.len() {
        return Err(BayesError::MissingLabel(0));
    }
    let mut per_task = vec![0.0f64; n_tasks];
    for (pred, y) in preds.iter().zip(labels) {
        check_labels(y, n_tasks)?;
        for (t, task) in pred.tasks.iter().enumerate() {
            per_task[t] += kernels::bce_term(task.composed, f64::from(y[t]), PROB_EPS);
        }
    }
    let n = preds.len() as f64;
    Ok(per_task
        .iter()
        .enumerate()
        .map(|(t, s)| task_weights.map_or(1.0, |w| w[t]) * s / n)
        .sum())
}

/// Closed-form derivative of one sample's cross-entropy on task `t` with
/// respect to `p_up`.
pub fn task_loss_gradient_wrt_p_up(task: &TaskDecomposition, label: u8) -> f64 {
    let gap = task.p_given_up - task.p_given_not_up;
    if label == 1 {
        -gap / task.composed
    } else {
        gap / (1.0 - task.composed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    /// Gradient descent raises `p_up`.
    Increase,
    /// Gradient descent lowers `p_up`.
    Decrease,
    Neutral,
}

impl Push {
    fn of(grad: f64) -> Self {
        if grad < 0.0 {
            Push::Increase
        } else if grad > 0.0 {
            Push::Decrease
        } else {
            Push::Neutral
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameReport {
    /// `d loss_t / d p_up` per task.
    pub per_task: Vec<f64>,
    pub per_task_push: Vec<Push>,
    /// Sum over tasks.
    pub total: f64,
    pub total_push: Push,
}

/// Direction in which each task's cross-entropy moves the shared latent
/// state for one sample.
pub fn game_gradient_diagnostic(
    pred: &DecomposedPrediction,
    labels: &[u8],
) -> Result<GameReport, BayesError> {
    check_labels(labels, pred.tasks.len())?;
    let per_task: Vec<f64> = pred
        .tasks
        .iter()
        .zip(labels)
        .map(|(t, &y)| task_loss_gradient_wrt_p_up(t, y))
        .collect();
    let total = per_task.iter().sum();
    Ok(GameReport {
        per_task_push: per_task.iter().map(|&g| Push::of(g)).collect(),
        per_task,
        total,
        total_push: Push::of(total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_examples() {
        let p = compose_task_probability(0.5, 0.4, 0.02).unwrap();
        assert!((p - 0.212).abs() < 1e-15);
        assert_eq!(compose_task_probability(0.37, 1.0, 0.9).unwrap(), 0.37);
        assert_eq!(compose_task_probability(0.37, 0.0, 0.9).unwrap(), 0.9);
        assert!(compose_task_probability(1.2, 0.5, 0.1).is_err());
        assert!(compose_task_probability(0.2, -0.1, 0.1).is_err());
    }

    #[test]
    fn joint_examples() {
        assert!((joint_prefer_score(0.3, 0.5) - 0.15).abs() < 1e-15);
        assert_eq!(joint_prefer_score(0.42, 1.0), 0.42);
    }

    #[test]
    fn alpha_examples() {
        let scaled = |m, r| AlphaPolicy::RateScaled {
            multiplier: m,
            task_base_rates: vec![r],
        };
        assert!((alpha_for_task(&scaled(0.5, 0.04), 0).unwrap() - 0.02).abs() < 1e-15);
        assert!((alpha_for_task(&scaled(0.1, 0.3), 0).unwrap() - 0.03).abs() < 1e-15);
        let fixed = AlphaPolicy::Fixed { values: vec![0.05] };
        assert_eq!(alpha_for_task(&fixed, 0).unwrap(), 0.05);
        assert!(matches!(
            alpha_for_task(&scaled(0.5, 0.0), 0),
            Err(BayesError::DegenerateTask { .. })
        ));
        assert!(matches!(
            alpha_for_task(&scaled(0.5, 1.0), 0),
            Err(BayesError::DegenerateTask { .. })
        ));
        assert!(alpha_for_task(&scaled(0.7, 0.2), 0).is_err());
    }

    #[test]
    fn loss_examples() {
        let pred = DecomposedPrediction::from_heads(0.4, &[(0.5, 0.02)]).unwrap();
        let l = dlen_loss(&[pred], &[vec![1]], None).unwrap();
        assert!((l - 1.5512).abs() < 1e-4, "{l}");

        let two = DecomposedPrediction::from_heads(1.0, &[(0.5, 0.0), (0.5, 0.0)]).unwrap();
        let l = dlen_loss(&[two.clone()], &[vec![1, 0]], None).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            dlen_loss(&[two], &[vec![1]], None),
            Err(BayesError::MissingLabel(_))
        ));
    }

    #[test]
    fn loss_matches_per_sample_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let heads: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..0.05)))
                .collect();
            preds.push(DecomposedPrediction::from_heads(rng.random_range(0.0..1.0), &heads).unwrap());
            labels.push((0..3).map(|_| rng.random_bool(0.2) as u8).collect::<Vec<u8>>());
        }
        let mut oracle = 0.0;
        for (p, y) in preds.iter().zip(&labels) {
            for (t, task) in p.tasks.iter().enumerate() {
                let c = task.composed.clamp(1e-7, 1.0 - 1e-7);
                let yt = f64::from(y[t]);
                oracle += -(yt * c.ln() + (1.0 - yt) * (1.0 - c).ln()) / 200.0;
            }
        }
        let got = dlen_loss(&preds, &labels, None).unwrap();
        assert!((got - oracle).abs() < 1e-6);
    }

    #[test]
    fn game_examples() {
        let pred = DecomposedPrediction::from_heads(0.4, &[(0.5, 0.02)]).unwrap();
        let pos = game_gradient_diagnostic(&pred, &[1]).unwrap();
        assert_eq!(pos.total_push, Push::Increase);
        let neg = game_gradient_diagnostic(&pred, &[0]).unwrap();
        assert_eq!(neg.total_push, Push::Decrease);

        // Task A positive, task B negative with identical heads: the closed
        // forms are -gap/c and +gap/(1-c); c = 0.212 < 0.5 so the positive wins.
        let both = DecomposedPrediction::from_heads(0.4, &[(0.5, 0.02), (0.5, 0.02)]).unwrap();
        let r = game_gradient_diagnostic(&both, &[1, 0]).unwrap();
        let expected = -0.48 / 0.212 + 0.48 / (1.0 - 0.212);
        assert!((r.total - expected).abs() < 1e-12);
        assert_eq!(r.total_push, Push::of(expected));
        assert_eq!(r.total_push, Push::Increase);
    }

    #[test]
    fn graph_composition_matches_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.input(1, 1, vec![0.5]).unwrap();
        let u = g.input(1, 1, vec![0.4]).unwrap();
        let b = g.input(1, 1, vec![0.02]).unwrap();
        let c = compose_graph(&mut g, a, u, b).unwrap();
        assert!((g.scalar(c) - 0.212).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn completeness(p1 in 0.0f64..=1.0, u in 0.0f64..=1.0, p0 in 0.0f64..=1.0) {
            let c = compose_task_probability(p1, u, p0).unwrap();
            let negative = (1.0 - p1) * u + (1.0 - p0) * (1.0 - u);
            prop_assert!((c + negative - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_each_argument(
            p0 in 0.0f64..0.5, gap in 0.0f64..0.5, u in 0.0f64..=1.0, d in 0.0f64..0.2,
        ) {
            let p1 = p0 + gap;
            let base = compose_task_probability(p1, u, p0).unwrap();
            prop_assert!(compose_task_probability((p1 + d).min(1.0), u, p0).unwrap() >= base);
            prop_assert!(compose_task_probability(p1, (u + d).min(1.0), p0).unwrap() >= base - 1e-15);
            prop_assert!(compose_task_probability(p1, u, (p0 + d).min(p1)).unwrap() >= base - 1e-15);
        }

        #[test]
        fn bound_propagation(p1 in 0.0f64..=1.0, u in 0.0f64..=1.0, frac in 0.0f64..=1.0, alpha in 0.001f64..0.5) {
            let p0 = frac * alpha;
            let c = compose_task_probability(p1, u, p0).unwrap();
            prop_assert!(c <= u + alpha * (1.0 - u) + 1e-15);
            prop_assert!(joint_prefer_score(p1, u) <= c + 1e-15);
        }
    }
}
