//! Multi-target score fusion with or without the latent state, top-k
//! ranking and an impression-set simulation on synthetic ground truth.
//!
//! Latent mode scores `p_up^gamma * sum_t w_t * p_given_up_t`; composed mode
//! scores `sum_t w_t * composed_t`. With one task and `gamma = 1` the latent
//! score is exactly the joint preference score.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::DecomposedPrediction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("fusion weights: {0}")]
    Weights(String),
    #[error("k = {k} exceeds {n} candidates")]
    KTooLarge { k: usize, n: usize },
    #[error("prediction has {found} tasks, weights have {expected}")]
    TaskCount { expected: usize, found: usize },
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("latent mode needs a model with a latent head")]
    NoLatent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Weighted sum of `p_given_up` scaled by `p_up^gamma`.
    #[default]
    LatentJoint,
    /// Weighted sum of composed task probabilities.
    Composed,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::LatentJoint => "latent",
            FusionMode::Composed => "no_latent",
        })
    }
}

fn default_gamma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub task_weights: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub mode: FusionMode,
}

impl FusionWeights {
    pub fn new(task_weights: Vec<f64>, gamma: f64, mode: FusionMode) -> Result<Self, FusionError> {
        let w = Self {
            task_weights,
            gamma,
            mode,
        };
        w.validate()?;
        Ok(w)
    }

    /// Unit weights on `n_tasks` tasks, `gamma = 1`.
    pub fn uniform(n_tasks: usize, mode: FusionMode) -> Self {
        Self {
            task_weights: vec![1.0; n_tasks],
            gamma: 1.0,
            mode,
        }
    }

    pub fn with_mode(&self, mode: FusionMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.task_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(FusionError::Weights("task weights must be finite and non-negative".into()));
        }
        if !self.task_weights.iter().any(|&w| w > 0.0) {
            return Err(FusionError::Weights("at least one task weight must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(FusionError::Weights(format!("gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

/// Fused score of one candidate. Weights are assumed valid.
pub fn fuse(pred: &DecomposedPrediction, weights: &FusionWeights) -> f64 {
    let terms = pred.tasks.iter().zip(&weights.task_weights);
    match weights.mode {
        FusionMode::LatentJoint => {
            let sum: f64 = terms.map(|(t, &w)| w * t.p_given_up).sum();
            if weights.gamma == 0.0 {
                sum
            } else {
                pred.p_up.powf(weights.gamma) * sum
            }
        }
        FusionMode::Composed => terms.map(|(t, &w)| w * t.composed).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    /// Candidate indices, best first.
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
}

/// Top `k` candidates by fused score; ties go to the lower index.
pub fn rank_topk(
    candidates: &[DecomposedPrediction],
    weights: &FusionWeights,
    k: usize,
) -> Result<RankedList, FusionError> {
    weights.validate()?;
    if k > candidates.len() {
        return Err(FusionError::KTooLarge { k, n: candidates.len() });
    }
    for c in candidates {
        if c.tasks.len() != weights.task_weights.len() {
            return Err(FusionError::TaskCount {
                expected: weights.task_weights.len(),
                found: c.tasks.len(),
            });
        }
    }
    let scores: Vec<f64> = candidates.iter().map(|c| fuse(c, weights)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(RankedList {
        scores: order.iter().map(|&i| scores[i]).collect(),
        items: order,
        k,
    })
}

/// Ground truth for the simulation, one entry per candidate.
#[derive(Debug, Clone, Copy)]
pub struct SimTruth<'a> {
    pub latent_u: &'a [u8],
    pub true_posterior: &'a [f64],
    /// True expected number of interactions with each candidate.
    pub expected_interactions: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Candidates per impression set.
    pub set_size: usize,
    pub k: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { set_size: 50, k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: FusionMode,
    pub gamma: f64,
    pub k: usize,
    pub n_sets: usize,
    /// Mean share of top-k items with `latent_u = 0`.
    pub detest_fraction: f64,
    /// Mean of `1 - true_posterior` over the top-k.
    pub expected_detest: f64,
    /// Mean over sets of the summed expected interactions in the top-k.
    pub expected_interactions: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetDetail {
    pub set: usize,
    pub items: Vec<usize>,
    pub detest: usize,
    pub expected_interactions: f64,
}

/// Cuts the candidates into consecutive impression sets (a trailing partial
/// set is dropped), ranks each and averages the top-k outcomes.
pub fn sim_eval(
    preds: &[DecomposedPrediction],
    truth: SimTruth<'_>,
    weights: &FusionWeights,
    sim: SimConfig,
) -> Result<(SimReport, Vec<SetDetail>), FusionError> {
    let n = preds.len();
    if truth.latent_u.len() != n || truth.true_posterior.len() != n || truth.expected_interactions.len() != n {
        return Err(FusionError::Simulation(format!(
            "{n} predictions but ground truth for {}",
            truth.latent_u.len()
        )));
    }
    if sim.set_size == 0 || sim.k == 0 || sim.k > sim.set_size {
        return Err(FusionError::Simulation(format!(
            "need 0 < k <= set size, got k = {} and set size {}",
            sim.k, sim.set_size
        )));
    }
    let n_sets = n / sim.set_size;
    if n_sets == 0 {
        return Err(FusionError::Simulation(format!(
            "{n} candidates do not fill one set of {}",
            sim.set_size
        )));
    }
    let details = (0..n_sets)
        .into_par_iter()
        .map(|s| {
            let base = s * sim.set_size;
            let ranked = rank_topk(&preds[base..base + sim.set_size], weights, sim.k)?;
            let items: Vec<usize> = ranked.items.iter().map(|&i| base + i).collect();
            Ok(SetDetail {
                set: s,
                detest: items.iter().filter(|&&i| truth.latent_u[i] == 0).count(),
                expected_interactions: items.iter().map(|&i| truth.expected_interactions[i]).sum(),
                items,
            })
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    let k = sim.k as f64;
    let sets = n_sets as f64;
    let report = SimReport {
        mode: weights.mode,
        gamma: weights.gamma,
        k: sim.k,
        n_sets,
        detest_fraction: details.iter().map(|d| d.detest as f64 / k).sum::<f64>() / sets,
        expected_detest: details
            .iter()
            .map(|d| d.items.iter().map(|&i| 1.0 - truth.true_posterior[i]).sum::<f64>() / k)
            .sum::<f64>()
            / sets,
        expected_interactions: details.iter().map(|d| d.expected_interactions).sum::<f64>() / sets,
    };
    Ok((report, details))
}

pub fn sim_report_tsv(reports: &[(String, SimReport)]) -> String {
    let mut s = String::from("scorer\tmode\tgamma\tk\tn_sets\tdetest_fraction\texpected_detest\texpected_interactions\n");
    for (scorer, r) in reports {
        let _ = writeln!(
            s,
            "{scorer}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.mode, r.gamma, r.k, r.n_sets, r.detest_fraction, r.expected_detest, r.expected_interactions
        );
    }
    s
}

pub fn set_details_tsv(details: &[SetDetail]) -> String {
    let mut s = String::from("set\tdetest\texpected_interactions\titems\n");
    for d in details {
        let items: Vec<String> = d.items.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{}\t{}\t{:.6}\t{}", d.set, d.detest, d.expected_interactions, items.join(","));
    }
    s
}
