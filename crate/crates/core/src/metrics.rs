//! Exact ranking AUC, the any-interaction latent AUC and MTL gain reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("auc needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("non-finite score at {0}")]
    NonFiniteScore(usize),
    #[error("task sets differ: {model:?} vs {baseline:?}")]
    TaskMismatch { model: Vec<String>, baseline: Vec<String> },
    #[error("model has no latent head")]
    NoLatentHead,
}

/// Rank-statistic AUC with average ranks for ties:
/// `(sum of positive ranks - P(P+1)/2) / (P N)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(MetricsError::InvalidLabel(y));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are 1-based; doubled so that tied averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += avg2 * pos_in_group;
        i = j + 1;
    }
    let p = positives as u128;
    let numer2 = rank_sum2 - p * (p + 1);
    Ok(numer2 as f64 / (2 * positives * negatives) as f64)
}

/// OR of one sample's task labels.
pub fn any_interaction_label(labels: &[u8]) -> u8 {
    u8::from(labels.contains(&1))
}

/// Column of OR labels from per-task label columns.
pub fn any_interaction_labels(task_labels: &[&[u8]]) -> Vec<u8> {
    let n = task_labels.first().map_or(0, |c| c.len());
    (0..n)
        .map(|i| u8::from(task_labels.iter().any(|col| col[i] == 1)))
        .collect()
}

/// AUC of `p_up` against the any-interaction label. Interactions are a
/// subset of preference, so this only checks that the latent head moved in
/// the right direction; it does not measure recovery of the true latent.
pub fn latent_auc(p_up: Option<&[f64]>, task_labels: &[&[u8]]) -> Result<f64, MetricsError> {
    let p_up = p_up.ok_or(MetricsError::NoLatentHead)?;
    auc(p_up, &any_interaction_labels(task_labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAuc {
    pub task: String,
    /// Absent when the task has a single class on the evaluated rows.
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub tasks: Vec<TaskAuc>,
}

impl AucReport {
    pub fn compute(tasks: &[String], scores: &[Vec<f64>], labels: &[&[u8]]) -> Result<Self, MetricsError> {
        let tasks = tasks
            .iter()
            .zip(scores)
            .zip(labels)
            .map(|((name, s), &y)| {
                let positives = y.iter().filter(|&&v| v == 1).count();
                let negatives = y.len() - positives;
                let auc = match auc(s, y) {
                    Ok(v) => Some(v),
                    Err(MetricsError::SingleClass { .. }) => None,
                    Err(e) => return Err(e),
                };
                Ok(TaskAuc {
                    task: name.clone(),
                    auc,
                    positives,
                    negatives,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { tasks })
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task.clone()).collect()
    }

    pub fn aucs(&self) -> Vec<Option<f64>> {
        self.tasks.iter().map(|t| t.auc).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGain {
    pub task: String,
    pub model_auc: f64,
    pub baseline_auc: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlGainReport {
    pub tasks: Vec<TaskGain>,
}

/// Per-task AUC difference against a baseline. Tasks without an AUC on
/// either side are left out.
pub fn mtl_gain(model: &AucReport, baseline: &AucReport) -> Result<MtlGainReport, MetricsError> {
    if model.task_names() != baseline.task_names() {
        return Err(MetricsError::TaskMismatch {
            model: model.task_names(),
            baseline: baseline.task_names(),
        });
    }
    let tasks = model
        .tasks
        .iter()
        .zip(&baseline.tasks)
        .filter_map(|(m, b)| {
            Some(TaskGain {
                task: m.task.clone(),
                model_auc: m.auc?,
                baseline_auc: b.auc?,
                gain: m.auc? - b.auc?,
            })
        })
        .collect();
    Ok(MtlGainReport { tasks })
}

/// One `(task, metric, value)` row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub metric: String,
    pub value: Option<f64>,
}

impl MetricRow {
    pub fn new(task: impl Into<String>, metric: impl Into<String>, value: Option<f64>) -> Self {
        Self {
            task: task.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Six decimals for display; `NA` for a missing value.
pub fn format_value(v: Option<f64>) -> String {
    // Values that round to zero print without a sign.
    v.map_or_else(|| "NA".to_string(), |v| format!("{:.6}", if v.abs() < 5e-7 { 0.0 } else { v }))
}

/// Shortest text that parses back to the same value; `NA` when missing.
pub fn format_exact(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

pub fn report_tsv(rows: &[MetricRow]) -> String {
    let mut s = String::from("task\tmetric\tvalue\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.task, r.metric, format_exact(r.value));
    }
    s
}

/// Fixed-width table for terminals.
pub fn report_table(rows: &[MetricRow]) -> String {
    let tw = rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
    let mw = rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<tw$}  {:<mw$}  value\n", "task", "metric");
    for r in rows {
        let _ = writeln!(s, "{:<tw$}  {:<mw$}  {}", r.task, r.metric, format_value(r.value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(MetricsError::SingleClass { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn any_interaction_examples() {
        assert_eq!(any_interaction_label(&[0, 0, 0]), 0);
        assert_eq!(any_interaction_label(&[0, 1, 0]), 1);
        let a = [1u8, 0, 0, 1, 0];
        let b = [0u8, 0, 1, 1, 0];
        let or = any_interaction_labels(&[&a, &b]);
        assert_eq!(or, vec![1, 0, 1, 1, 0]);
        let rate = |v: &[u8]| v.iter().filter(|&&y| y == 1).count();
        assert!(rate(&or) >= rate(&a).max(rate(&b)));
    }

    #[test]
    fn latent_auc_needs_head_and_constant_is_half() {
        let y = [1u8, 0, 0, 1];
        assert_eq!(latent_auc(None, &[&y]), Err(MetricsError::NoLatentHead));
        assert_eq!(latent_auc(Some(&[0.4; 4]), &[&y]).unwrap(), 0.5);
    }

    #[test]
    fn gain_examples() {
        let report = |v: f64| AucReport {
            tasks: vec![TaskAuc {
                task: "click".into(),
                auc: Some(v),
                positives: 1,
                negatives: 1,
            }],
        };
        let g = mtl_gain(&report(0.7532), &report(0.7516)).unwrap();
        assert!((g.tasks[0].gain - 0.0016).abs() < 1e-12);
        let g = mtl_gain(&report(0.6245), &report(0.6231)).unwrap();
        assert!((g.tasks[0].gain - 0.0014).abs() < 1e-12);
        assert_eq!(mtl_gain(&report(0.7), &report(0.7)).unwrap().tasks[0].gain, 0.0);
        let mut other = report(0.7);
        other.tasks[0].task = "like".into();
        assert!(matches!(mtl_gain(&report(0.7), &other), Err(MetricsError::TaskMismatch { .. })));
    }

    #[test]
    fn report_formats() {
        let rows = vec![
            MetricRow::new("click", "auc", Some(0.75)),
            MetricRow::new("latent", "auc_any", None),
        ];
        assert_eq!(report_tsv(&rows), "task\tmetric\tvalue\nclick\tauc\t0.75\nlatent\tauc_any\tNA\n");
        assert!(report_table(&rows).contains("click   auc"));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_enumeration(
            data in prop::collection::vec((0u8..6, 0u8..2), 2..100)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, y)| y).collect();
            match auc(&scores, &labels) {
                Ok(v) => prop_assert_eq!(v, brute_force(&scores, &labels)),
                Err(MetricsError::SingleClass { .. }) => {
                    prop_assert!(labels.iter().all(|&y| y == labels[0]));
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn auc_invariant_to_increasing_transform(
            data in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let squashed: Vec<f64> = scores.iter().map(|s| 3.0 * s.exp() + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&squashed, &labels).unwrap());
        }
    }
}
