//! Synthetic feed interactions with an explicit latent preference state.
//!
//! Each sample draws raw features, then `u ~ Bernoulli(p_u(x))` with `p_u`
//! logistic in per-id effects, numeric weights and one pairwise numeric
//! interaction. When `u = 1`, the user expresses preference only through a
//! sampled subset of behaviors (their habit) and each included task fires
//! with `q_up`; when `u = 0` every task fires with the small `q_not_up`.
//!
//! The hidden world (per-id effects and per-user habits) is drawn from its
//! own stream, so it does not depend on the number of samples. Samples are
//! generated in fixed-size chunks with per-chunk seeds and concatenated in
//! index order.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::DecomposedPrediction;
use crate::data::{CategoricalColumn, DataError, Dataset, DatasetSchema};
use crate::model::SampleFeatures;
use crate::nn::param::name_seed;

const CHUNK: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar line {line}: {reason}")]
    Sidecar { line: usize, reason: String },
    #[error("counts: {0}")]
    Counts(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCategorical {
    pub name: String,
    pub vocab_size: usize,
    /// Standard deviation of the per-id preference logit effects.
    pub effect_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthNumeric {
    pub name: String,
    /// Logit weight of this standard-normal feature.
    pub weight: f64,
}

/// `weight * x[left] * x[right]` over numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub left: String,
    pub right: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTask {
    pub name: String,
    /// `P(t | UP)` for a task the user's habit includes.
    pub q_up: f64,
    /// `P(t | not UP)`.
    pub q_not_up: f64,
}

/// Each user has one main behavior, drawn uniformly over tasks, that their
/// preference shows up in with probability `main_inclusion`; every other
/// task is included with `other_inclusion`. Inclusion is drawn per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitModel {
    pub user_field: String,
    pub main_inclusion: f64,
    pub other_inclusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub categorical: Vec<SynthCategorical>,
    #[serde(default)]
    pub numeric: Vec<SynthNumeric>,
    #[serde(default)]
    pub interaction: Option<Interaction>,
    /// Preference logit intercept.
    pub bias: f64,
    pub tasks: Vec<SynthTask>,
    /// No masking when absent.
    #[serde(default)]
    pub habit: Option<HabitModel>,
}

impl Default for GeneratorConfig {
    /// Desk-scale feed: 100k samples, three tasks with base rates near
    /// 0.10 / 0.04 / 0.02 and a preference rate near 0.3.
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            categorical: vec![
                SynthCategorical {
                    name: "user".into(),
                    vocab_size: 200,
                    effect_std: 0.8,
                },
                SynthCategorical {
                    name: "item".into(),
                    vocab_size: 300,
                    effect_std: 0.8,
                },
                SynthCategorical {
                    name: "category".into(),
                    vocab_size: 12,
                    effect_std: 0.5,
                },
            ],
            numeric: vec![
                SynthNumeric {
                    name: "freshness".into(),
                    weight: 0.6,
                },
                SynthNumeric {
                    name: "quality".into(),
                    weight: -0.4,
                },
            ],
            interaction: Some(Interaction {
                left: "freshness".into(),
                right: "quality".into(),
                weight: 0.8,
            }),
            bias: -1.25,
            tasks: vec![
                SynthTask {
                    name: "click".into(),
                    q_up: 0.47,
                    q_not_up: 0.015,
                },
                SynthTask {
                    name: "like".into(),
                    q_up: 0.19,
                    q_not_up: 0.006,
                },
                SynthTask {
                    name: "share".into(),
                    q_up: 0.094,
                    q_not_up: 0.003,
                },
            ],
            habit: Some(HabitModel {
                user_field: "user".into(),
                main_inclusion: 0.9,
                other_inclusion: 0.5,
            }),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} = {v} is not a probability")))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.tasks.is_empty() {
            return Err(SynthError::Config("at least one task".into()));
        }
        for t in &self.tasks {
            unit(&format!("{}.q_up", t.name), t.q_up)?;
            unit(&format!("{}.q_not_up", t.name), t.q_not_up)?;
            if t.q_not_up >= t.q_up {
                return Err(SynthError::Config(format!(
                    "{}: q_not_up {} must be below q_up {}",
                    t.name, t.q_not_up, t.q_up
                )));
            }
        }
        for c in &self.categorical {
            if c.vocab_size == 0 || !(c.effect_std >= 0.0 && c.effect_std.is_finite()) {
                return Err(SynthError::Config(format!("{}: bad vocab_size or effect_std", c.name)));
            }
        }
        if !self.bias.is_finite() || self.numeric.iter().any(|n| !n.weight.is_finite()) {
            return Err(SynthError::Config("non-finite preference weight".into()));
        }
        if let Some(i) = &self.interaction {
            self.numeric_index(&i.left)?;
            self.numeric_index(&i.right)?;
        }
        if let Some(h) = &self.habit {
            unit("habit.main_inclusion", h.main_inclusion)?;
            unit("habit.other_inclusion", h.other_inclusion)?;
            self.categorical
                .iter()
                .position(|c| c.name == h.user_field)
                .ok_or_else(|| SynthError::Config(format!("habit.user_field {} is not a field", h.user_field)))?;
        }
        self.schema().validate()?;
        Ok(())
    }

    fn numeric_index(&self, name: &str) -> Result<usize, SynthError> {
        self.numeric
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| SynthError::Config(format!("interaction refers to unknown numeric {name}")))
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            tasks: self.tasks.iter().map(|t| t.name.clone()).collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalColumn {
                    name: c.name.clone(),
                    vocab_size: c.vocab_size,
                })
                .collect(),
            numeric: self.numeric.iter().map(|n| n.name.clone()).collect(),
        }
    }

    /// Marginal positive rate per task for a given mean preference rate,
    /// averaging the habit inclusion over tasks.
    pub fn expected_base_rates(&self, preference_rate: f64) -> Vec<f64> {
        let n = self.tasks.len() as f64;
        let inclusion = self
            .habit
            .as_ref()
            .map_or(1.0, |h| (h.main_inclusion + (n - 1.0) * h.other_inclusion) / n);
        self.tasks
            .iter()
            .map(|t| preference_rate * inclusion * t.q_up + (1.0 - preference_rate) * t.q_not_up)
            .collect()
    }
}

/// Hidden parameters of one generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    config: GeneratorConfig,
    effects: Vec<Vec<f64>>,
    /// Main task of each user id, when habits are on.
    main_task: Vec<usize>,
    habit_field: Option<usize>,
    interaction: Option<(usize, usize, f64)>,
}

impl SyntheticWorld {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self, SynthError> {
        config.validate()?;
        let effects = config
            .categorical
            .iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("world.effect.{}", c.name)));
                (0..c.vocab_size)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c.effect_std * z
                    })
                    .collect()
            })
            .collect();
        let (habit_field, main_task) = match &config.habit {
            Some(h) => {
                let f = config
                    .categorical
                    .iter()
                    .position(|c| c.name == h.user_field)
                    .expect("validated");
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, "world.habit"));
                let n_tasks = config.tasks.len();
                let main = (0..config.categorical[f].vocab_size)
                    .map(|_| rng.random_range(0..n_tasks))
                    .collect();
                (Some(f), main)
            }
            None => (None, Vec::new()),
        };
        let interaction = match &config.interaction {
            Some(i) => Some((config.numeric_index(&i.left)?, config.numeric_index(&i.right)?, i.weight)),
            None => None,
        };
        Ok(Self {
            config,
            effects,
            main_task,
            habit_field,
            interaction,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn preference_logit(&self, x: &SampleFeatures) -> f64 {
        let mut z = self.config.bias;
        for (effects, &id) in self.effects.iter().zip(&x.categorical) {
            z += effects[id];
        }
        for (n, &v) in self.config.numeric.iter().zip(&x.numeric) {
            z += n.weight * f64::from(v);
        }
        if let Some((l, r, w)) = self.interaction {
            z += w * f64::from(x.numeric[l]) * f64::from(x.numeric[r]);
        }
        z
    }

    /// `P(UP | x)`.
    pub fn true_posterior(&self, x: &SampleFeatures) -> f64 {
        1.0 / (1.0 + (-self.preference_logit(x)).exp())
    }

    /// Probability that task `t` is in the expressed subset for this sample.
    pub fn inclusion(&self, x: &SampleFeatures, t: usize) -> f64 {
        match (&self.config.habit, self.habit_field) {
            (Some(h), Some(f)) => {
                if self.main_task[x.categorical[f]] == t {
                    h.main_inclusion
                } else {
                    h.other_inclusion
                }
            }
            _ => 1.0,
        }
    }

    /// The generating decomposition: `P(t | UP, x) = inclusion * q_up`,
    /// `P(t | not UP) = q_not_up`, `P(UP | x)` from the true posterior.
    pub fn oracle_prediction(&self, x: &SampleFeatures) -> DecomposedPrediction {
        let heads: Vec<(f64, f64)> = self
            .config
            .tasks
            .iter()
            .enumerate()
            .map(|(t, task)| (self.inclusion(x, t) * task.q_up, task.q_not_up))
            .collect();
        DecomposedPrediction::from_heads(self.true_posterior(x), &heads).expect("probabilities in range")
    }

    /// Expected number of tasks fired for `x` given its latent state.
    pub fn expected_interactions(&self, x: &SampleFeatures, latent_u: u8) -> f64 {
        self.config
            .tasks
            .iter()
            .enumerate()
            .map(|(t, task)| {
                if latent_u == 1 {
                    self.inclusion(x, t) * task.q_up
                } else {
                    task.q_not_up
                }
            })
            .sum()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (SampleFeatures, SidecarRow, Vec<u8>) {
        let features = SampleFeatures {
            categorical: self
                .config
                .categorical
                .iter()
                .map(|c| rng.random_range(0..c.vocab_size))
                .collect(),
            numeric: self
                .config
                .numeric
                .iter()
                .map(|_| StandardNormal.sample(rng))
                .collect(),
        };
        let posterior = self.true_posterior(&features);
        let u = rng.random::<f64>() < posterior;
        let labels = self
            .config
            .tasks
            .iter()
            .enumerate()
            .map(|(t, task)| {
                // Both draws happen on every branch so the stream position
                // does not depend on the latent state.
                let included = rng.random::<f64>() < self.inclusion(&features, t);
                let fire = rng.random::<f64>();
                let y = if u {
                    included && fire < task.q_up
                } else {
                    fire < task.q_not_up
                };
                u8::from(y)
            })
            .collect();
        let side = SidecarRow {
            sample_index: 0,
            latent_u: u8::from(u),
            true_posterior: posterior,
        };
        (features, side, labels)
    }

    /// Draws `config.n_samples` samples with the given sample seed.
    pub fn generate(&self, seed: u64) -> Result<SyntheticData, SynthError> {
        let n = self.config.n_samples;
        let n_chunks = n.div_ceil(CHUNK);
        let chunks: Vec<_> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("samples.{c}")));
                let len = CHUNK.min(n - c * CHUNK);
                (0..len).map(|_| self.draw(&mut rng)).collect::<Vec<_>>()
            })
            .collect();
        let mut dataset = Dataset::new(self.config.schema())?;
        let mut sidecar = Vec::with_capacity(n);
        for (i, (features, mut side, labels)) in chunks.into_iter().flatten().enumerate() {
            dataset.push(&features, &labels)?;
            side.sample_index = i;
            sidecar.push(side);
        }
        Ok(SyntheticData { dataset, sidecar })
    }
}

/// The hidden world [`generate`] uses for `seed`.
pub fn generate_world(config: &GeneratorConfig, seed: u64) -> Result<SyntheticWorld, SynthError> {
    SyntheticWorld::new(config.clone(), name_seed(seed, "world"))
}

/// Builds the world and draws the samples for one seed.
pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<(SyntheticWorld, SyntheticData), SynthError> {
    let world = generate_world(config, seed)?;
    let data = world.generate(name_seed(seed, "data"))?;
    Ok((world, data))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidecarRow {
    pub sample_index: usize,
    pub latent_u: u8,
    pub true_posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub sidecar: Vec<SidecarRow>,
}

impl SyntheticData {
    /// Writes the training file and the ground-truth sidecar.
    pub fn save(&self, dataset_path: &Path, sidecar_path: &Path) -> Result<(), SynthError> {
        self.dataset.save_tsv(dataset_path)?;
        write_sidecar(sidecar_path, &self.sidecar)
    }

    pub fn counts(&self) -> CountsTable {
        CountsTable::tally(&self.dataset, &self.sidecar)
    }
}

pub fn sidecar_tsv(rows: &[SidecarRow]) -> String {
    let mut s = String::from("sample_index\tlatent_u\ttrue_posterior\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.sample_index, r.latent_u, r.true_posterior);
    }
    s
}

pub fn write_sidecar(path: &Path, rows: &[SidecarRow]) -> Result<(), SynthError> {
    let io = |e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(sidecar_tsv(rows).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>, SynthError> {
    let io = |e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if i == 0 {
            if line != "sample_index\tlatent_u\ttrue_posterior" {
                return Err(SynthError::Sidecar {
                    line: 1,
                    reason: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        let bad = |reason: String| SynthError::Sidecar { line: i + 1, reason };
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", cells.len())));
        }
        let sample_index = cells[0].parse().map_err(|e| bad(format!("sample_index: {e}")))?;
        let latent_u = match cells[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("latent_u {other:?}"))),
        };
        let true_posterior: f64 = cells[2].parse().map_err(|e| bad(format!("true_posterior: {e}")))?;
        if !(0.0..=1.0).contains(&true_posterior) {
            return Err(bad(format!("true_posterior {true_posterior} outside [0, 1]")));
        }
        rows.push(SidecarRow {
            sample_index,
            latent_u,
            true_posterior,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub n_up: u64,
    pub n_not_up: u64,
    /// Positives among UP samples.
    pub n_task_up: u64,
    /// Positives among not-UP samples.
    pub n_task_not_up: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    pub tasks: Vec<String>,
    pub counts: Vec<TaskCounts>,
}

impl CountsTable {
    pub fn tally(dataset: &Dataset, sidecar: &[SidecarRow]) -> Self {
        let counts = (0..dataset.n_tasks())
            .map(|t| {
                let mut c = TaskCounts {
                    n_up: 0,
                    n_not_up: 0,
                    n_task_up: 0,
                    n_task_not_up: 0,
                };
                for (&y, side) in dataset.task_labels(t).iter().zip(sidecar) {
                    if side.latent_u == 1 {
                        c.n_up += 1;
                        c.n_task_up += u64::from(y);
                    } else {
                        c.n_not_up += 1;
                        c.n_task_not_up += u64::from(y);
                    }
                }
                c
            })
            .collect();
        Self {
            tasks: dataset.schema().tasks.clone(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediantCheck {
    pub holds: bool,
    /// `N_t_up / N_up`.
    pub up_rate: f64,
    /// Pooled rate over all samples.
    pub pooled_rate: f64,
    /// `N_t_not_up / N_not_up`.
    pub not_up_rate: f64,
}

/// Checks `up_rate > pooled_rate > not_up_rate` for one task.
pub fn verify_mediant(counts: &CountsTable, task: usize) -> Result<MediantCheck, SynthError> {
    let c = counts
        .counts
        .get(task)
        .ok_or_else(|| SynthError::Counts(format!("no task {task}")))?;
    if c.n_up == 0 || c.n_not_up == 0 {
        return Err(SynthError::Counts(format!(
            "task {task}: N_up = {} and N_not_up = {} must both be positive",
            c.n_up, c.n_not_up
        )));
    }
    if c.n_task_up > c.n_up || c.n_task_not_up > c.n_not_up {
        return Err(SynthError::Counts(format!("task {task}: more positives than samples")));
    }
    let up_rate = c.n_task_up as f64 / c.n_up as f64;
    let not_up_rate = c.n_task_not_up as f64 / c.n_not_up as f64;
    let pooled_rate = (c.n_task_up + c.n_task_not_up) as f64 / (c.n_up + c.n_not_up) as f64;
    Ok(MediantCheck {
        holds: up_rate > pooled_rate && pooled_rate > not_up_rate,
        up_rate,
        pooled_rate,
        not_up_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{any_interaction_labels, auc};

    fn single_task(q_up: f64, q_not_up: f64, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_samples: n,
            categorical: vec![SynthCategorical {
                name: "user".into(),
                vocab_size: 10,
                effect_std: 0.0,
            }],
            numeric: Vec::new(),
            interaction: None,
            bias: 0.0,
            tasks: vec![SynthTask {
                name: "t".into(),
                q_up,
                q_not_up,
            }],
            habit: None,
        }
    }

    fn table(up: (u64, u64), not_up: (u64, u64)) -> CountsTable {
        CountsTable {
            tasks: vec!["t".into()],
            counts: vec![TaskCounts {
                n_task_up: up.0,
                n_up: up.1,
                n_task_not_up: not_up.0,
                n_not_up: not_up.1,
            }],
        }
    }

    #[test]
    fn degenerate_generator_labels_equal_latent() {
        let (_, data) = generate(&single_task(1.0, 0.0, 2000), 1).unwrap();
        for (y, side) in data.dataset.task_labels(0).iter().zip(&data.sidecar) {
            assert_eq!(*y, side.latent_u);
        }
    }

    #[test]
    fn total_probability_rate() {
        // bias chosen so that p_u is exactly 0.3 for every sample
        let mut c = single_task(0.5, 0.01, 100_000);
        c.bias = (0.3f64 / 0.7).ln();
        let (world, data) = generate(&c, 2).unwrap();
        let x = data.dataset.sample(0);
        assert!((world.true_posterior(&x) - 0.3).abs() < 1e-12);
        let expected: f64 = 0.3 * 0.5 + 0.7 * 0.01;
        let rate = data.dataset.base_rates()[0];
        let sigma = (expected * (1.0 - expected) / 100_000.0).sqrt();
        assert!((rate - expected).abs() < 3.0 * sigma, "{rate} vs {expected}");
    }

    #[test]
    fn zero_features_zero_bias_is_half() {
        let mut c = single_task(0.5, 0.01, 1);
        c.numeric = vec![SynthNumeric {
            name: "x".into(),
            weight: 1.3,
        }];
        let world = SyntheticWorld::new(c, 0).unwrap();
        let x = SampleFeatures {
            categorical: vec![4],
            numeric: vec![0.0],
        };
        assert_eq!(world.true_posterior(&x), 0.5);
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let mut c = GeneratorConfig::default();
        c.n_samples = 5000;
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<_> = (0..2)
            .map(|k| {
                let (_, data) = generate(&c, 9).unwrap();
                let d = dir.path().join(format!("d{k}.tsv"));
                let s = dir.path().join(format!("s{k}.tsv"));
                data.save(&d, &s).unwrap();
                (d, s)
            })
            .collect();
        assert_eq!(fs::read(&paths[0].0).unwrap(), fs::read(&paths[1].0).unwrap());
        assert_eq!(fs::read(&paths[0].1).unwrap(), fs::read(&paths[1].1).unwrap());
        let back = read_sidecar(&paths[0].1).unwrap();
        assert_eq!(back, generate(&c, 9).unwrap().1.sidecar);
        let (_, other) = generate(&c, 10).unwrap();
        assert_ne!(other.sidecar, back);
    }

    #[test]
    fn world_does_not_depend_on_sample_count() {
        let mut small = GeneratorConfig::default();
        small.n_samples = 10;
        let (a, da) = generate(&small, 4).unwrap();
        let (b, db) = generate(&GeneratorConfig { n_samples: 20, ..small.clone() }, 4).unwrap();
        let x = da.dataset.sample(3);
        assert_eq!(a.true_posterior(&x), b.true_posterior(&x));
        assert_eq!(da.sidecar[..10], db.sidecar[..10]);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(GeneratorConfig::default().validate().is_ok());
        assert!(matches!(generate(&single_task(0.1, 0.2, 10), 0), Err(SynthError::Config(_))));
        assert!(matches!(generate(&single_task(1.2, 0.2, 10), 0), Err(SynthError::Config(_))));
        let mut c = GeneratorConfig::default();
        c.habit.as_mut().unwrap().user_field = "nope".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn mediant_examples() {
        let m = verify_mediant(&table((10, 20), (1, 80)), 0).unwrap();
        assert!(m.holds);
        assert_eq!((m.up_rate, m.pooled_rate, m.not_up_rate), (0.5, 0.11, 0.0125));
        assert!(!verify_mediant(&table((2, 20), (8, 80)), 0).unwrap().holds);
        assert!(verify_mediant(&table((0, 0), (1, 80)), 0).is_err());
    }

    #[test]
    fn mediant_on_generated_counts() {
        let mut c = single_task(0.5, 0.01, 100_000);
        c.categorical[0].effect_std = 1.0;
        let (_, data) = generate(&c, 5).unwrap();
        assert!(verify_mediant(&data.counts(), 0).unwrap().holds);
    }

    #[test]
    fn default_world_matches_its_description() {
        let (world, data) = generate(&GeneratorConfig::default(), 1).unwrap();
        let ds = &data.dataset;
        let pref = data.sidecar.iter().map(|s| f64::from(s.latent_u)).sum::<f64>() / ds.len() as f64;
        assert!((0.25..0.35).contains(&pref), "preference rate {pref}");
        let rates = ds.base_rates();
        for (r, target) in rates.iter().zip([0.10, 0.04, 0.02]) {
            assert!((r - target).abs() < 0.2 * target, "{rates:?}");
        }
        for (r, e) in rates.iter().zip(world.config().expected_base_rates(pref)) {
            assert!((r - e).abs() < 0.1 * e, "{r} vs {e}");
        }

        // all three kinds of negatives occur for every task
        for t in 0..ds.n_tasks() {
            let (mut other_positive, mut silent_up, mut not_up) = (0, 0, 0);
            for i in 0..ds.len() {
                let labels = ds.labels_of(i);
                if labels[t] == 1 {
                    continue;
                }
                if labels.contains(&1) {
                    other_positive += 1;
                } else if data.sidecar[i].latent_u == 1 {
                    silent_up += 1;
                } else {
                    not_up += 1;
                }
            }
            assert!(other_positive > 0 && silent_up > 0 && not_up > 0);
        }

        // posterior ranks the any-interaction label and the latent itself
        let cols: Vec<&[u8]> = (0..ds.n_tasks()).map(|t| ds.task_labels(t)).collect();
        let any = any_interaction_labels(&cols);
        let post: Vec<f64> = data.sidecar.iter().map(|s| s.true_posterior).collect();
        let latent: Vec<u8> = data.sidecar.iter().map(|s| s.latent_u).collect();
        let bayes = auc(&post, &latent).unwrap();
        let proxy = auc(&post, &any).unwrap();
        assert!(bayes > 0.75 && proxy > 0.6, "{bayes} {proxy}");

        // stochastic dominance of the posterior on positives
        let mut pos: Vec<f64> = post.iter().zip(&any).filter(|(_, &y)| y == 1).map(|(&p, _)| p).collect();
        let mut neg: Vec<f64> = post.iter().zip(&any).filter(|(_, &y)| y == 0).map(|(&p, _)| p).collect();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        for q in 1..20 {
            let at = |v: &[f64]| v[v.len() * q / 20];
            assert!(at(&pos) >= at(&neg), "quantile {q}");
        }

        for t in 0..ds.n_tasks() {
            assert!(verify_mediant(&data.counts(), t).unwrap().holds);
        }
    }

    #[test]
    fn oracle_prediction_composes() {
        let (world, data) = generate(&GeneratorConfig { n_samples: 50, ..Default::default() }, 3).unwrap();
        for i in 0..50 {
            let x = data.dataset.sample(i);
            let p = world.oracle_prediction(&x);
            assert_eq!(p.p_up, data.sidecar[i].true_posterior);
            for (t, task) in world.config().tasks.iter().enumerate() {
                assert_eq!(p.tasks[t].p_given_not_up, task.q_not_up);
                assert!(p.tasks[t].p_given_up <= task.q_up);
            }
        }
    }

    #[test]
    fn training_file_has_no_latent_column() {
        let c = GeneratorConfig { n_samples: 200, ..Default::default() };
        let (_, data) = generate(&c, 6).unwrap();
        let mut out = Vec::new();
        data.dataset.write_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
        assert_eq!(header, c.schema().header());
        assert!(text.lines().skip(1).all(|l| l.split('\t').count() == header.len()));
    }
}
