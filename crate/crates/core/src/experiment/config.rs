//! TOML experiment files.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! kind = "dlen"
//! tasks = ["click", "like", "share"]
//! expert = { layers = [64, 32] }
//! tower = { layers = [32] }
//! hidden_state = { layers = [64, 32] }
//! alpha = { mode = "rate_scaled", multiplier = 0.5 }
//!
//! [data]
//! embedding_dim = 8
//! [data.generator]       # or dataset = "train.tsv" with [data.schema]
//! ...
//!
//! [training]
//! epochs = 4
//! batch_size = 512
//! optimizer = "adam"
//! learning_rate = 0.002
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::data::DatasetSchema;
use crate::fusion::FusionWeights;
use crate::model::{MlpSpec, ModelConfig, ModelKind};
use crate::nn::OptimizerKind;
use crate::synth::GeneratorConfig;

fn default_embedding_dim() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training file; generated in memory from `generator` when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Ground-truth sidecar of `dataset`.
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
    /// Column layout of `dataset`; taken from `generator` or inferred from
    /// the file when absent.
    #[serde(default)]
    pub schema: Option<DatasetSchema>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Per-field embedding widths overriding `embedding_dim`.
    #[serde(default)]
    pub embedding_dims: BTreeMap<String, usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            sidecar: None,
            schema: None,
            generator: Some(GeneratorConfig::default()),
            embedding_dim: default_embedding_dim(),
            embedding_dims: BTreeMap::new(),
        }
    }
}

fn default_epochs() -> usize {
    4
}
fn default_batch_size() -> usize {
    512
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_learning_rate() -> f64 {
    2e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
        }
    }
}

fn default_salt() -> u64 {
    0x5eed_5a17
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_salt")]
    pub split_salt: u64,
    /// Tasks to report; all model tasks when absent.
    #[serde(default)]
    pub tasks: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub latent_metrics: bool,
    /// Metrics TSV of a baseline model, for MTL gains.
    #[serde(default)]
    pub baseline_report: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            split_salt: default_salt(),
            tasks: None,
            latent_metrics: true,
            baseline_report: None,
        }
    }
}

fn default_set_size() -> usize {
    50
}
fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Unit weights on every task when absent.
    #[serde(default)]
    pub weights: Option<FusionWeights>,
    #[serde(default = "default_set_size")]
    pub set_size: usize,
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weights: None,
            set_size: default_set_size(),
            k: default_k(),
        }
    }
}

fn default_bench_seeds() -> usize {
    5
}
fn default_bench_models() -> Vec<ModelKind> {
    vec![ModelKind::Mmoe, ModelKind::Cgc, ModelKind::Dlen]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Seeds `seed, seed + 1, ...`.
    #[serde(default = "default_bench_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_bench_models")]
    pub models: Vec<ModelKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_seeds: default_bench_seeds(),
            models: default_bench_models(),
        }
    }
}

fn default_gc_batch() -> usize {
    16
}
fn default_gc_width() -> usize {
    8
}

/// Shrinks the configured model for finite-difference checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    #[serde(default = "default_gc_batch")]
    pub batch_size: usize,
    /// Every hidden layer is capped at this width.
    #[serde(default = "default_gc_width")]
    pub max_width: usize,
    #[serde(default = "default_gc_experts")]
    pub max_experts: usize,
    #[serde(default = "default_gc_embedding")]
    pub embedding_dim: usize,
    /// Vocabulary cap per categorical field (ids are folded into range).
    #[serde(default = "default_gc_vocab")]
    pub max_vocab: usize,
}

fn default_gc_experts() -> usize {
    2
}
fn default_gc_embedding() -> usize {
    3
}
fn default_gc_vocab() -> usize {
    8
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            batch_size: default_gc_batch(),
            max_width: default_gc_width(),
            max_experts: default_gc_experts(),
            embedding_dim: default_gc_embedding(),
            max_vocab: default_gc_vocab(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub gradcheck: GradCheckConfig,
}

impl ExperimentConfig {
    /// Desk-scale profile on the default generator: five shared `[64, 32]`
    /// experts, `[32]` towers, a `[64, 32]` hidden-state network and
    /// embeddings of width 8.
    pub fn desk(kind: ModelKind, seed: u64) -> Self {
        let generator = GeneratorConfig::default();
        let tasks: Vec<&str> = generator.tasks.iter().map(|t| t.name.as_str()).collect();
        let mut model = ModelConfig::mmoe(&tasks).with_kind(kind);
        model.expert = MlpSpec::new(vec![64, 32]);
        model.tower = MlpSpec::new(vec![32]);
        if kind == ModelKind::Dlen {
            model.hidden_state = Some(MlpSpec::new(vec![64, 32]));
        }
        Self {
            seed,
            model,
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            fusion: FusionConfig::default(),
            bench: BenchConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        // A DLEN section may leave out the hidden-state net and the caps.
        if cfg.model.kind == ModelKind::Dlen {
            cfg.model = cfg.model.with_kind(ModelKind::Dlen);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| match e {
                ExperimentError::Config(msg) => ExperimentError::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.data.dataset);
        resolve(&mut cfg.data.sidecar);
        resolve(&mut cfg.evaluation.baseline_report);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |msg: String| ExperimentError::Config(msg);
        let mut model = self.model.clone();
        if model.kind == ModelKind::Dlen {
            // Base rates are filled in from the training split later.
            if let Some(crate::bayes::AlphaPolicy::RateScaled { task_base_rates, .. }) = &mut model.alpha {
                if task_base_rates.is_empty() {
                    *task_base_rates = vec![0.5; model.tasks.len()];
                }
            }
        }
        model.validate().map_err(|e| cfg(e.to_string()))?;

        let d = &self.data;
        if d.dataset.is_none() && d.generator.is_none() {
            return Err(cfg("data: needs either dataset or generator".into()));
        }
        if d.sidecar.is_some() && d.dataset.is_none() {
            return Err(cfg("data.sidecar: only meaningful with data.dataset".into()));
        }
        if d.embedding_dim == 0 || d.embedding_dims.values().any(|&v| v == 0) {
            return Err(cfg("data.embedding_dim: must be positive".into()));
        }
        let data_tasks: Option<Vec<String>> = match (&d.schema, &d.generator) {
            (Some(s), _) => Some(s.tasks.clone()),
            (None, Some(g)) => {
                g.validate().map_err(|e| cfg(format!("data.generator: {e}")))?;
                Some(g.tasks.iter().map(|t| t.name.clone()).collect())
            }
            (None, None) => None,
        };
        if let Some(tasks) = data_tasks {
            if tasks != self.model.tasks {
                return Err(cfg(format!(
                    "model.tasks {:?} do not match data tasks {tasks:?}",
                    self.model.tasks
                )));
            }
        }
        if let Some(schema) = &d.schema {
            schema.validate().map_err(|e| cfg(format!("data.schema: {e}")))?;
        }
        let fields: HashSet<String> = match (&d.schema, &d.generator) {
            (Some(s), _) => s.categorical.iter().map(|c| c.name.clone()).collect(),
            (None, Some(g)) => g.categorical.iter().map(|c| c.name.clone()).collect(),
            _ => HashSet::new(),
        };
        if !fields.is_empty() {
            if let Some(k) = d.embedding_dims.keys().find(|k| !fields.contains(*k)) {
                return Err(cfg(format!("data.embedding_dims: unknown field {k}")));
            }
        }

        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(cfg("training: epochs and batch_size must be positive".into()));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(cfg("training.learning_rate: must be positive".into()));
        }
        if let Some(tasks) = &self.evaluation.tasks {
            if let Some(bad) = tasks.iter().find(|t| !self.model.tasks.contains(t)) {
                return Err(cfg(format!("evaluation.tasks: unknown task {bad}")));
            }
        }
        if let Some(w) = &self.fusion.weights {
            w.validate().map_err(|e| cfg(format!("fusion.weights: {e}")))?;
            if w.task_weights.len() != self.model.tasks.len() {
                return Err(cfg("fusion.weights.task_weights: one weight per task".into()));
            }
        }
        if self.fusion.k == 0 || self.fusion.k > self.fusion.set_size {
            return Err(cfg("fusion: need 0 < k <= set_size".into()));
        }
        if self.bench.n_seeds == 0 || self.bench.models.is_empty() {
            return Err(cfg("bench: needs at least one seed and one model".into()));
        }
        let g = &self.gradcheck;
        if g.batch_size == 0 || g.batch_size > 32 || g.max_width == 0 || g.max_width > 16 {
            return Err(cfg("gradcheck: batch_size must be in 1..=32 and max_width in 1..=16".into()));
        }
        if g.max_experts == 0 || g.embedding_dim == 0 || g.max_vocab == 0 {
            return Err(cfg("gradcheck: sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        self.fusion
            .weights
            .clone()
            .unwrap_or_else(|| FusionWeights::uniform(self.model.tasks.len(), Default::default()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[model]
kind = "mmoe"
tasks = ["click", "like", "share"]
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.training.batch_size, 512);
        assert_eq!(c.data.generator, Some(GeneratorConfig::default()));
        assert_eq!(c.fusion.set_size, 50);
        assert_eq!(c.model.n_shared_experts, 5);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 3", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_and_inconsistent_keys_are_named() {
        let err = ExperimentConfig::from_toml(&format!("{MINIMAL}\n[training]\nepoch = 3\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("epoch"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("\"share\"", "\"save\""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("model.tasks"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("mmoe", "dlen").replace(
            "tasks",
            "alpha = { mode = \"rate_scaled\", multiplier = 0.9 }\nhidden_state = { layers = [4] }\ntasks",
        ))
        .unwrap_err()
        .to_string();
        assert!(err.contains("multiplier"), "{err}");
    }

    #[test]
    fn desk_profile_round_trips_through_toml() {
        for kind in [ModelKind::Mmoe, ModelKind::Cgc, ModelKind::Dlen] {
            let c = ExperimentConfig::desk(kind, 11);
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
    }
}
