use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::bayes::AlphaPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mmoe,
    Cgc,
    Dlen,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mmoe => "MMOE",
            ModelKind::Cgc => "CGC",
            ModelKind::Dlen => "DLEN",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Stack of fully connected layers; every listed layer is followed by the
/// activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>) -> Self {
        Self {
            layers,
            activation: Activation::Relu,
        }
    }

    /// Output width of the stack.
    pub fn output_width(&self) -> usize {
        *self.layers.last().expect("validated non-empty")
    }

    pub fn validate(&self, key: &str) -> Result<(), ModelError> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(ModelError::Config(format!(
                "{key}: needs at least one layer of positive width"
            )));
        }
        Ok(())
    }

    /// Trainable scalars of the stack on an input of width `input`.
    pub fn param_count(&self, input: usize) -> usize {
        let mut prev = input;
        let mut n = 0;
        for &w in &self.layers {
            n += (prev + 1) * w;
            prev = w;
        }
        n
    }
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self::new(vec![256, 128, 64])
    }
}

/// What the hidden-state network reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInput {
    /// Its own softmax gate over the shared experts.
    #[default]
    ExpertGate,
    /// The embedded input directly.
    Embedding,
}

fn default_shared() -> usize {
    5
}

fn default_task_experts() -> usize {
    2
}

fn default_tower() -> MlpSpec {
    MlpSpec::new(vec![64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub tasks: Vec<String>,
    #[serde(default = "default_shared")]
    pub n_shared_experts: usize,
    /// Task-specific experts per task (CGC only).
    #[serde(default = "default_task_experts")]
    pub n_task_experts: usize,
    #[serde(default)]
    pub expert: MlpSpec,
    #[serde(default = "default_tower")]
    pub tower: MlpSpec,
    /// Hidden-state network (DLEN only).
    #[serde(default)]
    pub hidden_state: Option<MlpSpec>,
    #[serde(default)]
    pub hidden_state_input: LatentInput,
    /// Cap policy for `P(t | not UP)` (DLEN only).
    #[serde(default)]
    pub alpha: Option<AlphaPolicy>,
    /// Per-task loss weights; equal weights when absent.
    #[serde(default)]
    pub task_loss_weights: Option<Vec<f64>>,
}

impl ModelConfig {
    /// Five shared experts of `[256, 128, 64]`, one `[64]` tower per task.
    /// `n_task_experts` is set to 2 but only read by CGC.
    pub fn mmoe(tasks: &[&str]) -> Self {
        Self {
            kind: ModelKind::Mmoe,
            tasks: tasks.iter().map(|s| s.to_string()).collect(),
            n_shared_experts: default_shared(),
            n_task_experts: default_task_experts(),
            expert: MlpSpec::default(),
            tower: default_tower(),
            hidden_state: None,
            hidden_state_input: LatentInput::ExpertGate,
            alpha: None,
            task_loss_weights: None,
        }
    }

    /// Five shared plus two task-specific experts per task.
    pub fn cgc(tasks: &[&str]) -> Self {
        Self {
            kind: ModelKind::Cgc,
            ..Self::mmoe(tasks)
        }
    }

    /// MMOE wiring plus a `[256, 128, 64]` hidden-state network and the
    /// default rate-scaled alpha policy.
    pub fn dlen(tasks: &[&str]) -> Self {
        Self {
            kind: ModelKind::Dlen,
            hidden_state: Some(MlpSpec::default()),
            alpha: Some(AlphaPolicy::default()),
            ..Self::mmoe(tasks)
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Same wiring under another architecture. A DLEN without a configured
    /// hidden-state network gets one shaped like the experts.
    pub fn with_kind(&self, kind: ModelKind) -> Self {
        let mut c = self.clone();
        c.kind = kind;
        if kind == ModelKind::Dlen {
            let expert = c.expert.clone();
            c.hidden_state.get_or_insert(expert);
            c.alpha.get_or_insert_with(AlphaPolicy::default);
        }
        c
    }

    /// Number of experts each task gate mixes.
    pub fn experts_per_gate(&self) -> usize {
        match self.kind {
            ModelKind::Cgc => self.n_shared_experts + self.n_task_experts,
            _ => self.n_shared_experts,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tasks.is_empty() {
            return Err(ModelError::Config("model.tasks: at least one task".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.tasks {
            if t.is_empty() || t.contains(['\t', '\n', ':']) || !seen.insert(t) {
                return Err(ModelError::Config(format!("model.tasks: invalid or duplicate task {t:?}")));
            }
        }
        if self.n_shared_experts == 0 {
            return Err(ModelError::Config("model.n_shared_experts: must be at least 1".into()));
        }
        self.expert.validate("model.expert")?;
        self.tower.validate("model.tower")?;
        if self.kind == ModelKind::Dlen {
            self.hidden_state
                .as_ref()
                .ok_or_else(|| ModelError::Config("model.hidden_state: required for dlen".into()))?
                .validate("model.hidden_state")?;
            self.alpha
                .as_ref()
                .ok_or_else(|| ModelError::Config("model.alpha: required for dlen".into()))?
                .validate_shape()?;
        }
        if let Some(w) = &self.task_loss_weights {
            if w.len() != self.tasks.len() || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(ModelError::Config(
                    "model.task_loss_weights: one non-negative weight per task".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalField {
    pub name: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
}

/// Input features: categorical fields looked up in embedding tables, then
/// raw numeric fields, concatenated in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalField>,
    #[serde(default)]
    pub numeric: Vec<String>,
}

impl FeatureSchema {
    pub fn input_dim(&self) -> usize {
        self.categorical.iter().map(|c| c.embedding_dim).sum::<usize>() + self.numeric.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = HashSet::new();
        for c in &self.categorical {
            if c.vocab_size == 0 || c.embedding_dim == 0 {
                return Err(ModelError::Config(format!(
                    "feature {}: vocab_size and embedding_dim must be at least 1",
                    c.name
                )));
            }
        }
        for name in self
            .categorical
            .iter()
            .map(|c| &c.name)
            .chain(self.numeric.iter())
        {
            if name.is_empty() || name.contains(['\t', '\n', ':']) || !seen.insert(name) {
                return Err(ModelError::Config(format!(
                    "feature names must be unique and plain, got {name:?}"
                )));
            }
        }
        if self.input_dim() == 0 {
            return Err(ModelError::Config("feature schema has no inputs".into()));
        }
        Ok(())
    }
}
