//! MMOE, single-level CGC and DLEN on a shared embedding front end.
//!
//! All three share the same building blocks: ReLU expert stacks, per-task
//! softmax gates over experts computed from the embedded input, and per-task
//! towers whose last hidden layer (the trunk) feeds the output head. DLEN
//! adds a second, alpha-capped head per tower and a hidden-state network
//! producing `P(UP)`, then composes each task through the latent state.
//!
//! Parameters are initialized from a seed derived from the model seed and the
//! parameter name, so the same seed gives identical shared experts, gates,
//! towers and main heads across the three architectures.

mod config;

pub use config::{
    Activation, CategoricalField, FeatureSchema, LatentInput, MlpSpec, ModelConfig, ModelKind,
};

use crate::bayes::{compose_graph, BayesError, DecomposedPrediction};
use crate::nn::param::{he_normal, name_seed, normal_tensor};
use crate::nn::{grad_check_with, GradCheckReport, Graph, NnError, Optimizer, ParamId, ParamStore, Real, Tensor, Var};

const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error("config: {0}")]
    Config(String),
    #[error("operation needs a {expected} model, this one is {found}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("field {field}: id {id} is outside vocabulary of size {vocab}")]
    OutOfVocabulary { field: String, id: usize, vocab: usize },
    #[error("batch: {0}")]
    Batch(String),
    #[error("non-finite loss {value}")]
    NonFiniteLoss { value: f64 },
}

/// One sample's raw features in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub categorical: Vec<usize>,
    pub numeric: Vec<f32>,
}

/// Column-major mini-batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub size: usize,
    /// Ids per categorical field, each of length `size`.
    pub categorical: Vec<Vec<usize>>,
    /// Row-major `size x n_numeric`.
    pub numeric: Vec<f32>,
    /// Labels per task, each of length `size`; empty for unlabeled batches.
    pub labels: Vec<Vec<f32>>,
}

impl Batch {
    pub fn from_samples(samples: &[SampleFeatures], labels: Option<&[Vec<u8>]>) -> Self {
        let n_cat = samples.first().map_or(0, |s| s.categorical.len());
        let mut b = Batch {
            size: samples.len(),
            categorical: vec![Vec::with_capacity(samples.len()); n_cat],
            numeric: Vec::new(),
            labels: Vec::new(),
        };
        for s in samples {
            for (f, &id) in s.categorical.iter().enumerate() {
                b.categorical[f].push(id);
            }
            b.numeric.extend_from_slice(&s.numeric);
        }
        if let Some(labels) = labels {
            let n_tasks = labels.first().map_or(0, Vec::len);
            b.labels = (0..n_tasks)
                .map(|t| labels.iter().map(|y| f32::from(y[t])).collect())
                .collect();
        }
        b
    }
}

#[derive(Debug, Clone)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

impl Layer {
    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        g.affine(x, w, b)
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore, mut x: Var) -> Result<Var, NnError> {
        for layer in &self.layers {
            let h = layer.apply(g, store, x)?;
            x = g.relu(h);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
struct LatentNet {
    gate: Option<Layer>,
    mlp: Mlp,
    out: Layer,
}

/// Recorded outputs of one task.
#[derive(Debug, Clone, Copy)]
pub struct TaskVars {
    /// Final task probability (composed for DLEN).
    pub output: Var,
    pub p_given_up: Option<Var>,
    pub p_given_not_up: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub tasks: Vec<TaskVars>,
    pub p_up: Option<Var>,
}

/// Per-task heads of a DLEN forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHeadOutput {
    pub task_name: String,
    pub p_given_up: Tensor,
    pub p_given_not_up: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlenOutput {
    pub p_up: Tensor,
    pub heads: Vec<TaskHeadOutput>,
    pub composed: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct MtlModel {
    config: ModelConfig,
    schema: FeatureSchema,
    store: ParamStore,
    alphas: Vec<f64>,
    embeddings: Vec<ParamId>,
    shared_experts: Vec<Mlp>,
    task_experts: Vec<Vec<Mlp>>,
    gates: Vec<Layer>,
    towers: Vec<Mlp>,
    heads: Vec<Layer>,
    not_up_heads: Vec<Layer>,
    latent: Option<LatentNet>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Builder<'_> {
    fn layer(&mut self, name: &str, fan_in: usize, fan_out: usize, head: bool) -> Result<Layer, NnError> {
        let wname = format!("{name}.weight");
        let w = if head {
            normal_tensor(&[fan_in, fan_out], HEAD_INIT_STD, name_seed(self.seed, &wname))
        } else {
            he_normal(fan_in, fan_out, name_seed(self.seed, &wname))
        };
        Ok(Layer {
            weight: self.store.add(wname, w)?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?,
        })
    }

    fn mlp(&mut self, prefix: &str, input: usize, spec: &MlpSpec) -> Result<Mlp, NnError> {
        let mut prev = input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, &w) in spec.layers.iter().enumerate() {
            layers.push(self.layer(&format!("{prefix}.layer{l}"), prev, w, false)?);
            prev = w;
        }
        Ok(Mlp { layers })
    }
}

impl MtlModel {
    /// Builds a model, resolving DLEN's alpha caps from the config policy.
    pub fn new(config: ModelConfig, schema: FeatureSchema, seed: u64) -> Result<Self, ModelError> {
        Self::build(config, schema, seed, None)
    }

    /// Builds a model with explicit alpha caps (DLEN), overriding the policy.
    /// Used when the caps will be restored from a checkpoint.
    pub fn build(
        config: ModelConfig,
        schema: FeatureSchema,
        seed: u64,
        alphas: Option<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        schema.validate()?;
        let n_tasks = config.n_tasks();
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            seed,
        };

        let mut embeddings = Vec::new();
        for c in &schema.categorical {
            let name = format!("embed.{}", c.name);
            let std = 1.0 / (c.embedding_dim as f64).sqrt();
            let table = normal_tensor(&[c.vocab_size, c.embedding_dim], std, name_seed(seed, &name));
            embeddings.push(b.store.add(name, table)?);
        }
        let input_dim = schema.input_dim();
        let expert_out = config.expert.output_width();

        let shared_experts = (0..config.n_shared_experts)
            .map(|e| b.mlp(&format!("expert.shared.{e}"), input_dim, &config.expert))
            .collect::<Result<Vec<_>, _>>()?;
        let task_experts = if config.kind == ModelKind::Cgc {
            config
                .tasks
                .iter()
                .map(|t| {
                    (0..config.n_task_experts)
                        .map(|k| b.mlp(&format!("expert.{t}.{k}"), input_dim, &config.expert))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };

        let per_gate = config.experts_per_gate();
        let mut gates = Vec::new();
        let mut towers = Vec::new();
        let mut heads = Vec::new();
        let mut not_up_heads = Vec::new();
        let trunk = config.tower.output_width();
        for t in &config.tasks {
            gates.push(b.layer(&format!("gate.{t}"), input_dim, per_gate, true)?);
            towers.push(b.mlp(&format!("tower.{t}"), expert_out, &config.tower)?);
            heads.push(b.layer(&format!("head.{t}"), trunk, 1, true)?);
            if config.kind == ModelKind::Dlen {
                not_up_heads.push(b.layer(&format!("head.{t}.not_up"), trunk, 1, true)?);
            }
        }

        let mut resolved = Vec::new();
        let latent = if config.kind == ModelKind::Dlen {
            let spec = config.hidden_state.as_ref().expect("validated");
            let (gate, width) = match config.hidden_state_input {
                LatentInput::ExpertGate => (
                    Some(b.layer("latent.gate", input_dim, config.n_shared_experts, true)?),
                    expert_out,
                ),
                LatentInput::Embedding => (None, input_dim),
            };
            let mlp = b.mlp("latent", width, spec)?;
            let out = b.layer("latent.out", spec.output_width(), 1, true)?;
            resolved = match alphas {
                Some(a) => a,
                None => config.alpha.as_ref().expect("validated").alphas(n_tasks)?,
            };
            if resolved.len() != n_tasks || resolved.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return Err(ModelError::Config(format!(
                    "alpha caps {resolved:?} must be one value in (0, 1) per task"
                )));
            }
            let alpha = Tensor::vector(resolved.iter().map(|&a| a as f32).collect())?;
            b.store.add_frozen("alpha", alpha)?;
            Some(LatentNet { gate, mlp, out })
        } else {
            None
        };

        Ok(Self {
            config,
            schema,
            store,
            alphas: resolved,
            embeddings,
            shared_experts,
            task_experts,
            gates,
            towers,
            heads,
            not_up_heads,
            latent,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Alpha caps as stored (`f32` precision), empty unless DLEN.
    pub fn alphas(&self) -> Vec<f64> {
        match self.store.value("alpha") {
            Some(t) => t.data().iter().map(|&a| f64::from(a)).collect(),
            None => Vec::new(),
        }
    }

    /// Alpha caps as resolved at construction.
    pub fn configured_alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn has_latent(&self) -> bool {
        self.latent.is_some()
    }

    /// Trainable parameter count predicted from the configuration alone.
    pub fn expected_param_count(config: &ModelConfig, schema: &FeatureSchema) -> usize {
        let d = schema.input_dim();
        let t = config.n_tasks();
        let e_out = config.expert.output_width();
        let expert = config.expert.param_count(d);
        let gate = (d + 1) * config.experts_per_gate();
        let tower = config.tower.param_count(e_out);
        let head = config.tower.output_width() + 1;
        let embed: usize = schema
            .categorical
            .iter()
            .map(|c| c.vocab_size * c.embedding_dim)
            .sum();
        let mut n = embed + config.n_shared_experts * expert + t * (gate + tower + head);
        match config.kind {
            ModelKind::Mmoe => {}
            ModelKind::Cgc => n += t * config.n_task_experts * expert,
            ModelKind::Dlen => {
                let hs = config.hidden_state.as_ref().expect("dlen has hidden state");
                let (gate, width) = match config.hidden_state_input {
                    LatentInput::ExpertGate => ((d + 1) * config.n_shared_experts, e_out),
                    LatentInput::Embedding => (0, d),
                };
                n += t * head + gate + hs.param_count(width) + hs.output_width() + 1;
            }
        }
        n
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        if batch.size == 0 {
            return Err(ModelError::Batch("empty batch".into()));
        }
        if batch.categorical.len() != self.schema.categorical.len()
            || batch.numeric.len() != batch.size * self.schema.numeric.len()
        {
            return Err(ModelError::Batch(format!(
                "expected {} categorical and {} numeric columns",
                self.schema.categorical.len(),
                self.schema.numeric.len()
            )));
        }
        for (field, ids) in self.schema.categorical.iter().zip(&batch.categorical) {
            if ids.len() != batch.size {
                return Err(ModelError::Batch(format!("field {} has {} ids", field.name, ids.len())));
            }
            if let Some(&id) = ids.iter().find(|&&id| id >= field.vocab_size) {
                return Err(ModelError::OutOfVocabulary {
                    field: field.name.clone(),
                    id,
                    vocab: field.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Records the embedded input `[batch, input_dim]`.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var, ModelError> {
        self.embed_in(g, &self.store, batch)
    }

    fn embed_in<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore, batch: &Batch) -> Result<Var, ModelError> {
        self.check_batch(batch)?;
        let mut parts = Vec::with_capacity(self.embeddings.len() + 1);
        for (&table, ids) in self.embeddings.iter().zip(&batch.categorical) {
            let t = g.param(store, table);
            parts.push(g.gather(t, ids.clone())?);
        }
        if !self.schema.numeric.is_empty() {
            let data = batch.numeric.iter().map(|&v| T::of_f32(v)).collect();
            parts.push(g.input(batch.size, self.schema.numeric.len(), data)?);
        }
        Ok(g.concat(&parts)?)
    }

    /// Records the network on an already embedded input.
    pub fn forward_input<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<ForwardVars, ModelError> {
        self.forward_input_in(g, &self.store, x)
    }

    fn forward_input_in<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore,
        x: Var,
    ) -> Result<ForwardVars, ModelError> {
        let shared = self
            .shared_experts
            .iter()
            .map(|e| e.forward(g, store, x))
            .collect::<Result<Vec<_>, _>>()?;

        let p_up = match &self.latent {
            Some(latent) => {
                let h_in = match &latent.gate {
                    Some(gate) => {
                        let logits = gate.apply(g, store, x)?;
                        let w = g.softmax(logits);
                        g.mixture(w, &shared)?
                    }
                    None => x,
                };
                let h = latent.mlp.forward(g, store, h_in)?;
                let z = latent.out.apply(g, store, h)?;
                Some(g.sigmoid(z))
            }
            None => None,
        };

        let alphas: Vec<f64> = store
            .value("alpha")
            .map(|t| t.data().iter().map(|&a| f64::from(a)).collect())
            .unwrap_or_default();
        let mut tasks = Vec::with_capacity(self.config.n_tasks());
        for t in 0..self.config.n_tasks() {
            let logits = self.gates[t].apply(g, store, x)?;
            let weights = g.softmax(logits);
            let mix = if self.task_experts.is_empty() || self.task_experts[t].is_empty() {
                g.mixture(weights, &shared)?
            } else {
                let mut experts = shared.clone();
                for e in &self.task_experts[t] {
                    experts.push(e.forward(g, store, x)?);
                }
                g.mixture(weights, &experts)?
            };
            let trunk = self.towers[t].forward(g, store, mix)?;
            let z = self.heads[t].apply(g, store, trunk)?;
            let p1 = g.sigmoid(z);
            match p_up {
                Some(u) => {
                    let z0 = self.not_up_heads[t].apply(g, store, trunk)?;
                    let s0 = g.sigmoid(z0);
                    let p0 = g.affine_scalar(s0, T::of_f64(alphas[t]), T::zero());
                    let composed = compose_graph(g, p1, u, p0)?;
                    tasks.push(TaskVars {
                        output: composed,
                        p_given_up: Some(p1),
                        p_given_not_up: Some(p0),
                    });
                }
                None => tasks.push(TaskVars {
                    output: p1,
                    p_given_up: None,
                    p_given_not_up: None,
                }),
            }
        }
        Ok(ForwardVars { tasks, p_up })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<ForwardVars, ModelError> {
        self.forward_in(g, &self.store, batch)
    }

    fn forward_in<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore, batch: &Batch) -> Result<ForwardVars, ModelError> {
        let x = self.embed_in(g, store, batch)?;
        self.forward_input_in(g, store, x)
    }

    /// Records the training loss: weighted sum over tasks of the mean
    /// cross-entropy of each task's final probability. Returns the total and
    /// the per-task terms.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<(Var, Vec<Var>), ModelError> {
        self.loss_in(g, &self.store, batch)
    }

    /// Same as [`MtlModel::loss`] but reading parameter values from `store`,
    /// which must have been built by this model.
    pub fn loss_in<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore,
        batch: &Batch,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        if batch.labels.len() != self.config.n_tasks() {
            return Err(ModelError::Batch(format!(
                "expected labels for {} tasks, got {}",
                self.config.n_tasks(),
                batch.labels.len()
            )));
        }
        let out = self.forward_in(g, store, batch)?;
        let mut terms = Vec::with_capacity(out.tasks.len());
        let mut per_task = Vec::with_capacity(out.tasks.len());
        for (t, task) in out.tasks.iter().enumerate() {
            let labels: Vec<T> = batch.labels[t].iter().map(|&y| T::of_f32(y)).collect();
            let l = g.bce(task.output, &labels)?;
            let w = self
                .config
                .task_loss_weights
                .as_ref()
                .map_or(1.0, |w| w[t]);
            terms.push((l, T::of_f64(w)));
            per_task.push(l);
        }
        Ok((g.weighted_sum(&terms)?, per_task))
    }

    /// One optimizer step on a labeled batch. Returns the per-task losses
    /// before the update.
    pub fn train_step(&mut self, batch: &Batch, optimizer: &mut Optimizer) -> Result<Vec<f64>, ModelError> {
        self.store.zero_grad();
        let mut g = Graph::<f32>::new();
        let (total, per_task) = self.loss(&mut g, batch)?;
        let value = f64::from(g.scalar(total));
        if !value.is_finite() {
            return Err(ModelError::NonFiniteLoss { value });
        }
        let losses = per_task.iter().map(|&v| f64::from(g.scalar(v))).collect();
        g.backward(total, &mut self.store)?;
        optimizer.step(&mut self.store)?;
        Ok(losses)
    }

    /// Finite-difference check of the full training loss on `batch`,
    /// recorded in precision `T`.
    pub fn grad_check<T: Real>(&mut self, batch: &Batch) -> Result<GradCheckReport, ModelError> {
        self.grad_check_with::<T, _>(batch, |_| {})
    }

    pub fn grad_check_with<T: Real, C: FnOnce(&mut ParamStore)>(
        &mut self,
        batch: &Batch,
        tamper: C,
    ) -> Result<GradCheckReport, ModelError> {
        let mut store = std::mem::take(&mut self.store);
        let report = grad_check_with::<T, _, ModelError, _>(
            &mut store,
            |g, s| Ok(self.loss_in(g, s, batch)?.0),
            tamper,
        );
        self.store = store;
        report
    }

    /// Inference in `f32`, one decomposition per sample.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<DecomposedPrediction>, ModelError> {
        let mut g = Graph::<f32>::new();
        let out = self.forward(&mut g, batch)?;
        let mut preds = Vec::with_capacity(batch.size);
        for i in 0..batch.size {
            let pred = match out.p_up {
                Some(u) => {
                    let heads: Vec<(f64, f64)> = out
                        .tasks
                        .iter()
                        .map(|t| {
                            (
                                f64::from(g.value(t.p_given_up.expect("dlen head"))[i]),
                                f64::from(g.value(t.p_given_not_up.expect("dlen head"))[i]),
                            )
                        })
                        .collect();
                    DecomposedPrediction::from_heads(f64::from(g.value(u)[i]), &heads)?
                }
                None => {
                    let composed: Vec<f64> = out
                        .tasks
                        .iter()
                        .map(|t| f64::from(g.value(t.output)[i]))
                        .collect();
                    DecomposedPrediction::from_composed(&composed)
                }
            };
            preds.push(pred);
        }
        Ok(preds)
    }

    fn dense_forward(&self, x: &Tensor) -> Result<(Graph<f32>, ForwardVars), ModelError> {
        if x.shape().len() != 2 || x.shape()[1] != self.schema.input_dim() {
            return Err(NnError::ShapeMismatch {
                op: "forward",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.schema.input_dim()],
            }
            .into());
        }
        let mut g = Graph::<f32>::new();
        let xv = g.input_tensor(x);
        let out = self.forward_input(&mut g, xv)?;
        Ok((g, out))
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.config.kind == kind {
            Ok(())
        } else {
            Err(ModelError::WrongKind {
                expected: kind,
                found: self.config.kind,
            })
        }
    }

    fn column(g: &Graph<f32>, v: Var) -> Result<Tensor, ModelError> {
        Ok(Tensor::vector(g.value(v).to_vec())?)
    }

    /// Per-task probabilities of an MMOE model on embedded input `[batch, input_dim]`.
    pub fn mmoe_forward(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.expect_kind(ModelKind::Mmoe)?;
        let (g, out) = self.dense_forward(x)?;
        out.tasks.iter().map(|t| Self::column(&g, t.output)).collect()
    }

    /// Per-task probabilities of a CGC model on embedded input.
    pub fn cgc_forward(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.expect_kind(ModelKind::Cgc)?;
        let (g, out) = self.dense_forward(x)?;
        out.tasks.iter().map(|t| Self::column(&g, t.output)).collect()
    }

    /// Latent state, both heads and composed probabilities of a DLEN model.
    pub fn dlen_forward(&self, x: &Tensor) -> Result<DlenOutput, ModelError> {
        self.expect_kind(ModelKind::Dlen)?;
        let (g, out) = self.dense_forward(x)?;
        let p_up = Self::column(&g, out.p_up.expect("dlen latent"))?;
        let mut heads = Vec::new();
        let mut composed = Vec::new();
        for (name, t) in self.config.tasks.iter().zip(&out.tasks) {
            heads.push(TaskHeadOutput {
                task_name: name.clone(),
                p_given_up: Self::column(&g, t.p_given_up.expect("dlen head"))?,
                p_given_not_up: Self::column(&g, t.p_given_not_up.expect("dlen head"))?,
            });
            composed.push(Self::column(&g, t.output)?);
        }
        Ok(DlenOutput {
            p_up,
            heads,
            composed,
        })
    }

    /// Embeds a batch without recording gradients.
    pub fn embed_batch(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let mut g = Graph::<f32>::new();
        let x = self.embed(&mut g, batch)?;
        Ok(g.to_tensor(x)?)
    }
}

/// Looks up one sample's embedding rows and appends its numeric values, in
/// schema declaration order. Tables are read from `store` as `embed.<field>`.
pub fn embed(features: &SampleFeatures, schema: &FeatureSchema, store: &ParamStore) -> Result<Tensor, ModelError> {
    if features.categorical.len() != schema.categorical.len() || features.numeric.len() != schema.numeric.len() {
        return Err(ModelError::Batch("features do not match schema".into()));
    }
    let mut out = Vec::with_capacity(schema.input_dim());
    for (field, &id) in schema.categorical.iter().zip(&features.categorical) {
        if id >= field.vocab_size {
            return Err(ModelError::OutOfVocabulary {
                field: field.name.clone(),
                id,
                vocab: field.vocab_size,
            });
        }
        let table = store
            .value(&format!("embed.{}", field.name))
            .ok_or_else(|| NnError::UnknownParameter(format!("embed.{}", field.name)))?;
        if table.shape() != [field.vocab_size, field.embedding_dim] {
            return Err(NnError::ShapeMismatch {
                op: "embed",
                left: table.shape().to_vec(),
                right: vec![field.vocab_size, field.embedding_dim],
            }
            .into());
        }
        out.extend_from_slice(table.row(id));
    }
    out.extend_from_slice(&features.numeric);
    Ok(Tensor::vector(out)?)
}
