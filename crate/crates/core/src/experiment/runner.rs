use crate::bayes::{AlphaPolicy, DecomposedPrediction};
use crate::data::{infer_schema, shuffled_batches, split_indices, Dataset};
use crate::metrics::{auc, latent_auc, AucReport};
use crate::model::{FeatureSchema, MtlModel, ModelConfig, ModelError};
use crate::nn::param::name_seed;
use crate::nn::Optimizer;
use crate::synth::{self, read_sidecar, SidecarRow, SyntheticWorld};

use super::{DataConfig, EvaluationConfig, ExperimentConfig, ExperimentError, TrainingConfig};

const PREDICT_CHUNK: usize = 4096;

/// Independent random streams derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl StreamSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            data: name_seed(seed, "data"),
            init: name_seed(seed, "init"),
            shuffle: name_seed(seed, "shuffle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub sidecar: Option<Vec<SidecarRow>>,
    /// Generating world, when the data came from (or matches) the configured
    /// generator and seed.
    pub world: Option<SyntheticWorld>,
    pub split: Split,
}

impl PreparedData {
    /// Sidecar rows of the given sample indices.
    pub fn truth(&self, indices: &[usize]) -> Option<Vec<SidecarRow>> {
        self.sidecar
            .as_ref()
            .map(|s| indices.iter().map(|&i| s[i]).collect())
    }
}

/// Loads the configured dataset, or generates it from the data stream.
pub fn prepare_data(
    data: &DataConfig,
    evaluation: &EvaluationConfig,
    seeds: StreamSeeds,
) -> Result<PreparedData, ExperimentError> {
    let (dataset, sidecar, world) = match &data.dataset {
        Some(path) => {
            let schema = match (&data.schema, &data.generator) {
                (Some(s), _) => s.clone(),
                (None, Some(g)) => g.schema(),
                (None, None) => infer_schema(path)?,
            };
            let dataset = Dataset::load_tsv(path, &schema)?;
            let sidecar = match &data.sidecar {
                Some(p) => {
                    let rows = read_sidecar(p)?;
                    if rows.len() != dataset.len() || rows.iter().enumerate().any(|(i, r)| r.sample_index != i) {
                        return Err(ExperimentError::Config(format!(
                            "data.sidecar: {} rows do not index the {} dataset rows",
                            rows.len(),
                            dataset.len()
                        )));
                    }
                    Some(rows)
                }
                None => None,
            };
            let world = match &data.generator {
                Some(g) => Some(synth::generate_world(g, seeds.data)?),
                None => None,
            };
            (dataset, sidecar, world)
        }
        None => {
            let generator = data
                .generator
                .as_ref()
                .ok_or_else(|| ExperimentError::Config("data: needs either dataset or generator".into()))?;
            let (world, generated) = synth::generate(generator, seeds.data)?;
            (generated.dataset, Some(generated.sidecar), Some(world))
        }
    };
    if dataset.is_empty() {
        return Err(crate::data::DataError::Empty.into());
    }
    let (train, eval) = split_indices(dataset.len(), evaluation.split_salt);
    if train.is_empty() || eval.is_empty() {
        return Err(ExperimentError::Config(format!(
            "{} rows are too few for a train/eval split",
            dataset.len()
        )));
    }
    Ok(PreparedData {
        dataset,
        sidecar,
        world,
        split: Split { train, eval },
    })
}

pub fn feature_schema(data: &DataConfig, dataset: &Dataset) -> FeatureSchema {
    dataset
        .schema()
        .feature_schema_with(|name| data.embedding_dims.get(name).copied().unwrap_or(data.embedding_dim))
}

/// Builds the model, filling rate-scaled alpha caps from the training split.
pub fn build_model(
    model: &ModelConfig,
    data: &DataConfig,
    prepared: &PreparedData,
    init_seed: u64,
) -> Result<MtlModel, ExperimentError> {
    let mut config = model.clone();
    if let Some(policy @ AlphaPolicy::RateScaled { task_base_rates, .. }) = &config.alpha {
        if task_base_rates.is_empty() {
            let rates = prepared.dataset.base_rates_of(&prepared.split.train);
            config.alpha = Some(policy.with_base_rates(&rates));
        }
    }
    let schema = feature_schema(data, &prepared.dataset);
    Ok(MtlModel::new(config, schema, init_seed)?)
}

/// Model predictions on the given rows, in order.
pub fn predict_all(model: &MtlModel, dataset: &Dataset, indices: &[usize]) -> Result<Vec<DecomposedPrediction>, ModelError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(PREDICT_CHUNK) {
        out.extend(model.predict(&dataset.batch(chunk))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub report: AucReport,
    /// `p_up` against the any-interaction label.
    pub latent_auc: Option<f64>,
    /// `p_up` against the sidecar latent state.
    pub latent_recovery_auc: Option<f64>,
    /// True posterior against the sidecar latent state.
    pub bayes_latent_auc: Option<f64>,
}

/// AUCs of precomputed predictions on `indices`.
pub fn evaluate_predictions(
    tasks: &[String],
    preds: &[DecomposedPrediction],
    has_latent: bool,
    prepared: &PreparedData,
    indices: &[usize],
) -> Result<EvalResult, ExperimentError> {
    let n_tasks = tasks.len();
    let scores: Vec<Vec<f64>> = (0..n_tasks)
        .map(|t| preds.iter().map(|p| p.tasks[t].composed).collect())
        .collect();
    let labels: Vec<Vec<u8>> = (0..n_tasks)
        .map(|t| {
            let col = prepared.dataset.task_labels(t);
            indices.iter().map(|&i| col[i]).collect()
        })
        .collect();
    let label_refs: Vec<&[u8]> = labels.iter().map(Vec::as_slice).collect();
    let report = AucReport::compute(tasks, &scores, &label_refs)?;
    let p_up: Option<Vec<f64>> = has_latent.then(|| preds.iter().map(|p| p.p_up).collect());
    let latent = match &p_up {
        Some(p) => Some(latent_auc(Some(p), &label_refs)?),
        None => None,
    };
    let (mut recovery, mut bayes) = (None, None);
    if let Some(truth) = prepared.truth(indices) {
        let u: Vec<u8> = truth.iter().map(|r| r.latent_u).collect();
        let post: Vec<f64> = truth.iter().map(|r| r.true_posterior).collect();
        bayes = auc(&post, &u).ok();
        if let Some(p) = &p_up {
            recovery = auc(p, &u).ok();
        }
    }
    Ok(EvalResult {
        report,
        latent_auc: latent,
        latent_recovery_auc: recovery,
        bayes_latent_auc: bayes,
    })
}

pub fn evaluate(model: &MtlModel, prepared: &PreparedData, indices: &[usize]) -> Result<EvalResult, ExperimentError> {
    let preds = predict_all(model, &prepared.dataset, indices)?;
    evaluate_predictions(&model.config().tasks, &preds, model.has_latent(), prepared, indices)
}

/// One `(epoch, task)` line of the training log. Epoch 0 is the model at
/// initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: String,
    pub train_loss: Option<f64>,
    pub eval_auc: Option<f64>,
    pub latent_auc: Option<f64>,
}

fn records(epoch: usize, tasks: &[String], losses: Option<&[f64]>, eval: &EvalResult) -> Vec<EpochRecord> {
    tasks
        .iter()
        .enumerate()
        .map(|(t, name)| EpochRecord {
            epoch,
            task: name.clone(),
            train_loss: losses.map(|l| l[t]),
            eval_auc: eval.report.tasks[t].auc,
            latent_auc: eval.latent_auc,
        })
        .collect()
}

/// Trains for the configured epochs on the training split, evaluating on the
/// held-out split at initialization and after every epoch. Batch order
/// depends only on `shuffle_seed`, so models trained with the same seed see
/// identical batches.
pub fn train(
    model: &mut MtlModel,
    prepared: &PreparedData,
    training: &TrainingConfig,
    shuffle_seed: u64,
    mut on_epoch: impl FnMut(usize, &EvalResult),
) -> Result<Vec<EpochRecord>, ExperimentError> {
    let tasks = model.config().tasks.clone();
    let mut optimizer = Optimizer::new(training.optimizer, training.learning_rate).map_err(ModelError::from)?;
    let eval = evaluate(model, prepared, &prepared.split.eval)?;
    on_epoch(0, &eval);
    let mut log = records(0, &tasks, None, &eval);
    for epoch in 1..=training.epochs {
        let batches = shuffled_batches(&prepared.split.train, training.batch_size, name_seed(shuffle_seed, &epoch.to_string()));
        let mut sums = vec![0.0f64; tasks.len()];
        let mut rows = 0usize;
        for (b, idx) in batches.iter().enumerate() {
            let batch = prepared.dataset.batch(idx);
            let losses = match model.train_step(&batch, &mut optimizer) {
                Ok(l) => l,
                Err(ModelError::NonFiniteLoss { value }) => {
                    return Err(ExperimentError::NonFiniteLoss { epoch, batch: b, value })
                }
                Err(e) => return Err(e.into()),
            };
            for (s, l) in sums.iter_mut().zip(&losses) {
                *s += l * idx.len() as f64;
            }
            rows += idx.len();
            if model.params().iter().any(|p| p.value.data().iter().any(|v| !v.is_finite())) {
                return Err(ExperimentError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: f64::NAN,
                });
            }
        }
        let mean: Vec<f64> = sums.iter().map(|s| s / rows as f64).collect();
        let eval = evaluate(model, prepared, &prepared.split.eval)?;
        on_epoch(epoch, &eval);
        log.extend(records(epoch, &tasks, Some(&mean), &eval));
    }
    Ok(log)
}

/// Prepares the data and trains the configured model end to end.
pub fn run_training(
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
) -> Result<(MtlModel, Vec<EpochRecord>), ExperimentError> {
    let seeds = StreamSeeds::new(cfg.seed);
    let mut model = build_model(&cfg.model, &cfg.data, prepared, seeds.init)?;
    let log = train(&mut model, prepared, &cfg.training, seeds.shuffle, |_, _| {})?;
    Ok((model, log))
}
