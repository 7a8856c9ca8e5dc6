//! Subcommands. Each writes its artifacts under the output directory
//! together with `manifest-{command}.json` (config hash, seed, artifact
//! checksums and the only timestamp of the run).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::runner::{evaluate_predictions, feature_schema, PreparedData};
use super::{
    build_model, evaluate, predict_all, prepare_data, train, EpochRecord, EvalResult, ExperimentConfig,
    ExperimentError, StreamSeeds,
};
use crate::bayes::{AlphaPolicy, DecomposedPrediction};
use crate::data::{Dataset, DatasetSchema};
use crate::fusion::{set_details_tsv, sim_eval, sim_report_tsv, FusionMode, SimConfig, SimReport, SimTruth};
use crate::metrics::{format_exact, format_value, mtl_gain, report_table, report_tsv, AucReport, MetricRow, TaskAuc};
use crate::model::{MlpSpec, ModelConfig, ModelKind, MtlModel};
use crate::nn::{checkpoint, GradCheckReport, NnError, GRAD_CHECK_TOLERANCE};
use crate::synth;

/// Global options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    /// Printed progress goes to stdout when set.
    pub verbose: bool,
}

impl Context {
    /// Loads the config file and applies a seed override.
    pub fn load(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<Self, ExperimentError> {
        let mut config = ExperimentConfig::load(config_path)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        Ok(Self {
            config,
            out: out.to_path_buf(),
            verbose: true,
        })
    }

    pub fn new(config: ExperimentConfig, out: &Path) -> Self {
        Self {
            config,
            out: out.to_path_buf(),
            verbose: false,
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        if self.verbose {
            println!("{}", msg.as_ref());
        }
    }

    fn seeds(&self) -> StreamSeeds {
        StreamSeeds::new(self.config.seed)
    }

    fn create_out(&self) -> Result<(), ExperimentError> {
        fs::create_dir_all(&self.out).map_err(|e| ExperimentError::io(&self.out, e))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, ExperimentError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| ExperimentError::io(&path, e))?;
        Ok(path)
    }

    fn manifest(&self, command: &str, artifacts: &[PathBuf]) -> Result<(), ExperimentError> {
        let mut entries = Vec::new();
        for path in artifacts {
            let bytes = fs::read(path).map_err(|e| ExperimentError::io(path, e))?;
            entries.push(ArtifactEntry {
                path: path
                    .file_name()
                    .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
                bytes: bytes.len(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: config_hash(&self.config),
            seed: self.config.seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            artifacts: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write(&format!("manifest-{command}.json"), format!("{text}\n").as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    created_unix: u64,
    artifacts: Vec<ArtifactEntry>,
}

/// SHA-256 of the effective configuration in canonical TOML form.
pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

/// Writes `dataset.tsv` and `sidecar.tsv` from the configured generator.
pub fn cmd_gen_data(ctx: &Context) -> Result<(), ExperimentError> {
    let generator = ctx
        .config
        .data
        .generator
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("data.generator: required by gen-data".into()))?;
    let (_, data) = synth::generate(generator, ctx.seeds().data)?;
    ctx.create_out()?;
    let dataset = ctx.out.join("dataset.tsv");
    let sidecar = ctx.out.join("sidecar.tsv");
    data.save(&dataset, &sidecar)?;
    let counts = data.counts();
    let mut summary = String::from("task\tbase_rate\tup_rate\tpooled_rate\tnot_up_rate\tmediant_holds\n");
    for (t, rate) in data.dataset.base_rates().iter().enumerate() {
        let m = synth::verify_mediant(&counts, t)?;
        let _ = writeln!(
            summary,
            "{}\t{rate:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            counts.tasks[t], m.up_rate, m.pooled_rate, m.not_up_rate, m.holds
        );
    }
    let summary_path = ctx.write("data_summary.tsv", summary.as_bytes())?;
    ctx.say(format!("wrote {} rows to {}", data.dataset.len(), dataset.display()));
    ctx.say(summary.trim_end());
    ctx.manifest("gen-data", &[dataset, sidecar, summary_path])
}

pub fn metrics_log_tsv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\ttask\ttrain_loss\teval_auc\tlatent_auc\n");
    for r in log {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch,
            r.task,
            format_exact(r.train_loss),
            format_exact(r.eval_auc),
            format_exact(r.latent_auc)
        );
    }
    s
}

/// Trains the configured model; writes `model.ckpt`, `metrics.tsv` and the
/// effective `config.toml`.
pub fn cmd_train(ctx: &Context) -> Result<MtlModel, ExperimentError> {
    let cfg = &ctx.config;
    let seeds = ctx.seeds();
    let prepared = prepare_data(&cfg.data, &cfg.evaluation, seeds)?;
    let mut model = build_model(&cfg.model, &cfg.data, &prepared, seeds.init)?;
    ctx.say(format!(
        "{} with {} parameters, {} train / {} eval rows",
        model.kind(),
        model.params().trainable_scalars(),
        prepared.split.train.len(),
        prepared.split.eval.len()
    ));
    let log = train(&mut model, &prepared, &cfg.training, seeds.shuffle, |epoch, r| {
        ctx.say(format!(
            "epoch {epoch}: auc {} latent {}",
            r.report
                .aucs()
                .iter()
                .map(|a| format_value(*a))
                .collect::<Vec<_>>()
                .join(" "),
            format_value(r.latent_auc)
        ));
    })?;
    ctx.create_out()?;
    let ckpt = ctx.out.join("model.ckpt");
    checkpoint::save(&ckpt, model.params()).map_err(|e| ExperimentError::io_nn(&ckpt, e))?;
    let metrics = ctx.write("metrics.tsv", metrics_log_tsv(&log).as_bytes())?;
    let config = ctx.write("config.toml", cfg.to_toml().as_bytes())?;
    ctx.manifest("train", &[ckpt, metrics, config])?;
    Ok(model)
}

impl ExperimentError {
    fn io_nn(path: &Path, e: NnError) -> Self {
        match e {
            NnError::Io(msg) => ExperimentError::io(path, std::io::Error::other(msg)),
            other => ExperimentError::Checkpoint(other.to_string()),
        }
    }
}

/// Rebuilds the configured model around a checkpoint. The alpha caps come
/// from the checkpoint; every name and shape must match.
pub fn load_checkpoint(
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
    path: &Path,
) -> Result<MtlModel, ExperimentError> {
    let entries = match checkpoint::load(path) {
        Ok(e) => e,
        Err(NnError::Io(msg)) => return Err(ExperimentError::io(path, std::io::Error::other(msg))),
        Err(e) => return Err(ExperimentError::Checkpoint(e.to_string())),
    };
    let alphas = entries
        .iter()
        .find(|e| e.name == "alpha")
        .map(|e| e.tensor.data().iter().map(|&a| f64::from(a)).collect::<Vec<_>>());
    if (cfg.model.kind == ModelKind::Dlen) != alphas.is_some() {
        return Err(ExperimentError::Checkpoint(format!(
            "checkpoint {} alpha caps but the config asks for {}",
            if alphas.is_some() { "has" } else { "lacks" },
            cfg.model.kind
        )));
    }
    let schema = feature_schema(&cfg.data, &prepared.dataset);
    let mut model = MtlModel::build(cfg.model.clone(), schema, 0, alphas)
        .map_err(|e| ExperimentError::Checkpoint(e.to_string()))?;
    checkpoint::restore(model.params_mut(), &entries).map_err(|e| ExperimentError::Checkpoint(e.to_string()))?;
    Ok(model)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    /// Score with the generating world instead of a checkpoint.
    pub oracle: bool,
    /// Evaluate every row instead of the held-out split.
    pub all_rows: bool,
}

/// Reads the `auc` rows of a metrics report written by `eval`.
pub fn read_auc_report(path: &Path) -> Result<AucReport, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(ExperimentError::Config(format!("{}:{}: expected 3 fields", path.display(), i + 1)));
        }
        if cells[1] == "auc" && cells[0] != "latent" {
            let auc = match cells[2] {
                "NA" => None,
                v => Some(v.parse::<f64>().map_err(|e| {
                    ExperimentError::Config(format!("{}:{}: {e}", path.display(), i + 1))
                })?),
            };
            tasks.push(TaskAuc {
                task: cells[0].to_string(),
                auc,
                positives: 0,
                negatives: 0,
            });
        }
    }
    Ok(AucReport { tasks })
}

pub fn eval_rows(cfg: &ExperimentConfig, eval: &EvalResult, baseline: Option<&AucReport>) -> Result<Vec<MetricRow>, ExperimentError> {
    let wanted = |t: &str| cfg.evaluation.tasks.as_ref().is_none_or(|ts| ts.iter().any(|x| x == t));
    let mut rows = Vec::new();
    for t in eval.report.tasks.iter().filter(|t| wanted(&t.task)) {
        rows.push(MetricRow::new(&t.task, "auc", t.auc));
        rows.push(MetricRow::new(&t.task, "positives", Some(t.positives as f64)));
        rows.push(MetricRow::new(&t.task, "negatives", Some(t.negatives as f64)));
    }
    if cfg.evaluation.latent_metrics {
        rows.push(MetricRow::new("latent", "auc_any_interaction", eval.latent_auc));
        rows.push(MetricRow::new("latent", "auc_true_latent", eval.latent_recovery_auc));
        rows.push(MetricRow::new("latent", "auc_bayes_optimal", eval.bayes_latent_auc));
    }
    if let Some(base) = baseline {
        let gains = mtl_gain(&eval.report, base)?;
        for g in gains.tasks.iter().filter(|g| wanted(&g.task)) {
            rows.push(MetricRow::new(&g.task, "mtl_gain", Some(g.gain)));
        }
    }
    Ok(rows)
}

/// Evaluates a checkpoint (or the oracle) and writes `eval_report.tsv`.
pub fn cmd_eval(ctx: &Context, opts: &EvalOptions) -> Result<EvalResult, ExperimentError> {
    let mut cfg = ctx.config.clone();
    if let Some(d) = &opts.dataset {
        cfg.data.dataset = Some(d.clone());
        cfg.data.sidecar = opts.sidecar.clone();
    }
    if let Some(b) = &opts.baseline {
        cfg.evaluation.baseline_report = Some(b.clone());
    }
    let prepared = prepare_data(&cfg.data, &cfg.evaluation, StreamSeeds::new(cfg.seed))?;
    let indices: Vec<usize> = if opts.all_rows {
        (0..prepared.dataset.len()).collect()
    } else {
        prepared.split.eval.clone()
    };
    let eval = if opts.oracle {
        let world = prepared
            .world
            .as_ref()
            .ok_or_else(|| ExperimentError::Mode("--oracle needs data.generator".into()))?;
        let preds: Vec<DecomposedPrediction> = indices
            .iter()
            .map(|&i| world.oracle_prediction(&prepared.dataset.sample(i)))
            .collect();
        evaluate_predictions(&prepared.dataset.schema().tasks, &preds, true, &prepared, &indices)?
    } else {
        let path = opts
            .checkpoint
            .as_ref()
            .ok_or_else(|| ExperimentError::Mode("eval needs --checkpoint or --oracle".into()))?;
        let model = load_checkpoint(&cfg, &prepared, path)?;
        evaluate(&model, &prepared, &indices)?
    };
    let baseline = match &cfg.evaluation.baseline_report {
        Some(p) => Some(read_auc_report(p)?),
        None => None,
    };
    let rows = eval_rows(&cfg, &eval, baseline.as_ref())?;
    ctx.say(report_table(&rows).trim_end());
    ctx.create_out()?;
    let report = ctx.write("eval_report.tsv", report_tsv(&rows).as_bytes())?;
    ctx.manifest("eval", &[report])?;
    Ok(eval)
}

fn capped(spec: &MlpSpec, width: usize) -> MlpSpec {
    MlpSpec::new(spec.layers.iter().map(|&w| w.min(width)).collect())
}

/// Shrinks a model config to the gradient-check profile.
pub fn tiny_model(cfg: &ExperimentConfig) -> ModelConfig {
    let g = &cfg.gradcheck;
    let mut m = cfg.model.clone();
    m.n_shared_experts = m.n_shared_experts.min(g.max_experts);
    m.n_task_experts = m.n_task_experts.min(g.max_experts);
    m.expert = capped(&m.expert, g.max_width);
    m.tower = capped(&m.tower, g.max_width);
    m.hidden_state = m.hidden_state.as_ref().map(|h| capped(h, g.max_width));
    m
}

/// Finite-difference check of the configured architecture in its tiny
/// profile, recorded in `f64`.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<GradCheckReport, ExperimentError> {
    let g = &cfg.gradcheck;
    let seeds = StreamSeeds::new(cfg.seed);
    // A small sample of the configured data with folded vocabularies.
    let source = match (&cfg.data.dataset, &cfg.data.generator) {
        (None, Some(gen)) => {
            let mut gen = gen.clone();
            gen.n_samples = g.batch_size;
            synth::generate(&gen, seeds.data)?.1.dataset
        }
        _ => prepare_data(&cfg.data, &cfg.evaluation, seeds)?.dataset,
    };
    let rows = g.batch_size.min(source.len());
    let mut schema: DatasetSchema = source.schema().clone();
    for c in &mut schema.categorical {
        c.vocab_size = c.vocab_size.min(g.max_vocab);
    }
    let mut tiny = Dataset::new(schema.clone())?;
    for i in 0..rows {
        let mut x = source.sample(i);
        for (id, c) in x.categorical.iter_mut().zip(&schema.categorical) {
            *id %= c.vocab_size;
        }
        tiny.push(&x, &source.labels_of(i))?;
    }
    let mut model_cfg = tiny_model(cfg);
    if model_cfg.kind == ModelKind::Dlen {
        // Caps from the sampled rates, kept away from 0 so tiny batches with
        // no positives still give a valid cap.
        let multiplier = match &model_cfg.alpha {
            Some(AlphaPolicy::RateScaled { multiplier, .. }) => Some(*multiplier),
            _ => None,
        };
        if let Some(m) = multiplier {
            let values = tiny.base_rates().iter().map(|r| m * r.clamp(0.05, 0.95)).collect();
            model_cfg.alpha = Some(AlphaPolicy::Fixed { values });
        }
    }
    let mut model = MtlModel::new(model_cfg, schema.feature_schema(g.embedding_dim), seeds.init)?;
    let all: Vec<usize> = (0..rows).collect();
    Ok(model.grad_check::<f64>(&tiny.batch(&all))?)
}

pub fn cmd_gradcheck(ctx: &Context) -> Result<GradCheckReport, ExperimentError> {
    let report = run_gradcheck(&ctx.config)?;
    let text = format!(
        "model\tmax_rel_error\tworst_param\tworst_index\tchecked\tskipped_kinks\tpassed\n{}\t{:e}\t{}\t{}\t{}\t{}\t{}\n",
        ctx.config.model.kind,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.checked,
        report.skipped_kinks,
        report.passed(GRAD_CHECK_TOLERANCE)
    );
    ctx.say(format!(
        "{}: max relative error {:.3e} (worst {}[{}]), {} entries checked, {} near a kink skipped",
        ctx.config.model.kind,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.checked,
        report.skipped_kinks
    ));
    ctx.create_out()?;
    let path = ctx.write("gradcheck.tsv", text.as_bytes())?;
    ctx.manifest("gradcheck", &[path])?;
    if report.passed(GRAD_CHECK_TOLERANCE) {
        Ok(report)
    } else {
        Err(ExperimentError::GradCheck(report))
    }
}

/// Configuration of one benchmarked architecture.
pub fn bench_model_config(cfg: &ExperimentConfig, kind: ModelKind) -> ModelConfig {
    cfg.model.with_kind(kind)
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub seed: u64,
    pub kind: ModelKind,
    pub eval: EvalResult,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub tasks: Vec<String>,
    pub runs: Vec<BenchRun>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl BenchResult {
    pub fn aucs(&self, kind: ModelKind, task: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| r.eval.report.tasks[task].auc)
            .collect()
    }

    pub fn mean_auc(&self, kind: ModelKind, task: usize) -> f64 {
        mean_std(&self.aucs(kind, task)).0
    }

    /// Mean over seeds of the per-seed AUC difference to MMOE.
    pub fn mean_gain(&self, kind: ModelKind, task: usize) -> Option<f64> {
        let base = self.aucs(ModelKind::Mmoe, task);
        let model = self.aucs(kind, task);
        (!base.is_empty() && base.len() == model.len())
            .then(|| model.iter().zip(&base).map(|(m, b)| m - b).sum::<f64>() / base.len() as f64)
    }

    pub fn kinds(&self) -> Vec<ModelKind> {
        let mut kinds: Vec<ModelKind> = Vec::new();
        for r in &self.runs {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        kinds
    }

    pub fn runs_tsv(&self) -> String {
        let mut s = String::from("seed\tmodel\ttask\tauc\tlatent_auc\tlatent_recovery_auc\tbayes_latent_auc\n");
        for r in &self.runs {
            for t in &r.eval.report.tasks {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.seed,
                    r.kind,
                    t.task,
                    format_value(t.auc),
                    format_value(r.eval.latent_auc),
                    format_value(r.eval.latent_recovery_auc),
                    format_value(r.eval.bayes_latent_auc)
                );
            }
        }
        s
    }

    /// One row per model: mean AUC, its standard deviation across seeds and
    /// the mean gain over MMOE for every task.
    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("model");
        for t in &self.tasks {
            let _ = write!(s, "\t{t}_auc_mean\t{t}_auc_std\t{t}_gain");
        }
        s.push('\n');
        for kind in self.kinds() {
            s.push_str(&kind.to_string());
            for t in 0..self.tasks.len() {
                let (m, sd) = mean_std(&self.aucs(kind, t));
                let _ = write!(s, "\t{m:.6}\t{sd:.6}\t{}", format_value(self.mean_gain(kind, t)));
            }
            s.push('\n');
        }
        s
    }

    /// Model by task table of mean AUC with the gain over MMOE in brackets.
    pub fn table(&self) -> String {
        let mut s = format!("{:<6}", "Model");
        for t in &self.tasks {
            let _ = write!(s, "  {t:<18}");
        }
        s.push('\n');
        for kind in self.kinds() {
            let _ = write!(s, "{:<6}", kind.to_string());
            for t in 0..self.tasks.len() {
                let m = self.mean_auc(kind, t);
                let cell = match (kind, self.mean_gain(kind, t)) {
                    (ModelKind::Mmoe, _) | (_, None) => format!("{m:.4}"),
                    (_, Some(g)) => format!("{m:.4}({g:+.4})"),
                };
                let _ = write!(s, "  {cell:<18}");
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every configured architecture on seeds `seed .. seed + n_seeds`.
/// Within a seed all models share the data, the split, the batch order and
/// the initial values of identically named parameters. `on_run` sees every
/// trained model.
pub fn run_bench(
    cfg: &ExperimentConfig,
    mut on_run: impl FnMut(u64, &MtlModel, &PreparedData, &EvalResult) -> Result<(), ExperimentError>,
    mut progress: impl FnMut(&str),
) -> Result<BenchResult, ExperimentError> {
    let mut runs = Vec::new();
    for s in 0..cfg.bench.n_seeds as u64 {
        let seed = cfg.seed.wrapping_add(s);
        let seeds = StreamSeeds::new(seed);
        let prepared = prepare_data(&cfg.data, &cfg.evaluation, seeds)?;
        for &kind in &cfg.bench.models {
            let model_cfg = bench_model_config(cfg, kind);
            let mut model = build_model(&model_cfg, &cfg.data, &prepared, seeds.init)?;
            let mut last = None;
            train(&mut model, &prepared, &cfg.training, seeds.shuffle, |_, r| last = Some(r.clone()))?;
            let eval = last.expect("at least the initial evaluation");
            progress(&format!(
                "seed {seed} {kind}: {}",
                eval.report
                    .aucs()
                    .iter()
                    .map(|a| format_value(*a))
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
            on_run(seed, &model, &prepared, &eval)?;
            runs.push(BenchRun { seed, kind, eval });
        }
    }
    Ok(BenchResult {
        tasks: cfg.model.tasks.clone(),
        runs,
    })
}

pub fn cmd_bench(ctx: &Context) -> Result<BenchResult, ExperimentError> {
    let result = run_bench(&ctx.config, |_, _, _, _| Ok(()), |msg| ctx.say(msg))?;
    ctx.say(result.table().trim_end());
    ctx.create_out()?;
    let runs = ctx.write("bench_runs.tsv", result.runs_tsv().as_bytes())?;
    let summary = ctx.write("bench_summary.tsv", result.summary_tsv().as_bytes())?;
    ctx.manifest("bench", &[runs, summary])?;
    Ok(result)
}

/// Ground truth of the held-out rows for the ranking simulation.
pub struct SimGround {
    pub latent_u: Vec<u8>,
    pub posterior: Vec<f64>,
    pub expected: Vec<f64>,
}

impl SimGround {
    pub fn new(prepared: &PreparedData, indices: &[usize]) -> Result<Self, ExperimentError> {
        let truth = prepared
            .truth(indices)
            .ok_or_else(|| ExperimentError::Config("rank-sim needs the sidecar ground truth".into()))?;
        let world = prepared.world.as_ref().ok_or_else(|| {
            ExperimentError::Config("rank-sim needs data.generator for expected interactions".into())
        })?;
        Ok(Self {
            latent_u: truth.iter().map(|r| r.latent_u).collect(),
            posterior: truth.iter().map(|r| r.true_posterior).collect(),
            expected: indices
                .iter()
                .zip(&truth)
                .map(|(&i, r)| world.expected_interactions(&prepared.dataset.sample(i), r.latent_u))
                .collect(),
        })
    }

    pub fn truth(&self) -> SimTruth<'_> {
        SimTruth {
            latent_u: &self.latent_u,
            true_posterior: &self.posterior,
            expected_interactions: &self.expected,
        }
    }
}

/// Oracle predictions of the generating world on `indices`.
pub fn oracle_predictions(prepared: &PreparedData, indices: &[usize]) -> Result<Vec<DecomposedPrediction>, ExperimentError> {
    let world = prepared
        .world
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("oracle scoring needs data.generator".into()))?;
    Ok(indices
        .iter()
        .map(|&i| world.oracle_prediction(&prepared.dataset.sample(i)))
        .collect())
}

/// Both fusion modes on the same impression sets.
pub fn compare_modes(
    cfg: &ExperimentConfig,
    preds: &[DecomposedPrediction],
    ground: &SimGround,
) -> Result<Vec<(SimReport, Vec<crate::fusion::SetDetail>)>, ExperimentError> {
    let weights = cfg.fusion_weights();
    let sim = SimConfig {
        set_size: cfg.fusion.set_size,
        k: cfg.fusion.k,
    };
    [FusionMode::LatentJoint, FusionMode::Composed]
        .into_iter()
        .map(|mode| Ok(sim_eval(preds, ground.truth(), &weights.with_mode(mode), sim)?))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RankSimOptions {
    pub checkpoint: Option<PathBuf>,
    pub details: bool,
}

/// Ranks the held-out rows in impression sets with a trained DLEN and with
/// the oracle, in both fusion modes; writes `rank_sim.tsv`.
pub fn cmd_rank_sim(ctx: &Context, opts: &RankSimOptions) -> Result<Vec<(String, SimReport)>, ExperimentError> {
    let cfg = &ctx.config;
    let prepared = prepare_data(&cfg.data, &cfg.evaluation, StreamSeeds::new(cfg.seed))?;
    let indices = prepared.split.eval.clone();
    let ground = SimGround::new(&prepared, &indices)?;
    let mut reports = Vec::new();
    let mut details = String::new();
    if let Some(path) = &opts.checkpoint {
        let model = load_checkpoint(cfg, &prepared, path)?;
        if !model.has_latent() {
            return Err(ExperimentError::Mode(format!(
                "latent fusion needs a DLEN checkpoint, {} has no latent head",
                model.kind()
            )));
        }
        let preds = predict_all(&model, &prepared.dataset, &indices)?;
        for (r, d) in compare_modes(cfg, &preds, &ground)? {
            let _ = write!(details, "# model {}\n{}", r.mode, set_details_tsv(&d));
            reports.push(("model".to_string(), r));
        }
    }
    for (r, d) in compare_modes(cfg, &oracle_predictions(&prepared, &indices)?, &ground)? {
        let _ = write!(details, "# oracle {}\n{}", r.mode, set_details_tsv(&d));
        reports.push(("oracle".to_string(), r));
    }
    let tsv = sim_report_tsv(&reports);
    ctx.say(tsv.trim_end());
    ctx.create_out()?;
    let mut artifacts = vec![ctx.write("rank_sim.tsv", tsv.as_bytes())?];
    if opts.details {
        artifacts.push(ctx.write("rank_sim_sets.tsv", details.as_bytes())?);
    }
    ctx.manifest("rank-sim", &artifacts)?;
    Ok(reports)
}
