//! The `dlen` binary end to end on the smoke config: artifacts, reruns and
//! exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dlen::experiment::commands::read_auc_report;
use dlen::metrics::AucReport;

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_dlen"))
            .arg("--config")
            .arg(self.path("run.toml"))
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> Output {
        let o = self.run(out, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn rows(path: &Path) -> usize {
    String::from_utf8(read(path)).unwrap().lines().count() - 1
}

fn final_aucs(metrics: &Path, epoch: usize) -> Vec<f64> {
    String::from_utf8(read(metrics))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|c| c[0] == epoch.to_string())
        .map(|c| c[3].parse().unwrap())
        .collect()
}

#[test]
fn gen_data_writes_configured_rows_and_reruns_identically() {
    let w = Workdir::new(SMOKE);
    w.ok("a", &["gen-data"]);
    w.ok("b", &["gen-data"]);
    assert_eq!(rows(&w.path("a/dataset.tsv")), 1000);
    assert_eq!(rows(&w.path("a/sidecar.tsv")), 1000);
    for f in ["dataset.tsv", "sidecar.tsv", "data_summary.tsv"] {
        assert_eq!(read(&w.path(&format!("a/{f}"))), read(&w.path(&format!("b/{f}"))), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(&w.path("a/manifest-gen-data.json"))).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_config() {
    let w = Workdir::new(SMOKE);
    w.ok("a", &["gen-data"]);
    w.ok("b", &["--seed", "8", "gen-data"]);
    assert_ne!(read(&w.path("a/dataset.tsv")), read(&w.path("b/dataset.tsv")));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&w.path("b/manifest-gen-data.json"))).unwrap();
    assert_eq!(manifest["seed"], 8);
}

#[test]
fn train_eval_round_trip() {
    let w = Workdir::new(SMOKE);
    w.ok("a", &["train"]);
    w.ok("b", &["train"]);
    assert_eq!(read(&w.path("a/metrics.tsv")), read(&w.path("b/metrics.tsv")));
    assert_eq!(read(&w.path("a/model.ckpt")), read(&w.path("b/model.ckpt")));
    let header = String::from_utf8(read(&w.path("a/metrics.tsv"))).unwrap();
    assert!(header.starts_with("epoch\ttask\ttrain_loss\teval_auc\tlatent_auc\n"));
    assert_eq!(rows(&w.path("a/metrics.tsv")), 2 * 3);

    // Re-evaluating the checkpoint reproduces the logged final epoch.
    let ckpt = w.path("a/model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let out = w.ok("a", &["eval", "--checkpoint", ckpt]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("auc_true_latent"));
    let report = read_auc_report(&w.path("a/eval_report.tsv")).unwrap();
    for (logged, now) in final_aucs(&w.path("a/metrics.tsv"), 1).iter().zip(report.aucs()) {
        assert!((logged - now.unwrap()).abs() <= 1e-6);
    }

    // Against itself as baseline, every gain is zero.
    let base = w.path("a/eval_report.tsv");
    w.ok("c", &["eval", "--checkpoint", ckpt, "--baseline", base.to_str().unwrap()]);
    let text = String::from_utf8(read(&w.path("c/eval_report.tsv"))).unwrap();
    let gains: Vec<f64> = text
        .lines()
        .filter(|l| l.contains("\tmtl_gain\t"))
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(gains, vec![0.0; 3]);
}

#[test]
fn eval_reads_a_dataset_file() {
    let w = Workdir::new(SMOKE);
    w.ok("a", &["gen-data"]);
    w.ok("a", &["train"]);
    let (ds, sc) = (w.path("a/dataset.tsv"), w.path("a/sidecar.tsv"));
    let ckpt = w.path("a/model.ckpt");
    let args = ["eval", "--checkpoint", ckpt.to_str().unwrap()];
    w.ok("mem", &args);
    let mut with_file = args.to_vec();
    with_file.extend(["--dataset", ds.to_str().unwrap(), "--sidecar", sc.to_str().unwrap()]);
    w.ok("file", &with_file);
    // The file holds exactly the generated rows.
    assert_eq!(read(&w.path("mem/eval_report.tsv")), read(&w.path("file/eval_report.tsv")));
}

#[test]
fn oracle_reaches_bayes_latent_auc() {
    let w = Workdir::new(SMOKE);
    w.ok("o", &["eval", "--oracle", "--all-rows"]);
    let text = String::from_utf8(read(&w.path("o/eval_report.tsv"))).unwrap();
    let value = |metric: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("latent\t{metric}\t")))
            .unwrap()
            .rsplit('\t')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("auc_true_latent"), value("auc_bayes_optimal"));
}

#[test]
fn gradcheck_passes_for_every_architecture() {
    for kind in ["mmoe", "cgc", "dlen"] {
        let w = Workdir::new(&SMOKE.replace("kind = \"dlen\"", &format!("kind = \"{kind}\"")));
        let o = w.ok("g", &["gradcheck"]);
        assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
        assert!(String::from_utf8(read(&w.path("g/gradcheck.tsv"))).unwrap().ends_with("\ttrue\n"));
    }
}

#[test]
fn rank_sim_reports_both_modes_on_the_same_sets() {
    let w = Workdir::new(SMOKE);
    w.ok("a", &["train"]);
    w.ok("a", &["rank-sim", "--checkpoint", w.path("a/model.ckpt").to_str().unwrap(), "--details"]);
    let text = String::from_utf8(read(&w.path("a/rank_sim.tsv"))).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let got: Vec<(&str, &str)> = lines.iter().map(|c| (c[0], c[1])).collect();
    assert_eq!(
        got,
        [("model", "latent"), ("model", "no_latent"), ("oracle", "latent"), ("oracle", "no_latent")]
    );
    assert!(lines.iter().all(|c| c[4] == lines[0][4]));
    assert!(w.path("a/rank_sim_sets.tsv").exists());
}

#[test]
fn bench_emits_one_row_per_model() {
    let w = Workdir::new(SMOKE);
    let o = w.ok("b", &["bench"]);
    let summary = String::from_utf8(read(&w.path("b/bench_summary.tsv"))).unwrap();
    let models: Vec<&str> = summary.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(models, ["MMOE", "CGC", "DLEN"]);
    assert!(summary.starts_with("model\tclick_auc_mean\tclick_auc_std\tclick_gain\t"));
    // 2 seeds x 3 models x 3 tasks
    assert_eq!(rows(&w.path("b/bench_runs.tsv")), 18);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Model"));
}

fn exit_code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let w = Workdir::new(&SMOKE.replace("epochs = 1", "epoch = 1"));
    let o = w.run("x", &["gen-data"]);
    assert_eq!(exit_code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));

    let w = Workdir::new(&SMOKE.replace("seed = 7", ""));
    let o = w.run("x", &["train"]);
    assert_eq!(exit_code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn unreadable_input_exits_3() {
    let w = Workdir::new(SMOKE);
    let missing = w.path("nope.tsv");
    let o = w.run("x", &["eval", "--oracle", "--dataset", missing.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn diverging_training_exits_4_with_batch_index() {
    let w = Workdir::new(&SMOKE.replace("batch_size = 128", "batch_size = 128\nlearning_rate = 1e30"));
    let o = w.run("x", &["train"]);
    assert_eq!(exit_code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch"));
}

#[test]
fn checkpoint_mismatch_exits_5_and_non_latent_rank_sim_exits_7() {
    let dlen = Workdir::new(SMOKE);
    dlen.ok("a", &["train"]);
    let ckpt = dlen.path("a/model.ckpt");

    let mmoe = Workdir::new(&SMOKE.replace("kind = \"dlen\"", "kind = \"mmoe\""));
    let o = mmoe.run("x", &["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 5);

    let wider = Workdir::new(&SMOKE.replace("layers = [16]\n\n[model.tower]", "layers = [17]\n\n[model.tower]"));
    let o = wider.run("x", &["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));

    mmoe.ok("m", &["train"]);
    let o = mmoe.run("x", &["rank-sim", "--checkpoint", mmoe.path("m/model.ckpt").to_str().unwrap()]);
    assert_eq!(exit_code(&o), 7);
}

#[test]
fn eval_without_a_scorer_is_mode_misuse() {
    let w = Workdir::new(SMOKE);
    assert_eq!(exit_code(&w.run("x", &["eval"])), 7);
}

#[test]
fn baseline_report_parses_back() {
    let w = Workdir::new(SMOKE);
    w.ok("o", &["eval", "--oracle"]);
    let r: AucReport = read_auc_report(&w.path("o/eval_report.tsv")).unwrap();
    assert_eq!(r.tasks.iter().map(|t| t.task.as_str()).collect::<Vec<_>>(), ["click", "like", "share"]);
}
