//! End-to-end runs of the `hjbr` binary: outputs, exit codes, messages.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjbr::cli::{ModelArtifact, RunManifest, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_GATE};
use hjbr::reservoir::{Activation, PlasticSet};
use hjbr::{config, synth_two_tone, LabeledSeries, LabeledSeriesDataset, ReservoirModel};
use nalgebra::{DMatrix, DVector};
use tempfile::TempDir;

const SMALL: &str = "\
n_r = 10
n_plastic = 10
dt = 0.2
epochs = 3
eta = 5
r = 0.1
alpha_c = 1e-9
alpha_a = 1
pe_amplitude = 0.01
lambda = 10
actor_features = memoryless
input_bias = 1
consolidation = epoch-mean
";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        synth_two_tone(10, 20, 1.5, 3.0, 0.05, 8)
            .unwrap()
            .write_tsv(dir.path().join("data.tsv"))
            .unwrap();
        fs::write(dir.path().join("small.conf"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes `SMALL` with `overrides` replacing same-named keys.
    fn config(&self, name: &str, overrides: &str) -> PathBuf {
        let keys: Vec<&str> = overrides
            .lines()
            .filter_map(|l| l.split('=').next())
            .map(str::trim)
            .collect();
        let mut text: String = SMALL
            .lines()
            .filter(|l| !keys.contains(&l.split('=').next().unwrap().trim()))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(overrides);
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }
}

fn hjbr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjbr"))
        .args(args)
        .env("HJBR_LOG", "quiet")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train(fx: &Fixture, conf: &Path, out: &str, extra: &[&str]) -> Output {
    let data = fx.path("data.tsv");
    let dir = fx.path(out);
    let mut args = vec!["train", "--config", s(conf), "--data", s(&data), "--out", s(&dir)];
    args.extend_from_slice(extra);
    hjbr(&args)
}

#[test]
fn pretrain_writes_decoder_and_manifest() {
    let fx = Fixture::new();
    let out = fx.path("decoder.json");
    let res = hjbr(&[
        "pretrain",
        "--config",
        s(&fx.path("small.conf")),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let artifact = ModelArtifact::load(&out).unwrap();
    assert_eq!(artifact.model.n_neurons(), 10);
    assert!(artifact.model.decoder.iter().any(|&w| w != 0.0));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(fx.path("decoder.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "pretrain");
}

#[test]
fn pretrain_missing_data_is_a_data_error() {
    let fx = Fixture::new();
    let res = hjbr(&[
        "pretrain",
        "--data",
        s(&fx.path("nope.tsv")),
        "--out",
        s(&fx.path("d.json")),
    ]);
    assert_eq!(code(&res), EXIT_DATA);
    assert!(stderr(&res).contains("nope.tsv"), "{}", stderr(&res));
}

#[test]
fn pretrain_negative_lambda_is_a_config_error_naming_the_key() {
    let fx = Fixture::new();
    let conf = fx.config("bad.conf", "lambda = -1\n");
    let res = hjbr(&[
        "pretrain",
        "--config",
        s(&conf),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&fx.path("d.json")),
    ]);
    assert_eq!(code(&res), EXIT_CONFIG);
    assert!(stderr(&res).contains("lambda"), "{}", stderr(&res));
}

#[test]
fn unknown_key_and_missing_config_are_config_errors() {
    let fx = Fixture::new();
    let conf = fx.config("typo.conf", "etaa = 3\n");
    let res = hjbr(&[
        "pretrain",
        "--config",
        s(&conf),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&fx.path("d.json")),
    ]);
    assert_eq!(code(&res), EXIT_CONFIG);
    assert!(stderr(&res).contains("etaa"));
    let missing = fx.path("missing.conf");
    let res = hjbr(&[
        "pretrain",
        "--config",
        s(&missing),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&fx.path("d.json")),
    ]);
    assert_eq!(code(&res), EXIT_CONFIG);
}

#[test]
fn malformed_data_names_the_line() {
    let fx = Fixture::new();
    let bad = fx.path("ragged.tsv");
    fs::write(&bad, "0\t1\t2\t3\n1\t1\t2\n").unwrap();
    let res = hjbr(&["pretrain", "--data", s(&bad), "--out", s(&fx.path("d.json"))]);
    assert_eq!(code(&res), EXIT_DATA);
    assert!(stderr(&res).contains("line 2"), "{}", stderr(&res));
}

#[test]
fn train_writes_every_artifact() {
    let fx = Fixture::new();
    let res = train(&fx, &fx.path("small.conf"), "run", &[]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for name in [
        "manifest.json",
        "gate_report.txt",
        "gate_report.json",
        "model.json",
        "steps.csv",
        "epochs.csv",
        "summary.json",
    ] {
        assert!(fx.path("run").join(name).exists(), "{name}");
    }
    let steps = fs::read_to_string(fx.path("run/steps.csv")).unwrap();
    assert_eq!(
        steps.lines().next().unwrap(),
        "step,epoch,series,t_index,e_sq,e_c,norm_ea,norm_u,H"
    );
    // 3 epochs x 10 series x 20 steps.
    assert_eq!(steps.lines().count(), 1 + 3 * 10 * 20);
    assert!(stdout(&res).contains("final train accuracy"));
}

#[test]
fn gate_failure_exits_4_and_names_the_inequality() {
    let fx = Fixture::new();
    let conf = fx.config("eta1.conf", "eta = 1\n");
    let res = train(&fx, &conf, "run", &[]);
    assert_eq!(code(&res), EXIT_GATE);
    let report = fs::read_to_string(fx.path("run/gate_report.txt")).unwrap();
    assert!(report.contains("eta > 1"), "{report}");
    assert!(report.contains("status: fail"));
    assert!(!fx.path("run/steps.csv").exists());
}

#[test]
fn force_trains_through_a_failing_gate_and_records_it() {
    let fx = Fixture::new();
    let conf = fx.config("eta1.conf", "eta = 1\n");
    let res = train(&fx, &conf, "run", &["--force"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let report = fs::read_to_string(fx.path("run/gate_report.txt")).unwrap();
    assert!(report.contains("overridden: true"));
    assert!(report.contains("eta > 1"));
    assert!(fx.path("run/steps.csv").exists());
}

#[test]
fn divergence_exits_5_with_a_window() {
    let fx = Fixture::new();
    let conf = fx.config("div.conf", "alpha_a = 1e6\nu_max = 1e9\n");
    let res = train(&fx, &conf, "run", &["--force"]);
    assert_eq!(code(&res), EXIT_DIVERGENCE, "{}", stderr(&res));
    let window = fs::read_to_string(fx.path("run/divergence_window.csv")).unwrap();
    assert!(window.starts_with("step,epoch,series"));
    assert!(window.lines().count() > 1);
}

#[test]
fn repeated_training_is_byte_identical() {
    let fx = Fixture::new();
    for run in ["a", "b"] {
        assert_eq!(code(&train(&fx, &fx.path("small.conf"), run, &[])), 0);
    }
    for name in ["steps.csv", "epochs.csv", "model.json"] {
        let a = fs::read(fx.path("a").join(name)).unwrap();
        let b = fs::read(fx.path("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn manifest_replays_the_run() {
    let fx = Fixture::new();
    assert_eq!(
        code(&train(&fx, &fx.path("small.conf"), "a", &["--seed-override", "42"])),
        0
    );
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(fx.path("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seeds.reservoir, 42);
    let snapshot = fx.path("snapshot.conf");
    fs::write(&snapshot, &manifest.config_snapshot).unwrap();
    assert_eq!(config::load(&snapshot).unwrap().seeds, manifest.seeds);
    assert_eq!(code(&train(&fx, &snapshot, "b", &[])), 0);
    assert_eq!(
        fs::read(fx.path("a/steps.csv")).unwrap(),
        fs::read(fx.path("b/steps.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_the_run() {
    let fx = Fixture::new();
    assert_eq!(
        code(&train(&fx, &fx.path("small.conf"), "a", &["--seed-override", "1"])),
        0
    );
    assert_eq!(
        code(&train(&fx, &fx.path("small.conf"), "b", &["--seed-override", "2"])),
        0
    );
    assert_ne!(
        fs::read(fx.path("a/steps.csv")).unwrap(),
        fs::read(fx.path("b/steps.csv")).unwrap()
    );
}

#[test]
fn train_with_pretrained_decoder() {
    let fx = Fixture::new();
    let conf = fx.path("small.conf");
    let decoder = fx.path("decoder.json");
    let res = hjbr(&[
        "pretrain",
        "--config",
        s(&conf),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&decoder),
    ]);
    assert_eq!(code(&res), 0);
    let with = train(&fx, &conf, "with", &["--decoder", s(&decoder)]);
    assert_eq!(code(&with), 0, "{}", stderr(&with));
    let without = train(&fx, &conf, "without", &[]);
    assert_eq!(code(&without), 0);
    assert_eq!(
        fs::read(fx.path("with/steps.csv")).unwrap(),
        fs::read(fx.path("without/steps.csv")).unwrap()
    );

    let other = fx.config("other.conf", "input_bias = 0\n");
    let res = train(&fx, &other, "mismatch", &["--decoder", s(&decoder)]);
    assert_eq!(code(&res), EXIT_CONFIG);
}

/// One neuron, readout `[1, -1]`: a constant positive input drives the
/// state positive and a negative one negative, so the labels are recovered
/// exactly by construction.
fn exact_fit_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let model = ReservoirModel::new(
        1.0,
        Activation::Tanh,
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        PlasticSet::new(vec![(0, 0)], 1).unwrap(),
    )
    .unwrap();
    let series = (0..6)
        .map(|k| {
            let label = k % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            LabeledSeries {
                values: (0..10)
                    .map(|t| DVector::from_element(1, sign * (0.5 + 0.1 * t as f64)))
                    .collect(),
                label,
            }
        })
        .collect();
    let data = LabeledSeriesDataset::new("exact", series, 2).unwrap();
    let data_path = dir.join("exact.tsv");
    data.write_tsv(&data_path).unwrap();
    let model_path = dir.join("exact.json");
    ModelArtifact {
        model,
        encode: Default::default(),
        encode_seed: 0,
        input_bias: 0.0,
        dt: 0.1,
    }
    .save(&model_path)
    .unwrap();
    (model_path, data_path)
}

#[test]
fn eval_exact_fit_prints_one() {
    let fx = Fixture::new();
    let (model, data) = exact_fit_pair(fx.dir.path());
    let confusion = fx.path("confusion.csv");
    let res = hjbr(&["eval", "--model", s(&model), "--data", s(&data), "--out", s(&confusion)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(stdout(&res).trim(), "accuracy: 1.0000");
    let text = fs::read_to_string(&confusion).unwrap();
    assert!(text.contains("0,0,3") && text.contains("1,1,3"), "{text}");
}

#[test]
fn eval_confusion_counts_sum_to_series_count() {
    let fx = Fixture::new();
    assert_eq!(code(&train(&fx, &fx.path("small.conf"), "run", &[])), 0);
    let confusion = fx.path("confusion.csv");
    let res = hjbr(&[
        "eval",
        "--model",
        s(&fx.path("run/model.json")),
        "--data",
        s(&fx.path("data.tsv")),
        "--out",
        s(&confusion),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let total: usize = fs::read_to_string(&confusion)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 10);
    let printed = stdout(&res);
    let value = printed.trim().strip_prefix("accuracy: ").unwrap();
    assert_eq!(value.split('.').nth(1).unwrap().len(), 4);
}

#[test]
fn eval_empty_dataset_and_bad_model_are_data_errors() {
    let fx = Fixture::new();
    let (model, _) = exact_fit_pair(fx.dir.path());
    let empty = fx.path("empty.tsv");
    fs::write(&empty, "").unwrap();
    assert_eq!(
        code(&hjbr(&["eval", "--model", s(&model), "--data", s(&empty)])),
        EXIT_DATA
    );
    let junk = fx.path("junk.json");
    fs::write(&junk, "{ not json").unwrap();
    assert_eq!(
        code(&hjbr(&["eval", "--model", s(&junk), "--data", s(&fx.path("data.tsv"))])),
        EXIT_DATA
    );
}

#[test]
fn selftest_default_matches_riccati() {
    let res = hjbr(&["selftest"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let text = stdout(&res);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let p_star = -1.0 + 3f64.sqrt();
    assert!((value("P_riccati") - p_star).abs() < 1e-6);
    assert!((value("P_learned") - p_star).abs() / p_star < 0.05);
    assert!(value("relative_error") < 0.05);
}

#[test]
fn selftest_eta_10_converges_to_its_own_gain() {
    let res = hjbr(&["selftest", "--eta", "10"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    // 2 a P - P^2 + eta = 0 with a = -1: P = -1 + sqrt(1 + eta).
    let p_star = -1.0 + 11f64.sqrt();
    let text = stdout(&res);
    let learned: f64 = text
        .lines()
        .find(|l| l.starts_with("P_learned"))
        .and_then(|l| l.split('=').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((learned - p_star).abs() / p_star < 0.05, "{learned} vs {p_star}");
}

#[test]
fn selftest_zero_steps_is_not_converged() {
    let res = hjbr(&["selftest", "--steps", "0"]);
    assert_ne!(code(&res), 0);
    let all = stdout(&res) + &stderr(&res);
    assert!(all.contains("not converged"), "{all}");
}

#[test]
fn logging_is_controlled_by_env() {
    let fx = Fixture::new();
    let run = |level: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_hjbr"))
            .args([
                "train",
                "--config",
                s(&fx.path("small.conf")),
                "--data",
                s(&fx.path("data.tsv")),
                "--out",
            ])
            .arg(fx.path(out))
            .env("HJBR_LOG", level)
            .output()
            .unwrap()
    };
    assert!(stderr(&run("quiet", "q")).is_empty());
    assert!(stderr(&run("info", "i")).contains("epoch"));
    assert!(stderr(&run("debug", "d")).len() > stderr(&run("info", "i2")).len());
}

#[test]
fn bad_flags_are_config_errors() {
    assert_eq!(code(&hjbr(&["train", "--nonsense"])), EXIT_CONFIG);
    assert_eq!(code(&hjbr(&["frobnicate"])), EXIT_CONFIG);
}
