//! Command-line front end: `pretrain`, `train`, `eval`, `selftest`.
//!
//! Exit codes: 0 ok, 1 self-test not converged, 2 configuration error,
//! 3 data or I/O error, 4 hyper-parameter gate failure, 5 divergence.
//! Log verbosity comes from `HJBR_LOG` (`quiet`, `info`, `debug`).

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config;
use crate::data::{encode_dataset, load_ucr_tsv, with_input_bias, EncodeMode, LabeledSeriesDataset};
use crate::error::{Error, Result};
use crate::reservoir::ReservoirModel;
use crate::trainer::{
    build_nets, evaluate, gate, lqr_selftest, train, write_step_records, LqrConfig, Prepared, Seeds, StepRecord,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_GATE: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument { .. } | Error::Singular { .. } | Error::EmptyPlasticSet => {
            EXIT_CONFIG
        }
        Error::Data(_)
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::EmptyDataset
        | Error::LabelOutOfRange { .. }
        | Error::DimensionMismatch { .. } => EXIT_DATA,
        Error::GateRejected(_) => EXIT_GATE,
        Error::Divergence { .. } | Error::NonFinite { .. } => EXIT_DIVERGENCE,
        Error::NotConverged(_) => EXIT_NOT_CONVERGED,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hjbr", version, about = "Actor-critic training of plastic reservoir weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the reservoir and ridge-fit its decoder.
    Pretrain(PretrainArgs),
    /// Gate the hyper-parameters and train the plastic weights.
    Train(TrainArgs),
    /// Feedforward accuracy and confusion counts of a saved model.
    Eval(EvalArgs),
    /// Check the update laws against the scalar Riccati solution.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Derive every seed from this one value.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output model file (JSON); a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model written by `pretrain`; when omitted the decoder is fit here.
    #[arg(long)]
    pub decoder: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Train even when the hyper-parameter gate fails.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Confusion-count CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial value guess; needed when the open-loop plant is not stable.
    #[arg(long)]
    pub init_p: Option<f64>,
    #[arg(long)]
    pub seed_override: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

/// A reservoir together with the input encoding it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: ReservoirModel,
    pub encode: EncodeMode,
    pub encode_seed: u64,
    #[serde(default)]
    pub input_bias: f64,
    pub dt: f64,
}

impl ModelArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn encode(&self, dataset: &LabeledSeriesDataset) -> LabeledSeriesDataset {
        with_input_bias(&encode_dataset(dataset, self.encode, self.encode_seed), self.input_bias)
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    /// The full effective configuration in config-file syntax.
    pub config_snapshot: String,
    pub seeds: Seeds,
    pub data_path: PathBuf,
    pub dataset_fingerprint: String,
    pub decoder_path: Option<PathBuf>,
    pub decoder_fingerprint: Option<String>,
    pub outputs: Vec<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn load_config(common: &CommonArgs) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => config::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::config(path.display().to_string(), source.to_string()),
            other => other,
        })?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed_override {
        cfg.seeds = Seeds::from_base(seed);
    }
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<LabeledSeriesDataset> {
    let data = load_ucr_tsv(path)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(data)
}

fn manifest(
    command: &str,
    cfg: &TrainConfig,
    data_path: &Path,
    dataset: &LabeledSeriesDataset,
    decoder: Option<&Path>,
    outputs: Vec<PathBuf>,
) -> Result<RunManifest> {
    Ok(RunManifest {
        command: command.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_snapshot: config::to_text(cfg),
        seeds: cfg.seeds,
        data_path: data_path.to_path_buf(),
        dataset_fingerprint: dataset.fingerprint(),
        decoder_path: decoder.map(Path::to_path_buf),
        decoder_fingerprint: decoder.map(file_fingerprint).transpose()?,
        outputs,
    })
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let raw = load_data(&args.common.data)?;
    let prepared = crate::trainer::prepare(&raw, &cfg)?;
    let manifest_path = manifest_path_for(&args.out);
    let m = manifest(
        "pretrain",
        &cfg,
        &args.common.data,
        &raw,
        None,
        vec![args.out.clone(), manifest_path.clone()],
    )?;
    write_json(&manifest_path, &m)?;
    ModelArtifact {
        model: prepared.model,
        encode: cfg.encode,
        encode_seed: cfg.seeds.data,
        input_bias: cfg.input_bias,
        dt: cfg.dt,
    }
    .save(&args.out)?;
    info!("decoder written to {}", args.out.display());
    Ok(())
}

fn write_divergence_window(path: &Path, window: &[StepRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_step_records(BufWriter::new(file), window).map_err(|e| Error::io(path, e))
}

/// Summary written next to the diagnostics; not part of the byte-identical outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub wall_clock_secs: f64,
    pub final_train_accuracy: Option<f64>,
    pub monotone_fraction: f64,
    pub gate_overridden: bool,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let raw = load_data(&args.common.data)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let out = |name: &str| args.out.join(name);
    let outputs = [
        "manifest.json",
        "gate_report.txt",
        "gate_report.json",
        "model.json",
        "steps.csv",
        "epochs.csv",
        "summary.json",
    ]
    .iter()
    .map(|n| out(n))
    .collect();
    let m = manifest("train", &cfg, &args.common.data, &raw, args.decoder.as_deref(), outputs)?;
    write_json(&out("manifest.json"), &m)?;

    let mut prepared = crate::trainer::prepare(&raw, &cfg)?;
    if let Some(path) = &args.decoder {
        let artifact = ModelArtifact::load(path)?;
        if artifact.encode != cfg.encode
            || artifact.encode_seed != cfg.seeds.data
            || artifact.input_bias != cfg.input_bias
        {
            return Err(Error::config(
                "encode",
                "decoder was fit under a different input encoding",
            ));
        }
        let model = artifact.model;
        crate::error::check_dim("decoder model inputs", prepared.dataset.n_inputs, model.n_inputs())?;
        crate::error::check_dim("decoder model classes", prepared.dataset.n_classes, model.n_classes())?;
        if model.n_plastic() != cfg.reservoir.n_plastic {
            return Err(Error::config("n_plastic", "does not match the decoder model"));
        }
        prepared = Prepared { model, ..prepared };
        let (critic, actor) = build_nets(&cfg, prepared.dataset.n_classes)?;
        prepared.critic = critic;
        prepared.actor = actor;
    }

    let report = gate(&prepared, &cfg)?;
    write_text(&out("gate_report.txt"), &report.to_text())?;
    write_json(&out("gate_report.json"), &report)?;
    if !report.passed() && !args.force {
        return Err(Error::GateRejected(Box::new(report)));
    }

    let Prepared {
        dataset,
        model,
        mut critic,
        mut actor,
        cost,
    } = prepared;
    let result = train(
        &dataset,
        &model,
        &mut critic,
        &mut actor,
        &cfg,
        &cost,
        &report,
        args.force,
    );
    let (trained, diag) = match result {
        Ok(ok) => ok,
        Err(Error::Divergence { step, reason, window }) => {
            write_divergence_window(&out("divergence_window.csv"), &window)?;
            return Err(Error::Divergence { step, reason, window });
        }
        Err(e) => return Err(e),
    };

    // Rewrite the gate report so an override is recorded.
    write_text(&out("gate_report.txt"), &diag.gate.to_text())?;
    write_json(&out("gate_report.json"), &diag.gate)?;
    ModelArtifact {
        model: trained,
        encode: cfg.encode,
        encode_seed: cfg.seeds.data,
        input_bias: cfg.input_bias,
        dt: cfg.dt,
    }
    .save(&out("model.json"))?;
    for (name, which) in [("steps.csv", true), ("epochs.csv", false)] {
        let path = out(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let w = BufWriter::new(file);
        if which {
            diag.write_step_csv(w)
        } else {
            diag.write_epoch_csv(w)
        }
        .map_err(|e| Error::io(&path, e))?;
    }
    write_json(
        &out("summary.json"),
        &RunSummary {
            wall_clock_secs: diag.wall_clock_secs,
            final_train_accuracy: diag.final_train_accuracy(),
            monotone_fraction: diag.monotone_fraction(),
            gate_overridden: diag.gate.overridden,
        },
    )?;
    if let Some(acc) = diag.final_train_accuracy() {
        println!("final train accuracy: {acc:.4}");
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    let raw = load_data(&args.data)?;
    let data = artifact.encode(&raw);
    let ev = evaluate(&artifact.model, &data, artifact.dt)?;
    println!("accuracy: {:.4}", ev.accuracy);
    if let Some(path) = &args.out {
        write_text(path, &ev.to_csv())?;
    }
    Ok(())
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<()> {
    let mut cfg = LqrConfig::default();
    if let Some(a) = args.a {
        cfg.a = a;
    }
    if let Some(b) = args.b {
        cfg.b = b;
    }
    if let Some(r) = args.r {
        cfg.r = r;
    }
    if let Some(eta) = args.eta {
        cfg.eta = eta;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = args.seed_override {
        cfg.seed = seed;
    }
    if let Some(p) = args.init_p {
        cfg.init_p = p;
    }
    cfg.force = args.force;
    let report = lqr_selftest(&cfg)?;
    print!("{}", report.to_text());
    if report.converged {
        Ok(())
    } else {
        let tail: Vec<String> = report
            .history
            .iter()
            .rev()
            .take(5)
            .map(|(s, k)| format!("step {s}: gain {k:.6}"))
            .collect();
        Err(Error::NotConverged(format!(
            "not converged: relative gain error {:.4} (recent: {})",
            report.gain_error,
            if tail.is_empty() {
                "none".into()
            } else {
                tail.join(", ")
            }
        )))
    }
}

pub fn run_command(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

/// Reads `HJBR_LOG` and installs the logger; unknown values fall back to `info`.
pub fn init_logging() {
    let level = match std::env::var("HJBR_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run_command(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            exit_code(&e)
        }
    }
}
