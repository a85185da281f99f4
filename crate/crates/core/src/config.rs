//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key maps to a
//! [`TrainConfig`] field; unknown or repeated keys are errors so a misspelled
//! hyper-parameter never silently falls back to its default.
//!
//! ```text
//! n_r = 30
//! n_plastic = 100
//! eta = 2
//! r = 1
//! # or a full matrix, rows separated by `;`
//! # r_matrix = 2,0;0,1
//! u_max = auto
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::trainer::{ControlWeight, Seeds, TrainConfig};

/// Every accepted key, in the order [`to_text`] writes them.
pub const KEYS: &[&str] = &[
    "n_r",
    "alpha1",
    "activation",
    "spectral_radius",
    "input_scale",
    "n_plastic",
    "plastic_mode",
    "dt",
    "epochs",
    "eta",
    "r",
    "r_matrix",
    "alpha_c",
    "alpha_a",
    "pe_amplitude",
    "pe_decay",
    "pe_kind",
    "pe_perturb_g",
    "pe_repeat",
    "lambda",
    "u_max",
    "n_c",
    "n_a",
    "critic_features",
    "actor_features",
    "encode",
    "input_bias",
    "consolidation",
    "seed_reservoir",
    "seed_critic",
    "seed_actor",
    "seed_noise",
    "seed_data",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_matrix(key: &str, value: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = value
        .split(';')
        .map(|row| row.split(',').map(|x| parse_value::<f64>(key, x.trim())).collect())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(key, "matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| m[(i, j)].to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "n_r" => cfg.reservoir.n_r = parse_value(key, value)?,
        "alpha1" => cfg.reservoir.alpha1 = parse_value(key, value)?,
        "activation" => cfg.reservoir.activation = parse_value(key, value)?,
        "spectral_radius" => cfg.reservoir.spectral_radius = parse_value(key, value)?,
        "input_scale" => cfg.reservoir.input_scale = parse_value(key, value)?,
        "n_plastic" => cfg.reservoir.n_plastic = parse_value(key, value)?,
        "plastic_mode" => cfg.reservoir.plastic_mode = parse_value(key, value)?,
        "dt" => cfg.dt = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "eta" => cfg.eta = parse_value(key, value)?,
        "r" => cfg.r = ControlWeight::Scalar(parse_value(key, value)?),
        "r_matrix" => cfg.r = ControlWeight::Matrix(parse_matrix(key, value)?),
        "alpha_c" => cfg.alpha_c = parse_value(key, value)?,
        "alpha_a" => cfg.alpha_a = parse_value(key, value)?,
        "pe_amplitude" => cfg.pe.amplitude = parse_value(key, value)?,
        "pe_decay" => cfg.pe.decay = parse_value(key, value)?,
        "pe_kind" => cfg.pe.kind = parse_value(key, value)?,
        "pe_perturb_g" => cfg.pe_perturb_g = parse_value(key, value)?,
        "pe_repeat" => cfg.pe_repeat = parse_value(key, value)?,
        "lambda" => cfg.lambda = parse_value(key, value)?,
        "u_max" => {
            cfg.u_max = if value == "auto" {
                None
            } else {
                Some(parse_value(key, value)?)
            }
        }
        "n_c" => cfg.n_c = parse_value(key, value)?,
        "n_a" => cfg.n_a = parse_value(key, value)?,
        "critic_features" => cfg.critic_features = parse_value(key, value)?,
        "actor_features" => cfg.actor_features = parse_value(key, value)?,
        "encode" => cfg.encode = parse_value(key, value)?,
        "input_bias" => cfg.input_bias = parse_value(key, value)?,
        "consolidation" => cfg.consolidation = parse_value(key, value)?,
        "seed_reservoir" => cfg.seeds.reservoir = parse_value(key, value)?,
        "seed_critic" => cfg.seeds.critic = parse_value(key, value)?,
        "seed_actor" => cfg.seeds.actor = parse_value(key, value)?,
        "seed_noise" => cfg.seeds.noise = parse_value(key, value)?,
        "seed_data" => cfg.seeds.data = parse_value(key, value)?,
        other => return Err(Error::config(other, "unknown key")),
    }
    Ok(())
}

/// Parses a config over the defaults and validates it.
pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", idx + 1), "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        // `r` and `r_matrix` describe the same field.
        let slot = if key == "r_matrix" { "r" } else { key };
        if !seen.insert(slot.to_string()) {
            return Err(Error::config(key, "given more than once"));
        }
        set(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

/// Writes every field; `parse(&to_text(c)) == c` for valid configs.
pub fn to_text(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    let res = &cfg.reservoir;
    kv("n_r", res.n_r.to_string());
    kv("alpha1", res.alpha1.to_string());
    kv("activation", format!("{:?}", res.activation).to_lowercase());
    kv("spectral_radius", res.spectral_radius.to_string());
    kv("input_scale", res.input_scale.to_string());
    kv("n_plastic", res.n_plastic.to_string());
    kv(
        "plastic_mode",
        match res.plastic_mode {
            crate::reservoir::PlasticMode::Random => "random".into(),
            crate::reservoir::PlasticMode::RowMajor => "row-major".into(),
        },
    );
    kv("dt", cfg.dt.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("eta", cfg.eta.to_string());
    match &cfg.r {
        ControlWeight::Scalar(r) => kv("r", r.to_string()),
        ControlWeight::Matrix(m) => kv("r_matrix", format_matrix(m)),
    }
    kv("alpha_c", cfg.alpha_c.to_string());
    kv("alpha_a", cfg.alpha_a.to_string());
    kv("pe_amplitude", cfg.pe.amplitude.to_string());
    kv("pe_decay", cfg.pe.decay.to_string());
    kv(
        "pe_kind",
        match cfg.pe.kind {
            crate::tracking::PeKind::Uniform => "uniform".into(),
            crate::tracking::PeKind::SineDither => "sine-dither".into(),
        },
    );
    kv("pe_perturb_g", cfg.pe_perturb_g.to_string());
    kv("pe_repeat", cfg.pe_repeat.to_string());
    kv("lambda", cfg.lambda.to_string());
    kv("u_max", cfg.u_max.map_or("auto".into(), |u| u.to_string()));
    kv("n_c", cfg.n_c.to_string());
    kv("n_a", cfg.n_a.to_string());
    kv("critic_features", format!("{:?}", cfg.critic_features).to_lowercase());
    kv("actor_features", format!("{:?}", cfg.actor_features).to_lowercase());
    kv(
        "encode",
        match cfg.encode {
            crate::data::EncodeMode::Identity => "identity".into(),
            crate::data::EncodeMode::RandomProjection(k) => format!("projection:{k}"),
        },
    );
    kv("input_bias", cfg.input_bias.to_string());
    kv(
        "consolidation",
        match cfg.consolidation {
            crate::trainer::Consolidation::Last => "last".into(),
            crate::trainer::Consolidation::EpochMean => "epoch-mean".into(),
        },
    );
    let Seeds {
        reservoir,
        critic,
        actor,
        noise,
        data,
    } = cfg.seeds;
    kv("seed_reservoir", reservoir.to_string());
    kv("seed_critic", critic.to_string());
    kv("seed_actor", actor.to_string());
    kv("seed_noise", noise.to_string());
    kv("seed_data", data.to_string());
    out
}
