//! Labelled time-series datasets: UCR-style TSV ingestion, synthetic
//! generators, input encoding and one-hot reference trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    /// One input vector per timestep.
    pub values: Vec<DVector<f64>>,
    pub label: usize,
}

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeriesDataset {
    pub name: String,
    pub series: Vec<LabeledSeries>,
    pub n_classes: usize,
    pub n_inputs: usize,
    /// Original label text for each class id, used when writing TSV.
    pub class_names: Vec<String>,
}

impl LabeledSeriesDataset {
    pub fn new(name: impl Into<String>, series: Vec<LabeledSeries>, n_classes: usize) -> Result<Self> {
        let n_inputs = series.first().map_or(0, |s| s.values.first().map_or(0, |v| v.len()));
        for s in &series {
            if s.label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: n_classes,
                });
            }
            if s.is_empty() {
                return Err(Error::InvalidArgument {
                    name: "series",
                    reason: "series must have at least one timestep".into(),
                });
            }
            if s.values.iter().any(|v| v.len() != n_inputs) {
                return Err(Error::DimensionMismatch {
                    what: "series input width",
                    expected: n_inputs,
                    got: s.values.iter().map(|v| v.len()).find(|&w| w != n_inputs).unwrap_or(0),
                });
            }
            if s.values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(Error::InvalidArgument {
                    name: "series",
                    reason: "values must be finite".into(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            series,
            n_classes,
            n_inputs,
            class_names: (0..n_classes).map(|k| k.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.series.iter().map(LabeledSeries::len).sum()
    }

    /// Writes the dataset in the same tab-separated format `load_ucr_tsv` reads.
    /// Only univariate datasets can be written.
    pub fn to_tsv(&self) -> Result<String> {
        if self.n_inputs != 1 {
            return Err(Error::InvalidArgument {
                name: "dataset",
                reason: format!("TSV output is univariate, dataset has {} inputs", self.n_inputs),
            });
        }
        let mut out = String::new();
        for s in &self.series {
            out.push_str(&self.class_names[s.label]);
            for v in &s.values {
                write!(out, "\t{}", v[0]).expect("writing to a String");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over labels and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_classes as u64).to_le_bytes());
        hasher.update((self.n_inputs as u64).to_le_bytes());
        for s in &self.series {
            hasher.update((s.label as u64).to_le_bytes());
            hasher.update((s.len() as u64).to_le_bytes());
            for v in &s.values {
                for x in v.iter() {
                    hasher.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hasher.finalize().iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

/// Parses UCR-format text: one series per line, label first, tab separated.
/// Labels are remapped to `0..c` in ascending numeric order.
pub fn parse_ucr_tsv(text: &str, name: &str) -> Result<LabeledSeriesDataset> {
    let mut rows: Vec<(f64, String, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.trim_end_matches('\r').split('\t');
        let label_text = fields.next().unwrap_or_default().trim();
        let label_value = parse_field(label_text, line, 1)?;
        let values = fields
            .enumerate()
            .map(|(k, f)| parse_field(f.trim(), line, k + 2))
            .collect::<Result<Vec<f64>, DataError>>()?;
        if values.is_empty() {
            return Err(DataError::NoValues { line }.into());
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(DataError::RaggedRow {
                    line,
                    expected: w,
                    found: values.len(),
                }
                .into())
            }
            Some(_) => {}
        }
        rows.push((label_value, label_text.to_string(), values));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile.into());
    }

    // Distinct labels by numeric value; keep the first spelling seen.
    let mut classes: BTreeMap<OrderedLabel, String> = BTreeMap::new();
    for (value, text, _) in &rows {
        classes.entry(OrderedLabel(*value)).or_insert_with(|| text.clone());
    }
    let class_ids: BTreeMap<OrderedLabel, usize> = classes.keys().enumerate().map(|(k, l)| (*l, k)).collect();

    let series = rows
        .into_iter()
        .map(|(value, _, values)| LabeledSeries {
            label: class_ids[&OrderedLabel(value)],
            values: values.into_iter().map(|x| DVector::from_element(1, x)).collect(),
        })
        .collect();
    let mut dataset = LabeledSeriesDataset::new(name, series, classes.len())?;
    dataset.class_names = classes.into_values().collect();
    Ok(dataset)
}

pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<LabeledSeriesDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ucr_tsv(&text, &name)
}

fn parse_field(text: &str, line: usize, field: usize) -> Result<f64, DataError> {
    match text.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(DataError::NonNumeric {
            line,
            field,
            text: text.to_string(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedLabel(f64);

impl Eq for OrderedLabel {}

impl PartialOrd for OrderedLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// `n_l` copies of the one-hot vector for `label`.
pub fn make_reference(label: usize, n_l: usize, c: usize) -> Result<Vec<DVector<f64>>> {
    if label >= c {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let mut one_hot = DVector::zeros(c);
    one_hot[label] = 1.0;
    Ok(vec![one_hot; n_l])
}

/// Two balanced classes of sinusoids: class 0 at `f1`, class 1 at `f2`
/// cycles per series, each with additive Gaussian noise.
pub fn synth_two_tone(
    n_s: usize,
    n_l: usize,
    f1: f64,
    f2: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledSeriesDataset> {
    if f1 == f2 {
        return Err(Error::InvalidArgument {
            name: "f2",
            reason: "the two tones must differ".into(),
        });
    }
    if n_l == 0 {
        return Err(Error::InvalidArgument {
            name: "n_l",
            reason: "series length must be positive".into(),
        });
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument {
        name: "noise_sd",
        reason: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = (0..n_s)
        .map(|k| {
            let label = k % 2;
            let freq = if label == 0 { f1 } else { f2 };
            let values = (0..n_l)
                .map(|t| {
                    let phase = std::f64::consts::TAU * freq * t as f64 / n_l as f64;
                    let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    DVector::from_element(1, phase.sin() + eps)
                })
                .collect();
            LabeledSeries { values, label }
        })
        .collect();
    let mut dataset = LabeledSeriesDataset::new("two-tone", series, 2)?;
    dataset.n_inputs = 1;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EncodeMode {
    #[default]
    Identity,
    /// Multiply each input vector by a fixed seeded `k x n_in` matrix.
    RandomProjection(usize),
}

impl FromStr for EncodeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "identity" {
            return Ok(EncodeMode::Identity);
        }
        if let Some(k) = s.strip_prefix("projection:") {
            return k
                .parse()
                .map(EncodeMode::RandomProjection)
                .map_err(|_| format!("bad projection width {k:?}"));
        }
        Err(format!("unknown encoding {s:?} (expected identity or projection:<k>)"))
    }
}

impl EncodeMode {
    pub fn output_width(self, n_in: usize) -> usize {
        match self {
            EncodeMode::Identity => n_in,
            EncodeMode::RandomProjection(k) => k,
        }
    }
}

/// Seeded projection matrix with entries uniform in `[-1, 1] / sqrt(n_in)`.
pub fn projection_matrix(k: usize, n_in: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n_in.max(1) as f64).sqrt();
    DMatrix::from_fn(k, n_in, |_, _| rng.random_range(-1.0..=1.0) * scale)
}

pub fn encode(series: &LabeledSeries, mode: EncodeMode, seed: u64) -> Vec<DVector<f64>> {
    match mode {
        EncodeMode::Identity => series.values.clone(),
        EncodeMode::RandomProjection(k) => {
            let n_in = series.values.first().map_or(0, |v| v.len());
            let proj = projection_matrix(k, n_in, seed);
            encode_with(series, &proj)
        }
    }
}

pub fn encode_with(series: &LabeledSeries, projection: &DMatrix<f64>) -> Vec<DVector<f64>> {
    series.values.iter().map(|x| projection * x).collect()
}

/// Encodes every series of a dataset, returning a new dataset with the
/// projected input width.
pub fn encode_dataset(dataset: &LabeledSeriesDataset, mode: EncodeMode, seed: u64) -> LabeledSeriesDataset {
    match mode {
        EncodeMode::Identity => dataset.clone(),
        EncodeMode::RandomProjection(k) => {
            let proj = projection_matrix(k, dataset.n_inputs, seed);
            let series = dataset
                .series
                .iter()
                .map(|s| LabeledSeries {
                    values: encode_with(s, &proj),
                    label: s.label,
                })
                .collect();
            LabeledSeriesDataset {
                name: dataset.name.clone(),
                series,
                n_classes: dataset.n_classes,
                n_inputs: k,
                class_names: dataset.class_names.clone(),
            }
        }
    }
}

/// Appends a constant channel with value `bias` to every input vector.
/// `bias == 0` returns the dataset unchanged (no extra channel).
pub fn with_input_bias(dataset: &LabeledSeriesDataset, bias: f64) -> LabeledSeriesDataset {
    if bias == 0.0 {
        return dataset.clone();
    }
    let series = dataset
        .series
        .iter()
        .map(|s| LabeledSeries {
            values: s
                .values
                .iter()
                .map(|x| DVector::from_fn(x.len() + 1, |i, _| if i < x.len() { x[i] } else { bias }))
                .collect(),
            label: s.label,
        })
        .collect();
    LabeledSeriesDataset {
        name: dataset.name.clone(),
        series,
        n_classes: dataset.n_classes,
        n_inputs: dataset.n_inputs + 1,
        class_names: dataset.class_names.clone(),
    }
}
