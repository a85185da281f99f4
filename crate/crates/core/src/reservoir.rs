//! Leaky-rate recurrent reservoir, its linear decoder and ridge pretraining.
//!
//! The network integrates
//!
//! ```text
//! dv/dt = -alpha1 * v + W_E * x + W_r * phi(v)
//! y_hat = W_D * v
//! ```
//!
//! with a fixed-step explicit Euler scheme. A subset of the recurrent
//! entries is designated *plastic*; its ordering defines the layout of the
//! control vector `u` written back by the actor.

use std::collections::HashSet;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSeriesDataset;
use crate::error::{check_dim, Error, Result};

/// Dendritic nonlinearity. Both variants satisfy `phi(0) = 0` and are 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Zero-centred logistic, `1 / (1 + exp(-x)) - 1/2`.
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()) - 0.5,
        }
    }

    pub fn map(self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.apply(x))
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            other => Err(format!("unknown activation {other:?} (expected tanh or logistic)")),
        }
    }
}

/// How the plastic positions of `W_r` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlasticMode {
    /// Seeded uniform sample without replacement.
    #[default]
    Random,
    /// The first `N` entries in row-major order.
    RowMajor,
}

impl FromStr for PlasticMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(PlasticMode::Random),
            "row-major" | "row_major" => Ok(PlasticMode::RowMajor),
            other => Err(format!("unknown plastic mode {other:?} (expected random or row-major)")),
        }
    }
}

/// Ordered set of distinct `(row, col)` positions in the recurrent matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlasticSet {
    entries: Vec<(usize, usize)>,
}

impl PlasticSet {
    pub fn new(entries: Vec<(usize, usize)>, n_r: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &(i, j) in &entries {
            if i >= n_r || j >= n_r {
                return Err(Error::InvalidArgument {
                    name: "plastic_idx",
                    reason: format!("entry ({i}, {j}) outside a {n_r}x{n_r} matrix"),
                });
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidArgument {
                    name: "plastic_idx",
                    reason: format!("duplicate entry ({i}, {j})"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn select(n_r: usize, count: usize, mode: PlasticMode, seed: u64) -> Result<Self> {
        let total = n_r * n_r;
        if count > total {
            return Err(Error::InvalidArgument {
                name: "n_plastic",
                reason: format!("{count} plastic weights requested but W_r has only {total} entries"),
            });
        }
        let flat: Vec<usize> = match mode {
            PlasticMode::RowMajor => (0..count).collect(),
            PlasticMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                index::sample(&mut rng, total, count).into_vec()
            }
        };
        let entries = flat.into_iter().map(|k| (k / n_r, k % n_r)).collect();
        Self::new(entries, n_r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirModel {
    pub alpha1: f64,
    pub activation: Activation,
    /// Input weights, `n_r x n_in`.
    pub w_in: DMatrix<f64>,
    /// Recurrent weights, `n_r x n_r`. Plastic entries hold the current control.
    pub w_rec: DMatrix<f64>,
    /// Linear decoder, `c x n_r`.
    pub decoder: DMatrix<f64>,
    pub plastic: PlasticSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub v: DVector<f64>,
}

impl ReservoirState {
    pub fn zeros(n_r: usize) -> Self {
        Self { v: DVector::zeros(n_r) }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite())
    }
}

/// Recipe for a seeded random reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub n_r: usize,
    pub n_in: usize,
    pub n_classes: usize,
    pub alpha1: f64,
    pub activation: Activation,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub n_plastic: usize,
    pub plastic_mode: PlasticMode,
    pub seed: u64,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        Self {
            n_r: 30,
            n_in: 1,
            n_classes: 2,
            alpha1: 1.0,
            activation: Activation::Tanh,
            spectral_radius: 0.9,
            input_scale: 1.0,
            n_plastic: 100,
            plastic_mode: PlasticMode::Random,
            seed: 1,
        }
    }
}

impl ReservoirSpec {
    /// Builds the reservoir. Plastic entries start at zero and the remaining
    /// recurrent weights are rescaled to the requested spectral radius.
    pub fn build(&self) -> Result<ReservoirModel> {
        if self.n_r == 0 {
            return Err(Error::InvalidArgument {
                name: "n_r",
                reason: "reservoir needs at least one neuron".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = self.input_scale;
        let w_in = DMatrix::from_fn(self.n_r, self.n_in, |_, _| rng.random_range(-1.0..=1.0) * scale);
        let mut w_rec = DMatrix::from_fn(self.n_r, self.n_r, |_, _| rng.random_range(-1.0..=1.0));

        let plastic = PlasticSet::select(
            self.n_r,
            self.n_plastic,
            self.plastic_mode,
            self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?;
        for (i, j) in plastic.iter() {
            w_rec[(i, j)] = 0.0;
        }
        let rho = spectral_radius(&w_rec);
        if rho > 0.0 {
            w_rec *= self.spectral_radius / rho;
        }

        ReservoirModel::new(
            self.alpha1,
            self.activation,
            w_in,
            w_rec,
            DMatrix::zeros(self.n_classes, self.n_r),
            plastic,
        )
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl ReservoirModel {
    pub fn new(
        alpha1: f64,
        activation: Activation,
        w_in: DMatrix<f64>,
        w_rec: DMatrix<f64>,
        decoder: DMatrix<f64>,
        plastic: PlasticSet,
    ) -> Result<Self> {
        if !(alpha1 > 0.0) {
            return Err(Error::InvalidArgument {
                name: "alpha1",
                reason: format!("leak must be positive, got {alpha1}"),
            });
        }
        let n_r = w_rec.nrows();
        check_dim("W_r columns", n_r, w_rec.ncols())?;
        check_dim("W_E rows", n_r, w_in.nrows())?;
        check_dim("W_D columns", n_r, decoder.ncols())?;
        for (i, j) in plastic.iter() {
            if i >= n_r || j >= n_r {
                return Err(Error::InvalidArgument {
                    name: "plastic_idx",
                    reason: format!("entry ({i}, {j}) outside a {n_r}x{n_r} matrix"),
                });
            }
        }
        Ok(Self {
            alpha1,
            activation,
            w_in,
            w_rec,
            decoder,
            plastic,
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.w_rec.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.decoder.nrows()
    }

    pub fn n_plastic(&self) -> usize {
        self.plastic.len()
    }

    pub fn zero_state(&self) -> ReservoirState {
        ReservoirState::zeros(self.n_neurons())
    }

    /// Right-hand side of the membrane dynamics.
    pub fn derivative(&self, state: &ReservoirState, input: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("reservoir state", self.n_neurons(), state.v.len())?;
        check_dim("reservoir input", self.n_inputs(), input.len())?;
        let phi = self.activation.map(&state.v);
        Ok(&self.w_in * input + &self.w_rec * phi - &state.v * self.alpha1)
    }

    /// One explicit Euler step. Non-spiking inputs drive the reservoir directly.
    pub fn step(&self, state: &ReservoirState, input: &DVector<f64>, dt: f64) -> Result<ReservoirState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument {
                name: "dt",
                reason: format!("step must be positive, got {dt}"),
            });
        }
        let dv = self.derivative(state, input)?;
        let next = ReservoirState { v: &state.v + dv * dt };
        if !next.is_finite() {
            return Err(Error::NonFinite {
                what: "reservoir state",
                step: 0,
            });
        }
        Ok(next)
    }

    /// Runs a whole input sequence from the zero state and returns every
    /// post-step state. Divergence is reported with the offending step index.
    pub fn run(&self, inputs: &[DVector<f64>], dt: f64) -> Result<Vec<ReservoirState>> {
        let mut state = self.zero_state();
        let mut out = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            state = self.step(&state, x, dt).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step: t },
                other => other,
            })?;
            out.push(state.clone());
        }
        Ok(out)
    }

    pub fn decode(&self, state: &ReservoirState) -> Result<DVector<f64>> {
        check_dim("decoder input", self.decoder.ncols(), state.v.len())?;
        Ok(&self.decoder * &state.v)
    }

    /// Current values of the plastic entries, in plastic-set order.
    pub fn plastic_values(&self) -> DVector<f64> {
        DVector::from_iterator(self.plastic.len(), self.plastic.iter().map(|(i, j)| self.w_rec[(i, j)]))
    }

    /// `W_r` with the plastic entries zeroed.
    pub fn fixed_recurrent(&self) -> DMatrix<f64> {
        let mut w = self.w_rec.clone();
        for (i, j) in self.plastic.iter() {
            w[(i, j)] = 0.0;
        }
        w
    }

    /// Ridge-pretrains the decoder on `dataset` and installs it.
    pub fn pretrain_decoder(&mut self, dataset: &LabeledSeriesDataset, lambda: f64, dt: f64) -> Result<()> {
        self.decoder = pretrain_decoder(dataset, self, lambda, dt)?;
        Ok(())
    }
}

/// Collects `(v, y)` pairs at every timestep of every series (state reset per
/// series) and solves the ridge problem mapping states to one-hot targets.
pub fn pretrain_decoder(
    dataset: &LabeledSeriesDataset,
    model: &ReservoirModel,
    lambda: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim("dataset classes", model.n_classes(), dataset.n_classes)?;
    let n_r = model.n_neurons();
    let c = dataset.n_classes;
    let rows: usize = dataset.series.iter().map(|s| s.len()).sum();

    let mut states = DMatrix::zeros(rows, n_r);
    let mut targets = DMatrix::zeros(rows, c);
    let mut row = 0;
    for series in &dataset.series {
        let trajectory = model.run(&series.values, dt)?;
        for state in trajectory {
            states.set_row(row, &state.v.transpose());
            targets[(row, series.label)] = 1.0;
            row += 1;
        }
    }
    ridge_fit(&states, &targets, lambda)
}

/// Ridge regression returning `W` (`targets.ncols() x states.ncols()`) that
/// minimises `||states * W^T - targets||^2 + lambda * ||W||^2`.
pub fn ridge_fit(states: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "lambda",
            reason: format!("ridge coefficient must be non-negative, got {lambda}"),
        });
    }
    check_dim("ridge sample count", states.nrows(), targets.nrows())?;
    let n = states.ncols();
    let mut gram = states.transpose() * states;
    for k in 0..n {
        gram[(k, k)] += lambda;
    }
    let rhs = states.transpose() * targets;

    let max_diag = (0..n).map(|k| gram[(k, k)]).fold(0.0, f64::max);
    let chol = gram.cholesky().ok_or(Error::Singular { lambda })?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if max_diag == 0.0 || min_pivot <= 1e-12 * max_diag {
        return Err(Error::Singular { lambda });
    }
    Ok(chol.solve(&rhs).transpose())
}

/// Regularised squared loss minimised by [`ridge_fit`].
pub fn ridge_loss(states: &DMatrix<f64>, targets: &DMatrix<f64>, weights: &DMatrix<f64>, lambda: f64) -> f64 {
    let residual = states * weights.transpose() - targets;
    residual.norm_squared() + lambda * weights.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    fn scalar_model(alpha1: f64) -> ReservoirModel {
        ReservoirModel::new(
            alpha1,
            Activation::Tanh,
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            PlasticSet::new(vec![], 1).unwrap(),
        )
        .unwrap()
    }

    fn random_model(n_r: usize, seed: u64) -> ReservoirModel {
        ReservoirSpec {
            n_r,
            n_in: 2,
            n_classes: 2,
            n_plastic: n_r,
            seed,
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn origin_is_fixed_point() {
        let model = random_model(5, 3);
        let zero_in = DVector::zeros(2);
        for dt in [1e-3, 0.05, 0.5, 3.0] {
            let next = model.step(&model.zero_state(), &zero_in, dt).unwrap();
            assert!(next.v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn scalar_leak_substitution() {
        let model = scalar_model(1.0);
        let state = ReservoirState {
            v: DVector::from_vec(vec![1.0]),
        };
        let next = model.step(&state, &DVector::zeros(1), 0.1).unwrap();
        assert_close!(next.v[0], 0.9, 1e-15);
        // input state untouched
        assert_eq!(state.v[0], 1.0);
    }

    #[test]
    fn step_rejects_bad_input_dimension() {
        let model = random_model(4, 1);
        let err = model.step(&model.zero_state(), &DVector::zeros(3), 0.1).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn divergence_reports_step_index() {
        let mut model = scalar_model(1.0);
        model.w_in = DMatrix::from_element(1, 1, 1.0);
        let inputs = vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::INFINITY),
        ];
        match model.run(&inputs, 0.1) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 2),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn euler_converges_first_order() {
        let model = ReservoirSpec {
            n_r: 3,
            n_in: 1,
            n_plastic: 0,
            seed: 11,
            ..Default::default()
        }
        .build()
        .unwrap();
        let horizon = 1.0;
        let integrate = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut state = ReservoirState {
                v: DVector::from_vec(vec![0.5, -0.3, 0.8]),
            };
            for k in 0..steps {
                let x = DVector::from_element(1, (k as f64 * dt).sin());
                state = model.step(&state, &x, dt).unwrap();
            }
            state.v
        };
        // Fine-step oracle.
        let reference = integrate(1e-4);
        let gap_coarse = (integrate(0.01) - &reference).amax();
        let gap_half = (integrate(0.005) - &reference).amax();
        assert!(gap_coarse < 0.05 * 1.0, "gap {gap_coarse}");
        let ratio = gap_half / gap_coarse;
        assert!((0.4..0.6).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn leak_dominance_is_monotone() {
        let alpha1 = 2.0;
        let model = scalar_model(alpha1);
        for dt in [0.1, 0.5, 0.9] {
            assert!(dt < 2.0 / alpha1);
            let mut state = ReservoirState {
                v: DVector::from_vec(vec![3.0]),
            };
            let mut prev = state.v.norm();
            for _ in 0..50 {
                state = model.step(&state, &DVector::zeros(1), dt).unwrap();
                let now = state.v.norm();
                assert!(now <= prev);
                prev = now;
            }
        }
    }

    #[test]
    fn decode_cases() {
        let state = ReservoirState {
            v: DVector::from_vec(vec![1.0, 2.0, 3.0]),
        };
        let mut model = random_model(3, 5);
        model.decoder = DMatrix::identity(3, 3);
        assert_eq!(model.decode(&state).unwrap(), state.v);
        model.decoder = DMatrix::zeros(2, 3);
        assert_eq!(model.decode(&state).unwrap(), DVector::zeros(2));
        model.decoder = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        assert_eq!(model.decode(&state).unwrap(), DVector::from_vec(vec![4.0, 4.0]));
    }

    #[test]
    fn decode_dimension_mismatch() {
        let model = random_model(3, 5);
        let err = model.decode(&ReservoirState::zeros(4)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn build_zeroes_plastic_and_scales_radius() {
        let model = random_model(20, 9);
        assert!(model.plastic_values().iter().all(|&u| u == 0.0));
        assert_close!(spectral_radius(&model.w_rec), 0.9, 1e-9);
    }

    #[test]
    fn plastic_set_rejects_duplicates_and_out_of_range() {
        assert!(PlasticSet::new(vec![(0, 1), (0, 1)], 3).is_err());
        assert!(PlasticSet::new(vec![(3, 0)], 3).is_err());
        assert!(PlasticSet::select(2, 5, PlasticMode::Random, 0).is_err());
        let row_major = PlasticSet::select(3, 4, PlasticMode::RowMajor, 0).unwrap();
        assert_eq!(row_major.entries(), &[(0, 0), (0, 1), (0, 2), (1, 0)]);
    }

    #[test]
    fn ridge_single_pair_exact_fit() {
        // One state, one neuron: the normal equations are full rank.
        let states = DMatrix::from_element(1, 1, 0.8);
        let targets = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w = ridge_fit(&states, &targets, 0.0).unwrap();
        let fitted = &w * DVector::from_element(1, 0.8);
        assert_close!(fitted[0], 1.0, 1e-12);
        assert_close!(fitted[1], 0.0, 1e-12);
    }

    #[test]
    fn ridge_singular_without_regularisation() {
        let states = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let targets = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(ridge_fit(&states, &targets, 0.0), Err(Error::Singular { .. })));
        assert!(ridge_fit(&states, &targets, 1e-3).is_ok());
    }

    #[test]
    fn ridge_large_lambda_shrinks() {
        let states = DMatrix::from_fn(50, 4, |i, j| ((i * 7 + j * 3) as f64).sin());
        let targets = DMatrix::from_fn(50, 2, |i, j| ((i + j) % 2) as f64);
        let w = ridge_fit(&states, &targets, 1e9).unwrap();
        assert!(w.norm() < 1e-3);
    }

    #[test]
    fn ridge_rejects_negative_lambda() {
        let states = DMatrix::from_element(1, 1, 1.0);
        assert!(ridge_fit(&states, &states, -1.0).is_err());
    }
}
