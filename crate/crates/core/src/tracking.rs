//! Tracking-error system of the reservoir output against a one-hot reference.
//!
//! With the decoder frozen and the reference constant inside a pattern, the
//! output error obeys the control-affine system `de/dt = f + g u`, where `u`
//! is the vector of plastic recurrent weights. Column `k` of `g` is the
//! derivative of `W_D W_r phi(v)` with respect to the `k`-th plastic entry.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::reservoir::{ReservoirModel, ReservoirState};

/// `y_hat - y_ref`.
pub fn output_error(y_hat: &DVector<f64>, y_ref: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("output error", y_hat.len(), y_ref.len())?;
    Ok(y_hat - y_ref)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineErrorEval {
    pub e: DVector<f64>,
    /// Drift, `c`.
    pub f_val: DVector<f64>,
    /// Input matrix, `c x N`.
    pub g_mat: DMatrix<f64>,
    pub v_snapshot: DVector<f64>,
}

impl AffineErrorEval {
    /// `f + g u`.
    pub fn error_derivative(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("control vector", self.g_mat.ncols(), u.len())?;
        Ok(&self.f_val + &self.g_mat * u)
    }
}

/// Free-function form of [`AffineErrorEval::error_derivative`].
pub fn error_derivative(eval: &AffineErrorEval, u: &DVector<f64>) -> Result<DVector<f64>> {
    eval.error_derivative(u)
}

/// Evaluates the error system at the current reservoir state and input.
pub fn build_affine_eval(
    model: &ReservoirModel,
    state: &ReservoirState,
    input: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> Result<AffineErrorEval> {
    if model.plastic.is_empty() {
        return Err(Error::EmptyPlasticSet);
    }
    check_dim("reservoir state", model.n_neurons(), state.v.len())?;
    check_dim("reservoir input", model.n_inputs(), input.len())?;
    check_dim("reference", model.n_classes(), y_ref.len())?;

    let phi = model.activation.map(&state.v);

    // W_fixed phi(v) = W_r phi(v) minus the plastic contributions.
    let mut recurrent = &model.w_rec * &phi;
    for (i, j) in model.plastic.iter() {
        recurrent[i] -= model.w_rec[(i, j)] * phi[j];
    }
    let drive = &model.w_in * input + recurrent - &state.v * model.alpha1;
    let f_val = &model.decoder * drive;

    let c = model.n_classes();
    let mut g_mat = DMatrix::zeros(c, model.n_plastic());
    for (k, (i, j)) in model.plastic.iter().enumerate() {
        let scale = phi[j];
        for r in 0..c {
            g_mat[(r, k)] = scale * model.decoder[(r, i)];
        }
    }

    let e = output_error(&model.decode(state)?, y_ref)?;
    Ok(AffineErrorEval {
        e,
        f_val,
        g_mat,
        v_snapshot: state.v.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PeKind {
    /// Uniform dither in `[-a, a]`.
    Uniform,
    /// Half amplitude from a sum of seeded sinusoids, half from uniform dither.
    #[default]
    SineDither,
}

impl std::str::FromStr for PeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(PeKind::Uniform),
            "sine-dither" | "sine_dither" => Ok(PeKind::SineDither),
            other => Err(format!("unknown PE kind {other:?} (expected uniform or sine-dither)")),
        }
    }
}

/// Exploration amplitude `a0 * decay^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeSchedule {
    pub amplitude: f64,
    pub decay: f64,
    pub kind: PeKind,
}

impl Default for PeSchedule {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            decay: 0.8,
            kind: PeKind::SineDither,
        }
    }
}

impl PeSchedule {
    pub fn off() -> Self {
        Self {
            amplitude: 0.0,
            decay: 1.0,
            kind: PeKind::Uniform,
        }
    }

    pub fn amplitude_at(&self, epoch: usize) -> f64 {
        self.amplitude * self.decay.powi(epoch as i32)
    }
}

const SINES: usize = 3;

/// Deterministic persistence-of-excitation source. Each step index draws from
/// its own ChaCha stream, so noise depends only on `(seed, step_index, epoch)`.
#[derive(Debug, Clone)]
pub struct PeGenerator {
    schedule: PeSchedule,
    seed: u64,
    /// Angular frequency (rad/step) and phase per entry and sinusoid.
    omega: DMatrix<f64>,
    phase: DMatrix<f64>,
}

impl PeGenerator {
    pub fn new(schedule: PeSchedule, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_5EED);
        let omega = DMatrix::from_fn(dim, SINES, |_, _| rng.random_range(0.05..1.0));
        let phase = DMatrix::from_fn(dim, SINES, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        Self {
            schedule,
            seed,
            omega,
            phase,
        }
    }

    pub fn schedule(&self) -> &PeSchedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn noise(&self, step_index: usize, epoch: usize) -> DVector<f64> {
        let dim = self.dim();
        let amp = self.schedule.amplitude_at(epoch);
        if amp == 0.0 {
            return DVector::zeros(dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step_index as u64);
        let t = step_index as f64;
        DVector::from_fn(dim, |k, _| {
            let dither: f64 = rng.random_range(-1.0..=1.0);
            match self.schedule.kind {
                PeKind::Uniform => amp * dither,
                PeKind::SineDither => {
                    let sines: f64 = (0..SINES)
                        .map(|m| (self.omega[(k, m)] * t + self.phase[(k, m)]).sin())
                        .sum::<f64>()
                        / SINES as f64;
                    amp * 0.5 * (sines + dither)
                }
            }
        })
    }

    pub fn inject(&self, u: &DVector<f64>, step_index: usize, epoch: usize) -> DVector<f64> {
        u + self.noise(step_index, epoch)
    }

    /// Uniform dither for the input matrix, drawn from a stream disjoint from
    /// the one used for `u`.
    pub fn perturb_matrix(&self, g: &DMatrix<f64>, step_index: usize, epoch: usize) -> DMatrix<f64> {
        let amp = self.schedule.amplitude_at(epoch);
        if amp == 0.0 {
            return g.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((step_index as u64) | (1 << 63));
        g.map(|x| x + amp * rng.random_range(-1.0..=1.0))
    }
}

/// Adds scheduled exploration noise to `u`.
pub fn inject_pe_noise(
    u: &DVector<f64>,
    schedule: &PeSchedule,
    step_index: usize,
    epoch: usize,
    seed: u64,
) -> DVector<f64> {
    PeGenerator::new(*schedule, u.len(), seed).inject(u, step_index, epoch)
}
