//! Actor: approximates the stationary control `u = W_a z_a` and writes it
//! into the plastic entries of the recurrent matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::hjb::CostConfig;
use crate::reservoir::ReservoirModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    pub features: FeatureMap,
    /// Decoder, `N x n_a`. Zero together with zero plastic weights, so the
    /// pretrained operating point is preserved at the first write-back.
    pub wa: DMatrix<f64>,
    pub alpha_a: f64,
}

impl ActorNet {
    pub fn new(kind: FeatureKind, c: usize, n_controls: usize, n_a: usize, alpha_a: f64, seed: u64) -> Result<Self> {
        let features = FeatureMap::new(kind, c, n_a, seed)?;
        let wa = DMatrix::zeros(n_controls, features.dim());
        Ok(Self { features, wa, alpha_a })
    }

    pub fn reset(&mut self) {
        self.features.reset();
    }

    pub fn n_controls(&self) -> usize {
        self.wa.nrows()
    }

    /// Steps the feature map with `e` and returns `(z_a, u_hat)`.
    pub fn forward(&mut self, e: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let z_a = self.features.forward(e, dt)?;
        let u_hat = &self.wa * &z_a;
        Ok((z_a, u_hat))
    }

    pub fn update(&mut self, z_a: &DVector<f64>, e_a: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>> {
        check_dim("actor error", self.wa.nrows(), e_a.len())?;
        check_dim("actor features", self.wa.ncols(), z_a.len())?;
        let delta = actor_step(z_a, e_a, self.alpha_a, dt)?;
        let next = &self.wa + &delta;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "actor weights",
                step: 0,
            });
        }
        self.wa = next;
        Ok(delta)
    }
}

/// `u_hat + 1/2 R^-1 g^T (W_c z_c)`: the actor output minus the control the
/// critic currently regards as stationary.
pub fn actor_error(
    u_hat: &DVector<f64>,
    z_c: &DVector<f64>,
    wc: &DMatrix<f64>,
    g_mat: &DMatrix<f64>,
    cfg: &CostConfig,
) -> Result<DVector<f64>> {
    check_dim("critic features", wc.ncols(), z_c.len())?;
    check_dim("input matrix rows", wc.nrows(), g_mat.nrows())?;
    check_dim("actor output", g_mat.ncols(), u_hat.len())?;
    check_dim("control weight", cfg.n_controls(), u_hat.len())?;
    let v_hat = wc * z_c;
    Ok(u_hat + cfg.r_inv() * (g_mat.transpose() * v_hat) * 0.5)
}

/// `-dt * alpha_a * e_a z_a^T`.
pub fn actor_step(z_a: &DVector<f64>, e_a: &DVector<f64>, alpha_a: f64, dt: f64) -> Result<DMatrix<f64>> {
    let delta = e_a * z_a.transpose() * (-dt * alpha_a);
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "actor update",
            step: 0,
        });
    }
    Ok(delta)
}

pub fn actor_update(
    wa: &DMatrix<f64>,
    z_a: &DVector<f64>,
    e_a: &DVector<f64>,
    alpha_a: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    Ok(wa + actor_step(z_a, e_a, alpha_a, dt)?)
}

/// Clamps every entry into `[-u_max, u_max]`.
pub fn clamp_control(u: &DVector<f64>, u_max: f64) -> DVector<f64> {
    u.map(|x| x.clamp(-u_max, u_max))
}

/// Writes `u[k]` into `W_r` at the `k`-th plastic position, in place.
pub fn write_control(model: &mut ReservoirModel, u: &DVector<f64>) -> Result<()> {
    check_dim("control vector", model.n_plastic(), u.len())?;
    for (k, (i, j)) in model.plastic.clone().iter().enumerate() {
        model.w_rec[(i, j)] = u[k];
    }
    Ok(())
}

/// Returns a copy of `model` with `u` written into its plastic entries.
pub fn apply_control(model: &ReservoirModel, u: &DVector<f64>) -> Result<ReservoirModel> {
    let mut out = model.clone();
    write_control(&mut out, u)?;
    Ok(out)
}
