//! Critic: approximates the value gradient `V_e` as `W_c z_c` and is trained
//! by gradient descent on half the squared Hamiltonian residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::hjb::{utility, CostConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub features: FeatureMap,
    /// Decoder, `c x n_c`. Starts at zero so the initial greedy control is zero.
    pub wc: DMatrix<f64>,
    pub alpha_c: f64,
}

impl CriticNet {
    pub fn new(kind: FeatureKind, c: usize, n_c: usize, alpha_c: f64, seed: u64) -> Result<Self> {
        let features = FeatureMap::new(kind, c, n_c, seed)?;
        let wc = DMatrix::zeros(c, features.dim());
        Ok(Self { features, wc, alpha_c })
    }

    pub fn reset(&mut self) {
        self.features.reset();
    }

    /// Steps the feature map with `e` and returns `(z_c, V_e_hat)`.
    pub fn forward(&mut self, e: &DVector<f64>, dt: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let z_c = self.features.forward(e, dt)?;
        let v_hat = &self.wc * &z_c;
        Ok((z_c, v_hat))
    }

    /// Applies one Euler step of the critic tuning law and returns the
    /// increment that was added to `W_c`.
    pub fn update(&mut self, z_c: &DVector<f64>, e_dot: &DVector<f64>, e_c: f64, dt: f64) -> Result<DMatrix<f64>> {
        let delta = critic_step(z_c, e_dot, e_c, self.alpha_c, dt)?;
        check_dim("critic decoder rows", self.wc.nrows(), delta.nrows())?;
        check_dim("critic decoder columns", self.wc.ncols(), delta.ncols())?;
        let next = &self.wc + &delta;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "critic weights",
                step: 0,
            });
        }
        self.wc = next;
        Ok(delta)
    }
}

/// Hamiltonian residual with the critic's estimate of `V_e`:
/// `eta e^T e + u^T R u + (W_c z_c)^T e_dot`.
pub fn bellman_residual(
    e: &DVector<f64>,
    u: &DVector<f64>,
    z_c: &DVector<f64>,
    wc: &DMatrix<f64>,
    e_dot: &DVector<f64>,
    cfg: &CostConfig,
) -> Result<f64> {
    check_dim("critic features", wc.ncols(), z_c.len())?;
    check_dim("error derivative", wc.nrows(), e_dot.len())?;
    Ok(utility(e, u, cfg)? + (wc * z_c).dot(e_dot))
}

/// `-dt * alpha_c * e_c * e_dot z_c^T`, the negative scaled gradient of
/// `E_c = e_c^2 / 2` with respect to `W_c`.
pub fn critic_step(z_c: &DVector<f64>, e_dot: &DVector<f64>, e_c: f64, alpha_c: f64, dt: f64) -> Result<DMatrix<f64>> {
    let delta = e_dot * z_c.transpose() * (-dt * alpha_c * e_c);
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "critic update",
            step: 0,
        });
    }
    Ok(delta)
}

/// Functional form: returns the updated decoder.
pub fn critic_update(
    wc: &DMatrix<f64>,
    z_c: &DVector<f64>,
    e_dot: &DVector<f64>,
    e_c: f64,
    alpha_c: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    Ok(wc + critic_step(z_c, e_dot, e_c, alpha_c, dt)?)
}
