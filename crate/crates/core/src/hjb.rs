//! Running cost, Hamiltonian, stationary control and HJB residual for the
//! control-affine error system `de/dt = f + g u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Weights of the running cost `eta * |e|^2 + u^T R u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub eta: f64,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    /// Pattern horizon in time units (series length times dt). Informational.
    pub horizon: f64,
}

impl CostConfig {
    /// `R` must be symmetric positive definite. `eta` only needs to be
    /// positive here; `eta > 1` is enforced by the hyper-parameter gate.
    pub fn new(eta: f64, r: DMatrix<f64>) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument {
                name: "eta",
                reason: format!("error weight must be positive, got {eta}"),
            });
        }
        check_dim("R columns", r.nrows(), r.ncols())?;
        let asym = (&r - r.transpose()).amax();
        if asym > 1e-12 * r.amax().max(1.0) {
            return Err(Error::InvalidArgument {
                name: "R",
                reason: "control weight must be symmetric".into(),
            });
        }
        let chol = r.clone().cholesky().ok_or_else(|| Error::InvalidArgument {
            name: "R",
            reason: "control weight must be positive definite".into(),
        })?;
        let r_inv = chol.inverse();
        Ok(Self {
            eta,
            r,
            r_inv,
            horizon: 0.0,
        })
    }

    /// `R = r I` over `n` controls.
    pub fn scalar(eta: f64, r: f64, n: usize) -> Result<Self> {
        Self::new(eta, DMatrix::from_diagonal_element(n, n, r))
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn n_controls(&self) -> usize {
        self.r.nrows()
    }

    /// Spectral norm of `R^-1` (largest eigenvalue, since it is SPD).
    pub fn r_inv_norm(&self) -> f64 {
        self.r_inv
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0, |m, &x| f64::max(m, x.abs()))
    }
}

/// `eta * e^T e + u^T R u`.
pub fn utility(e: &DVector<f64>, u: &DVector<f64>, cfg: &CostConfig) -> Result<f64> {
    check_dim("control vector", cfg.n_controls(), u.len())?;
    Ok(cfg.eta * e.norm_squared() + u.dot(&(cfg.r() * u)))
}

/// `utility(e, u) + V_e^T e_dot`.
pub fn hamiltonian(
    e: &DVector<f64>,
    u: &DVector<f64>,
    v_e: &DVector<f64>,
    e_dot: &DVector<f64>,
    cfg: &CostConfig,
) -> Result<f64> {
    check_dim("value gradient", e.len(), v_e.len())?;
    check_dim("error derivative", e.len(), e_dot.len())?;
    Ok(utility(e, u, cfg)? + v_e.dot(e_dot))
}

/// Stationary point of the Hamiltonian in `u`: `-1/2 R^-1 g^T V_e`.
pub fn optimal_control(v_e: &DVector<f64>, g_mat: &DMatrix<f64>, cfg: &CostConfig) -> Result<DVector<f64>> {
    check_dim("value gradient", g_mat.nrows(), v_e.len())?;
    check_dim("input matrix columns", cfg.n_controls(), g_mat.ncols())?;
    Ok(cfg.r_inv() * (g_mat.transpose() * v_e) * -0.5)
}

/// `eta e^T e + V_e^T f - 1/4 V_e^T g R^-1 g^T V_e`.
pub fn hjb_residual(
    e: &DVector<f64>,
    v_e: &DVector<f64>,
    f_val: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    cfg: &CostConfig,
) -> Result<f64> {
    check_dim("value gradient", e.len(), v_e.len())?;
    check_dim("drift", e.len(), f_val.len())?;
    check_dim("input matrix rows", e.len(), g_mat.nrows())?;
    check_dim("input matrix columns", cfg.n_controls(), g_mat.ncols())?;
    let gt_ve = g_mat.transpose() * v_e;
    let quad = gt_ve.dot(&(cfg.r_inv() * &gt_ve));
    Ok(cfg.eta * e.norm_squared() + v_e.dot(f_val) - 0.25 * quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn utility_cases() {
        let cfg = CostConfig::scalar(2.0, 1.0, 1).unwrap();
        assert_eq!(utility(&vec(&[0.0, 0.0]), &vec(&[0.0]), &cfg).unwrap(), 0.0);
        assert_eq!(utility(&vec(&[1.0, 0.0]), &vec(&[0.0]), &cfg).unwrap(), 2.0);
        let cfg = CostConfig::scalar(1.0, 2.0, 1).unwrap();
        assert_eq!(utility(&vec(&[1.0, 1.0]), &vec(&[1.0]), &cfg).unwrap(), 4.0);
        assert!(utility(&vec(&[1.0]), &vec(&[1.0, 2.0]), &cfg).is_err());
    }

    #[test]
    fn cost_config_validation() {
        assert!(CostConfig::scalar(0.0, 1.0, 2).is_err());
        assert!(CostConfig::scalar(2.0, -1.0, 2).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostConfig::new(2.0, asym).is_err());
        let cfg = CostConfig::scalar(2.0, 4.0, 3).unwrap();
        assert!((cfg.r_inv_norm() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_cases() {
        let cfg = CostConfig::scalar(2.0, 1.0, 1).unwrap();
        let h = hamiltonian(
            &vec(&[0.0, 0.0]),
            &vec(&[0.0]),
            &vec(&[1.0, 0.0]),
            &vec(&[0.0, 3.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(h, 0.0);
        // utility = 2 * 1 + 1 * 1 = 3; V_e . e_dot = -3
        let h = hamiltonian(
            &vec(&[1.0, 0.0]),
            &vec(&[1.0]),
            &vec(&[1.0, 1.0]),
            &vec(&[-1.0, -2.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn optimal_control_cases() {
        let cfg = CostConfig::scalar(2.0, 1.0, 2).unwrap();
        let g = DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(
            optimal_control(&DVector::zeros(2), &g, &cfg).unwrap(),
            DVector::zeros(2)
        );
        assert_eq!(
            optimal_control(&vec(&[1.0, 2.0]), &DMatrix::zeros(2, 2), &cfg).unwrap(),
            DVector::zeros(2)
        );
        let v_e = vec(&[1.0, -3.0]);
        assert_eq!(
            optimal_control(&v_e, &DMatrix::identity(2, 2), &cfg).unwrap(),
            &v_e * -0.5
        );
    }

    #[test]
    fn hjb_residual_cases() {
        let cfg = CostConfig::scalar(2.0, 1.0, 1).unwrap();
        let g = DMatrix::from_element(2, 1, 0.3);
        let zero = DVector::zeros(2);
        assert_eq!(hjb_residual(&zero, &zero, &zero, &g, &cfg).unwrap(), 0.0);
        let e = vec(&[0.5, -1.0]);
        let r = hjb_residual(&e, &zero, &vec(&[4.0, 1.0]), &g, &cfg).unwrap();
        assert_eq!(r, 2.0 * e.norm_squared());
    }

    /// Scalar plant de/dt = a e + b u with V = P e^2: the residual vanishes
    /// when P solves 2 a P - (b^2 / r) P^2 + eta = 0.
    #[test]
    fn scalar_riccati_zeroes_residual() {
        for &(a, b, r, eta) in &[
            (-1.0f64, 1.0f64, 1.0f64, 2.0f64),
            (0.0, 1.0, 1.0, 1.0),
            (0.5, 2.0, 3.0, 5.0),
        ] {
            let k = b * b / r;
            let p = (2.0 * a + ((2.0 * a) * (2.0 * a) + 4.0 * k * eta).sqrt()) / (2.0 * k);
            let cfg = CostConfig::scalar(eta, r, 1).unwrap();
            for &e0 in &[-1.3, 0.2, 2.0] {
                let e = vec(&[e0]);
                let v_e = vec(&[2.0 * p * e0]);
                let g = DMatrix::from_element(1, 1, b);
                let res = hjb_residual(&e, &v_e, &vec(&[a * e0]), &g, &cfg).unwrap();
                assert!(res.abs() < 1e-10, "residual {res}");

                let u = optimal_control(&v_e, &g, &cfg).unwrap();
                let e_dot = vec(&[a * e0 + b * u[0]]);
                let h = hamiltonian(&e, &u, &v_e, &e_dot, &cfg).unwrap();
                assert!(h.abs() < 1e-3);
            }
        }
    }

    #[test]
    fn residual_equals_hamiltonian_at_stationary_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let c = rng.random_range(1..5);
            let n = rng.random_range(1..6);
            let cfg = CostConfig::new(rng.random_range(1.0..5.0), random_spd(n, &mut rng)).unwrap();
            let e = DVector::from_fn(c, |_, _| rng.random_range(-2.0..2.0));
            let v_e = DVector::from_fn(c, |_, _| rng.random_range(-2.0..2.0));
            let f = DVector::from_fn(c, |_, _| rng.random_range(-2.0..2.0));
            let g = DMatrix::from_fn(c, n, |_, _| rng.random_range(-2.0..2.0));
            let u = optimal_control(&v_e, &g, &cfg).unwrap();
            let h = hamiltonian(&e, &u, &v_e, &(&f + &g * &u), &cfg).unwrap();
            let res = hjb_residual(&e, &v_e, &f, &g, &cfg).unwrap();
            assert!((h - res).abs() <= 1e-10 * h.abs().max(1.0));
        }
    }
}
