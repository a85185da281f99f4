//! The error system of a small reservoir at one state: drift, lifted input
//! matrix, the stationary control for a value gradient, and how the
//! Hamiltonian grows away from it.
//!
//!     cargo run --release --example lifting_and_hjb

use hjbr::hjb::{hamiltonian, hjb_residual, optimal_control, CostConfig};
use hjbr::reservoir::{ReservoirSpec, ReservoirState};
use hjbr::tracking::build_affine_eval;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ReservoirSpec {
        n_r: 6,
        n_in: 1,
        n_classes: 2,
        n_plastic: 4,
        seed: 3,
        ..Default::default()
    };
    let mut model = spec.build()?;
    model.decoder = DMatrix::from_fn(2, 6, |i, j| ((i * 6 + j) as f64 * 0.7).sin());
    let state = ReservoirState {
        v: DVector::from_fn(6, |i, _| (i as f64 - 2.5) * 0.3),
    };
    let x = DVector::from_element(1, 0.4);
    let y_ref = DVector::from_vec(vec![1.0, 0.0]);
    let eval = build_affine_eval(&model, &state, &x, &y_ref)?;

    println!("plastic entries (row, col): {:?}", model.plastic.entries());
    println!("e = {:.4?}", eval.e.as_slice());
    println!("f = {:.4?}", eval.f_val.as_slice());
    for (r, row) in eval.g_mat.row_iter().enumerate() {
        println!("g[{r}] = {:.4?}", row.iter().collect::<Vec<_>>());
    }

    let cost = CostConfig::scalar(2.0, 0.5, model.n_plastic())?;
    let v_e = &eval.e * 2.0;
    let u_star = optimal_control(&v_e, &eval.g_mat, &cost)?;
    let h =
        |u: &DVector<f64>| -> hjbr::Result<f64> { hamiltonian(&eval.e, u, &v_e, &eval.error_derivative(u)?, &cost) };
    println!("u* = {:.4?}", u_star.as_slice());
    println!("H(u*) = {:.6}", h(&u_star)?);
    println!(
        "HJB residual with V_e = 2e: {:.6}",
        hjb_residual(&eval.e, &v_e, &eval.f_val, &eval.g_mat, &cost)?
    );
    for scale in [1e-3, 1e-2, 1e-1, 1.0] {
        let du = DVector::from_fn(u_star.len(), |i, _| if i % 2 == 0 { scale } else { -scale });
        println!("H(u* + {scale:e}) - H(u*) = {:.3e}", h(&(&u_star + du))? - h(&u_star)?);
    }
    Ok(())
}
