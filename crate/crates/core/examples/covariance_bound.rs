// Covariance rows from the Green-function series, checked against a dense
// inverse and the row-sum bound.

use glsteady::model::{ModelParams, QuadraticModel};
use glsteady::solver::{dense, GaussianSteadyState};

pub fn run_example() -> glsteady::Result<()> {
    let beta = 2.0;
    let model = QuadraticModel::darken(2, ModelParams::new(0.5, beta, -1.0, 1.0))?;
    let state = GaussianSteadyState::solve(&model, 1e-13)?;
    let exact = dense::covariance(model.form(), beta)?;
    let d = model.domain();

    let mut worst_sum: f64 = 0.0;
    let mut worst_err: f64 = 0.0;
    for (i, x) in d.core_sites().enumerate() {
        let row = state.covariance_row(x, 1e-15)?;
        worst_sum = worst_sum.max(row.values().iter().sum());
        for k in 0..d.core_len() {
            worst_err = worst_err.max((row[k] - exact[(i, k)]).abs());
        }
    }
    println!("max row sum {worst_sum:.6} (bound {:.6})", 1.0 / (2.0 * beta));
    println!("max deviation from dense inverse {worst_err:.2e}");

    let x = d.axis_site(0);
    for y1 in 0..4 {
        println!("  C((0,0,0), ({y1},0,0)) = {:.6}", state.covariance_entry(x, d.axis_site(y1), 1e-15)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
