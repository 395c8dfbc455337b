// Stationary mean of the Darken model: junction dip, bond currents and the
// uphill window near the interface.

use glsteady::model::{ModelParams, QuadraticModel};
use glsteady::solver::{self, GaussianSteadyState};

pub fn run_example() -> glsteady::Result<()> {
    let n = 6;
    let model = QuadraticModel::darken(n, ModelParams::new(1.0, 1.0, -1.0, 0.5))?;
    let state = GaussianSteadyState::solve(&model, 1e-12)?;
    println!("solved {} sites in {} sweeps, residual {:.1e}", model.len(), state.iterations(), state.residual());

    println!("{:>4} {:>10} {:>10}", "x1", "m", "tilt");
    for (x1, m) in solver::axis_profile(model.domain(), state.mean()) {
        let tilt = model.tilt()[model.domain().index_of(model.domain().axis_site(x1)).unwrap()];
        println!("{x1:>4} {m:>10.5} {tilt:>10.5}");
    }

    let per_bond = 2.0 * 0.5 / (4 * n + 1) as f64;
    let max_err = solver::bond_currents(&state)
        .iter()
        .map(|c| {
            let expect = if c.direction()[0] != 0 { per_bond } else { 0.0 };
            (c.value - expect).abs()
        })
        .fold(0.0, f64::max);
    println!("largest deviation of a bond current from the tilt drop: {max_err:.2e}");

    let w = solver::uphill_window(&state)?;
    if let (Some(a), Some(b)) = (w.start, w.end) {
        println!("uphill window x1 in [{a}, {b}] against a current of {per_bond:.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
