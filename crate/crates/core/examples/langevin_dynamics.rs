// Boundary-driven Langevin dynamics on a small Darken box compared with the
// exact stationary mean and currents.

use glsteady::dynamics::{self, Integrator, SimulationConfig};
use glsteady::model::{ModelParams, QuadraticModel};
use glsteady::solver::GaussianSteadyState;

pub fn run_example() -> glsteady::Result<()> {
    let model = QuadraticModel::darken(1, ModelParams::new(1.0, 1.0, -1.0, 1.0))?;
    let state = GaussianSteadyState::solve(&model, 1e-13)?;

    let drift = dynamics::build_drift(&model)?;
    let gibbs = dynamics::diffusion_covariance(model.form(), 1.0)?;
    println!("mean equation residual {:.1e}", dynamics::mean_residual(&drift, state.mean().values()));
    println!("Lyapunov residual of (beta(D-A))^-1 {:.1e}", dynamics::lyapunov_residual(&drift, &gibbs, 1.0));

    let cfg = SimulationConfig {
        dt: 0.05,
        n_steps: 40_000,
        burn_in: 4_000,
        integrator: Integrator::ExactOu,
        ..SimulationConfig::default()
    };
    let trace = dynamics::simulate(&model, &cfg)?;
    for (k, &s) in trace.sites.iter().enumerate().take(4) {
        println!("  m{s}: sim {:.4} +- {:.4}, exact {:.4}", trace.site_mean[k], trace.site_stderr[k], state.mean()[k]);
    }
    let (x, y) = trace.bonds[0];
    let est = dynamics::empirical_current(&trace, x, y)?;
    println!("  current {x}->{y}: sim {:.4} +- {:.4}, exact {:.4}", est.value, est.stderr, state.current(x, y)?.value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
