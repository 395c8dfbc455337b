// Monte Carlo estimate of the harmonic profile on a thin channel between two
// reservoirs.

use glsteady::lattice::LatticeDomain;
use glsteady::model::channel_tilt;
use glsteady::reservoirs::{self, ReservoirConfig};

pub fn run_example() -> glsteady::Result<()> {
    let (n, lambda) = (4, 1.0);
    let domain = LatticeDomain::channel(n, 1)?;
    let cfg = ReservoirConfig::for_domain(&domain, 4_000, 7)?;
    println!("channel N={n} M=1, far plane at |x1| = {}", n + cfg.far_offset);
    println!("{:>4} {:>9} {:>9} {:>9}", "x1", "estimate", "stderr", "tilt");
    for x1 in -(n - 1)..n {
        let e = reservoirs::estimate_lambda_star(&domain, domain.axis_site(x1), lambda, &cfg)?;
        println!("{x1:>4} {:>9.4} {:>9.4} {:>9.4}", e.value, e.stderr, channel_tilt(n, lambda, x1));
    }

    let x = domain.axis_site(1);
    let r = reservoirs::harmonicity_residual(&domain, |s| reservoirs::estimate_lambda_star(&domain, s, lambda, &cfg), x)?;
    println!("harmonicity residual at {x}: {:.4} +- {:.4}", r.value, r.stderr);
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
