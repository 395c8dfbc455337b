// Bulk slope, section current and macroscopic profile as the box grows.

use glsteady::cli::fick_row;
use glsteady::junction;
use glsteady::model::ModelParams;

pub fn run_example() -> glsteady::Result<()> {
    let params = ModelParams::new(1.0, 1.0, -1.0, 1.0);
    println!("target N*slope {:.3}, target N*current {:.3}", junction::macroscopic_slope(1.0), junction::macroscopic_current(1.0));
    println!("{:>4} {:>10} {:>10} {:>10} {:>10}", "N", "N*slope", "N*current", "macro err", "fick res");
    for n in [2, 4, 8] {
        let r = fick_row(n, params, 1e-12)?;
        println!(
            "{n:>4} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            r.n_slope, r.n_site_current, r.macro_error, r.fick_residual
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
