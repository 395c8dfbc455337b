// Infinite-volume junction profile against its random-walk series.

use glsteady::junction;

pub fn run_example() -> glsteady::Result<()> {
    for j in [1.0 / 6.0, 1.0, 4.0] {
        let layer = junction::junction_profile(j, -1.0)?;
        println!("J={j:.4}: gamma={:.6} m(0)={:.6}", layer.gamma, layer.m0);
    }

    let (j, h, n_max) = (1.0 / 6.0, -1.0, 60);
    let layer = junction::junction_profile(j, h)?;
    println!("{:>4} {:>12} {:>12}", "x1", "matched", "series");
    for x1 in -5..=5 {
        let s = junction::junction_series_oracle(j, h, x1, n_max)?;
        println!("{x1:>4} {:>12.8} {s:>12.8}", layer.value(x1));
    }
    println!("series truncation bound {:.2e}", junction::series_truncation_bound(j, h, n_max));
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
