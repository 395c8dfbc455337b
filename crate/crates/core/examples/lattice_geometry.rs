// Site counts, degrees and reservoir contacts of the two geometries.

use glsteady::lattice::{LatticeDomain, Region, Site};

pub fn run_example() -> glsteady::Result<()> {
    let darken = LatticeDomain::darken(2)?;
    println!("darken N=2: {} core sites, {} bonds", darken.core_len(), darken.bonds().len());
    for s in [Site::new(-4, -2, -2), Site::new(0, 0, 0), Site::new(3, 1, 1)] {
        let nbs = darken.neighbors(s)?;
        let left = nbs.iter().filter(|n| n.region == Region::LeftReservoir).count();
        let right = nbs.iter().filter(|n| n.region == Region::RightReservoir).count();
        println!("  {s}: degree {} core-degree {} reservoir contacts ({left}, {right})", nbs.len(), darken.core_degree(s)?);
    }

    let channel = LatticeDomain::channel(4, 1)?;
    println!("channel N=4 M=1: {} core sites", channel.core_len());
    println!("  sigma+ has {} sites, mouth of the right reservoir", channel.sigma(true)?.len());
    let probe = Site::new(4, 3, 0);
    println!("  {probe} lies in {:?}", channel.region(probe));
    if let Some(w) = channel.scale_warning() {
        println!("  warning: {w}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> glsteady::Result<()> {
    run_example()
}
