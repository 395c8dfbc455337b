use glsteady::lattice::{LatticeDomain, Site};
use glsteady::reservoirs::{self, default_far_offset, walk_step, ReservoirConfig, WalkState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TRUNC: i64 = 6;
const JUMP_CAP: u64 = 5_000;

/// Jumps until `Σ+` (Some) or the truncation plane / cap (None).
fn constrained_jumps(d: &LatticeDomain, n: i64, start: Site, rng: &mut ChaCha8Rng) -> Option<u64> {
    let mut st = WalkState::new(start);
    for k in 0..JUMP_CAP {
        if d.in_sigma_plus(st.position) {
            return Some(k);
        }
        if st.position.x1 >= n + TRUNC {
            return None;
        }
        st = walk_step(d, st, rng).unwrap();
    }
    None
}

fn reflected_jumps(d: &LatticeDomain, free: &LatticeDomain, n: i64, start: Site, rng: &mut ChaCha8Rng) -> Option<u64> {
    let mut z = vec![start];
    let mut st = WalkState::new(start);
    for _ in 0..6 * JUMP_CAP {
        st = walk_step(free, st, rng).unwrap();
        z.push(st.position);
        let x = *reservoirs::reflected_walk(d, &z[z.len() - 1..]).unwrap().last().unwrap();
        if d.in_sigma_plus(x) || x.x1 >= n + TRUNC {
            break;
        }
    }
    let x = reservoirs::reflected_walk(d, &z).unwrap();
    assert!(x.iter().all(|s| s.x1 >= n));
    let path = reservoirs::collapse_path(&x);
    let last = *path.last().unwrap();
    d.in_sigma_plus(last).then(|| path.len() as u64 - 1)
}

fn bin(j: Option<u64>) -> usize {
    const EDGES: [u64; 11] = [1, 2, 3, 4, 5, 7, 10, 15, 25, 50, 120];
    match j {
        None => EDGES.len() + 1,
        Some(k) => EDGES.iter().position(|&e| k <= e).unwrap_or(EDGES.len()),
    }
}

#[test]
fn reflected_free_walk_matches_constrained_walk() {
    let n = 4;
    let d = LatticeDomain::channel(n, 1).unwrap();
    let free = LatticeDomain::full_space();
    let start = Site::new(n + 2, 2, 0);
    let samples = 20_000;
    let mut a = vec![0u64; 13];
    let mut b = vec![0u64; 13];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..samples {
        a[bin(constrained_jumps(&d, n, start, &mut rng))] += 1;
        b[bin(reflected_jumps(&d, &free, n, start, &mut rng))] += 1;
    }
    let mut chi2 = 0.0;
    let mut df = 0.0;
    for (x, y) in a.iter().zip(&b) {
        if x + y > 0 {
            chi2 += (*x as f64 - *y as f64).powi(2) / (*x + *y) as f64;
            df += 1.0;
        }
    }
    let p = 1.0 - ChiSquared::new(df - 1.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} df {} p {p}\n{a:?}\n{b:?}", df - 1.0);
}

#[test]
fn reflection_leaves_right_half_path_unchanged() {
    let d = LatticeDomain::channel(4, 1).unwrap();
    let z: Vec<Site> = (0..5).map(|k| Site::new(5 + k, k, -k)).collect();
    assert_eq!(reservoirs::reflected_walk(&d, &z).unwrap(), z);
}

/// Dirichlet problem on the box `|x|∞ < r`: 1 on `targets`, 0 outside.
fn truncated_hitting_oracle(targets: &[Site], r: i64, x: Site) -> f64 {
    let w = (2 * r + 1) as usize;
    let idx = |s: Site| ((s.x1 + r) as usize * w + (s.x2 + r) as usize) * w + (s.x3 + r) as usize;
    let inside = |s: Site| s.x1.abs() < r && s.x2.abs() < r && s.x3.abs() < r;
    let mut u = vec![0.0; w * w * w];
    for &t in targets {
        u[idx(t)] = 1.0;
    }
    loop {
        let mut change: f64 = 0.0;
        for x1 in -r + 1..r {
            for x2 in -r + 1..r {
                for x3 in -r + 1..r {
                    let s = Site::new(x1, x2, x3);
                    if targets.contains(&s) {
                        continue;
                    }
                    let avg: f64 = s
                        .lattice_neighbors()
                        .iter()
                        .map(|&y| if inside(y) { u[idx(y)] } else { 0.0 })
                        .sum::<f64>()
                        / 6.0;
                    change = change.max((avg - u[idx(s)]).abs());
                    u[idx(s)] = avg;
                }
            }
        }
        if change < 1e-15 {
            return u[idx(x)];
        }
    }
}

#[test]
fn two_site_hitting_matches_green_oracle() {
    let free = LatticeDomain::full_space();
    let targets = [Site::new(0, 0, 0), Site::new(1, 0, 0)];
    let r = 5;
    for (start, seed) in [(Site::new(3, 1, 0), 1), (Site::new(-2, 2, 1), 2)] {
        let exact = truncated_hitting_oracle(&targets, r, start);
        let est = reservoirs::hitting_probability(
            &free,
            start,
            |s| targets.contains(&s),
            |s| s.x1.abs() >= r || s.x2.abs() >= r || s.x3.abs() >= r,
            40_000,
            seed,
            1_000_000,
        )
        .unwrap();
        assert!(
            (est.value - exact).abs() < 4.0 * est.stderr,
            "start {start}: mc {} ± {} exact {exact}",
            est.value,
            est.stderr
        );
    }
}

#[test]
fn lambda_star_is_harmonic_in_channel() {
    let d = LatticeDomain::channel(8, 2).unwrap();
    let cfg = ReservoirConfig::for_domain(&d, 100_000, 9).unwrap();
    for x in [Site::new(3, 0, 0), Site::new(-5, 1, -2)] {
        let r = reservoirs::harmonicity_residual(&d, |s| reservoirs::estimate_lambda_star(&d, s, 1.0, &cfg), x).unwrap();
        assert!(r.value.abs() < 3.0 * r.stderr, "{x}: {} ± {}", r.value, r.stderr);
    }
}

#[test]
fn channel_absorption_near_tilt_sign() {
    let d = LatticeDomain::channel(8, 2).unwrap();
    let cfg = ReservoirConfig::for_domain(&d, 20_000, 3).unwrap();
    let a = reservoirs::estimate_absorption(&d, Site::new(4, 0, 0), &cfg).unwrap();
    assert!(a.p_right.value > a.p_left.value);
    let e = reservoirs::estimate_lambda_star(&d, Site::new(4, 0, 0), 1.0, &cfg).unwrap();
    assert!((e.value - (-0.5)).abs() < 0.25, "{}", e.value);
    let far = reservoirs::estimate_lambda_star(&d, Site::new(-8 - cfg.far_offset, 0, 0), 1.0, &cfg).unwrap();
    assert_eq!(far.value, 1.0);
}

#[test]
fn sigma_hitting_shrinks_with_scale() {
    let mut prev: Option<(f64, f64)> = None;
    for n in [4_i64, 8, 16] {
        let m = ((n as f64).powf(0.4).floor() as i64).max(1);
        let d = LatticeDomain::channel(n, m).unwrap();
        let off = default_far_offset(m, 0.1);
        let x = Site::new(n + off, 0, 0);
        let p = reservoirs::hitting_sigma_probability(&d, x, 4 * off + 4, 20_000, 17, 10_000_000).unwrap();
        if let Some((v, se)) = prev {
            assert!(p.value <= v + 3.0 * (se * se + p.stderr * p.stderr).sqrt(), "N={n}: {} after {v}", p.value);
        }
        prev = Some((p.value, p.stderr));
    }
}
