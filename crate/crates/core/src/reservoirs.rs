//! Random walks on the channel domain and the harmonic profile `lambda*`.
//!
//! `lambda*(x) = lambda P_x[walk ends up on the left] - lambda P_x[ends up on the right]`
//! is the bounded harmonic function with limits `±lambda` in the two
//! reservoirs. "Ends up" is decided by a far plane at `|x1| = N + R` with
//! `R >= M^2 + 1`. Walks use the embedded jump chain, which moves to a
//! uniformly chosen available neighbour.
//!
//! Each sample draws from its own ChaCha8 stream: the key is built from the
//! master seed and the start site, the stream number is the sample index.
//! Counts are integers, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Geometry, LatticeDomain, Site, DIRECTIONS};

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Fraction of capped walks above which an estimate is flagged invalid.
pub const MAX_CAPPED_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkState {
    pub position: Site,
    pub time: u64,
}

impl WalkState {
    pub fn new(position: Site) -> Self {
        WalkState { position, time: 0 }
    }
}

/// Monte Carlo probability-type estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Samples that were classified.
    pub n_samples: u64,
    /// Samples stopped by the step cap, excluded from `n_samples`.
    pub capped: u64,
}

impl MCEstimate {
    fn proportion(hits: u64, n: u64, capped: u64) -> Self {
        let p = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        MCEstimate {
            value: p,
            stderr: if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() },
            n_samples: n,
            capped,
        }
    }

    pub fn exact(value: f64) -> Self {
        MCEstimate {
            value,
            stderr: 0.0,
            n_samples: 0,
            capped: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let total = self.n_samples + self.capped;
        total == 0 || (self.capped as f64) <= MAX_CAPPED_FRACTION * total as f64
    }
}

/// Default far-plane offset, `max(ceil(M^(2+eps)), M^2 + 1)`.
pub fn default_far_offset(m: i64, eps: f64) -> i64 {
    ((m as f64).powf(2.0 + eps).ceil() as i64).max(m * m + 1)
}

/// One move of the embedded jump chain: a uniformly random neighbour that
/// lies in the domain, drawn by rejection over the six lattice directions.
pub fn walk_step<R: Rng + ?Sized>(domain: &LatticeDomain, state: WalkState, rng: &mut R) -> Result<WalkState> {
    if !domain.contains(state.position) {
        return Err(Error::NotInDomain(state.position));
    }
    Ok(WalkState {
        position: step_unchecked(domain, state.position, rng),
        time: state.time + 1,
    })
}

#[inline]
fn step_unchecked<R: Rng + ?Sized>(domain: &LatticeDomain, s: Site, rng: &mut R) -> Site {
    loop {
        let t = s.shifted(DIRECTIONS[rng.random_range(0..6)]);
        if domain.contains(t) {
            return t;
        }
    }
}

/// Stream for sample `k` of a run started at `site`.
pub fn sample_rng(seed: u64, site: Site, k: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key
        .chunks_exact_mut(8)
        .zip([seed, site.x1 as u64, site.x2 as u64, site.x3 as u64])
    {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(k);
    rng
}

/// Outcome of a stopped walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
    Capped,
}

/// Runs the walk from `start` until `hit` or `miss` holds (checked at the
/// start too), or until `cap` steps.
pub fn run_walk<R: Rng + ?Sized>(
    domain: &LatticeDomain,
    start: Site,
    hit: impl Fn(Site) -> bool,
    miss: impl Fn(Site) -> bool,
    cap: u64,
    rng: &mut R,
) -> (Outcome, u64) {
    let mut s = start;
    for t in 0..=cap {
        if hit(s) {
            return (Outcome::Hit, t);
        }
        if miss(s) {
            return (Outcome::Miss, t);
        }
        if t == cap {
            break;
        }
        s = step_unchecked(domain, s, rng);
    }
    (Outcome::Capped, cap)
}

/// Probability that the walk from `start` meets `hit` before `miss`,
/// estimated from `n_samples` independent walks.
pub fn hitting_probability(
    domain: &LatticeDomain,
    start: Site,
    hit: impl Fn(Site) -> bool + Sync,
    miss: impl Fn(Site) -> bool + Sync,
    n_samples: u64,
    seed: u64,
    cap: u64,
) -> Result<MCEstimate> {
    if !domain.contains(start) {
        return Err(Error::NotInDomain(start));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be > 0"));
    }
    let (hits, misses, capped) = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, start, k);
            match run_walk(domain, start, &hit, &miss, cap, &mut rng).0 {
                Outcome::Hit => (1u64, 0u64, 0u64),
                Outcome::Miss => (0, 1, 0),
                Outcome::Capped => (0, 0, 1),
            }
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(MCEstimate::proportion(hits, hits + misses, capped))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    /// Far-plane offset `R`; classification at `|x1| >= N + R`.
    pub far_offset: i64,
    pub n_samples: u64,
    pub seed: u64,
    pub step_cap: u64,
}

impl ReservoirConfig {
    pub fn for_domain(domain: &LatticeDomain, n_samples: u64, seed: u64) -> Result<Self> {
        let (_, m) = channel_dims(domain)?;
        Ok(ReservoirConfig {
            far_offset: default_far_offset(m, DEFAULT_EPSILON),
            n_samples,
            seed,
            step_cap: DEFAULT_STEP_CAP,
        })
    }
}

fn channel_dims(domain: &LatticeDomain) -> Result<(i64, i64)> {
    match domain.geometry() {
        Geometry::Channel { n, m } => Ok((n, m)),
        _ => Err(Error::WrongGeometry { expected: "channel" }),
    }
}

/// Exit probabilities through the left and right far planes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    pub p_left: MCEstimate,
    pub p_right: MCEstimate,
    pub far_offset: i64,
}

pub fn estimate_absorption(domain: &LatticeDomain, x: Site, cfg: &ReservoirConfig) -> Result<Absorption> {
    let (n, m) = channel_dims(domain)?;
    if cfg.far_offset < m * m + 1 {
        return Err(Error::param(
            "far_offset",
            format!("must be >= M^2 + 1 = {}, got {}", m * m + 1, cfg.far_offset),
        ));
    }
    let plane = n + cfg.far_offset;
    let p_left = hitting_probability(
        domain,
        x,
        |s| s.x1 <= -plane,
        |s| s.x1 >= plane,
        cfg.n_samples,
        cfg.seed,
        cfg.step_cap,
    )?;
    let p_right = MCEstimate {
        value: 1.0 - p_left.value,
        ..p_left
    };
    Ok(Absorption {
        p_left,
        p_right,
        far_offset: cfg.far_offset,
    })
}

/// `lambda (p_left - p_right)`, with standard error `2 |lambda| se(p_left)`.
pub fn estimate_lambda_star(domain: &LatticeDomain, x: Site, lambda: f64, cfg: &ReservoirConfig) -> Result<MCEstimate> {
    let a = estimate_absorption(domain, x, cfg)?;
    Ok(MCEstimate {
        value: lambda * (a.p_left.value - a.p_right.value),
        stderr: 2.0 * lambda.abs() * a.p_left.stderr,
        n_samples: a.p_left.n_samples,
        capped: a.p_left.capped,
    })
}

/// `f(x) - mean of f over the available neighbours of x`, with the
/// standard error of independent estimates.
pub fn harmonicity_residual(
    domain: &LatticeDomain,
    estimator: impl Fn(Site) -> Result<MCEstimate>,
    x: Site,
) -> Result<MCEstimate> {
    let nbs = domain.neighbors(x)?;
    let k = nbs.len() as f64;
    let center = estimator(x)?;
    let mut avg = 0.0;
    let mut var = center.stderr * center.stderr;
    let mut n = center.n_samples;
    for nb in &nbs {
        let e = estimator(nb.site)?;
        avg += e.value / k;
        var += e.stderr * e.stderr / (k * k);
        n += e.n_samples;
    }
    Ok(MCEstimate {
        value: center.value - avg,
        stderr: var.sqrt(),
        n_samples: n,
        capped: 0,
    })
}

/// Probability that a walk started in the right reservoir enters `Σ+`
/// before reaching the plane `x1 = N + truncation`. Walks that would return
/// after crossing that plane are lost, so the value underestimates the
/// untruncated probability.
pub fn hitting_sigma_probability(
    domain: &LatticeDomain,
    x: Site,
    truncation: i64,
    n_samples: u64,
    seed: u64,
    cap: u64,
) -> Result<MCEstimate> {
    let (n, _) = channel_dims(domain)?;
    if x.x1 < n {
        return Err(Error::param("x", format!("start must satisfy x1 >= N, got {x}")));
    }
    if n + truncation <= x.x1 {
        return Err(Error::param("truncation", "truncation plane must lie beyond the start"));
    }
    let plane = n + truncation;
    hitting_probability(
        domain,
        x,
        |s| domain.in_sigma_plus(s),
        |s| s.x1 >= plane,
        n_samples,
        seed,
        cap,
    )
}

/// Reflection through the plane `x1 = N - 1/2`.
pub fn reflect(n: i64, z: Site) -> Site {
    Site::new(2 * n - 1 - z.x1, z.x2, z.x3)
}

/// Maps a free-walk path `z` to `X(t) = z(t)` if `z1(t) >= N`, else its
/// reflection.
pub fn reflected_walk(domain: &LatticeDomain, z: &[Site]) -> Result<Vec<Site>> {
    let (n, _) = channel_dims(domain)?;
    Ok(z.iter().map(|&s| if s.x1 >= n { s } else { reflect(n, s) }).collect())
}

/// Drops consecutive repeats, leaving the sequence of distinct jumps.
pub fn collapse_path(path: &[Site]) -> Vec<Site> {
    let mut out: Vec<Site> = Vec::with_capacity(path.len());
    for &s in path {
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}
