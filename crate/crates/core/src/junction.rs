//! Infinite-volume junction layer and macroscopic profile.
//!
//! With `lambda = 0` and the field `h < 0` on the half-space `x1 < 0`, the
//! infinite-volume mean depends on `x1` only and solves
//!
//! ```text
//! m(x) = w (2/3 m(x) + 1/6 m(x-1) + 1/6 m(x+1)) - |h|/(1+6J) 1[x<0],  w = 6J/(1+6J)
//! ```
//!
//! Away from the junction the solution is a pure exponential with rate
//! `gamma`, the positive root of `w (2 + cosh gamma) = 3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_j(j: f64) -> Result<()> {
    if !(j.is_finite() && j > 0.0) {
        return Err(Error::param("J", format!("must be finite and > 0, got {j}")));
    }
    Ok(())
}

fn omega(j: f64) -> f64 {
    6.0 * j / (1.0 + 6.0 * j)
}

/// Target value of `cosh gamma`, i.e. `3 / w - 2`.
pub fn cosh_gamma(j: f64) -> f64 {
    3.0 * (1.0 + 6.0 * j) / (6.0 * j) - 2.0
}

/// Decay rate of the junction layer, by bisection on `w (2 + cosh g) - 3`.
pub fn solve_gamma(j: f64) -> Result<f64> {
    check_j(j)?;
    let w = omega(j);
    let f = |g: f64| w * (2.0 + g.cosh()) - 3.0;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    while hi - lo > 1e-14 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The infinite-volume profile near the junction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionLayer {
    pub j: f64,
    pub h: f64,
    pub gamma: f64,
    /// Value at `x1 = 0`.
    pub m0: f64,
    /// Amplitude of the left branch: `m(x) = -|h| + left_amp e^{-gamma(|x|-1)}` for `x < 0`.
    pub left_amp: f64,
}

impl JunctionLayer {
    pub fn value(&self, x1: i64) -> f64 {
        if x1 >= 0 {
            self.m0 * (-self.gamma * x1 as f64).exp()
        } else {
            -self.h.abs() + self.left_amp * (-self.gamma * (x1.unsigned_abs() as f64 - 1.0)).exp()
        }
    }

    /// Left side minus right side of the one-dimensional recursion at `x1`.
    pub fn recursion_residual(&self, x1: i64) -> f64 {
        let w = omega(self.j);
        let src = if x1 < 0 { self.h.abs() / (1.0 + 6.0 * self.j) } else { 0.0 };
        let rhs = w
            * (2.0 / 3.0 * self.value(x1)
                + (self.value(x1 - 1) + self.value(x1 + 1)) / 6.0)
            - src;
        self.value(x1) - rhs
    }
}

/// Junction profile from the two exponential branches, matched by imposing
/// the recursion at `x1 = 0` and `x1 = -1`.
pub fn junction_profile(j: f64, h: f64) -> Result<JunctionLayer> {
    check_j(j)?;
    if !(h.is_finite() && h < 0.0) {
        return Err(Error::param("h", format!("must be finite and < 0, got {h}")));
    }
    let gamma = solve_gamma(j)?;
    let w = omega(j);
    let e = (-gamma).exp();
    let a = h.abs();
    let src = a / (1.0 + 6.0 * j);
    // Unknowns (m0, l) with m(0) = m0, m(-1) = -a + l, m(1) = m0 e, m(-2) = -a + l e.
    // x1 = 0:  m0 (1 - 2w/3 - w e/6) - l w/6 = -a w/6
    // x1 = -1: -m0 w/6 + l (1 - 2w/3 - w e/6) = a (1 - 5w/6) - src
    let d = 1.0 - 2.0 * w / 3.0 - w * e / 6.0;
    let o = -w / 6.0;
    let r0 = -a * w / 6.0;
    let r1 = a * (1.0 - 5.0 * w / 6.0) - src;
    let det = d * d - o * o;
    let m0 = (r0 * d - o * r1) / det;
    let left_amp = (d * r1 - o * r0) / det;
    Ok(JunctionLayer {
        j,
        h,
        gamma,
        m0,
        left_amp,
    })
}

/// Upper bound on the tail dropped by [`junction_series_oracle`].
pub fn series_truncation_bound(j: f64, h: f64, n_max: usize) -> f64 {
    let w = omega(j);
    w.powi(n_max as i32 + 1) / (1.0 - w) * h.abs() / (1.0 + 6.0 * j)
}

/// Truncated random-walk series
/// `-(|h|/(1+6J)) sum_{n<=n_max} w^n P_x1(S_n < 0)`, where `S` is the
/// first coordinate of the simple random walk in three dimensions, a lazy
/// walk stepping by one with probability 1/6 each way. The law of `S_n` is
/// propagated exactly by convolution.
pub fn junction_series_oracle(j: f64, h: f64, x1: i64, n_max: usize) -> Result<f64> {
    check_j(j)?;
    if n_max < 1 {
        return Err(Error::param("n_max", "must be >= 1"));
    }
    let w = omega(j);
    let width = 2 * n_max + 1;
    // Index k holds position x1 - n_max + k.
    let origin = x1 - n_max as i64;
    let mut p = vec![0.0; width];
    p[n_max] = 1.0;
    let mut next = vec![0.0; width];
    let mut total = 0.0;
    let mut weight = 1.0;
    for n in 0..=n_max {
        let below: f64 = p
            .iter()
            .enumerate()
            .filter(|(k, _)| origin + (*k as i64) < 0)
            .map(|(_, v)| v)
            .sum();
        total += weight * below;
        if n == n_max {
            break;
        }
        for k in 0..width {
            let left = if k > 0 { p[k - 1] } else { 0.0 };
            let right = if k + 1 < width { p[k + 1] } else { 0.0 };
            next[k] = 2.0 / 3.0 * p[k] + (left + right) / 6.0;
        }
        std::mem::swap(&mut p, &mut next);
        weight *= w;
    }
    Ok(-h.abs() / (1.0 + 6.0 * j) * total)
}

/// Macroscopic profile `-(lambda/2) r1 + h 1[r1 < 0]` on `|r1| < 2`.
pub fn macroscopic_profile(r1: f64, lambda: f64, h: f64) -> Result<f64> {
    if !(r1.is_finite() && r1.abs() < 2.0) {
        return Err(Error::param("r1", format!("must satisfy |r1| < 2, got {r1}")));
    }
    if r1 == 0.0 {
        return Err(Error::param("r1", "profile is discontinuous at r1 = 0"));
    }
    Ok(-0.5 * lambda * r1 + if r1 < 0.0 { h } else { 0.0 })
}

/// Slope of the macroscopic profile away from the junction.
pub fn macroscopic_slope(lambda: f64) -> f64 {
    -0.5 * lambda
}

/// Macroscopic current, `-D dm/dr1` with `D = 1`.
pub fn macroscopic_current(lambda: f64) -> f64 {
    -diffusion_coefficient() * macroscopic_slope(lambda)
}

/// Diffusion coefficient of the quadratic model; the free energy has unit
/// second derivative.
pub fn diffusion_coefficient() -> f64 {
    1.0
}
