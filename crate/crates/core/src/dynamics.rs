//! Langevin dynamics with conservative bulk exchanges and boundary drives.
//!
//! Each core bond `(x, y)` exchanges magnetization at rate
//! `-(dH/dphi_x - dH/dphi_y)` with a shared noise applied with opposite
//! signs, so `phi_x + phi_y` is conserved by the bond. Sites on the two
//! faces `x1 = -2N` and `x1 = 2N-1` are in addition pulled toward a target
//! chemical potential. The whole process is the linear diffusion
//!
//! ```text
//! dphi = (c - B phi) dt + sqrt(2/beta) G^{1/2} dW,   B = G (D - A)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Geometry, LatticeDomain, Site};
use crate::model::{QuadraticForm, QuadraticModel};
use crate::solver::dense;

pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const N_BATCHES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivenSite {
    pub index: usize,
    pub target: f64,
}

/// Bonds and driven sites defining `G = sum_b e_b e_b^T + sum_z delta_z delta_z^T`,
/// with `e_b = delta_x - delta_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityStructure {
    pub n_sites: usize,
    pub bonds: Vec<(usize, usize)>,
    pub driven: Vec<DrivenSite>,
}

impl MobilityStructure {
    /// All core bonds, with the left face driven to `left` and the right
    /// face to `right`.
    pub fn darken(domain: &LatticeDomain, left: f64, right: f64) -> Result<Self> {
        let Geometry::Darken { n } = domain.geometry() else {
            return Err(Error::WrongGeometry { expected: "darken" });
        };
        let mut driven = Vec::new();
        for (x1, target) in [(-2 * n, left), (2 * n - 1, right)] {
            for s in domain.section(x1) {
                driven.push(DrivenSite {
                    index: domain.index_of(s).unwrap(),
                    target,
                });
            }
        }
        driven.sort_by_key(|d| d.index);
        Ok(MobilityStructure {
            n_sites: domain.core_len(),
            bonds: domain.bonds(),
            driven,
        })
    }

    /// Targets `lambda` on the left face and `-lambda` on the right.
    pub fn for_model(model: &QuadraticModel) -> Result<Self> {
        let l = model.params().lambda;
        Self::darken(model.domain(), l, -l)
    }

    /// `G v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites];
        for &(x, y) in &self.bonds {
            let d = v[x] - v[y];
            out[x] += d;
            out[y] -= d;
        }
        for z in &self.driven {
            out[z.index] += v[z.index];
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_sites, self.n_sites);
        for &(x, y) in &self.bonds {
            g[(x, x)] += 1.0;
            g[(y, y)] += 1.0;
            g[(x, y)] -= 1.0;
            g[(y, x)] -= 1.0;
        }
        for z in &self.driven {
            g[(z.index, z.index)] += 1.0;
        }
        g
    }

    /// `sum_z delta_z target_z`.
    pub fn drive_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_sites];
        for z in &self.driven {
            v[z.index] += z.target;
        }
        v
    }

    /// Max absolute row sum of `G (D - A)`, computed from its sparse rows.
    pub fn drift_norm_inf(&self, form: &QuadraticForm) -> f64 {
        let n = self.n_sites;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(x, y) in &self.bonds {
            adj[x].push(y);
            adj[y].push(x);
        }
        let mut drive = vec![false; n];
        for z in &self.driven {
            drive[z.index] = true;
        }
        let mut row = std::collections::BTreeMap::new();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            row.clear();
            let mut add = |k: usize, w: f64| {
                *row.entry(k).or_insert(0.0) += w * form.diag()[k];
                for &j in form.neighbors(k) {
                    *row.entry(j).or_insert(0.0) -= w * form.coupling();
                }
            };
            let gii = adj[i].len() as f64 + if drive[i] { 1.0 } else { 0.0 };
            add(i, gii);
            for &k in &adj[i] {
                add(k, -1.0);
            }
            worst = worst.max(row.values().map(|v: &f64| v.abs()).sum());
        }
        worst
    }
}

/// Dense drift `B`, offset `c` and mobility `G` of the linear diffusion.
#[derive(Clone, Debug)]
pub struct DriftSystem {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub mobility: MobilityStructure,
}

/// `B = G (D - A)` and `c = G b0 + sum_z delta_z target_z` for any mobility.
pub fn drift_from_parts(form: &QuadraticForm, untilted: &[f64], mobility: MobilityStructure) -> Result<DriftSystem> {
    let a = dense::matrix(form)?;
    let g = mobility.dense();
    let b = &g * a;
    let gb0 = mobility.apply(untilted);
    let drive = mobility.drive_vector();
    let c = DVector::from_iterator(gb0.len(), gb0.iter().zip(&drive).map(|(x, y)| x + y));
    Ok(DriftSystem { b, c, mobility })
}

pub fn build_drift(model: &QuadraticModel) -> Result<DriftSystem> {
    build_drift_with(model, MobilityStructure::for_model(model)?)
}

pub fn build_drift_with(model: &QuadraticModel, mobility: MobilityStructure) -> Result<DriftSystem> {
    if mobility.driven.is_empty() {
        return Err(Error::NoDrivenSites);
    }
    drift_from_parts(model.form(), &model.untilted_field(), mobility)
}

/// Induced max-norm of `B C + C B^T - (2/beta) G`.
pub fn lyapunov_residual(drift: &DriftSystem, cov: &DMatrix<f64>, beta: f64) -> f64 {
    let bc = &drift.b * cov;
    let r = &bc + bc.transpose() - drift.mobility.dense() * (2.0 / beta);
    r.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖B m - c‖∞`.
pub fn mean_residual(drift: &DriftSystem, mean: &[f64]) -> f64 {
    let m = DVector::from_column_slice(mean);
    (&drift.b * m - &drift.c).amax()
}

/// Stationary covariance of the diffusion, the solution `S` of
/// `B S + S B^T = (2/beta) G`: the Gibbs covariance `(beta (D - A))^{-1}`.
pub fn diffusion_covariance(form: &QuadraticForm, beta: f64) -> Result<DMatrix<f64>> {
    Ok(dense::covariance(form, beta)? * 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Euler-Maruyama with one shared noise per bond.
    EulerMaruyama,
    /// Exact Gaussian transition of the linear diffusion over `dt`.
    ExactOu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Record every `thin`-th step after burn-in.
    pub thin: u64,
    pub integrator: Integrator,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 1e-3,
            n_steps: 2_000_000,
            burn_in: 500_000,
            seed: 1,
            thin: 1,
            integrator: Integrator::EulerMaruyama,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", "must be finite and > 0"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::param("burn_in", "must be smaller than n_steps"));
        }
        if self.thin == 0 {
            return Err(Error::param("thin", "must be >= 1"));
        }
        if self.samples() < N_BATCHES as u64 {
            return Err(Error::param(
                "n_steps",
                format!("need at least {N_BATCHES} recorded samples for batch means"),
            ));
        }
        Ok(())
    }

    pub fn samples(&self) -> u64 {
        (self.n_steps - self.burn_in).div_ceil(self.thin)
    }
}

/// Estimate with a standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn z_score(&self, exact: f64) -> f64 {
        (self.value - exact) / self.stderr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub sites: Vec<Site>,
    pub site_mean: Vec<f64>,
    pub site_stderr: Vec<f64>,
    /// Time-averaged `phi_x^2 - mean^2`.
    pub site_variance: Vec<f64>,
    /// Bonds oriented toward increasing coordinates.
    pub bonds: Vec<(Site, Site)>,
    pub bond_current: Vec<f64>,
    pub bond_stderr: Vec<f64>,
    pub samples: u64,
    pub steps: u64,
}

/// Time-averaged current through `x -> y`, sign flipped for reversed bonds.
pub fn empirical_current(trace: &TraceSummary, x: Site, y: Site) -> Result<Estimate> {
    for (k, &(a, b)) in trace.bonds.iter().enumerate() {
        let sign = if (a, b) == (x, y) {
            1.0
        } else if (a, b) == (y, x) {
            -1.0
        } else {
            continue;
        };
        return Ok(Estimate {
            value: sign * trace.bond_current[k],
            stderr: trace.bond_stderr[k],
        });
    }
    if !x.is_neighbor(y) {
        return Err(Error::NotABond(x, y));
    }
    Err(Error::NotInCore(x))
}

pub fn empirical_mean(trace: &TraceSummary, x: Site) -> Result<Estimate> {
    let k = trace.sites.iter().position(|&s| s == x).ok_or(Error::NotInCore(x))?;
    Ok(Estimate {
        value: trace.site_mean[k],
        stderr: trace.site_stderr[k],
    })
}

/// Euler-Maruyama state, stepped with caller-supplied noise.
#[derive(Clone, Debug)]
pub struct LangevinStepper<'a> {
    form: &'a QuadraticForm,
    untilted: Vec<f64>,
    mobility: MobilityStructure,
    dt: f64,
    sigma: f64,
    phi: Vec<f64>,
    grad: Vec<f64>,
    flux: Vec<f64>,
}

impl<'a> LangevinStepper<'a> {
    pub fn new(model: &'a QuadraticModel, mobility: MobilityStructure, dt: f64) -> Result<Self> {
        Self::from_parts(model.form(), model.untilted_field(), mobility, model.params().beta, dt)
    }

    pub fn from_parts(
        form: &'a QuadraticForm,
        untilted: Vec<f64>,
        mobility: MobilityStructure,
        beta: f64,
        dt: f64,
    ) -> Result<Self> {
        let limit = 2.0 / mobility.drift_norm_inf(form);
        if !(dt > 0.0 && dt < limit) {
            return Err(Error::Unstable { dt, limit });
        }
        let n = form.len();
        let nb = mobility.bonds.len();
        Ok(LangevinStepper {
            form,
            untilted,
            mobility,
            dt,
            sigma: (2.0 * dt / beta).sqrt(),
            phi: vec![0.0; n],
            grad: vec![0.0; n],
            flux: vec![0.0; nb],
        })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn set_phi(&mut self, phi: &[f64]) {
        self.phi.copy_from_slice(phi);
    }

    /// Bond fluxes `g_x - g_y` at the state before the last step.
    pub fn flux(&self) -> &[f64] {
        &self.flux
    }

    pub fn noise_len(&self) -> usize {
        self.mobility.bonds.len() + self.mobility.driven.len()
    }

    /// One step; `noise` holds one standard normal per bond, then one per
    /// driven site. Returns the net change of total magnetization caused by
    /// the driven sites.
    pub fn step(&mut self, noise: &[f64]) -> f64 {
        let f = self.form;
        for i in 0..self.phi.len() {
            self.grad[i] = f.apply_row(&self.phi, i) - self.untilted[i];
        }
        let nb = self.mobility.bonds.len();
        for (k, &(x, y)) in self.mobility.bonds.iter().enumerate() {
            let flux = self.grad[x] - self.grad[y];
            self.flux[k] = flux;
            let d = -flux * self.dt + self.sigma * noise[k];
            self.phi[x] += d;
            self.phi[y] -= d;
        }
        let mut injected = 0.0;
        for (k, z) in self.mobility.driven.iter().enumerate() {
            let d = -(self.grad[z.index] - z.target) * self.dt + self.sigma * noise[nb + k];
            self.phi[z.index] += d;
            injected += d;
        }
        injected
    }

    fn check(&self, step: u64) -> Result<()> {
        for (i, v) in self.phi.iter().enumerate() {
            if !(v.abs() <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged {
                    step,
                    site: i,
                    value: v.abs(),
                });
            }
        }
        Ok(())
    }
}

struct Accumulator {
    per_batch: u64,
    batch: Vec<Vec<f64>>,
    count: Vec<u64>,
    sum_sq: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize, samples: u64) -> Self {
        Accumulator {
            per_batch: samples.div_ceil(N_BATCHES as u64),
            batch: vec![vec![0.0; dim]; N_BATCHES],
            count: vec![0; N_BATCHES],
            sum_sq: vec![0.0; dim],
        }
    }

    fn push(&mut self, sample_idx: u64, v: &[f64]) {
        let b = ((sample_idx / self.per_batch) as usize).min(N_BATCHES - 1);
        self.count[b] += 1;
        for (acc, x) in self.batch[b].iter_mut().zip(v) {
            *acc += x;
        }
        for (acc, x) in self.sum_sq.iter_mut().zip(v) {
            *acc += x * x;
        }
    }

    /// Overall mean, batch-means standard error and variance per component.
    fn finish(self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dim = self.sum_sq.len();
        let total: u64 = self.count.iter().sum();
        let nb = self.count.iter().filter(|&&c| c > 0).count() as f64;
        let mut mean = vec![0.0; dim];
        let mut se = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for i in 0..dim {
            let s: f64 = self.batch.iter().map(|b| b[i]).sum();
            mean[i] = s / total as f64;
            let bm: Vec<f64> = self
                .batch
                .iter()
                .zip(&self.count)
                .filter(|(_, &c)| c > 0)
                .map(|(b, &c)| b[i] / c as f64)
                .collect();
            let avg = bm.iter().sum::<f64>() / nb;
            let ss: f64 = bm.iter().map(|m| (m - avg) * (m - avg)).sum();
            se[i] = (ss / (nb - 1.0) / nb).sqrt();
            var[i] = self.sum_sq[i] / total as f64 - mean[i] * mean[i];
        }
        (mean, se, var)
    }
}

pub fn simulate(model: &QuadraticModel, config: &SimulationConfig) -> Result<TraceSummary> {
    simulate_with(model, MobilityStructure::for_model(model)?, config)
}

pub fn simulate_with(
    model: &QuadraticModel,
    mobility: MobilityStructure,
    config: &SimulationConfig,
) -> Result<TraceSummary> {
    config.validate()?;
    if mobility.driven.is_empty() {
        return Err(Error::NoDrivenSites);
    }
    let domain = model.domain();
    let bonds: Vec<(Site, Site)> = mobility
        .bonds
        .iter()
        .map(|&(x, y)| (domain.site(x), domain.site(y)))
        .collect();
    let samples = config.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sites_acc = Accumulator::new(model.len(), samples);
    let mut bond_acc = Accumulator::new(bonds.len(), samples);
    let mut record = |step: u64, phi: &[f64], flux: &[f64]| {
        if step >= config.burn_in && (step - config.burn_in).is_multiple_of(config.thin) {
            let idx = (step - config.burn_in) / config.thin;
            sites_acc.push(idx, phi);
            bond_acc.push(idx, flux);
        }
    };

    match config.integrator {
        Integrator::EulerMaruyama => {
            let mut st = LangevinStepper::new(model, mobility, config.dt)?;
            let mut noise = vec![0.0; st.noise_len()];
            for step in 0..config.n_steps {
                for v in noise.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let before = st.phi.clone();
                st.step(&noise);
                record(step, &before, &st.flux);
                st.check(step)?;
            }
        }
        Integrator::ExactOu => {
            let ou = ExactOu::new(model, mobility, config.dt)?;
            let mut phi = DVector::zeros(model.len());
            let mut z = DVector::zeros(model.len());
            for step in 0..config.n_steps {
                if step >= config.burn_in {
                    let p: Vec<f64> = phi.iter().copied().collect();
                    let g = model.untilted_gradient(&p);
                    let flux: Vec<f64> = ou.bonds.iter().map(|&(x, y)| g[x] - g[y]).collect();
                    record(step, &p, &flux);
                }
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                phi = &ou.decay * &phi + &ou.shift + &ou.chol * &z;
                if let Some((i, v)) = phi.iter().enumerate().find(|(_, v)| !(v.abs() <= DIVERGENCE_LIMIT)) {
                    return Err(Error::Diverged {
                        step,
                        site: i,
                        value: v.abs(),
                    });
                }
            }
        }
    }

    let (site_mean, site_stderr, site_variance) = sites_acc.finish();
    let (bond_current, bond_stderr, _) = bond_acc.finish();
    Ok(TraceSummary {
        sites: domain.core_sites().collect(),
        site_mean,
        site_stderr,
        site_variance,
        bonds,
        bond_current,
        bond_stderr,
        samples,
        steps: config.n_steps,
    })
}

/// Exact transition `phi' = E phi + (I - E) m + L z` with `E = exp(-B dt)`
/// and `L L^T = S - E S E^T`, `S` the stationary covariance.
struct ExactOu {
    decay: DMatrix<f64>,
    shift: DVector<f64>,
    chol: DMatrix<f64>,
    bonds: Vec<(usize, usize)>,
}

impl ExactOu {
    fn new(model: &QuadraticModel, mobility: MobilityStructure, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", "must be finite and > 0"));
        }
        let bonds = mobility.bonds.clone();
        let drift = build_drift_with(model, mobility)?;
        let decay = (&drift.b * -dt).exp();
        let mean = drift
            .b
            .clone()
            .lu()
            .solve(&drift.c)
            .ok_or_else(|| Error::param("B", "drift matrix is singular"))?;
        let n = model.len();
        let shift = (DMatrix::identity(n, n) - &decay) * mean;
        let s = diffusion_covariance(model.form(), model.params().beta)?;
        let mut q = &s - &decay * &s * decay.transpose();
        q = (&q + q.transpose()) * 0.5;
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::param("dt", "transition covariance is not positive definite"))?
            .l();
        Ok(ExactOu {
            decay,
            shift,
            chol,
            bonds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble, ModelParams, ScalarField};
    use crate::solver::{stationary_mean, GaussianSteadyState};
    use std::sync::Arc;

    fn darken1(lambda: f64, h: f64) -> QuadraticModel {
        QuadraticModel::darken(1, ModelParams::new(1.0, 1.0, h, lambda)).unwrap()
    }

    #[test]
    fn two_site_conservative_kernel() {
        let form = QuadraticForm::new(vec![3.0, 3.0], 1.0, &[vec![1], vec![0]], vec![0.0; 2]).unwrap();
        let mob = MobilityStructure {
            n_sites: 2,
            bonds: vec![(0, 1)],
            driven: vec![],
        };
        let d = drift_from_parts(&form, &[0.0, 0.0], mob).unwrap();
        assert!(d.b.determinant().abs() < 1e-14);
        let ones = DVector::from_element(2, 1.0);
        assert!((d.b.transpose() * ones).amax() < 1e-15);
        let m = darken1(1.0, -1.0);
        let empty = MobilityStructure {
            n_sites: m.len(),
            bonds: m.domain().bonds(),
            driven: vec![],
        };
        assert!(matches!(build_drift_with(&m, empty), Err(Error::NoDrivenSites)));
    }

    #[test]
    fn mobility_structure() {
        let m = darken1(1.0, -1.0);
        let mob = MobilityStructure::for_model(&m).unwrap();
        assert_eq!(mob.driven.len(), 8);
        let g = mob.dense();
        assert!((&g - g.transpose()).amax() == 0.0);
        assert!(g.clone().cholesky().is_some());
        let mut bond_only = mob.clone();
        bond_only.driven.clear();
        let rows = bond_only.dense() * DVector::from_element(16, 1.0);
        assert_eq!(rows.amax(), 0.0);
        let v: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let gv = mob.apply(&v);
        let dv = g * DVector::from_column_slice(&v);
        assert!(gv.iter().zip(dv.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        let ch = QuadraticModel::channel(4, 1, ModelParams::default()).unwrap();
        assert!(MobilityStructure::for_model(&ch).is_err());
    }

    #[test]
    fn mean_residual_vanishes() {
        for n in 1..=2 {
            let m = QuadraticModel::darken(n, ModelParams::new(0.8, 1.3, -1.0, 0.7)).unwrap();
            let d = build_drift(&m).unwrap();
            let mean = stationary_mean(&m, 1e-14, None).unwrap();
            assert!(mean_residual(&d, mean.values()) < 1e-10);
        }
    }

    #[test]
    fn gibbs_covariance_solves_lyapunov() {
        for n in 1..=2 {
            let m = QuadraticModel::darken(n, ModelParams::new(0.8, 1.3, -1.0, 0.7)).unwrap();
            let d = build_drift(&m).unwrap();
            let s = diffusion_covariance(m.form(), 1.3).unwrap();
            assert!(lyapunov_residual(&d, &s, 1.3) < 1e-8);
            // Half of it leaves exactly G / beta unbalanced.
            let half = dense::covariance(m.form(), 1.3).unwrap();
            let r = lyapunov_residual(&d, &half, 1.3);
            let g_norm = d
                .mobility
                .dense()
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            assert!((r - g_norm / 1.3).abs() < 1e-8);
        }
    }

    #[test]
    fn stepper_conserves_bond_sums_and_totals() {
        let m = darken1(1.0, -1.0);
        let mob = MobilityStructure::for_model(&m).unwrap();
        let mut st = LangevinStepper::new(&m, mob.clone(), 1e-3).unwrap();
        let init: Vec<f64> = (0..16).map(|i| 0.3 * (i as f64).cos()).collect();
        st.set_phi(&init);
        let noise: Vec<f64> = (0..st.noise_len()).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let before: f64 = st.phi().iter().sum();
        let injected = st.step(&noise);
        let after: f64 = st.phi().iter().sum();
        assert!((after - before - injected).abs() < 1e-14);

        // With only bond noise and no drive, each bond alone conserves its pair sum.
        let bonds_only = MobilityStructure {
            n_sites: 16,
            bonds: vec![mob.bonds[0]],
            driven: vec![DrivenSite { index: 15, target: 0.0 }],
        };
        let (x, y) = bonds_only.bonds[0];
        let mut st = LangevinStepper::new(&m, bonds_only, 1e-3).unwrap();
        st.set_phi(&init);
        st.step(&[1.7, 0.0]);
        assert!((st.phi()[x] + st.phi()[y] - init[x] - init[y]).abs() < 1e-15);
    }

    #[test]
    fn unstable_step_rejected() {
        let m = darken1(1.0, -1.0);
        let cfg = SimulationConfig {
            dt: 1.0,
            n_steps: 1000,
            burn_in: 10,
            ..Default::default()
        };
        assert!(matches!(simulate(&m, &cfg), Err(Error::Unstable { .. })));
        let bad = SimulationConfig {
            burn_in: 1000,
            n_steps: 1000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_flow_reaches_mean() {
        let p = ModelParams::new(1.0, 1e14, -1.0, 1.0);
        let m = QuadraticModel::darken(1, p).unwrap();
        let cfg = SimulationConfig {
            dt: 1e-2,
            n_steps: 20_000,
            burn_in: 19_000,
            seed: 5,
            thin: 1,
            integrator: Integrator::EulerMaruyama,
        };
        let t = simulate(&m, &cfg).unwrap();
        let mean = stationary_mean(&m, 1e-14, None).unwrap();
        for i in 0..16 {
            assert!((t.site_mean[i] - mean[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = darken1(1.0, -1.0);
        let cfg = SimulationConfig {
            n_steps: 20_000,
            burn_in: 1_000,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(simulate(&m, &cfg).unwrap(), simulate(&m, &cfg).unwrap());
    }

    #[test]
    fn short_run_currents_and_means() {
        let m = darken1(1.0, -1.0);
        let cfg = SimulationConfig {
            dt: 2e-3,
            n_steps: 400_000,
            burn_in: 50_000,
            seed: 11,
            ..Default::default()
        };
        let t = simulate(&m, &cfg).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        let mut bad = 0;
        for i in 0..16 {
            if (t.site_mean[i] - s.mean()[i]).abs() > 5.0 * t.site_stderr[i] {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
        for &(a, b) in &t.bonds {
            let e = empirical_current(&t, a, b).unwrap();
            let r = empirical_current(&t, b, a).unwrap();
            assert_eq!(e.value, -r.value);
            assert!(e.stderr > 0.0);
        }
        let x = Site::new(-2, 0, 0);
        assert!(empirical_current(&t, x, Site::new(0, 0, 0)).is_err());
    }

    #[test]
    fn equilibrium_drive_gives_gibbs_mean() {
        let lambda = 0.6;
        let d = Arc::new(LatticeDomain::darken(1).unwrap());
        let p = ModelParams {
            phi_bar_left: Some(lambda),
            phi_bar_right: Some(lambda),
            ..ModelParams::new(1.0, 1.0, 0.0, lambda)
        };
        let m = assemble(d.clone(), p, ScalarField::new(vec![lambda; 16])).unwrap();
        let mob = MobilityStructure::darken(&d, lambda, lambda).unwrap();
        let cfg = SimulationConfig {
            dt: 2e-3,
            n_steps: 400_000,
            burn_in: 50_000,
            seed: 3,
            ..Default::default()
        };
        let t = simulate_with(&m, mob.clone(), &cfg).unwrap();
        let mean = stationary_mean(&m, 1e-14, None).unwrap();
        for i in 0..16 {
            assert!((mean[i] - lambda).abs() < 1e-12);
            assert!((t.site_mean[i] - mean[i]).abs() < 5.0 * t.site_stderr[i]);
        }
        for (c, se) in t.bond_current.iter().zip(&t.bond_stderr) {
            assert!(c.abs() < 4.0 * se);
        }
        let drift = build_drift_with(&m, mob).unwrap();
        assert!(mean_residual(&drift, mean.values()) < 1e-10);
    }

    #[test]
    fn exact_ou_matches_gibbs_variance() {
        let m = darken1(1.0, -1.0);
        let cfg = SimulationConfig {
            dt: 0.05,
            n_steps: 60_000,
            burn_in: 1_000,
            seed: 21,
            thin: 1,
            integrator: Integrator::ExactOu,
        };
        let t = simulate(&m, &cfg).unwrap();
        let mean = stationary_mean(&m, 1e-14, None).unwrap();
        let s = diffusion_covariance(m.form(), 1.0).unwrap();
        for i in 0..16 {
            assert!((t.site_mean[i] - mean[i]).abs() < 5.0 * t.site_stderr[i]);
            assert!((t.site_variance[i] / s[(i, i)] - 1.0).abs() < 0.1);
        }
    }
}
