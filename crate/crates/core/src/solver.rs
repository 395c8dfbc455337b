//! Exact stationary mean, covariance and currents of the Gaussian steady state.
//!
//! The mean solves `(D - A) m = b`. It is computed by the fixed-point map
//! `psi <- (A psi + b) / D`, whose partial sums are the random-walk series
//! `sum_n D^{-1} (A D^{-1})^n b`. The covariance is `(2 beta (D - A))^{-1}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Geometry, LatticeDomain, Site};
use crate::model::{QuadraticForm, QuadraticModel, ScalarField};

pub const DEFAULT_TOL: f64 = 1e-12;

/// Extra sweeps allowed beyond the a priori iteration bound.
pub const ITER_MARGIN: usize = 200;

const PAR_THRESHOLD: usize = 10_000;

/// Result of the fixed-point iteration.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// `‖(D - A) psi - b‖∞` of the returned vector.
    pub residual: f64,
}

/// Iteration count guaranteeing `residual <= tol` in exact arithmetic.
pub fn iteration_bound(form: &QuadraticForm, tol: f64) -> usize {
    let omega = form.contraction();
    let start = form
        .rhs()
        .iter()
        .zip(form.diag())
        .map(|(b, d)| (b / d).abs())
        .fold(0.0, f64::max);
    if omega == 0.0 || start == 0.0 {
        return 1 + ITER_MARGIN;
    }
    let scale = form.operator_norm_inf() * start / (1.0 - omega);
    let k = ((tol / scale).ln() / omega.ln()).ceil();
    k.max(0.0) as usize + ITER_MARGIN
}

fn sweep(form: &QuadraticForm, psi: &[f64], out: &mut [f64]) -> f64 {
    let row = |i: usize, o: &mut f64| -> f64 {
        let mut s = 0.0;
        for &j in form.neighbors(i) {
            s += psi[j];
        }
        let next = (form.coupling() * s + form.rhs()[i]) / form.diag()[i];
        *o = next;
        // Residual of psi at row i equals D_i (psi_i - next).
        (form.diag()[i] * (psi[i] - next)).abs()
    };
    if form.len() >= PAR_THRESHOLD {
        out.par_iter_mut()
            .enumerate()
            .map(|(i, o)| row(i, o))
            .reduce(|| 0.0, f64::max)
    } else {
        out.iter_mut()
            .enumerate()
            .map(|(i, o)| row(i, o))
            .fold(0.0, f64::max)
    }
}

/// Solves `(D - A) psi = b` by the fixed-point map until the max-norm
/// residual is at most `tol`.
pub fn solve_form(form: &QuadraticForm, tol: f64, max_iters: Option<usize>) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let max_iters = max_iters.unwrap_or_else(|| iteration_bound(form, tol));
    let mut psi: Vec<f64> = form
        .rhs()
        .iter()
        .zip(form.diag())
        .map(|(b, d)| b / d)
        .collect();
    let mut next = vec![0.0; form.len()];
    let mut residual = f64::INFINITY;
    for it in 0..=max_iters {
        residual = sweep(form, &psi, &mut next);
        if residual <= tol {
            return Ok(FixedPoint {
                values: psi,
                iterations: it,
                residual,
            });
        }
        std::mem::swap(&mut psi, &mut next);
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
    })
}

/// Stationary mean `m_N` of a model.
pub fn stationary_mean(model: &QuadraticModel, tol: f64, max_iters: Option<usize>) -> Result<ScalarField> {
    Ok(ScalarField::new(solve_form(model.form(), tol, max_iters)?.values))
}

/// Mean of the stationary Gaussian measure with cached untilted gradient.
#[derive(Clone, Debug)]
pub struct GaussianSteadyState<'a> {
    model: &'a QuadraticModel,
    mean: ScalarField,
    gradient: Vec<f64>,
    iterations: usize,
    residual: f64,
}

impl<'a> GaussianSteadyState<'a> {
    pub fn solve(model: &'a QuadraticModel, tol: f64) -> Result<Self> {
        Self::solve_with(model, tol, None)
    }

    pub fn solve_with(model: &'a QuadraticModel, tol: f64, max_iters: Option<usize>) -> Result<Self> {
        let fp = solve_form(model.form(), tol, max_iters)?;
        Ok(Self::from_mean(model, fp.values, fp.iterations, fp.residual))
    }

    /// Wraps an externally computed mean (e.g. from the dense oracle).
    pub fn from_mean(model: &'a QuadraticModel, mean: Vec<f64>, iterations: usize, residual: f64) -> Self {
        let gradient = model.untilted_gradient(&mean);
        GaussianSteadyState {
            model,
            mean: ScalarField::new(mean),
            gradient,
            iterations,
            residual,
        }
    }

    pub fn model(&self) -> &'a QuadraticModel {
        self.model
    }

    pub fn domain(&self) -> &'a LatticeDomain {
        self.model.domain()
    }

    pub fn mean(&self) -> &ScalarField {
        &self.mean
    }

    pub fn mean_at(&self, s: Site) -> Result<f64> {
        self.mean.at(self.domain(), s)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn beta(&self) -> f64 {
        self.model.params().beta
    }

    pub fn covariance_row(&self, x: Site, tol: f64) -> Result<ScalarField> {
        covariance_row(self, x, tol)
    }

    pub fn covariance_entry(&self, x: Site, y: Site, tol: f64) -> Result<f64> {
        covariance_entry(self, x, y, tol)
    }

    pub fn current(&self, x: Site, y: Site) -> Result<BondCurrent> {
        stationary_current(self, x, y)
    }

    /// Untilted gradient `(D - A) m - (b - tilt)` at the mean.
    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }
}

/// Column `x` of `sum_n (D^{-1} A)^n D^{-1}`, i.e. of `(D - A)^{-1}`,
/// stopped once the geometric tail is below `tol` in max norm.
pub fn green_column(form: &QuadraticForm, x: usize, tol: f64) -> Vec<f64> {
    let n = form.len();
    let omega = form.contraction();
    let mut term = vec![0.0; n];
    term[x] = 1.0 / form.diag()[x];
    let mut acc = term.clone();
    let mut next = vec![0.0; n];
    loop {
        let size = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if omega == 0.0 || size * omega / (1.0 - omega) < tol {
            break;
        }
        for (y, o) in next.iter_mut().enumerate() {
            let mut s = 0.0;
            for &z in form.neighbors(y) {
                s += term[z];
            }
            *o = form.coupling() * s / form.diag()[y];
        }
        std::mem::swap(&mut term, &mut next);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += t;
        }
    }
    acc
}

/// Row `x` of `C_N = (2 beta (D - A))^{-1}`.
pub fn covariance_row(state: &GaussianSteadyState<'_>, x: Site, tol: f64) -> Result<ScalarField> {
    let i = state.domain().index_of(x).ok_or(Error::NotInCore(x))?;
    let scale = 1.0 / (2.0 * state.beta());
    let col = green_column(state.model.form(), i, tol / scale);
    Ok(ScalarField::new(col.into_iter().map(|v| v * scale).collect()))
}

pub fn covariance_entry(state: &GaussianSteadyState<'_>, x: Site, y: Site, tol: f64) -> Result<f64> {
    let j = state.domain().index_of(y).ok_or(Error::NotInCore(y))?;
    Ok(covariance_row(state, x, tol)?[j])
}

/// Mean current across a bond, positive when flowing from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondCurrent {
    pub from: Site,
    pub to: Site,
    pub value: f64,
}

impl BondCurrent {
    pub fn reversed(self) -> Self {
        BondCurrent {
            from: self.to,
            to: self.from,
            value: -self.value,
        }
    }

    /// Unit displacement `to - from`.
    pub fn direction(&self) -> [i64; 3] {
        self.from.offset_to(self.to)
    }
}

/// Stationary current `I_{x->y}`: the difference of the untilted gradient
/// at the mean between the two endpoints.
pub fn stationary_current(state: &GaussianSteadyState<'_>, x: Site, y: Site) -> Result<BondCurrent> {
    let d = state.domain();
    let i = d.index_of(x).ok_or(Error::NotInCore(x))?;
    let k = d.index_of(y).ok_or(Error::NotInCore(y))?;
    if !x.is_neighbor(y) {
        return Err(Error::NotABond(x, y));
    }
    Ok(BondCurrent {
        from: x,
        to: y,
        value: state.gradient[i] - state.gradient[k],
    })
}

/// Currents on all core bonds, oriented toward increasing coordinates.
pub fn bond_currents(state: &GaussianSteadyState<'_>) -> Vec<BondCurrent> {
    let d = state.domain();
    d.bonds()
        .into_iter()
        .map(|(i, k)| BondCurrent {
            from: d.site(i),
            to: d.site(k),
            value: state.gradient[i] - state.gradient[k],
        })
        .collect()
}

/// Total e1 current through the plane between `x1` and `x1 + 1`.
pub fn section_current(state: &GaussianSteadyState<'_>, x1: i64) -> Result<f64> {
    let d = state.domain();
    let mut total = 0.0;
    let mut count = 0;
    for s in d.section(x1) {
        let t = s.shifted([1, 0, 0]);
        if d.in_core(t) {
            total += stationary_current(state, s, t)?.value;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::param("x1", format!("no e1 bonds leave section {x1}")));
    }
    Ok(total)
}

/// Arithmetic mean of `phi` over the section `{x : x_1 = x1}`.
pub fn sectional_average(domain: &LatticeDomain, phi: &ScalarField, x1: i64) -> Result<f64> {
    phi.check_len(domain.core_len())?;
    let sites = domain.section(x1);
    if sites.is_empty() {
        return Err(Error::param("x1", format!("section {x1} is empty")));
    }
    let sum: f64 = sites.iter().map(|&s| phi[domain.index_of(s).unwrap()]).sum();
    Ok(sum / sites.len() as f64)
}

/// Values of `phi` at `(x1, 0, 0)` over the full `x1` range.
pub fn axis_profile(domain: &LatticeDomain, phi: &ScalarField) -> Vec<(i64, f64)> {
    let Some((lo, hi)) = domain.x1_range() else {
        return Vec::new();
    };
    (lo..=hi)
        .filter_map(|x1| {
            let s = domain.axis_site(x1);
            domain.index_of(s).map(|i| (x1, phi[i]))
        })
        .collect()
}

/// Interval on the positive axis where the profile rises while the current
/// is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UphillWindow {
    pub found: bool,
    /// Inclusive `x1` endpoints; `None` when no uphill bond exists.
    pub start: Option<i64>,
    pub end: Option<i64>,
}

impl UphillWindow {
    pub fn width(&self) -> i64 {
        match (self.start, self.end) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

/// Longest run of consecutive axis bonds `(x1, x1+1)` with `x1 >= 0`,
/// increasing mean and positive current. Both comparisons are made with a
/// margin of twice the solver residual, which bounds the numerical error.
pub fn uphill_window(state: &GaussianSteadyState<'_>) -> Result<UphillWindow> {
    let d = state.domain();
    let Geometry::Darken { n } = d.geometry() else {
        return Err(Error::WrongGeometry { expected: "darken" });
    };
    let margin = 2.0 * state.residual.max(f64::EPSILON);
    let mut best: Option<(i64, i64)> = None;
    let mut run: Option<(i64, i64)> = None;
    for x1 in 0..2 * n - 1 {
        let a = d.axis_site(x1);
        let b = d.axis_site(x1 + 1);
        let rise = state.mean_at(b)? - state.mean_at(a)?;
        let cur = stationary_current(state, a, b)?.value;
        if rise > margin && cur > margin {
            run = Some(match run {
                Some((s, _)) => (s, x1 + 1),
                None => (x1, x1 + 1),
            });
            let (s, e) = run.unwrap();
            if best.is_none_or(|(bs, be)| e - s > be - bs) {
                best = Some((s, e));
            }
        } else {
            run = None;
        }
    }
    Ok(UphillWindow {
        found: best.is_some(),
        start: best.map(|b| b.0),
        end: best.map(|b| b.1),
    })
}

/// Largest `|m(x1+1) - m(x1) + I(x1 -> x1+1)|` along the axis, over bonds
/// whose endpoints are farther than `ln N` from the faces and the junction.
pub fn fick_residual(state: &GaussianSteadyState<'_>) -> Result<f64> {
    let d = state.domain();
    let n = d.n().unwrap_or(1);
    let marks: Vec<i64> = match d.geometry() {
        Geometry::Darken { n } => vec![-2 * n, 0, 2 * n - 1],
        Geometry::Channel { n, .. } => vec![-n + 1, n - 1],
        Geometry::FullSpace => return Err(Error::WrongGeometry { expected: "darken or channel" }),
    };
    let gap = (n as f64).ln();
    let (lo, hi) = d.x1_range().unwrap_or((0, 0));
    let mut worst: f64 = 0.0;
    for x1 in lo..hi {
        let far = |x: i64| marks.iter().all(|&m| ((x - m) as f64).abs() > gap);
        if !(far(x1) && far(x1 + 1)) {
            continue;
        }
        let a = d.axis_site(x1);
        let b = d.axis_site(x1 + 1);
        let slope = state.mean_at(b)? - state.mean_at(a)?;
        let cur = stationary_current(state, a, b)?.value;
        worst = worst.max((slope + cur).abs());
    }
    Ok(worst)
}

/// Dense direct solves used as oracles on small instances.
pub mod dense {
    use nalgebra::{DMatrix, DVector};

    use crate::error::{Error, Result};
    use crate::model::QuadraticForm;

    pub const MAX_SITES: usize = 4000;

    fn check(form: &QuadraticForm) -> Result<()> {
        if form.len() > MAX_SITES {
            return Err(Error::TooLarge {
                sites: form.len(),
                limit: MAX_SITES,
            });
        }
        Ok(())
    }

    /// `D - A` as a dense matrix.
    pub fn matrix(form: &QuadraticForm) -> Result<DMatrix<f64>> {
        check(form)?;
        let n = form.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = form.diag()[i];
            for &j in form.neighbors(i) {
                m[(i, j)] -= form.coupling();
            }
        }
        Ok(m)
    }

    fn cholesky(form: &QuadraticForm) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        matrix(form)?
            .cholesky()
            .ok_or_else(|| Error::param("form", "matrix is not positive definite"))
    }

    pub fn mean(form: &QuadraticForm) -> Result<Vec<f64>> {
        let chol = cholesky(form)?;
        let b = DVector::from_column_slice(form.rhs());
        Ok(chol.solve(&b).iter().copied().collect())
    }

    /// `(2 beta (D - A))^{-1}`.
    pub fn covariance(form: &QuadraticForm, beta: f64) -> Result<DMatrix<f64>> {
        Ok(cholesky(form)?.inverse() / (2.0 * beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{darken_tilt, ModelParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn single(d: f64, b: f64) -> QuadraticForm {
        QuadraticForm::new(vec![d], 1.0, &[vec![]], vec![b]).unwrap()
    }

    #[test]
    fn equilibrium_zero_mean() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 0.0);
        let m = QuadraticModel::darken(2, p).unwrap();
        let mean = stationary_mean(&m, 1e-12, None).unwrap();
        assert!(mean.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_site_division() {
        let fp = solve_form(&single(7.0, -0.4), 1e-14, None).unwrap();
        assert!((fp.values[0] - (-0.4 / 7.0)).abs() < 1e-15);
        assert!((fp.values[0] + 0.0571429).abs() < 1e-7);
    }

    #[test]
    fn single_site_covariance() {
        let f = single(7.0, 0.0);
        let c = dense::covariance(&f, 1.0).unwrap();
        assert!((c[(0, 0)] - 1.0 / 14.0).abs() < 1e-15);
        let g = green_column(&f, 0, 1e-15);
        assert!((g[0] / 2.0 - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn darken2_matches_dense() {
        let p = ModelParams::new(1.0, 1.0, -1.0, 0.5);
        let m = QuadraticModel::darken(2, p).unwrap();
        let it = stationary_mean(&m, 1e-12, None).unwrap();
        let de = dense::mean(m.form()).unwrap();
        assert!(max_diff(it.values(), &de) < 1e-10);
    }

    #[test]
    fn non_convergence_is_reported() {
        let m = QuadraticModel::darken(2, ModelParams::new(1.0, 1.0, -1.0, 0.5)).unwrap();
        match solve_form(m.form(), 1e-12, Some(3)) {
            Err(Error::NotConverged { iterations: 3, residual }) => assert!(residual > 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_form(m.form(), 0.0, None).is_err());
    }

    #[test]
    fn dense_rejects_large() {
        let m = QuadraticModel::darken(7, ModelParams::default()).unwrap();
        assert!(matches!(dense::mean(m.form()), Err(Error::TooLarge { sites: 5488, .. })));
    }

    #[test]
    fn h_zero_mean_is_the_tilt() {
        let p = ModelParams::new(0.8, 1.0, 0.0, 1.3);
        let m = QuadraticModel::darken(3, p).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        for (i, site) in m.domain().core_sites().enumerate() {
            assert!((s.mean()[i] - darken_tilt(3, 1.3, site.x1)).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_dense_and_is_symmetric() {
        let p = ModelParams::new(0.7, 1.7, -1.0, 0.5);
        let m = QuadraticModel::darken(1, p).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-12).unwrap();
        let c = dense::covariance(m.form(), 1.7).unwrap();
        let d = m.domain();
        for (i, x) in d.core_sites().enumerate() {
            let row = s.covariance_row(x, 1e-14).unwrap();
            for k in 0..d.core_len() {
                assert!((row[k] - c[(i, k)]).abs() < 1e-12);
            }
            let rs: f64 = row.values().iter().sum();
            assert!(rs <= 1.0 / (2.0 * 1.7) + 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = d.site(rng.random_range(0..d.core_len()));
            let y = d.site(rng.random_range(0..d.core_len()));
            let a = s.covariance_entry(x, y, 1e-14).unwrap();
            let b = s.covariance_entry(y, x, 1e-14).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn darken1_currents() {
        let p = ModelParams::new(1.0, 1.0, -1.0, 1.0);
        let m = QuadraticModel::darken(1, p).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        for c in bond_currents(&s) {
            let want = if c.direction() == [1, 0, 0] { 0.4 } else { 0.0 };
            assert!((c.value - want).abs() < 1e-10, "{c:?}");
            let r = stationary_current(&s, c.to, c.from).unwrap();
            assert_eq!(r.value, -c.value);
        }
        let x = Site::new(0, 0, 0);
        assert!(matches!(s.current(x, Site::new(0, -1, -1)), Err(Error::NotABond(..))));
        assert!(matches!(s.current(x, Site::new(9, 0, 0)), Err(Error::NotInCore(_))));
    }

    #[test]
    fn equilibrium_has_no_current() {
        let m = QuadraticModel::darken(2, ModelParams::new(1.0, 1.0, -1.0, 0.0)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        assert!(bond_currents(&s).iter().all(|c| c.value.abs() < 1e-10));
        assert!(!uphill_window(&s).unwrap().found);
    }

    #[test]
    fn channel_currents_and_sections() {
        let m = QuadraticModel::channel(4, 1, ModelParams::new(1.0, 1.0, 0.0, 1.0)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        for c in bond_currents(&s) {
            let want = if c.direction() == [1, 0, 0] { 0.25 } else { 0.0 };
            assert!((c.value - want).abs() < 1e-10);
        }
        for x1 in -3..3 {
            let total = section_current(&s, x1).unwrap();
            assert!((total - 9.0 * 0.25).abs() < 1e-9);
            // Per-site current scaled by N gives +lambda toward increasing x1.
            assert!((4.0 * total / 9.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_current_divergence_vanishes() {
        let m = QuadraticModel::darken(2, ModelParams::new(1.2, 1.0, -0.5, 0.9)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        let d = m.domain();
        for x in d.core_sites() {
            let nbs = d.neighbors(x).unwrap();
            if nbs.iter().all(|nb| d.in_core(nb.site)) {
                let div: f64 = nbs.iter().map(|nb| s.current(x, nb.site).unwrap().value).sum();
                assert!(div.abs() < 1e-10);
            }
        }
        let sections: Vec<f64> = (-4..3).map(|x1| section_current(&s, x1).unwrap()).collect();
        for v in &sections {
            assert!((v - sections[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn sectional_average_cases() {
        let d = LatticeDomain::darken(1).unwrap();
        let c = ScalarField::new(vec![2.5; 16]);
        assert_eq!(sectional_average(&d, &c, 0).unwrap(), 2.5);
        let f = ScalarField::from_fn(&d, |s| (s.x1 * 10 + s.x2 + 2 * s.x3) as f64);
        // x2, x3 in {-1, 0}: mean of x2 + 2 x3 is -1.5.
        assert_eq!(sectional_average(&d, &f, 1).unwrap(), 8.5);
        assert!(sectional_average(&d, &f, 5).is_err());
    }

    #[test]
    fn section_average_equals_axis_value() {
        let m = QuadraticModel::darken(3, ModelParams::new(1.0, 1.0, -1.0, 0.5)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
        for x1 in -6..6 {
            let avg = sectional_average(m.domain(), s.mean(), x1).unwrap();
            let axis = s.mean_at(m.domain().axis_site(x1)).unwrap();
            assert!((avg - axis).abs() < 1e-11);
        }
    }

    #[test]
    fn uphill_cases() {
        let m = QuadraticModel::darken(8, ModelParams::new(1.0, 1.0, -1.0, 0.5)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-12).unwrap();
        let w = uphill_window(&s).unwrap();
        assert!(w.found);
        assert_eq!(w.start, Some(0));
        assert!(w.end.unwrap() <= 4);

        let m = QuadraticModel::darken(4, ModelParams::new(1.0, 1.0, 0.0, 0.5)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-12).unwrap();
        assert!(!uphill_window(&s).unwrap().found);

        let m = QuadraticModel::channel(4, 1, ModelParams::new(1.0, 1.0, 0.0, 0.5)).unwrap();
        let s = GaussianSteadyState::solve(&m, 1e-12).unwrap();
        assert!(uphill_window(&s).is_err());
    }

    #[test]
    fn fick_residual_is_small_in_bulk() {
        let omega: f64 = 6.0 / 7.0;
        let mut prev = f64::INFINITY;
        for n in [4i64, 8, 16] {
            let m = QuadraticModel::darken(n, ModelParams::new(1.0, 1.0, -1.0, 1.0)).unwrap();
            let s = GaussianSteadyState::solve(&m, 1e-12).unwrap();
            let r = fick_residual(&s).unwrap();
            let ln = (n as f64).ln();
            assert!(r <= omega.powf(ln) + ln / n as f64);
            assert!(r <= prev + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn parallel_solve_is_bitwise_serial() {
        let m = QuadraticModel::darken(8, ModelParams::new(1.0, 1.0, -1.0, 0.5)).unwrap();
        let a = stationary_mean(&m, 1e-12, None).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| stationary_mean(&m, 1e-12, None).unwrap());
        assert_eq!(a.values(), b.values());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn iterative_matches_dense(
            n in 1i64..3, j in 0.05f64..4.0, beta in 0.1f64..5.0,
            lambda in -2.0f64..2.0, h in -2.0f64..0.0,
        ) {
            let m = QuadraticModel::darken(n, ModelParams::new(j, beta, h, lambda)).unwrap();
            let it = stationary_mean(&m, 1e-12, None).unwrap();
            let de = dense::mean(m.form()).unwrap();
            prop_assert!(max_diff(it.values(), &de) < 1e-10);
            prop_assert!(m.form().residual_inf(it.values()) <= 1e-12 * 1.01);
        }

        #[test]
        fn currents_equal_tilt_differences(
            n in 1i64..3, j in 0.05f64..4.0, lambda in -2.0f64..2.0, h in -2.0f64..0.0,
        ) {
            let m = QuadraticModel::darken(n, ModelParams::new(j, 1.0, h, lambda)).unwrap();
            let s = GaussianSteadyState::solve(&m, 1e-13).unwrap();
            let d = m.domain();
            for c in bond_currents(&s) {
                let i = d.index_of(c.from).unwrap();
                let k = d.index_of(c.to).unwrap();
                prop_assert!((c.value - (m.tilt()[i] - m.tilt()[k])).abs() < 1e-10);
            }
        }

        #[test]
        fn mean_minimizes_energy(seed in 0u64..500, eps in 1e-3f64..1.0, lambda in -2.0f64..2.0) {
            let m = QuadraticModel::darken(2, ModelParams::new(1.0, 1.0, -1.0, lambda)).unwrap();
            let mean = stationary_mean(&m, 1e-13, None).unwrap();
            let e0 = m.form().energy(mean.values());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi: Vec<f64> = mean.values().iter().map(|v| v + eps * rng.random_range(-1.0..1.0)).collect();
            prop_assert!(m.form().energy(&phi) > e0);
        }
    }
}
