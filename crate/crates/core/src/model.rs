//! Quadratic Ginzburg-Landau Hamiltonians on a lattice domain.
//!
//! With the boundary configuration frozen, the tilted Hamiltonian of a core
//! configuration `phi` is
//!
//! ```text
//! H(phi) = 1/2 <phi, (D - A) phi> - <b, phi>
//! D(x,x) = 1 + J K_x,   A(x,y) = J 1[x~y, both in core]
//! b(x)   = h_x + tilt(x) + J * sum of frozen boundary values next to x
//! ```
//!
//! The constant self-energy of the frozen boundary is dropped.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Geometry, LatticeDomain, Site};

/// Physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Nearest-neighbour coupling, `J > 0`.
    pub j: f64,
    /// Inverse temperature, `beta > 0`.
    pub beta: f64,
    /// Field on the left cube (darken only), `h <= 0`.
    pub h: f64,
    /// Chemical-potential amplitude imposed at the boundaries.
    pub lambda: f64,
    /// Frozen value on the left reservoir; default `lambda + h` (darken) or 0 (channel).
    pub phi_bar_left: Option<f64>,
    /// Frozen value on the right reservoir; default `-lambda` (darken) or 0 (channel).
    pub phi_bar_right: Option<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            j: 1.0,
            beta: 1.0,
            h: 0.0,
            lambda: 0.0,
            phi_bar_left: None,
            phi_bar_right: None,
        }
    }
}

impl ModelParams {
    pub fn new(j: f64, beta: f64, h: f64, lambda: f64) -> Self {
        ModelParams {
            j,
            beta,
            h,
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j.is_finite() && self.j > 0.0) {
            return Err(Error::param("J", format!("must be finite and > 0, got {}", self.j)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::param(
                "beta",
                format!("must be finite and > 0, got {}", self.beta),
            ));
        }
        if !self.h.is_finite() || self.h > 0.0 {
            return Err(Error::param("h", format!("must be finite and <= 0, got {}", self.h)));
        }
        if !self.lambda.is_finite() {
            return Err(Error::param("lambda", "must be finite"));
        }
        for v in [self.phi_bar_left, self.phi_bar_right].into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::param("phi_bar", "must be finite"));
            }
        }
        Ok(())
    }

    /// Resolved `(left, right)` reservoir values for a geometry.
    pub fn boundary_values(&self, geometry: Geometry) -> (f64, f64) {
        let (dl, dr) = match geometry {
            Geometry::Darken { .. } => (self.lambda + self.h, -self.lambda),
            _ => (0.0, 0.0),
        };
        (
            self.phi_bar_left.unwrap_or(dl),
            self.phi_bar_right.unwrap_or(dr),
        )
    }

    /// Contraction constant `6J / (1 + 6J)` of the fixed-point map.
    pub fn omega(&self) -> f64 {
        6.0 * self.j / (1.0 + 6.0 * self.j)
    }
}

/// One real value per core site, in lexicographic site order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn zeros(len: usize) -> Self {
        ScalarField {
            values: vec![0.0; len],
        }
    }

    pub fn from_fn(domain: &LatticeDomain, f: impl Fn(Site) -> f64) -> Self {
        ScalarField {
            values: domain.core_sites().map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, domain: &LatticeDomain, s: Site) -> Result<f64> {
        domain
            .index_of(s)
            .map(|i| self.values[i])
            .ok_or(Error::NotInCore(s))
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.values.len() != expected {
            return Err(Error::DomainMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Linear tilt of the darken geometry: `lambda` at `x1 = -2N-1`, `-lambda`
/// at `x1 = 2N`, interpolated linearly in between.
pub fn darken_tilt(n: i64, lambda: f64, x1: i64) -> f64 {
    let (a, b) = ((-2 * n - 1) as f64, (2 * n) as f64);
    let x = x1 as f64;
    lambda * (x - b) / (a - b) + (-lambda) * (x - a) / (b - a)
}

/// Linear tilt of the channel geometry, `-lambda x1 / N`.
pub fn channel_tilt(n: i64, lambda: f64, x1: i64) -> f64 {
    -lambda * x1 as f64 / n as f64
}

pub fn lambda_profile_darken(domain: &LatticeDomain, lambda: f64) -> Result<ScalarField> {
    let Geometry::Darken { n } = domain.geometry() else {
        return Err(Error::WrongGeometry { expected: "darken" });
    };
    Ok(ScalarField::from_fn(domain, |s| darken_tilt(n, lambda, s.x1)))
}

pub fn lambda_profile_channel(domain: &LatticeDomain, lambda: f64) -> Result<ScalarField> {
    let Geometry::Channel { n, .. } = domain.geometry() else {
        return Err(Error::WrongGeometry { expected: "channel" });
    };
    Ok(ScalarField::from_fn(domain, |s| channel_tilt(n, lambda, s.x1)))
}

/// Sparse symmetric form `D - J·adjacency` with right-hand side `b`.
///
/// This is the purely algebraic part of a model; the solver works on it
/// directly so that hand-built instances (a single site, say) can be used.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    diag: Vec<f64>,
    coupling: f64,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    rhs: Vec<f64>,
}

impl QuadraticForm {
    /// Builds a form from per-site adjacency lists. The adjacency must be
    /// symmetric without self loops and `D - A` strictly diagonally dominant.
    pub fn new(diag: Vec<f64>, coupling: f64, adjacency: &[Vec<usize>], rhs: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if adjacency.len() != n {
            return Err(Error::DomainMismatch {
                expected: n,
                got: adjacency.len(),
            });
        }
        if rhs.len() != n {
            return Err(Error::DomainMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for row in adjacency {
            targets.extend_from_slice(row);
            offsets.push(targets.len());
        }
        let form = QuadraticForm {
            diag,
            coupling,
            offsets,
            targets,
            rhs,
        };
        form.validate()?;
        Ok(form)
    }

    fn from_domain(domain: &LatticeDomain, coupling: f64, diag: Vec<f64>, rhs: Vec<f64>) -> Self {
        let n = domain.core_len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for i in 0..n {
            targets.extend_from_slice(domain.core_neighbors(i));
            offsets.push(targets.len());
        }
        QuadraticForm {
            diag,
            coupling,
            offsets,
            targets,
            rhs,
        }
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            for &j in self.neighbors(i) {
                if j >= self.len() || j == i || !self.neighbors(j).contains(&i) {
                    return Err(Error::param(
                        "adjacency",
                        format!("adjacency must be symmetric without loops (row {i}, col {j})"),
                    ));
                }
            }
            let off = self.coupling.abs() * self.neighbors(i).len() as f64;
            if self.diag[i] <= off {
                return Err(Error::param(
                    "diag",
                    format!("row {i} is not strictly diagonally dominant"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `((D - A) phi)_i`, summed in neighbour order.
    #[inline]
    pub fn apply_row(&self, phi: &[f64], i: usize) -> f64 {
        let mut off = 0.0;
        for &j in self.neighbors(i) {
            off += phi[j];
        }
        self.diag[i] * phi[i] - self.coupling * off
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.apply_row(phi, i)).collect()
    }

    /// `max_i ‖(D - A)phi - b‖` over rows.
    pub fn residual_inf(&self, phi: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| (self.apply_row(phi, i) - self.rhs[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest row ratio `J K⁻ / D`, the contraction factor of the
    /// fixed-point map in the max norm.
    pub fn contraction(&self) -> f64 {
        (0..self.len())
            .map(|i| self.coupling.abs() * self.neighbors(i).len() as f64 / self.diag[i])
            .fold(0.0, f64::max)
    }

    /// Max-norm of `D - A` as an operator.
    pub fn operator_norm_inf(&self) -> f64 {
        (0..self.len())
            .map(|i| self.diag[i] + self.coupling.abs() * self.neighbors(i).len() as f64)
            .fold(0.0, f64::max)
    }

    /// `1/2 <phi, (D - A) phi> - <b, phi>`.
    pub fn energy(&self, phi: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..self.len() {
            quad += phi[i] * self.apply_row(phi, i);
            lin += self.rhs[i] * phi[i];
        }
        0.5 * quad - lin
    }
}

/// Quadratic model over a lattice domain.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    domain: Arc<LatticeDomain>,
    params: ModelParams,
    form: QuadraticForm,
    external: Vec<f64>,
    tilt: Vec<f64>,
    boundary: Vec<f64>,
}

impl QuadraticModel {
    /// Darken geometry with its default linear tilt.
    pub fn darken(n: i64, params: ModelParams) -> Result<Self> {
        let domain = Arc::new(LatticeDomain::darken(n)?);
        let tilt = lambda_profile_darken(&domain, params.lambda)?;
        assemble(domain, params, tilt)
    }

    /// Channel geometry with tilt `-lambda x1 / N`, zero field and, unless
    /// overridden, zero boundary values.
    pub fn channel(n: i64, m: i64, params: ModelParams) -> Result<Self> {
        let domain = Arc::new(LatticeDomain::channel(n, m)?);
        let tilt = lambda_profile_channel(&domain, params.lambda)?;
        assemble(domain, params, tilt)
    }

    pub fn domain(&self) -> &LatticeDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> Arc<LatticeDomain> {
        Arc::clone(&self.domain)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn form(&self) -> &QuadraticForm {
        &self.form
    }

    pub fn len(&self) -> usize {
        self.form.len()
    }

    pub fn is_empty(&self) -> bool {
        self.form.is_empty()
    }

    /// Total linear field `b`.
    pub fn field(&self) -> &[f64] {
        self.form.rhs()
    }

    /// Site field `h_x`.
    pub fn external_field(&self) -> &[f64] {
        &self.external
    }

    pub fn tilt(&self) -> &[f64] {
        &self.tilt
    }

    /// `J` times the frozen boundary values adjacent to each site.
    pub fn boundary_coupling(&self) -> &[f64] {
        &self.boundary
    }

    /// Field without the chemical-potential tilt, `b - tilt`.
    pub fn untilted_field(&self) -> Vec<f64> {
        self.external
            .iter()
            .zip(&self.boundary)
            .map(|(h, bc)| h + bc)
            .collect()
    }

    /// Gradient of the untilted Hamiltonian, `(D - A) phi - (b - tilt)`.
    pub fn untilted_gradient(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.form.apply_row(phi, i) - (self.external[i] + self.boundary[i]))
            .collect()
    }

    pub fn hamiltonian_value(&self, phi: &ScalarField) -> Result<f64> {
        hamiltonian_value(self, phi)
    }
}

/// Assembles `D`, `A` and `b` for a domain, parameters and tilt.
pub fn assemble(
    domain: Arc<LatticeDomain>,
    params: ModelParams,
    tilt: ScalarField,
) -> Result<QuadraticModel> {
    params.validate()?;
    let n = domain.core_len();
    if n == 0 {
        return Err(Error::WrongGeometry {
            expected: "darken or channel",
        });
    }
    tilt.check_len(n)?;
    let geometry = domain.geometry();
    let (phi_left, phi_right) = params.boundary_values(geometry);
    let j = params.j;

    let mut diag = Vec::with_capacity(n);
    let mut external = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    for (i, s) in domain.core_sites().enumerate() {
        diag.push(1.0 + j * domain.degree_at(i) as f64);
        let h_x = match geometry {
            Geometry::Darken { .. } if s.x1 < 0 => params.h,
            _ => 0.0,
        };
        external.push(h_x);
        let (l, r) = domain.reservoir_counts(i);
        boundary.push(j * (l as f64 * phi_left + r as f64 * phi_right));
    }
    let tilt = tilt.into_values();
    let rhs: Vec<f64> = (0..n).map(|i| external[i] + tilt[i] + boundary[i]).collect();
    let form = QuadraticForm::from_domain(&domain, j, diag, rhs);
    Ok(QuadraticModel {
        domain,
        params,
        form,
        external,
        tilt,
        boundary,
    })
}

/// Tilted Hamiltonian `1/2 <phi,(D-A)phi> - <b,phi>`, boundary constant dropped.
pub fn hamiltonian_value(model: &QuadraticModel, phi: &ScalarField) -> Result<f64> {
    phi.check_len(model.len())?;
    Ok(model.form.energy(phi.values()))
}
