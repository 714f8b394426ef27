//! Divergence-free Stokes eigenbases and fields expanded over them.
//!
//! A [`StokesBasis`] stores its modes as two-component grid functions together
//! with the quadrature weights that define the discrete H inner product. Every
//! norm of a [`SpectralField`] is a weighted coefficient sum:
//!
//! ```text
//! |u|_H^2 = sum c_k^2      |u|_V^2 = sum lambda_k c_k^2      |Au|_H^2 = sum lambda_k^2 c_k^2
//! ```

mod dirichlet;
pub mod io;
mod periodic;

pub use dirichlet::{build_dirichlet_basis, dirichlet_energy, velocity_from_stream};
pub use periodic::{build_periodic_basis, build_periodic_basis_on_grid, FourierMode, Phase};

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};

/// Largest Dirichlet grid accepted by the dense eigensolver.
pub const MAX_DIRICHLET_GRID: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    PeriodicTorus,
    DirichletSquare,
}

/// Computational domain `[0, L]^2` with `grid_points` cells per axis.
///
/// On the torus the grid has `grid_points` nodes per period; on the square it
/// has `grid_points + 1` nodes per axis including both walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub side_length: f64,
    pub grid_points: usize,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, side_length: f64, grid_points: usize) -> Result<Self> {
        let spec = DomainSpec {
            kind,
            side_length,
            grid_points,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_length > 0.0 && self.side_length.is_finite()) {
            return config(format!(
                "side_length must be positive, got {}",
                self.side_length
            ));
        }
        if self.grid_points < 8 || self.grid_points % 2 != 0 {
            return config(format!(
                "grid_points must be even and at least 8, got {}",
                self.grid_points
            ));
        }
        Ok(())
    }

    pub fn nodes_per_axis(&self) -> usize {
        match self.kind {
            DomainKind::PeriodicTorus => self.grid_points,
            DomainKind::DirichletSquare => self.grid_points + 1,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis() * self.nodes_per_axis()
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.grid_points as f64
    }

    /// Rectangle rule on the torus, trapezoidal rule on the square.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.nodes_per_axis();
        let cell = self.spacing() * self.spacing();
        match self.kind {
            DomainKind::PeriodicTorus => vec![cell; n * n],
            DomainKind::DirichletSquare => {
                let edge = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let mut w = Vec::with_capacity(n * n);
                for iy in 0..n {
                    for ix in 0..n {
                        w.push(cell * edge(ix) * edge(iy));
                    }
                }
                w
            }
        }
    }

    /// Whether node `(ix, iy)` lies on the no-slip wall.
    pub fn is_wall(&self, ix: usize, iy: usize) -> bool {
        match self.kind {
            DomainKind::PeriodicTorus => false,
            DomainKind::DirichletSquare => {
                let last = self.grid_points;
                ix == 0 || iy == 0 || ix == last || iy == last
            }
        }
    }
}

/// Two-component velocity sampled on the nodes of a square grid, row-major
/// with index `iy * nodes + ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    nodes: usize,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl GridField {
    pub fn zeros(nodes: usize) -> Self {
        GridField {
            nodes,
            ux: vec![0.0; nodes * nodes],
            uy: vec![0.0; nodes * nodes],
        }
    }

    pub fn from_components(nodes: usize, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != nodes * nodes || uy.len() != nodes * nodes {
            return contract(format!(
                "grid components must have {} entries, got {} and {}",
                nodes * nodes,
                ux.len(),
                uy.len()
            ));
        }
        Ok(GridField { nodes, ux, uy })
    }

    /// Samples `f(x, y)` at every node of `domain`.
    pub fn from_fn(domain: &DomainSpec, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let n = domain.nodes_per_axis();
        let h = domain.spacing();
        let mut field = GridField::zeros(n);
        for iy in 0..n {
            for ix in 0..n {
                let (a, b) = f(ix as f64 * h, iy as f64 * h);
                field.ux[iy * n + ix] = a;
                field.uy[iy * n + ix] = b;
            }
        }
        field
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn axpy(&mut self, a: f64, other: &GridField) {
        for (s, o) in self.ux.iter_mut().zip(&other.ux) {
            *s += a * o;
        }
        for (s, o) in self.uy.iter_mut().zip(&other.uy) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.ux.iter_mut().chain(self.uy.iter_mut()).for_each(|v| *v *= a);
    }

    /// Weighted inner product `sum_p w_p u(p) . v(p)`.
    pub fn dot(&self, other: &GridField, weights: &[f64]) -> f64 {
        let mut acc = 0.0;
        for p in 0..weights.len() {
            acc += weights[p] * (self.ux[p] * other.ux[p] + self.uy[p] * other.uy[p]);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.ux
            .iter()
            .chain(&self.uy)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Velocity gradient on the grid: `d(ux)/dx`, `d(ux)/dy`, `d(uy)/dx`, `d(uy)/dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGradient {
    pub dux_dx: Vec<f64>,
    pub dux_dy: Vec<f64>,
    pub duy_dx: Vec<f64>,
    pub duy_dy: Vec<f64>,
}

impl GridGradient {
    pub fn zeros(len: usize) -> Self {
        GridGradient {
            dux_dx: vec![0.0; len],
            dux_dy: vec![0.0; len],
            duy_dx: vec![0.0; len],
            duy_dy: vec![0.0; len],
        }
    }

    pub fn axpy(&mut self, a: f64, other: &GridGradient) {
        let pairs = [
            (&mut self.dux_dx, &other.dux_dx),
            (&mut self.dux_dy, &other.dux_dy),
            (&mut self.duy_dx, &other.duy_dx),
            (&mut self.duy_dy, &other.duy_dy),
        ];
        for (s, o) in pairs {
            for (x, y) in s.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn divergence(&self) -> Vec<f64> {
        self.dux_dx
            .iter()
            .zip(&self.duy_dy)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Velocity expanded in a Stokes basis: `u = sum_k c_k e_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return contract(format!("coefficient {i} is not finite"));
        }
        Ok(SpectralField { coeffs })
    }

    pub(crate) fn from_vec(coeffs: Vec<f64>) -> Self {
        SpectralField { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        SpectralField {
            coeffs: vec![0.0; dim],
        }
    }

    /// Coordinate vector of mode `index` (zero-based).
    pub fn unit(dim: usize, index: usize) -> Self {
        let mut f = SpectralField::zeros(dim);
        f.coeffs[index] = 1.0;
        f
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn scaled(&self, a: f64) -> Self {
        SpectralField::from_vec(self.coeffs.iter().map(|c| a * c).collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &SpectralField, b: f64) -> Result<Self> {
        same_dim(self, other)?;
        Ok(SpectralField::from_vec(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    /// `P_n u`: keeps the first `n` coefficients and zeroes the rest.
    pub fn truncated(&self, n: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.iter_mut().skip(n).for_each(|v| *v = 0.0);
        SpectralField::from_vec(c)
    }

    pub fn dot(&self, other: &SpectralField) -> Result<f64> {
        same_dim(self, other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum())
    }
}

pub(crate) fn same_dim(a: &SpectralField, b: &SpectralField) -> Result<()> {
    if a.dim() != b.dim() {
        return contract(format!(
            "field dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        ));
    }
    Ok(())
}

/// Squared H, V and D(A) norms of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub h_sq: f64,
    pub v_sq: f64,
    pub a_sq: f64,
}

/// Weighted sums over the leading `coeffs.len()` eigenvalues.
pub fn spectral_norms(coeffs: &[f64], eigenvalues: &[f64]) -> Norms {
    let mut n = Norms {
        h_sq: 0.0,
        v_sq: 0.0,
        a_sq: 0.0,
    };
    for (c, l) in coeffs.iter().zip(eigenvalues) {
        let c2 = c * c;
        n.h_sq += c2;
        n.v_sq += l * c2;
        n.a_sq += l * l * c2;
    }
    n
}

/// Discrete divergence-free eigenbasis `{e_k, lambda_k}` of the Stokes operator.
///
/// Immutable once built; share it behind an `Arc` across threads.
#[derive(Clone, Debug)]
pub struct StokesBasis {
    domain: DomainSpec,
    eigenvalues: Vec<f64>,
    weights: Vec<f64>,
    modes: Vec<GridField>,
    fourier: Option<Vec<FourierMode>>,
}

impl StokesBasis {
    pub(crate) fn from_parts(
        domain: DomainSpec,
        eigenvalues: Vec<f64>,
        weights: Vec<f64>,
        modes: Vec<GridField>,
        fourier: Option<Vec<FourierMode>>,
    ) -> Self {
        StokesBasis {
            domain,
            eigenvalues,
            weights,
            modes,
            fourier,
        }
    }

    /// Builds the basis appropriate for `domain`.
    pub fn build(domain: &DomainSpec, n_modes: usize) -> Result<Self> {
        match domain.kind {
            DomainKind::PeriodicTorus => {
                build_periodic_basis_on_grid(domain.side_length, domain.grid_points, n_modes)
            }
            DomainKind::DirichletSquare => {
                build_dirichlet_basis(domain.side_length, domain.grid_points, n_modes)
            }
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn modes(&self) -> &[GridField] {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> &GridField {
        &self.modes[k]
    }

    /// Wavevector/phase labels, present on the torus only.
    pub fn fourier_modes(&self) -> Option<&[FourierMode]> {
        self.fourier.as_deref()
    }

    pub fn inner(&self, a: &GridField, b: &GridField) -> f64 {
        a.dot(b, &self.weights)
    }

    /// `max_{i,j} |<e_i, e_j> - delta_ij|`.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.dim() {
            for j in i..self.dim() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(&self.modes[i], &self.modes[j]) - target).abs());
            }
        }
        worst
    }

    /// Gradient of mode `k` on the basis grid: analytic on the torus, second-order
    /// finite differences on the square.
    pub fn mode_gradient(&self, k: usize) -> GridGradient {
        match &self.fourier {
            Some(f) => f[k].sample(self.domain.side_length, self.domain.nodes_per_axis()).1,
            None => fd_gradient(&self.modes[k], &self.domain),
        }
    }

    /// Largest discrete divergence over all modes and all non-wall nodes.
    pub fn max_divergence(&self) -> f64 {
        let n = self.domain.nodes_per_axis();
        let mut worst = 0.0_f64;
        for k in 0..self.dim() {
            let div = self.mode_gradient(k).divergence();
            for iy in 0..n {
                for ix in 0..n {
                    if !self.domain.is_wall(ix, iy) {
                        worst = worst.max(div[iy * n + ix].abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest mode magnitude on wall nodes (zero on the torus).
    pub fn max_wall_value(&self) -> f64 {
        let n = self.domain.nodes_per_axis();
        let mut worst = 0.0_f64;
        for mode in &self.modes {
            for iy in 0..n {
                for ix in 0..n {
                    if self.domain.is_wall(ix, iy) {
                        let p = iy * n + ix;
                        worst = worst.max(mode.ux[p].abs()).max(mode.uy[p].abs());
                    }
                }
            }
        }
        worst
    }

    pub(crate) fn check_field(&self, u: &SpectralField) -> Result<()> {
        if u.dim() != self.dim() {
            return contract(format!(
                "field has {} coefficients but the basis has {} modes",
                u.dim(),
                self.dim()
            ));
        }
        Ok(())
    }

    pub(crate) fn check_level(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.dim() {
            return contract(format!(
                "truncation level {n} outside 1..={}",
                self.dim()
            ));
        }
        Ok(())
    }
}

/// Central differences inside, one-sided second-order stencils on the walls.
pub(crate) fn fd_gradient(field: &GridField, domain: &DomainSpec) -> GridGradient {
    let n = domain.nodes_per_axis();
    let h = domain.spacing();
    let mut g = GridGradient::zeros(n * n);
    let deriv = |f: &[f64], p: usize, i: usize, stride: usize| -> f64 {
        if i == 0 {
            (-3.0 * f[p] + 4.0 * f[p + stride] - f[p + 2 * stride]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * f[p] - 4.0 * f[p - stride] + f[p - 2 * stride]) / (2.0 * h)
        } else {
            (f[p + stride] - f[p - stride]) / (2.0 * h)
        }
    };
    for iy in 0..n {
        for ix in 0..n {
            let p = iy * n + ix;
            g.dux_dx[p] = deriv(&field.ux, p, ix, 1);
            g.dux_dy[p] = deriv(&field.ux, p, iy, n);
            g.duy_dx[p] = deriv(&field.uy, p, ix, 1);
            g.duy_dy[p] = deriv(&field.uy, p, iy, n);
        }
    }
    g
}

/// Squared H, V and D(A) norms of `u`.
pub fn norms(u: &SpectralField, basis: &StokesBasis) -> Result<Norms> {
    basis.check_field(u)?;
    Ok(spectral_norms(u.coeffs(), basis.eigenvalues()))
}

/// `P_n` of a grid field: `c_k = <field, e_k>` for `k < n`, zero beyond.
pub fn project(grid_field: &GridField, basis: &StokesBasis, n: usize) -> Result<SpectralField> {
    if n > basis.dim() {
        return contract(format!(
            "projection level {n} exceeds basis dimension {}",
            basis.dim()
        ));
    }
    if grid_field.nodes() != basis.domain().nodes_per_axis() {
        return contract(format!(
            "grid field has {} nodes per axis, basis grid has {}",
            grid_field.nodes(),
            basis.domain().nodes_per_axis()
        ));
    }
    let mut c = vec![0.0; basis.dim()];
    for (k, ck) in c.iter_mut().enumerate().take(n) {
        *ck = basis.inner(grid_field, basis.mode(k));
    }
    SpectralField::new(c)
}

/// `sum_k c_k e_k` on the basis grid.
pub fn reconstruct(u: &SpectralField, basis: &StokesBasis) -> Result<GridField> {
    basis.check_field(u)?;
    let mut out = GridField::zeros(basis.domain().nodes_per_axis());
    for (c, mode) in u.coeffs().iter().zip(basis.modes()) {
        if *c != 0.0 {
            out.axpy(*c, mode);
        }
    }
    Ok(out)
}

/// Groups consecutive indices whose eigenvalues agree to `rel_gap`.
pub(crate) fn clusters(eigenvalues: &[f64], rel_gap: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=eigenvalues.len() {
        let split = i == eigenvalues.len()
            || (eigenvalues[i] - eigenvalues[i - 1]).abs() >= rel_gap * eigenvalues[i].abs();
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::new(DomainKind::PeriodicTorus, 1.0, 6).is_err());
        assert!(DomainSpec::new(DomainKind::PeriodicTorus, 1.0, 9).is_err());
        assert!(DomainSpec::new(DomainKind::DirichletSquare, 0.0, 16).is_err());
        let d = DomainSpec::new(DomainKind::DirichletSquare, 2.0, 16).unwrap();
        assert_eq!(d.nodes_per_axis(), 17);
        let total: f64 = d.quadrature_weights().iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_mode_norms_and_zero() {
        let basis = build_periodic_basis(std::f64::consts::TAU, 6).unwrap();
        let l1 = basis.eigenvalues()[0];
        let n = norms(&SpectralField::unit(6, 0), &basis).unwrap();
        assert_eq!((n.h_sq, n.v_sq, n.a_sq), (1.0, l1, l1 * l1));
        let z = norms(&SpectralField::zeros(6), &basis).unwrap();
        assert_eq!((z.h_sq, z.v_sq, z.a_sq), (0.0, 0.0, 0.0));
        assert!(norms(&SpectralField::zeros(5), &basis).is_err());
    }

    #[test]
    fn project_rejects_level_above_dim() {
        let basis = build_periodic_basis(1.0, 4).unwrap();
        let g = GridField::zeros(basis.domain().nodes_per_axis());
        assert!(project(&g, &basis, 5).is_err());
        let zero = project(&g, &basis, 4).unwrap();
        assert!(zero.coeffs().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn non_finite_coefficients_rejected() {
        assert!(SpectralField::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn cluster_grouping() {
        let c = clusters(&[1.0, 1.0, 2.0, 3.0, 3.0 + 1e-12], 1e-8);
        assert_eq!(c, vec![0..2, 2..3, 3..5]);
    }
}
