//! The advection term `B(u, v) = P_H((u . grad) v)` in eigen-coordinates.
//!
//! Evaluation is pseudo-spectral: both arguments are reconstructed on an
//! evaluation grid, multiplied pointwise and projected back with the grid's
//! quadrature. On the torus the evaluation grid can be the 3/2-padded grid, on
//! which every triple product of resolved modes is integrated exactly.

use std::sync::Arc;

use crate::error::{config, contract, Result};
use crate::spectral::{
    fd_gradient, spectral_norms, DomainKind, GridField, GridGradient, SpectralField,
    StokesBasis,
};

/// Modes and their gradients sampled on the grid used for products.
#[derive(Clone, Debug)]
pub struct BilinearWorkspace {
    basis: Arc<StokesBasis>,
    dealias: bool,
    nodes: usize,
    weights: Vec<f64>,
    modes: Vec<GridField>,
    grads: Vec<GridGradient>,
}

impl BilinearWorkspace {
    /// `dealias` selects the 3/2-padded grid on the torus and has no effect on
    /// the square, where products are integrated with the basis trapezoid rule.
    pub fn new(basis: Arc<StokesBasis>, dealias: bool) -> Self {
        let domain = basis.domain().clone();
        let (dealias, nodes, modes, grads) = match (domain.kind, basis.fourier_modes()) {
            (DomainKind::PeriodicTorus, Some(labels)) if dealias => {
                let padded = 3 * domain.grid_points / 2;
                let (modes, grads) = labels
                    .iter()
                    .map(|m| m.sample(domain.side_length, padded))
                    .unzip();
                (true, padded, modes, grads)
            }
            _ => {
                let grads = (0..basis.dim()).map(|k| basis.mode_gradient(k)).collect();
                (false, domain.nodes_per_axis(), basis.modes().to_vec(), grads)
            }
        };
        let weights = if nodes == domain.nodes_per_axis() {
            basis.quadrature_weights().to_vec()
        } else {
            let cell = (domain.side_length / nodes as f64).powi(2);
            vec![cell; nodes * nodes]
        };
        BilinearWorkspace {
            basis,
            dealias,
            nodes,
            weights,
            modes,
            grads,
        }
    }

    pub fn basis(&self) -> &StokesBasis {
        &self.basis
    }

    pub fn shared_basis(&self) -> Arc<StokesBasis> {
        Arc::clone(&self.basis)
    }

    /// Whether products are evaluated on the padded grid.
    pub fn dealiased(&self) -> bool {
        self.dealias
    }

    pub fn eval_nodes(&self) -> usize {
        self.nodes
    }

    /// Largest deviation between the stored gradients and central differences of
    /// the stored mode samples, relative to each mode's gradient scale. On the
    /// square the stored gradients are those differences, so this is rounding;
    /// on the torus it is the `O(h^2)` truncation error of the stencil.
    pub fn gradient_consistency(&self) -> f64 {
        let domain = self.basis.domain();
        let n = self.nodes;
        let h = domain.side_length / if domain.kind == DomainKind::PeriodicTorus { n } else { n - 1 } as f64;
        let mut worst = 0.0_f64;
        for (mode, grad) in self.modes.iter().zip(&self.grads) {
            let fd = match domain.kind {
                DomainKind::DirichletSquare => fd_gradient(mode, domain),
                DomainKind::PeriodicTorus => periodic_central_gradient(mode, h),
            };
            let stored = [&grad.dux_dx, &grad.dux_dy, &grad.duy_dx, &grad.duy_dy];
            let scale = stored
                .iter()
                .flat_map(|c| c.iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(f64::MIN_POSITIVE);
            let approx = [&fd.dux_dx, &fd.dux_dy, &fd.duy_dx, &fd.duy_dy];
            for (a, b) in approx.iter().zip(stored) {
                for (x, y) in a.iter().zip(b.iter()) {
                    worst = worst.max((x - y).abs() / scale);
                }
            }
        }
        worst
    }

    fn check(&self, u: &SpectralField) -> Result<()> {
        if u.dim() != self.basis.dim() {
            return contract(format!(
                "field has {} coefficients, workspace basis has {}",
                u.dim(),
                self.basis.dim()
            ));
        }
        Ok(())
    }

    fn field(&self, u: &SpectralField) -> GridField {
        let mut out = GridField::zeros(self.nodes);
        for (c, m) in u.coeffs().iter().zip(&self.modes) {
            if *c != 0.0 {
                out.axpy(*c, m);
            }
        }
        out
    }

    fn gradient(&self, u: &SpectralField) -> GridGradient {
        let mut out = GridGradient::zeros(self.nodes * self.nodes);
        for (c, g) in u.coeffs().iter().zip(&self.grads) {
            if *c != 0.0 {
                out.axpy(*c, g);
            }
        }
        out
    }

    /// `(u . grad) v` on the evaluation grid.
    fn advect(&self, u: &SpectralField, v: &SpectralField) -> GridField {
        let uf = self.field(u);
        let gv = self.gradient(v);
        advect_grid(&uf, &gv)
    }

    fn quad(&self, a: &GridField, b: &GridField) -> f64 {
        a.dot(b, &self.weights)
    }
}

fn periodic_central_gradient(field: &GridField, h: f64) -> GridGradient {
    let n = field.nodes();
    let mut g = GridGradient::zeros(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let p = iy * n + ix;
            let (e, w) = (iy * n + (ix + 1) % n, iy * n + (ix + n - 1) % n);
            let (s, q) = (((iy + 1) % n) * n + ix, ((iy + n - 1) % n) * n + ix);
            g.dux_dx[p] = (field.ux[e] - field.ux[w]) / (2.0 * h);
            g.dux_dy[p] = (field.ux[s] - field.ux[q]) / (2.0 * h);
            g.duy_dx[p] = (field.uy[e] - field.uy[w]) / (2.0 * h);
            g.duy_dy[p] = (field.uy[s] - field.uy[q]) / (2.0 * h);
        }
    }
    g
}

fn advect_grid(u: &GridField, g: &GridGradient) -> GridField {
    let len = u.ux.len();
    let mut out = GridField::zeros(u.nodes());
    for p in 0..len {
        out.ux[p] = u.ux[p] * g.dux_dx[p] + u.uy[p] * g.dux_dy[p];
        out.uy[p] = u.ux[p] * g.duy_dx[p] + u.uy[p] * g.duy_dy[p];
    }
    out
}

/// `P_n B(u, v)`: coefficients `<(u . grad) v, e_k>` for `k < n`, zero beyond.
pub fn bilinear_b(
    u: &SpectralField,
    v: &SpectralField,
    ws: &BilinearWorkspace,
    n: usize,
) -> Result<SpectralField> {
    ws.check(u)?;
    ws.check(v)?;
    ws.basis.check_level(n)?;
    let adv = ws.advect(u, v);
    let mut b = vec![0.0; u.dim()];
    for (k, bk) in b.iter_mut().enumerate().take(n) {
        *bk = ws.quad(&adv, &ws.modes[k]);
    }
    SpectralField::new(b)
}

/// `<B(u, v), v>`, which vanishes in the continuum.
pub fn skew_pairing(u: &SpectralField, v: &SpectralField, ws: &BilinearWorkspace) -> Result<f64> {
    ws.check(u)?;
    ws.check(v)?;
    let adv = ws.advect(u, v);
    Ok(ws.quad(&adv, &ws.field(v)))
}

/// `<B(u, u), A u>`, zero on the torus and generically nonzero under no-slip.
pub fn grad_pairing(u: &SpectralField, ws: &BilinearWorkspace) -> Result<f64> {
    ws.check(u)?;
    let au = SpectralField::from_vec(
        u.coeffs()
            .iter()
            .zip(ws.basis.eigenvalues())
            .map(|(c, l)| c * l)
            .collect(),
    );
    let adv = ws.advect(u, u);
    Ok(ws.quad(&adv, &ws.field(&au)))
}

/// `|<B(u,u), Au>| / (|u|_H^{1/2} |u|_V |Au|_H^{3/2})`.
pub fn ladyzhenskaya_ratio(u: &SpectralField, ws: &BilinearWorkspace) -> Result<f64> {
    ws.check(u)?;
    let n = spectral_norms(u.coeffs(), ws.basis.eigenvalues());
    if n.h_sq == 0.0 {
        return contract("Ladyzhenskaya ratio of the zero field is undefined");
    }
    let denom = n.h_sq.powf(0.25) * n.v_sq.sqrt() * n.a_sq.powf(0.75);
    Ok(grad_pairing(u, ws)?.abs() / denom)
}

/// `|<B(u, v), v>| / (|u|_V |v|_V |v|_H)`.
pub fn skew_ratio(u: &SpectralField, v: &SpectralField, ws: &BilinearWorkspace) -> Result<f64> {
    let eig = ws.basis.eigenvalues();
    ws.check(u)?;
    ws.check(v)?;
    let (nu, nv) = (spectral_norms(u.coeffs(), eig), spectral_norms(v.coeffs(), eig));
    if nu.h_sq == 0.0 || nv.h_sq == 0.0 {
        return contract("skew ratio with a zero field is undefined");
    }
    let scale = (nu.v_sq * nv.v_sq * nv.h_sq).sqrt();
    Ok(skew_pairing(u, v, ws)?.abs() / scale)
}

/// Linear part of the Galerkin drift: `-nu lambda_k c_k + f_k` for `k < n`.
pub fn rhs_stokes(
    u: &SpectralField,
    f: &SpectralField,
    nu: f64,
    basis: &StokesBasis,
    n: usize,
) -> Result<SpectralField> {
    basis.check_field(u)?;
    basis.check_field(f)?;
    basis.check_level(n)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return config(format!("viscosity must be positive, got {nu}"));
    }
    let mut out = vec![0.0; u.dim()];
    for k in 0..n {
        out[k] = -nu * basis.eigenvalues()[k] * u.coeffs()[k] + f.coeffs()[k];
    }
    SpectralField::new(out)
}

/// Full deterministic drift `-nu A u - P_n B(u, u) + P_n f`.
pub fn rhs_det(
    u: &SpectralField,
    f: &SpectralField,
    nu: f64,
    ws: &BilinearWorkspace,
    n: usize,
) -> Result<SpectralField> {
    let linear = rhs_stokes(u, f, nu, &ws.basis, n)?;
    let b = bilinear_b(u, u, ws, n)?;
    linear.combine(1.0, &b, -1.0)
}

/// Galerkin interaction coefficients `T[i][j][k] = <(e_i . grad) e_j, e_k>`,
/// computed once with the workspace quadrature so that
/// `sum_ij c_i c_j T[i][j][k]` equals `bilinear_b(u, u)` up to rounding.
#[derive(Clone, Debug)]
pub struct InteractionTensor {
    n: usize,
    data: Vec<f64>,
}

impl InteractionTensor {
    pub fn build(ws: &BilinearWorkspace, n: usize) -> Result<Self> {
        ws.basis.check_level(n)?;
        let weighted: Vec<GridField> = ws.modes[..n]
            .iter()
            .map(|m| {
                let mut w = m.clone();
                for (p, wp) in ws.weights.iter().enumerate() {
                    w.ux[p] *= wp;
                    w.uy[p] *= wp;
                }
                w
            })
            .collect();
        let mut data = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                let adv = advect_grid(&ws.modes[i], &ws.grads[j]);
                let row = &mut data[(i * n + j) * n..(i * n + j + 1) * n];
                for (k, wk) in weighted.iter().enumerate() {
                    let mut acc = 0.0;
                    for p in 0..adv.ux.len() {
                        acc += adv.ux[p] * wk.ux[p] + adv.uy[p] * wk.uy[p];
                    }
                    row[k] = acc;
                }
            }
        }
        Ok(InteractionTensor { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Writes `b_k = sum_{i,j<level} c_i c_j T[i][j][k]` for `k < level` into `out`.
    pub fn apply(&self, c: &[f64], level: usize, out: &mut [f64]) {
        debug_assert!(level <= self.n && c.len() >= level && out.len() >= level);
        let n = self.n;
        out[..level].iter_mut().for_each(|v| *v = 0.0);
        for (i, ci) in c[..level].iter().enumerate() {
            if *ci == 0.0 {
                continue;
            }
            for (j, cj) in c[..level].iter().enumerate() {
                let s = ci * cj;
                if s == 0.0 {
                    continue;
                }
                let row = &self.data[(i * n + j) * n..(i * n + j) * n + level];
                for (o, t) in out[..level].iter_mut().zip(row) {
                    *o += s * t;
                }
            }
        }
    }
}
