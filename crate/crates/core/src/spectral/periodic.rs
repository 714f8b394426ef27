//! Analytic divergence-free Fourier modes on the torus `[0, L)^2`.

use std::f64::consts::{SQRT_2, TAU};

use serde::{Deserialize, Serialize};

use super::{DomainKind, DomainSpec, GridField, GridGradient, StokesBasis};
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sin,
    Cos,
}

/// `e(x) = sqrt(2)/L * (k_perp/|k|) * phase(2 pi k.x / L)` with `k_perp = (-k2, k1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierMode {
    pub kx: i32,
    pub ky: i32,
    pub phase: Phase,
}

impl FourierMode {
    pub fn wavenumber_sq(&self) -> i64 {
        (self.kx as i64).pow(2) + (self.ky as i64).pow(2)
    }

    /// `(2 pi / L)^2 |k|^2`.
    pub fn eigenvalue(&self, side_length: f64) -> f64 {
        let s = TAU / side_length;
        s * s * self.wavenumber_sq() as f64
    }

    fn direction(&self) -> (f64, f64) {
        let norm = (self.wavenumber_sq() as f64).sqrt();
        (-(self.ky as f64) / norm, self.kx as f64 / norm)
    }

    /// Mode values and exact gradient on an `nodes x nodes` grid over `[0, L)^2`.
    pub fn sample(&self, side_length: f64, nodes: usize) -> (GridField, GridGradient) {
        let (dx, dy) = self.direction();
        let amp = SQRT_2 / side_length;
        let s = TAU / side_length;
        let mut field = GridField::zeros(nodes);
        let mut grad = GridGradient::zeros(nodes * nodes);
        for iy in 0..nodes {
            for ix in 0..nodes {
                let p = iy * nodes + ix;
                // Integer phase index keeps the argument exact modulo the period.
                let m = (self.kx as i64 * ix as i64 + self.ky as i64 * iy as i64)
                    .rem_euclid(nodes as i64);
                let theta = TAU * m as f64 / nodes as f64;
                let (val, der) = match self.phase {
                    Phase::Sin => (theta.sin(), theta.cos()),
                    Phase::Cos => (theta.cos(), -theta.sin()),
                };
                field.ux[p] = amp * dx * val;
                field.uy[p] = amp * dy * val;
                let gx = amp * der * s * self.kx as f64;
                let gy = amp * der * s * self.ky as f64;
                grad.dux_dx[p] = dx * gx;
                grad.dux_dy[p] = dx * gy;
                grad.duy_dx[p] = dy * gx;
                grad.duy_dy[p] = dy * gy;
            }
        }
        (field, grad)
    }
}

/// The `n` lowest modes ordered by `|k|^2`, then lexicographic wavevector over
/// the half plane `kx > 0 or (kx == 0 and ky > 0)`, sine before cosine.
pub(crate) fn lowest_fourier_modes(n: usize) -> Vec<FourierMode> {
    let r = (n as f64).sqrt().ceil() as i32 + 2;
    let mut modes = Vec::new();
    for kx in 0..=r {
        for ky in -r..=r {
            if kx == 0 && ky <= 0 {
                continue;
            }
            for phase in [Phase::Sin, Phase::Cos] {
                modes.push(FourierMode { kx, ky, phase });
            }
        }
    }
    modes.sort_by_key(|m| (m.wavenumber_sq(), m.kx, m.ky, m.phase));
    modes.truncate(n);
    modes
}

/// Smallest even grid (at least 8) on which the modes are exactly orthonormal
/// under the rectangle rule.
fn minimal_grid(modes: &[FourierMode]) -> usize {
    let kmax = modes
        .iter()
        .map(|m| m.kx.unsigned_abs().max(m.ky.unsigned_abs()) as usize)
        .max()
        .unwrap_or(0);
    (2 * kmax + 2).max(8)
}

/// The `n_modes` lowest divergence-free Fourier modes on the torus of side
/// `side_length`, sampled on the smallest grid that resolves them exactly.
pub fn build_periodic_basis(side_length: f64, n_modes: usize) -> Result<StokesBasis> {
    if n_modes == 0 {
        return config("n_modes must be at least 1");
    }
    let grid = minimal_grid(&lowest_fourier_modes(n_modes));
    build_periodic_basis_on_grid(side_length, grid, n_modes)
}

/// As [`build_periodic_basis`] on an explicit grid; the grid must satisfy
/// `grid_points > 2 * max |k_i|` so that the discrete inner product is exact.
pub fn build_periodic_basis_on_grid(
    side_length: f64,
    grid_points: usize,
    n_modes: usize,
) -> Result<StokesBasis> {
    if n_modes == 0 {
        return config("n_modes must be at least 1");
    }
    let domain = DomainSpec::new(DomainKind::PeriodicTorus, side_length, grid_points)?;
    let labels = lowest_fourier_modes(n_modes);
    let needed = minimal_grid(&labels);
    if grid_points < needed {
        return config(format!(
            "{n_modes} torus modes need at least {needed} grid points per axis, got {grid_points}"
        ));
    }
    let modes = labels
        .iter()
        .map(|m| m.sample(side_length, grid_points).0)
        .collect();
    let eigenvalues = labels.iter().map(|m| m.eigenvalue(side_length)).collect();
    let weights = domain.quadrature_weights();
    Ok(StokesBasis::from_parts(
        domain,
        eigenvalues,
        weights,
        modes,
        Some(labels),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_lowest_modes_on_unit_wavenumber_shell() {
        let b = build_periodic_basis(TAU, 4).unwrap();
        assert_eq!(b.eigenvalues(), &[1.0, 1.0, 1.0, 1.0]);
        let labels = b.fourier_modes().unwrap();
        assert_eq!((labels[0].kx, labels[0].ky, labels[0].phase), (0, 1, Phase::Sin));
        assert_eq!((labels[3].kx, labels[3].ky, labels[3].phase), (1, 0, Phase::Cos));
    }

    #[test]
    fn empty_basis_rejected() {
        assert!(build_periodic_basis(TAU, 0).is_err());
        assert!(build_periodic_basis(-1.0, 3).is_err());
    }

    #[test]
    fn under_resolved_grid_rejected() {
        // 44 modes stay within |k_i| <= 3 (8 points); the 45th is (0, 4) and needs 10.
        assert!(build_periodic_basis_on_grid(TAU, 8, 44).is_ok());
        assert!(build_periodic_basis_on_grid(TAU, 8, 45).is_err());
        assert!(build_periodic_basis_on_grid(TAU, 10, 45).is_ok());
    }

    #[test]
    fn gram_identity_and_divergence() {
        let b = build_periodic_basis(3.0, 32).unwrap();
        assert!(b.gram_deviation() <= 1e-10, "{}", b.gram_deviation());
        assert!(b.max_divergence() <= 1e-10, "{}", b.max_divergence());
    }

    /// Stored analytic gradients agree with a naive DFT derivative of the samples.
    #[test]
    fn gradients_match_spectral_derivative() {
        let b = build_periodic_basis(2.5, 12).unwrap();
        let n = b.domain().nodes_per_axis();
        let s = TAU / 2.5;
        for k in [0, 5, 11] {
            let mode = b.mode(k);
            let grad = b.mode_gradient(k);
            // d/dx along each row via DFT.
            for iy in 0..n {
                let row: Vec<f64> = (0..n).map(|ix| mode.ux[iy * n + ix]).collect();
                for ix in 0..n {
                    let mut d = 0.0;
                    for m in 0..n {
                        let freq = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                        if m == n / 2 {
                            continue;
                        }
                        let (mut re, mut im) = (0.0, 0.0);
                        for (j, v) in row.iter().enumerate() {
                            let a = -TAU * (m * j) as f64 / n as f64;
                            re += v * a.cos();
                            im += v * a.sin();
                        }
                        let a = TAU * (m * ix) as f64 / n as f64;
                        // i*freq*s*(re + i im) e^{ia}, real part
                        d += -freq * s * (re * a.sin() + im * a.cos());
                    }
                    d /= n as f64;
                    assert!((d - grad.dux_dx[iy * n + ix]).abs() < 1e-10);
                }
            }
        }
    }
}
