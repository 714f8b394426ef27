//! Stokes eigenmodes on the no-slip square via the stream function.
//!
//! With `u = curl(psi)` and clamped walls (`psi = dpsi/dn = 0`), the Stokes
//! eigenproblem becomes the pencil `Lap^2 psi = lambda (-Lap) psi`. Both sides are
//! discretized with the 5-point Laplacian (ghost-mirror clamping on the walls),
//! reduced by Cholesky and solved densely. The lowest eigenvectors are turned into
//! collocated nodal velocities by central differences, which makes every mode
//! exactly divergence free and zero on the walls. A final Rayleigh-Ritz step in
//! the nodal H and V forms orthonormalizes the modes and fixes the eigenvalues.

use faer::{Mat, MatRef, Side};

use super::{
    clusters, DomainKind, DomainSpec, GridField, StokesBasis, MAX_DIRICHLET_GRID,
};
use crate::error::{config, Error, Result};

/// Relative eigenvalue gap below which modes are treated as one degenerate cluster.
const CLUSTER_GAP: f64 = 1e-8;
/// Extra pencil eigenvectors carried into the Ritz step.
const RITZ_MARGIN: usize = 6;

fn numeric(what: &str, err: impl std::fmt::Debug) -> Error {
    Error::Numeric(format!("{what}: {err:?}"))
}

/// Dense `h^2 (-Lap)` on the `(G-1)^2` interior nodes, 5-point stencil.
fn scaled_laplacian(m: usize) -> Mat<f64> {
    let dof = m * m;
    let mut a = Mat::<f64>::zeros(dof, dof);
    for iy in 0..m {
        for ix in 0..m {
            let p = iy * m + ix;
            a[(p, p)] = 4.0;
            for q in interior_neighbours(m, ix, iy).into_iter().flatten() {
                a[(p, q)] = -1.0;
            }
        }
    }
    a
}

fn interior_neighbours(m: usize, ix: usize, iy: usize) -> [Option<usize>; 4] {
    let at = |x: usize, y: usize| y * m + x;
    [
        (ix > 0).then(|| at(ix - 1, iy)),
        (ix + 1 < m).then(|| at(ix + 1, iy)),
        (iy > 0).then(|| at(ix, iy - 1)),
        (iy + 1 < m).then(|| at(ix, iy + 1)),
    ]
}

/// Dense `h^4 Lap^2` with clamped walls: `S^2 + 2 diag(#wall neighbours)` where
/// `S` is the scaled 5-point operator. The diagonal term is the ghost mirror
/// `psi_{-1} = psi_{1}` that encodes `dpsi/dn = 0`.
fn scaled_clamped_biharmonic(m: usize) -> Mat<f64> {
    let dof = m * m;
    let mut b = Mat::<f64>::zeros(dof, dof);
    let stencil = |p: usize| -> Vec<(usize, f64)> {
        let (ix, iy) = (p % m, p / m);
        let mut s = vec![(p, 4.0)];
        s.extend(
            interior_neighbours(m, ix, iy)
                .into_iter()
                .flatten()
                .map(|q| (q, -1.0)),
        );
        s
    };
    for p in 0..dof {
        for (q, a_pq) in stencil(p) {
            for (r, a_qr) in stencil(q) {
                b[(p, r)] += a_pq * a_qr;
            }
        }
        let walls = interior_neighbours(m, p % m, p / m)
            .iter()
            .filter(|q| q.is_none())
            .count();
        b[(p, p)] += 2.0 * walls as f64;
    }
    b
}

/// Lowest `take` eigenpairs of the symmetric-definite pencil `k x = mu m x`,
/// returned with `m`-orthonormal eigenvectors as columns.
fn lowest_pencil_pairs(k: &Mat<f64>, m: &Mat<f64>, take: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let chol = m.llt(Side::Lower).map_err(|e| numeric("Cholesky factorization", e))?;
    let r: MatRef<'_, f64> = chol.L();
    let mut x = k.clone();
    r.solve_lower_triangular_in_place(&mut x);
    let mut c = x.transpose().to_owned();
    r.solve_lower_triangular_in_place(&mut c);
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let eig = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| numeric("symmetric eigensolve", e))?;
    let values: Vec<f64> = (0..take).map(|i| eig.S().column_vector()[i]).collect();
    let mut vecs = eig.U().subcols(0, take).to_owned();
    r.transpose().solve_upper_triangular_in_place(&mut vecs);
    Ok((values, vecs))
}

/// Collocated velocity `u = (dpsi/dy, -dpsi/dx)` by central differences.
///
/// `psi` holds one value per node (row-major). Wall values are treated as zero
/// and the clamped ghost mirror makes the wall velocity vanish, so wall nodes
/// are set to zero outright.
pub fn velocity_from_stream(domain: &DomainSpec, psi: &[f64]) -> GridField {
    let n = domain.nodes_per_axis();
    let h2 = 2.0 * domain.spacing();
    let mut u = GridField::zeros(n);
    let at = |ix: usize, iy: usize| -> f64 {
        if domain.is_wall(ix, iy) {
            0.0
        } else {
            psi[iy * n + ix]
        }
    };
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            let p = iy * n + ix;
            u.ux[p] = (at(ix, iy + 1) - at(ix, iy - 1)) / h2;
            u.uy[p] = -(at(ix + 1, iy) - at(ix - 1, iy)) / h2;
        }
    }
    u
}

/// Discrete Dirichlet form `sum over grid edges of (delta a).(delta b)`, the
/// nodal counterpart of `int grad a : grad b`.
pub fn dirichlet_energy(a: &GridField, b: &GridField, domain: &DomainSpec) -> f64 {
    let n = domain.nodes_per_axis();
    let mut acc = 0.0;
    for comp in [(&a.ux, &b.ux), (&a.uy, &b.uy)] {
        let (fa, fb) = comp;
        for iy in 0..n {
            for ix in 0..n {
                let p = iy * n + ix;
                if ix + 1 < n {
                    acc += (fa[p + 1] - fa[p]) * (fb[p + 1] - fb[p]);
                }
                if iy + 1 < n {
                    acc += (fa[p + n] - fa[p]) * (fb[p + n] - fb[p]);
                }
            }
        }
    }
    acc
}

/// Smooth asymmetric vector fields used to pin signs and orientations inside
/// degenerate clusters, so that the same physical mode gets the same
/// coefficient convention on every grid.
fn probe(domain: &DomainSpec, r: usize) -> GridField {
    let l = domain.side_length;
    let rf = r as f64;
    GridField::from_fn(domain, |x, y| {
        let (s, t) = (x / l, y / l);
        (
            ((2.1 + 0.7 * rf) * s + 0.5 * rf + 0.3).sin() * ((1.3 + 0.45 * rf) * t + 0.2).cos()
                + 0.3 * s * t * t,
            ((1.7 + 0.55 * rf) * t - 0.4 * rf + 0.1).cos() * ((2.3 + 0.35 * rf) * s + 0.6).sin()
                - 0.2 * s * s,
        )
    })
}

/// Rotates every cluster onto the Gram-Schmidt orthonormalization of the
/// probes' projections, which fixes both orientation and sign.
fn canonicalize(domain: &DomainSpec, weights: &[f64], modes: &mut [GridField], ranges: &[std::ops::Range<usize>]) {
    let max_size = ranges.iter().map(|r| r.len()).max().unwrap_or(1);
    let probes: Vec<GridField> = (0..max_size + 4).map(|r| probe(domain, r)).collect();
    for range in ranges {
        let m = range.len();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        let candidates = probes
            .iter()
            .map(|p| range.clone().map(|c| p.dot(&modes[c], weights)).collect::<Vec<_>>())
            .chain((0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()));
        for mut v in candidates {
            if basis.len() == m {
                break;
            }
            let size0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let size = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if size > 1e-6 * size0.max(f64::MIN_POSITIVE) {
                v.iter_mut().for_each(|a| *a /= size);
                basis.push(v);
            }
        }
        let old: Vec<GridField> = range.clone().map(|c| modes[c].clone()).collect();
        for (s, q) in basis.iter().enumerate() {
            let mut e = GridField::zeros(old[0].nodes());
            for (c, coef) in q.iter().enumerate() {
                e.axpy(*coef, &old[c]);
            }
            modes[range.start + s] = e;
        }
    }
}

/// Stokes eigenbasis of the no-slip square `[0, L]^2` on a grid with
/// `grid_points` cells per axis.
pub fn build_dirichlet_basis(
    side_length: f64,
    grid_points: usize,
    n_modes: usize,
) -> Result<StokesBasis> {
    if n_modes == 0 {
        return config("n_modes must be at least 1");
    }
    let domain = DomainSpec::new(DomainKind::DirichletSquare, side_length, grid_points)?;
    if grid_points > MAX_DIRICHLET_GRID {
        return config(format!(
            "dense Dirichlet eigensolve is capped at grid {MAX_DIRICHLET_GRID}, got {grid_points}"
        ));
    }
    let m = grid_points - 1;
    let dof = m * m;
    if 4 * n_modes > dof {
        return config(format!(
            "{n_modes} modes exceed a quarter of the {dof} interior unknowns of grid {grid_points}"
        ));
    }
    let n = domain.nodes_per_axis();
    let weights = domain.quadrature_weights();

    // The Ritz subspace must not split a degenerate pencil cluster, or the
    // symmetric pairs of the square come out slightly split.
    let wanted = (n_modes + RITZ_MARGIN).min(dof);
    let computed = (wanted + 8).min(dof);
    let (mu, psi) = lowest_pencil_pairs(
        &scaled_clamped_biharmonic(m),
        &scaled_laplacian(m),
        computed,
    )?;
    let mut take = wanted;
    while take < computed && mu[take] - mu[take - 1] <= CLUSTER_GAP * mu[take].abs() {
        take += 1;
    }
    let raw: Vec<GridField> = (0..take)
        .map(|j| {
            let mut nodal = vec![0.0; n * n];
            for iy in 0..m {
                for ix in 0..m {
                    nodal[(iy + 1) * n + ix + 1] = psi[(iy * m + ix, j)];
                }
            }
            velocity_from_stream(&domain, &nodal)
        })
        .collect();

    // Rayleigh-Ritz in the nodal forms.
    let gram = Mat::<f64>::from_fn(take, take, |a, b| raw[a].dot(&raw[b], &weights));
    let stiff = Mat::<f64>::from_fn(take, take, |a, b| dirichlet_energy(&raw[a], &raw[b], &domain));
    let (ritz, coef) = lowest_pencil_pairs(&stiff, &gram, take)?;
    let mut modes: Vec<GridField> = (0..take)
        .map(|s| {
            let mut e = GridField::zeros(n);
            for (a, field) in raw.iter().enumerate() {
                e.axpy(coef[(a, s)], field);
            }
            e
        })
        .collect();

    let ranges = clusters(&ritz, CLUSTER_GAP);
    canonicalize(&domain, &weights, &mut modes, &ranges);
    let mut eigenvalues = vec![0.0; take];
    for r in &ranges {
        let mean = ritz[r.clone()].iter().sum::<f64>() / r.len() as f64;
        eigenvalues[r.clone()].iter_mut().for_each(|v| *v = mean);
    }
    modes.truncate(n_modes);
    eigenvalues.truncate(n_modes);
    if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Numeric(
            "non-positive Stokes eigenvalue from the pencil".into(),
        ));
    }
    Ok(StokesBasis::from_parts(domain, eigenvalues, weights, modes, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biharmonic_stencil_rows() {
        let b = scaled_clamped_biharmonic(5);
        // centre node: classic 13-point stencil
        let centre = 2 * 5 + 2;
        assert_eq!(b[(centre, centre)], 20.0);
        assert_eq!(b[(centre, centre + 1)], -8.0);
        assert_eq!(b[(centre, centre + 2)], 1.0);
        assert_eq!(b[(centre, centre + 5 + 1)], 2.0);
        // node next to one wall: 16 + 3 + 2 (mirror)
        let side = 2 * 5;
        assert_eq!(b[(side, side)], 21.0);
        // corner node: two walls
        assert_eq!(b[(0, 0)], 16.0 + 2.0 + 4.0);
    }

    #[test]
    fn rejects_oversized_requests() {
        assert!(build_dirichlet_basis(1.0, 8, 13).is_err());
        assert!(build_dirichlet_basis(1.0, 8, 0).is_err());
        assert!(build_dirichlet_basis(1.0, 66, 4).is_err());
        assert!(build_dirichlet_basis(1.0, 9, 4).is_err());
    }

    #[test]
    fn small_grid_invariants() {
        let b = build_dirichlet_basis(1.0, 16, 12).unwrap();
        assert!(b.gram_deviation() < 1e-10);
        assert_eq!(b.max_wall_value(), 0.0);
        assert!(b.max_divergence() < 1e-9, "{}", b.max_divergence());
        assert!(b.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        // the Ritz values are the Dirichlet energies of the modes
        for k in 0..b.dim() {
            let e = dirichlet_energy(b.mode(k), b.mode(k), b.domain());
            assert!((e - b.eigenvalues()[k]).abs() < 1e-8 * e);
        }
    }
}
