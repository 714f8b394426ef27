//! Truncated cylindrical Wiener increments and the multiplicative noise families.
//!
//! All four families are diagonal in the eigenbasis: `g_k(u) = a_k(u) e_k` for
//! `k < K`, so a model is fully described by its amplitude map `u -> a(u)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::spectral::{SpectralField, StokesBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Additive,
    DiagonalLinear,
    SaturatedDiagonal,
    AlphaGrowth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigma: Vec<f64>,
    cap: f64,
    alpha: f64,
}

impl NoiseModel {
    /// `cap` is only read for `SaturatedDiagonal` and `alpha` only for `AlphaGrowth`.
    pub fn new(kind: NoiseKind, sigma: Vec<f64>, cap: f64, alpha: f64) -> Result<Self> {
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return config("noise amplitudes must be finite and nonnegative");
        }
        if kind == NoiseKind::SaturatedDiagonal && !(cap.is_finite() && cap > 0.0) {
            return config(format!("cap must be positive, got {cap}"));
        }
        if kind == NoiseKind::AlphaGrowth && !(0.0..1.0).contains(&alpha) {
            return config(format!("alpha must lie in [0,1), got {alpha}"));
        }
        Ok(NoiseModel {
            kind,
            sigma,
            cap,
            alpha,
        })
    }

    /// Amplitudes `sigma_k = sigma0 (lambda_1 / lambda_k)^decay` on the first `modes`
    /// eigenvalues, so that `sigma_1 = sigma0`.
    pub fn with_decay(
        kind: NoiseKind,
        sigma0: f64,
        decay: f64,
        modes: usize,
        eigenvalues: &[f64],
        cap: f64,
        alpha: f64,
    ) -> Result<Self> {
        if modes > eigenvalues.len() {
            return config(format!(
                "noise drives {modes} modes but only {} eigenvalues are available",
                eigenvalues.len()
            ));
        }
        if decay < 2.0 {
            return config(format!(
                "decay exponent must be at least 2 for the D(A) Hilbert-Schmidt bound, got {decay}"
            ));
        }
        if !(sigma0.is_finite() && sigma0 >= 0.0) {
            return config(format!("sigma0 must be finite and nonnegative, got {sigma0}"));
        }
        let l1 = eigenvalues.first().copied().unwrap_or(1.0);
        let sigma = eigenvalues[..modes]
            .iter()
            .map(|l| sigma0 * (l1 / l).powf(decay))
            .collect();
        NoiseModel::new(kind, sigma, cap, alpha)
    }

    pub fn zero() -> Self {
        NoiseModel {
            kind: NoiseKind::Additive,
            sigma: Vec::new(),
            cap: 1.0,
            alpha: 0.0,
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Number of driven modes `K`.
    pub fn modes(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().fold(0.0, |m: f64, s| m.max(*s))
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().all(|s| *s == 0.0)
    }

    /// Same family restricted to the first `k` driven modes.
    pub fn truncated(&self, k: usize) -> Self {
        let mut m = self.clone();
        m.sigma.truncate(k);
        m
    }

    /// Same family with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.sigma.iter_mut().for_each(|s| *s *= factor);
        m
    }

    /// Writes `a_k(u)` for `k < out.len() <= K` into `out`. The growth factor of
    /// `AlphaGrowth` uses the H norm of all of `coeffs`.
    pub fn amplitudes_into(&self, coeffs: &[f64], out: &mut [f64]) {
        match self.kind {
            NoiseKind::Additive => out.copy_from_slice(&self.sigma[..out.len()]),
            NoiseKind::DiagonalLinear => {
                for ((o, s), c) in out.iter_mut().zip(&self.sigma).zip(coeffs) {
                    *o = s * c;
                }
            }
            NoiseKind::SaturatedDiagonal => {
                for ((o, s), c) in out.iter_mut().zip(&self.sigma).zip(coeffs) {
                    *o = s * c.clamp(-self.cap, self.cap);
                }
            }
            NoiseKind::AlphaGrowth => {
                let h = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
                let growth = 1.0 + h.powf(self.alpha);
                for (o, s) in out.iter_mut().zip(&self.sigma) {
                    *o = s * growth;
                }
            }
        }
    }

    pub fn amplitudes(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.modes()];
        self.amplitudes_into(coeffs, &mut out);
        out
    }
}

/// `steps x K` Gaussian increments with variance `dt`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrements {
    modes: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    stream_id: u64,
    data: Vec<f64>,
}

impl WienerIncrements {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.data[step * self.modes..(step + 1) * self.modes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Generator for path `stream_id` of experiment `seed`.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn sample_increments(
    modes: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    stream_id: u64,
) -> Result<WienerIncrements> {
    if !(dt > 0.0 && dt.is_finite()) {
        return config(format!("time step must be positive, got {dt}"));
    }
    if modes == 0 || steps == 0 {
        return config("increments need at least one mode and one step");
    }
    let mut rng = stream_rng(seed, stream_id);
    let sd = dt.sqrt();
    let data = (0..modes * steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    Ok(WienerIncrements {
        modes,
        steps,
        dt,
        seed,
        stream_id,
        data,
    })
}

/// The fields `g_k(u) = a_k(u) e_k`, `k < K`, in eigen-coordinates.
pub fn eval_g(model: &NoiseModel, u: &SpectralField) -> Result<Vec<SpectralField>> {
    if model.modes() > u.dim() {
        return contract(format!(
            "noise drives {} modes but the field has {} coefficients",
            model.modes(),
            u.dim()
        ));
    }
    Ok(model
        .amplitudes(u.coeffs())
        .into_iter()
        .enumerate()
        .map(|(k, a)| SpectralField::unit(u.dim(), k).scaled(a))
        .collect())
}

/// `(sum_k sum_i lambda_i^j c_{k,i}^2)^{1/2}`.
pub fn hs_norm(gfields: &[SpectralField], j: u32, eigenvalues: &[f64]) -> Result<f64> {
    if j > 2 {
        return contract(format!("Hilbert-Schmidt level must be 0, 1 or 2, got {j}"));
    }
    let mut acc = 0.0;
    for g in gfields {
        if g.dim() > eigenvalues.len() || g.dim() != gfields[0].dim() {
            return contract("Hilbert-Schmidt fields have inconsistent dimensions");
        }
        acc += g
            .coeffs()
            .iter()
            .zip(eigenvalues)
            .map(|(c, l)| l.powi(j as i32) * c * c)
            .sum::<f64>();
    }
    Ok(acc.sqrt())
}

fn level_norm(x: &[f64], eigenvalues: &[f64], j: u32) -> f64 {
    x.iter()
        .zip(eigenvalues)
        .map(|(c, l)| l.powi(j as i32) * c * c)
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzReport {
    /// Max of `|g(x)|_{HS,j} / (1 + |x|_j)`.
    pub sublinear: f64,
    /// Max of `|g(x) - g(y)|_{HS,j} / |x - y|_j`.
    pub lipschitz: f64,
    /// The family is only locally Lipschitz (alpha growth), so the second
    /// number depends on `scale`.
    pub local_only: bool,
}

/// Analytic upper bounds for the two constants of [`verify_lipschitz`] at
/// level `j`. The alpha-growth family has no global Lipschitz constant, so its
/// `lipschitz` entry is infinite.
pub fn lipschitz_bounds(model: &NoiseModel, eigenvalues: &[f64], j: u32) -> Result<LipschitzReport> {
    if j > 2 {
        return contract(format!("level must be 0, 1 or 2, got {j}"));
    }
    if model.modes() > eigenvalues.len() {
        return contract("noise drives more modes than there are eigenvalues");
    }
    let hs = level_norm(model.sigma(), eigenvalues, j);
    let top = model.max_sigma();
    let (sublinear, lipschitz) = match model.kind() {
        NoiseKind::Additive => (hs, 0.0),
        NoiseKind::DiagonalLinear => (top, top),
        NoiseKind::SaturatedDiagonal => (top.min(model.cap() * hs), top),
        NoiseKind::AlphaGrowth => {
            // (1 + h^a) / (1 + c h) <= max(2, 1 + 1/c) with |x|_j >= c |x|_H
            let c = eigenvalues.first().map_or(1.0, |l| l.powf(j as f64 / 2.0));
            (hs * 2.0_f64.max(1.0 + 1.0 / c), f64::INFINITY)
        }
    };
    Ok(LipschitzReport {
        sublinear,
        lipschitz,
        local_only: model.kind() == NoiseKind::AlphaGrowth,
    })
}

/// Empirical sublinearity and Lipschitz constants at level `j` over random
/// pairs with level-`j` norms up to `scale`.
pub fn verify_lipschitz(
    model: &NoiseModel,
    basis: &StokesBasis,
    j: u32,
    n_samples: usize,
    scale: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    if n_samples < 100 {
        return config(format!("at least 100 samples required, got {n_samples}"));
    }
    if j > 2 {
        return contract(format!("level must be 0, 1 or 2, got {j}"));
    }
    if model.modes() > basis.dim() {
        return contract("noise drives more modes than the basis has");
    }
    let eig = basis.eigenvalues();
    let dim = basis.dim();
    let mut rng = stream_rng(seed, 0);
    let unit = Uniform::new(0.0_f64, 1.0).expect("valid range");
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = level_norm(&x, eig, j).max(f64::MIN_POSITIVE);
        // Mix radii across scales so both small and large fields are probed.
        let radius = scale * unit.sample(rng).powi(2);
        x.iter_mut().for_each(|c| *c *= radius / norm);
        x
    };
    let g_norm = |a: &[f64]| level_norm(a, eig, j);
    let mut report = LipschitzReport {
        sublinear: 0.0,
        lipschitz: 0.0,
        local_only: model.kind() == NoiseKind::AlphaGrowth,
    };
    for _ in 0..n_samples {
        let x = draw(&mut rng);
        let mut y = draw(&mut rng);
        if unit.sample(&mut rng) < 0.5 {
            // nearby pairs probe the local constant
            let shift = draw(&mut rng);
            y = x.iter().zip(&shift).map(|(a, b)| a + 1e-3 * b).collect();
        }
        let gx = model.amplitudes(&x);
        let gy = model.amplitudes(&y);
        report.sublinear = report
            .sublinear
            .max(g_norm(&gx) / (1.0 + level_norm(&x, eig, j)));
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dxn = level_norm(&dx, eig, j);
        if dxn > 0.0 {
            let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            report.lipschitz = report.lipschitz.max(g_norm(&dg) / dxn);
        }
    }
    Ok(report)
}

/// Left-endpoint sum `sum_i sum_k G_k(t_i) dW_{i,k}`.
pub fn ito_integral(g_path: &[Vec<SpectralField>], dw: &WienerIncrements) -> Result<SpectralField> {
    if g_path.len() != dw.steps() {
        return contract(format!(
            "integrand has {} steps, increments have {}",
            g_path.len(),
            dw.steps()
        ));
    }
    let dim = g_path
        .iter()
        .flat_map(|g| g.first())
        .map(|f| f.dim())
        .next()
        .unwrap_or(0);
    let mut acc = vec![0.0; dim];
    for (i, gs) in g_path.iter().enumerate() {
        if gs.len() > dw.modes() {
            return contract(format!(
                "integrand has {} noise directions, increments have {}",
                gs.len(),
                dw.modes()
            ));
        }
        for (g, w) in gs.iter().zip(dw.row(i)) {
            if g.dim() != dim {
                return contract("integrand fields have inconsistent dimensions");
            }
            acc.iter_mut().zip(g.coeffs()).for_each(|(a, c)| *a += c * w);
        }
    }
    SpectralField::new(acc)
}

/// Per-path summary of `M_t = int_0^t g(u0 + M_s) dW_s`.
#[derive(Clone, Copy, Debug)]
struct MartingalePath {
    final_sq: f64,
    sup_norm: f64,
    quad_var: f64,
}

fn martingale_path(
    model: &NoiseModel,
    u0: &[f64],
    steps: usize,
    dt: f64,
    seed: u64,
    stream: u64,
) -> Result<MartingalePath> {
    let k = model.modes();
    let dw = sample_increments(k, steps, dt, seed, stream)?;
    let mut m = vec![0.0; u0.len()];
    let mut state = u0.to_vec();
    let mut a = vec![0.0; k];
    let mut out = MartingalePath {
        final_sq: 0.0,
        sup_norm: 0.0,
        quad_var: 0.0,
    };
    for i in 0..steps {
        model.amplitudes_into(&state, &mut a);
        out.quad_var += a.iter().map(|x| x * x).sum::<f64>() * dt;
        for (kk, (ak, w)) in a.iter().zip(dw.row(i)).enumerate() {
            m[kk] += ak * w;
            state[kk] = u0[kk] + m[kk];
        }
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.sup_norm = out.sup_norm.max(norm);
    }
    out.final_sq = m.iter().map(|x| x * x).sum();
    Ok(out)
}

fn martingale_ensemble(
    model: &NoiseModel,
    u0: &SpectralField,
    n_paths: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<MartingalePath>> {
    if model.modes() > u0.dim() {
        return contract("noise drives more modes than the field has");
    }
    if model.modes() == 0 {
        return Ok(vec![
            MartingalePath {
                final_sq: 0.0,
                sup_norm: 0.0,
                quad_var: 0.0
            };
            n_paths
        ]);
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|s| martingale_path(model, u0.coeffs(), steps, dt, seed, s))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsometryReport {
    /// `E |M_T|_H^2`.
    pub lhs: f64,
    /// `E int_0^T |g(u0 + M)|_{HS,0}^2 dt`.
    pub rhs: f64,
    /// 95% half width of the Monte Carlo estimate of `lhs - rhs`.
    pub ci: f64,
    pub relative_error: f64,
}

/// Ito isometry for the non-anticipating integrand `g(u0 + M_t)`.
pub fn isometry_check(
    model: &NoiseModel,
    u0: &SpectralField,
    n_paths: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<IsometryReport> {
    if n_paths < 2 {
        return config("isometry check needs at least two paths");
    }
    let paths = martingale_ensemble(model, u0, n_paths, steps, dt, seed)?;
    let n = n_paths as f64;
    let lhs = paths.iter().map(|p| p.final_sq).sum::<f64>() / n;
    let rhs = paths.iter().map(|p| p.quad_var).sum::<f64>() / n;
    let diffs: Vec<f64> = paths.iter().map(|p| p.final_sq - p.quad_var).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let relative_error = if rhs > 0.0 { (lhs - rhs).abs() / rhs } else { 0.0 };
    Ok(IsometryReport {
        lhs,
        rhs,
        ci: 1.96 * (var / n).sqrt(),
        relative_error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdgReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when the right-hand side vanishes.
    pub ratio: Option<f64>,
}

/// `E[sup_t |M_t|_H^p]` against `(E int |G|_{HS,0}^2 dt)^{p/2}` for the martingale
/// driven from `u0 = 0`.
pub fn bdg_check(
    p: u32,
    n_paths: usize,
    steps: usize,
    dt: f64,
    model: &NoiseModel,
    basis: &StokesBasis,
    seed: u64,
) -> Result<BdgReport> {
    bdg_check_from(p, n_paths, steps, dt, model, &SpectralField::zeros(basis.dim()), seed)
}

/// As [`bdg_check`] with the integrand `g(u0 + M_t)`.
pub fn bdg_check_from(
    p: u32,
    n_paths: usize,
    steps: usize,
    dt: f64,
    model: &NoiseModel,
    u0: &SpectralField,
    seed: u64,
) -> Result<BdgReport> {
    if !(p == 1 || p == 2) {
        return config(format!("BDG exponent must be 1 or 2, got {p}"));
    }
    if n_paths < 1000 {
        return config(format!("BDG check needs at least 1000 paths, got {n_paths}"));
    }
    let paths = martingale_ensemble(model, u0, n_paths, steps, dt, seed)?;
    let n = n_paths as f64;
    let lhs = paths.iter().map(|q| q.sup_norm.powi(p as i32)).sum::<f64>() / n;
    let rhs = (paths.iter().map(|q| q.quad_var).sum::<f64>() / n).powf(p as f64 / 2.0);
    Ok(BdgReport {
        lhs,
        rhs,
        ratio: (rhs > 0.0).then(|| lhs / rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_periodic_basis;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    #[test]
    fn increments_reproducible_and_streams_differ() {
        let a = sample_increments(3, 50, 0.01, 7, 2).unwrap();
        let b = sample_increments(3, 50, 0.01, 7, 2).unwrap();
        let c = sample_increments(3, 50, 0.01, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.as_slice(), c.as_slice());
        assert!(sample_increments(3, 50, 0.0, 7, 2).is_err());
        assert!(sample_increments(3, 50, -1.0, 7, 2).is_err());
    }

    #[test]
    fn increment_moments() {
        let dt = 0.02;
        let n = 100_000;
        let w = sample_increments(2, n / 2, dt, 11, 0).unwrap();
        let mean = w.as_slice().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt(), "{mean}");
        for k in 0..2 {
            let var = (0..n / 2).map(|i| w.row(i)[k].powi(2)).sum::<f64>() / (n / 2) as f64;
            assert!((0.9..=1.1).contains(&(var / dt)));
        }
    }

    #[test]
    fn eval_g_families() {
        let b = build_periodic_basis(TAU, 8).unwrap();
        let sigma = vec![0.5, 0.4, 0.3];
        let lin = NoiseModel::new(NoiseKind::DiagonalLinear, sigma.clone(), 1.0, 0.0).unwrap();
        for g in eval_g(&lin, &SpectralField::zeros(8)).unwrap() {
            assert!(g.coeffs().iter().all(|c| *c == 0.0));
        }
        let add = NoiseModel::new(NoiseKind::Additive, sigma.clone(), 1.0, 0.0).unwrap();
        let u = SpectralField::new((0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
        assert_eq!(eval_g(&add, &u).unwrap(), eval_g(&add, &SpectralField::zeros(8)).unwrap());
        let sat = NoiseModel::new(NoiseKind::SaturatedDiagonal, sigma.clone(), 0.7, 0.0).unwrap();
        let bound = sigma.iter().map(|s| s * s * 0.49).sum::<f64>().sqrt();
        let g = eval_g(&sat, &u.scaled(100.0)).unwrap();
        assert!(hs_norm(&g, 0, b.eigenvalues()).unwrap() <= bound + 1e-15);
        assert!(eval_g(&lin, &SpectralField::zeros(2)).is_err());
    }

    #[test]
    fn alpha_range_enforced() {
        assert!(NoiseModel::new(NoiseKind::AlphaGrowth, vec![1.0], 1.0, 1.0).is_err());
        assert!(NoiseModel::new(NoiseKind::AlphaGrowth, vec![1.0], 1.0, -0.1).is_err());
        assert!(NoiseModel::new(NoiseKind::AlphaGrowth, vec![1.0], 1.0, 0.0).is_ok());
        assert!(NoiseModel::new(NoiseKind::SaturatedDiagonal, vec![1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn hs_norm_cases() {
        let b = build_periodic_basis(TAU, 6).unwrap();
        let e = b.eigenvalues();
        assert_eq!(hs_norm(&[SpectralField::unit(6, 0)], 0, e).unwrap(), 1.0);
        assert_eq!(hs_norm(&[], 1, e).unwrap(), 0.0);
        let fields = vec![SpectralField::unit(6, 1).scaled(0.3), SpectralField::unit(6, 5).scaled(2.0)];
        let levels: Vec<f64> = (0..3).map(|j| hs_norm(&fields, j, e).unwrap()).collect();
        assert!(levels[0] <= levels[1] && levels[1] <= levels[2]);
    }

    #[test]
    fn default_decay_keeps_da_level_summable() {
        let b = build_periodic_basis(TAU, 40).unwrap();
        let m = NoiseModel::with_decay(NoiseKind::Additive, 1.0, 2.0, 40, b.eigenvalues(), 1.0, 0.0).unwrap();
        let g = eval_g(&m, &SpectralField::zeros(40)).unwrap();
        let hs2 = hs_norm(&g, 2, b.eigenvalues()).unwrap();
        // sigma_k lambda_k = lambda_1^2 / lambda_k, so the j = 2 sum is bounded by
        // lambda_1^4 sum 1/lambda_k^2 over the shells.
        let bound: f64 = b.eigenvalues().iter().map(|l| b.eigenvalues()[0].powi(4) / (l * l)).sum();
        assert!((hs2 * hs2 - bound).abs() <= 1e-12 * bound);
        assert!(NoiseModel::with_decay(NoiseKind::Additive, 1.0, 1.5, 4, b.eigenvalues(), 1.0, 0.0).is_err());
    }

    #[test]
    fn lipschitz_constants() {
        let b = build_periodic_basis(TAU, 10).unwrap();
        let sigma = vec![0.9, 0.5, 0.2, 0.1];
        let lin = NoiseModel::new(NoiseKind::DiagonalLinear, sigma.clone(), 1.0, 0.0).unwrap();
        let r = verify_lipschitz(&lin, &b, 0, 500, 10.0, 1).unwrap();
        assert!(r.lipschitz <= 0.9 + 1e-9 && r.lipschitz > 0.5);
        let add = NoiseModel::new(NoiseKind::Additive, sigma.clone(), 1.0, 0.0).unwrap();
        assert_eq!(verify_lipschitz(&add, &b, 1, 200, 10.0, 1).unwrap().lipschitz, 0.0);
        let sat = NoiseModel::new(NoiseKind::SaturatedDiagonal, sigma.clone(), 2.0, 0.0).unwrap();
        assert!(verify_lipschitz(&sat, &b, 0, 500, 50.0, 2).unwrap().sublinear <= 0.9 * 2.0);
        let alpha = NoiseModel::new(NoiseKind::AlphaGrowth, sigma, 1.0, 0.5).unwrap();
        assert!(verify_lipschitz(&alpha, &b, 0, 200, 5.0, 3).unwrap().local_only);
        assert!(verify_lipschitz(&lin, &b, 0, 99, 1.0, 1).is_err());
    }

    #[test]
    fn empirical_constants_respect_bounds() {
        let b = build_periodic_basis(TAU, 12).unwrap();
        let sigma = vec![0.9, 0.5, 0.2, 0.1, 0.05];
        for kind in [
            NoiseKind::Additive,
            NoiseKind::DiagonalLinear,
            NoiseKind::SaturatedDiagonal,
            NoiseKind::AlphaGrowth,
        ] {
            let m = NoiseModel::new(kind, sigma.clone(), 0.5, 0.5).unwrap();
            for j in 0..3 {
                let bound = lipschitz_bounds(&m, b.eigenvalues(), j).unwrap();
                let seen = verify_lipschitz(&m, &b, j, 400, 20.0, j as u64).unwrap();
                assert!(seen.sublinear <= bound.sublinear * (1.0 + 1e-12), "{kind:?} {j}");
                assert!(seen.lipschitz <= bound.lipschitz * (1.0 + 1e-12), "{kind:?} {j}");
            }
        }
        assert!(lipschitz_bounds(&NoiseModel::zero(), b.eigenvalues(), 3).is_err());
    }

    #[test]
    fn ito_integral_of_zero_and_constant() {
        let dw = sample_increments(2, 10, 0.1, 1, 0).unwrap();
        let zero = vec![vec![SpectralField::zeros(4); 2]; 10];
        assert!(ito_integral(&zero, &dw).unwrap().coeffs().iter().all(|c| *c == 0.0));
        let e1 = vec![vec![SpectralField::unit(4, 0)]; 10];
        let total: f64 = (0..10).map(|i| dw.row(i)[0]).sum();
        assert!((ito_integral(&e1, &dw).unwrap().coeffs()[0] - total).abs() < 1e-14);
        assert!(ito_integral(&e1[..9], &dw).is_err());
    }

    #[test]
    fn ito_integral_unit_variance() {
        let n = 10_000;
        let values: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .map(|s| {
                let dw = sample_increments(1, 20, 0.05, 3, s).unwrap();
                let g = vec![vec![SpectralField::unit(1, 0)]; 20];
                ito_integral(&g, &dw).unwrap().coeffs()[0]
            })
            .collect();
        let var = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // the variance estimate of a N(0,1) sample has sd sqrt(2/n) ~ 1.4%
        assert!((var - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn zero_noise_bdg_undefined() {
        let b = build_periodic_basis(TAU, 4).unwrap();
        let r = bdg_check(2, 1000, 10, 0.1, &NoiseModel::zero(), &b, 0).unwrap();
        assert_eq!((r.lhs, r.rhs, r.ratio), (0.0, 0.0, None));
        assert!(bdg_check(3, 1000, 10, 0.1, &NoiseModel::zero(), &b, 0).is_err());
    }

    proptest! {
        #[test]
        fn diagonal_linear_is_linear(x in prop::collection::vec(-5.0f64..5.0, 4), a in -3.0f64..3.0) {
            let m = NoiseModel::new(NoiseKind::DiagonalLinear, vec![0.3, 0.2, 0.1, 0.05], 1.0, 0.0).unwrap();
            let gx = m.amplitudes(&x);
            let xa: Vec<f64> = x.iter().map(|v| a * v).collect();
            for (p, q) in gx.iter().zip(m.amplitudes(&xa)) {
                prop_assert!((a * p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn saturated_amplitudes_bounded(x in prop::collection::vec(-1e6f64..1e6, 3)) {
            let m = NoiseModel::new(NoiseKind::SaturatedDiagonal, vec![0.3, 0.2, 0.1], 0.5, 0.0).unwrap();
            for (a, s) in m.amplitudes(&x).iter().zip(m.sigma()) {
                prop_assert!(a.abs() <= s * 0.5);
            }
        }
    }
}
