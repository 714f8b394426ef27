//! Semi-implicit Euler-Maruyama for the Galerkin systems and shared-noise
//! multilevel runs.
//!
//! One step at level `n` reads, for `k < n`,
//!
//! ```text
//! (1 + nu lambda_k dt) c_k' = c_k + dt (f_k - b_k(c)) + a_k(c) dW_k
//! ```
//!
//! with `b = P_n B(u, u)` and the noise amplitudes taken at the left endpoint.

use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::noise::{sample_increments, stream_rng, NoiseModel, WienerIncrements};
use crate::nonlinear::{bilinear_b, BilinearWorkspace, InteractionTensor};
use crate::spectral::{spectral_norms, SpectralField, StokesBasis};

/// Norms above this mark a path as blown up.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub viscosity: f64,
    pub dt: f64,
    pub horizon: f64,
    pub record_coeffs: bool,
    pub dealias: bool,
    /// `false` drops `B` and leaves the linear stochastic Stokes system.
    pub nonlinear: bool,
}

impl IntegratorConfig {
    pub fn validate(&self, lambda_max: f64) -> Result<()> {
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return config(format!("viscosity must be positive, got {}", self.viscosity));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return config(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.dt <= self.horizon) {
            return config(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            ));
        }
        let limit = 0.1 / lambda_max.sqrt();
        if self.dt > limit {
            return config(format!(
                "dt = {} exceeds 0.1/sqrt(lambda_max) = {limit:.3e}; reduce dt or the level",
                self.dt
            ));
        }
        Ok(())
    }

    /// `ceil(T / dt)`, ignoring round-off in the ratio.
    pub fn steps(&self) -> usize {
        let r = self.horizon / self.dt;
        let n = r.round();
        if (r - n).abs() <= 1e-9 * n.max(1.0) {
            n as usize
        } else {
            r.ceil() as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub step: usize,
    pub time: f64,
}

/// One sample path of a Galerkin solution, recorded at every step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub h_sq: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub a_sq: Vec<f64>,
    /// `nu int_0^t |Au|^2 ds`, trapezoidal.
    pub dissipation: Vec<f64>,
    /// Level-`n` coefficient vectors at each recorded time when requested.
    pub coeffs: Option<Vec<Vec<f64>>>,
    pub level: usize,
    pub seed: u64,
    pub stream: u64,
    /// Set when the guard tripped; histories stop at the last finite state.
    pub blow_up: Option<BlowUp>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.blow_up.is_none()
    }

    /// CSV rows `time,h_sq,v_sq,a_sq,dissipation,level,seed,stream`.
    pub fn write_csv(&self, out: &mut impl Write, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "{CSV_HEADER}")?;
        }
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.times[i],
                self.h_sq[i],
                self.v_sq[i],
                self.a_sq[i],
                self.dissipation[i],
                self.level,
                self.seed,
                self.stream
            )?;
        }
        Ok(())
    }
}

pub const CSV_HEADER: &str = "time,h_sq,v_sq,a_sq,dissipation,level,seed,stream";

/// How driven modes beyond a level are treated in a coupled run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Every level must see all driven modes: `K <= min(levels)`.
    #[default]
    Strict,
    /// Level `n` keeps the driven modes below `n` and drops the rest, so that
    /// the reference carries tail noise the coarse levels do not see.
    Projected,
}

#[derive(Clone, Debug)]
pub struct MultilevelRun {
    pub levels: Vec<usize>,
    pub n_ref: usize,
    /// One record per entry of `levels`, then the reference if it is not a level.
    pub records: Vec<TrajectoryRecord>,
    pub seed: u64,
    pub stream: u64,
}

impl MultilevelRun {
    pub fn record(&self, level: usize) -> Option<&TrajectoryRecord> {
        self.records.iter().find(|r| r.level == level)
    }

    pub fn reference(&self) -> &TrajectoryRecord {
        self.record(self.n_ref).expect("reference level is always recorded")
    }

    pub fn blow_up(&self) -> Option<BlowUp> {
        self.records.iter().find_map(|r| r.blow_up)
    }
}

/// Norm histories of `u^{N_ref} - u^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTrajectory {
    pub times: Vec<f64>,
    pub h_sq: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub a_sq: Vec<f64>,
}

/// Everything needed to advance paths: forcing, noise, scheme parameters and,
/// for the nonlinear system, the interaction coefficients up to `n_max`.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    basis: Arc<StokesBasis>,
    tensor: Option<Arc<InteractionTensor>>,
    n_max: usize,
    forcing: SpectralField,
    model: NoiseModel,
    cfg: IntegratorConfig,
    inv_denominator: Vec<f64>,
}

struct Scratch {
    b: Vec<f64>,
    amp: Vec<f64>,
}

impl GalerkinSystem {
    pub fn new(
        basis: Arc<StokesBasis>,
        forcing: &SpectralField,
        model: NoiseModel,
        cfg: IntegratorConfig,
        n_max: usize,
    ) -> Result<Self> {
        basis.check_level(n_max)?;
        basis.check_field(forcing)?;
        cfg.validate(basis.eigenvalues()[n_max - 1])?;
        if model.modes() > basis.dim() {
            return config(format!(
                "noise drives {} modes but the basis has {}",
                model.modes(),
                basis.dim()
            ));
        }
        let tensor = if cfg.nonlinear {
            let ws = BilinearWorkspace::new(Arc::clone(&basis), cfg.dealias);
            Some(Arc::new(InteractionTensor::build(&ws, n_max)?))
        } else {
            None
        };
        Ok(Self::with_tensor(basis, tensor, forcing, model, cfg, n_max))
    }

    /// Reuses interaction coefficients built for the same basis and at least `n_max` modes.
    pub fn share(
        &self,
        forcing: &SpectralField,
        model: NoiseModel,
        cfg: IntegratorConfig,
    ) -> Result<Self> {
        if cfg.nonlinear && (self.tensor.is_none() || cfg.dealias != self.cfg.dealias) {
            return GalerkinSystem::new(Arc::clone(&self.basis), forcing, model, cfg, self.n_max);
        }
        self.basis.check_field(forcing)?;
        cfg.validate(self.basis.eigenvalues()[self.n_max - 1])?;
        let tensor = if cfg.nonlinear { self.tensor.clone() } else { None };
        Ok(Self::with_tensor(
            Arc::clone(&self.basis),
            tensor,
            forcing,
            model,
            cfg,
            self.n_max,
        ))
    }

    fn with_tensor(
        basis: Arc<StokesBasis>,
        tensor: Option<Arc<InteractionTensor>>,
        forcing: &SpectralField,
        model: NoiseModel,
        cfg: IntegratorConfig,
        n_max: usize,
    ) -> Self {
        let inv_denominator = basis.eigenvalues()[..n_max]
            .iter()
            .map(|l| 1.0 / (1.0 + cfg.viscosity * l * cfg.dt))
            .collect();
        GalerkinSystem {
            forcing: forcing.clone(),
            basis,
            tensor,
            n_max,
            model,
            cfg,
            inv_denominator,
        }
    }

    pub fn basis(&self) -> &StokesBasis {
        &self.basis
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn forcing_field(&self) -> SpectralField {
        self.forcing.clone()
    }

    pub fn max_level(&self) -> usize {
        self.n_max
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            b: vec![0.0; self.n_max],
            amp: vec![0.0; self.model.modes()],
        }
    }

    fn advance(&self, c: &mut [f64], dw: &[f64], s: &mut Scratch) {
        let level = c.len();
        match &self.tensor {
            Some(t) => t.apply(c, level, &mut s.b),
            None => s.b[..level].iter_mut().for_each(|v| *v = 0.0),
        }
        let driven = self.model.modes().min(level);
        self.model.amplitudes_into(c, &mut s.amp[..driven]);
        let dt = self.cfg.dt;
        for k in 0..level {
            let mut rhs = c[k] + dt * (self.forcing.coeffs()[k] - s.b[k]);
            if k < driven {
                rhs += s.amp[k] * dw[k];
            }
            c[k] = rhs * self.inv_denominator[k];
        }
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.n_max {
            return contract(format!("level {level} outside 1..={}", self.n_max));
        }
        Ok(())
    }

    pub fn increments(&self, seed: u64, stream: u64) -> Result<Option<WienerIncrements>> {
        if self.model.modes() == 0 {
            return Ok(None);
        }
        sample_increments(self.model.modes(), self.cfg.steps(), self.cfg.dt, seed, stream).map(Some)
    }

    /// One path at `level` from `P_level u0` driven by `dw`.
    pub fn run_level(
        &self,
        u0: &SpectralField,
        level: usize,
        dw: Option<&WienerIncrements>,
        seed: u64,
        stream: u64,
    ) -> Result<TrajectoryRecord> {
        self.check_level(level)?;
        self.basis.check_field(u0)?;
        let steps = self.cfg.steps();
        let eig = &self.basis.eigenvalues()[..level];
        let nu = self.cfg.viscosity;
        let mut c = u0.coeffs()[..level].to_vec();
        let mut rec = TrajectoryRecord {
            times: Vec::with_capacity(steps + 1),
            h_sq: Vec::with_capacity(steps + 1),
            v_sq: Vec::with_capacity(steps + 1),
            a_sq: Vec::with_capacity(steps + 1),
            dissipation: Vec::with_capacity(steps + 1),
            coeffs: self.cfg.record_coeffs.then(|| Vec::with_capacity(steps + 1)),
            level,
            seed,
            stream,
            blow_up: None,
        };
        let zero_row = vec![0.0; self.model.modes()];
        let mut s = self.scratch();
        for i in 0..=steps {
            let n = spectral_norms(&c, eig);
            let bad = |x: f64| !(x.is_finite() && x <= OVERFLOW_GUARD);
            if bad(n.h_sq) || bad(n.v_sq) || bad(n.a_sq) {
                rec.blow_up = Some(BlowUp {
                    step: i,
                    time: i as f64 * self.cfg.dt,
                });
                break;
            }
            let diss = match rec.a_sq.last() {
                Some(prev) => {
                    rec.dissipation[i - 1] + 0.5 * nu * self.cfg.dt * (prev + n.a_sq)
                }
                None => 0.0,
            };
            rec.times.push(i as f64 * self.cfg.dt);
            rec.h_sq.push(n.h_sq);
            rec.v_sq.push(n.v_sq);
            rec.a_sq.push(n.a_sq);
            rec.dissipation.push(diss);
            if let Some(store) = rec.coeffs.as_mut() {
                store.push(c.clone());
            }
            if i < steps {
                let row = dw.map_or(zero_row.as_slice(), |w| w.row(i));
                self.advance(&mut c, row, &mut s);
            }
        }
        Ok(rec)
    }

    pub fn simulate(
        &self,
        u0: &SpectralField,
        level: usize,
        seed: u64,
        stream: u64,
    ) -> Result<TrajectoryRecord> {
        let dw = self.increments(seed, stream)?;
        self.run_level(u0, level, dw.as_ref(), seed, stream)
    }

    /// All `levels` and the reference `n_ref` on one increment matrix.
    pub fn simulate_coupled(
        &self,
        u0: &SpectralField,
        levels: &[usize],
        n_ref: usize,
        coupling: Coupling,
        seed: u64,
        stream: u64,
    ) -> Result<MultilevelRun> {
        check_levels(levels, n_ref, self.n_max)?;
        if coupling == Coupling::Strict && self.model.modes() > levels[0] {
            return config(format!(
                "noise drives {} modes but the smallest level is {}; strict coupling needs K <= min(levels)",
                self.model.modes(),
                levels[0]
            ));
        }
        let dw = self.increments(seed, stream)?;
        let mut all = levels.to_vec();
        if *levels.last().unwrap() != n_ref {
            all.push(n_ref);
        }
        let records = all
            .iter()
            .map(|&n| self.run_level(u0, n, dw.as_ref(), seed, stream))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultilevelRun {
            levels: levels.to_vec(),
            n_ref,
            records,
            seed,
            stream,
        })
    }
}

fn check_levels(levels: &[usize], n_ref: usize, n_max: usize) -> Result<()> {
    if levels.is_empty() {
        return config("at least one level is required");
    }
    if levels[0] == 0 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return config(format!("levels must be positive and strictly ascending, got {levels:?}"));
    }
    if *levels.last().unwrap() > n_ref {
        return config(format!(
            "largest level {} exceeds the reference level {n_ref}",
            levels.last().unwrap()
        ));
    }
    if n_ref > n_max {
        return config(format!(
            "reference level {n_ref} exceeds the {n_max} modes the system was built for"
        ));
    }
    Ok(())
}

/// A single semi-implicit step at level `n` using the pseudo-spectral `B`.
/// Coefficients at indices `>= n` are returned as zero.
pub fn step(
    u: &SpectralField,
    f: &SpectralField,
    dw_row: &[f64],
    model: &NoiseModel,
    cfg: &IntegratorConfig,
    ws: &BilinearWorkspace,
    n: usize,
) -> Result<SpectralField> {
    let basis = ws.basis();
    basis.check_field(u)?;
    basis.check_field(f)?;
    basis.check_level(n)?;
    if dw_row.len() != model.modes() {
        return contract(format!(
            "increment row has {} entries, noise drives {} modes",
            dw_row.len(),
            model.modes()
        ));
    }
    let b = if cfg.nonlinear {
        bilinear_b(&u.truncated(n), &u.truncated(n), ws, n)?
    } else {
        SpectralField::zeros(u.dim())
    };
    let driven = model.modes().min(n);
    let mut amp = vec![0.0; driven];
    model.amplitudes_into(&u.coeffs()[..n], &mut amp);
    let mut out = vec![0.0; u.dim()];
    for k in 0..n {
        let mut rhs = u.coeffs()[k] + cfg.dt * (f.coeffs()[k] - b.coeffs()[k]);
        if k < driven {
            rhs += amp[k] * dw_row[k];
        }
        out[k] = rhs / (1.0 + cfg.viscosity * basis.eigenvalues()[k] * cfg.dt);
    }
    if out.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
        return Err(Error::BlowUp { step: 0, time: 0.0 });
    }
    SpectralField::new(out)
}

/// Single path at level `n`, building the system on the fly.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    u0: &SpectralField,
    f: &SpectralField,
    model: &NoiseModel,
    cfg: &IntegratorConfig,
    basis: Arc<StokesBasis>,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    let sys = GalerkinSystem::new(basis, f, model.clone(), cfg.clone(), n)?;
    sys.simulate(u0, n, seed, stream)
}

/// First recorded time at which `max_{s<=t} v_sq(s) + dissipation(t) >= m`.
pub fn stopping_time(record: &TrajectoryRecord, m: f64) -> Option<f64> {
    let mut sup = f64::NEG_INFINITY;
    for i in 0..record.len() {
        sup = sup.max(record.v_sq[i]);
        if sup + record.dissipation[i] >= m {
            return Some(record.times[i]);
        }
    }
    None
}

/// Norms of `u^{N_ref} - u^n`, with the reference's modes beyond `n` entering fully.
pub fn error_trajectory(
    run: &MultilevelRun,
    n: usize,
    eigenvalues: &[f64],
) -> Result<ErrorTrajectory> {
    let fine = run.reference();
    let coarse = run
        .record(n)
        .ok_or_else(|| Error::Contract(format!("level {n} is not part of the run")))?;
    let (Some(cf), Some(cc)) = (&fine.coeffs, &coarse.coeffs) else {
        return contract("coefficients were not recorded; enable record_coeffs");
    };
    let len = cf.len().min(cc.len());
    let eig = &eigenvalues[..run.n_ref];
    let mut out = ErrorTrajectory {
        times: fine.times[..len].to_vec(),
        h_sq: Vec::with_capacity(len),
        v_sq: Vec::with_capacity(len),
        a_sq: Vec::with_capacity(len),
    };
    let mut diff = vec![0.0; run.n_ref];
    for i in 0..len {
        diff.copy_from_slice(&cf[i]);
        diff.iter_mut().zip(&cc[i]).for_each(|(d, c)| *d -= c);
        let nr = spectral_norms(&diff, eig);
        out.h_sq.push(nr.h_sq);
        out.v_sq.push(nr.v_sq);
        out.a_sq.push(nr.a_sq);
    }
    Ok(out)
}

/// Trapezoidal integral of a history on its time grid.
pub fn time_integral(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrongOrderReport {
    pub dts: Vec<f64>,
    /// `E |X_N - X(T)|` at each step size.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub slope: f64,
}

/// Strong error of the scheme on `dX = -X dt + X dW`, `X(0) = 1`, over `[0, 1]`
/// for `dt = 2^-e`, `e` in `exponents`, against `exp(-1.5 T + W_T)`.
pub fn scalar_strong_order(
    exponents: &[u32],
    n_paths: usize,
    seed: u64,
) -> Result<StrongOrderReport> {
    use rayon::prelude::*;
    let finest = *exponents
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no step sizes given".into()))?;
    if n_paths == 0 || exponents.len() < 2 {
        return config("strong order check needs paths and at least two step sizes");
    }
    let fine_steps = 1usize << finest;
    let dt_fine = 1.0 / fine_steps as f64;
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s);
            let dw: Vec<f64> = (0..fine_steps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * dt_fine.sqrt()
                })
                .collect();
            let w_t: f64 = dw.iter().sum();
            let exact = (-1.5 + w_t).exp();
            exponents
                .iter()
                .map(|&e| {
                    let stride = 1usize << (finest - e);
                    let dt = 1.0 / (1usize << e) as f64;
                    let mut x = 1.0;
                    for chunk in dw.chunks(stride) {
                        let inc: f64 = chunk.iter().sum();
                        x = (x + x * inc) / (1.0 + dt);
                    }
                    (x - exact).abs()
                })
                .collect()
        })
        .collect();
    let dts: Vec<f64> = exponents.iter().map(|&e| 0.5_f64.powi(e as i32)).collect();
    let errors: Vec<f64> = (0..exponents.len())
        .map(|j| per_path.iter().map(|p| p[j]).sum::<f64>() / n_paths as f64)
        .collect();
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(StrongOrderReport {
        dts,
        errors,
        slope: sxy / sxx,
    })
}
