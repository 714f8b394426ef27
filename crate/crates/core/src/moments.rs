//! Moment functionals, Monte Carlo estimation and the convergence studies.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::integrator::{error_trajectory, time_integral, Coupling, MultilevelRun};
use crate::noise::NoiseKind;
use crate::scenario::Scenario;

/// Nondecreasing maps applied to squared norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `log(1 + x)`
    Log,
    /// `log(1 + log(1 + x))`
    LogLog,
    /// `log(1 + x)^(1 - eps)`
    LogPow { eps: f64 },
    /// `x^k`
    PolyH { k: u32 },
    /// `exp(sqrt(x) / k_scale)`
    ExpH { k_scale: f64 },
    /// `exp(x^(1 - alpha) / k_scale)`
    ExpHAlpha { k_scale: f64, alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSelector {
    VSqOfU,
    VSqOfError,
    HOfU,
    HOfError,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentFunctional {
    pub kind: FunctionalKind,
    pub selector: NormSelector,
}

impl MomentFunctional {
    pub fn new(kind: FunctionalKind, selector: NormSelector) -> Result<Self> {
        match kind {
            FunctionalKind::LogPow { eps } if !(eps > 0.0 && eps < 1.0) => {
                config(format!("epsilon must lie in (0,1), got {eps}"))
            }
            FunctionalKind::PolyH { k: 0 } => config("moment order k must be positive"),
            FunctionalKind::ExpH { k_scale } | FunctionalKind::ExpHAlpha { k_scale, .. }
                if !(k_scale > 0.0 && k_scale.is_finite()) =>
            {
                config(format!("K scale must be positive, got {k_scale}"))
            }
            FunctionalKind::ExpHAlpha { alpha, .. } if !(0.0..1.0).contains(&alpha) => {
                config(format!("alpha must lie in [0,1), got {alpha}"))
            }
            _ => Ok(MomentFunctional { kind, selector }),
        }
    }

    /// Value at `x = 0`: 1 for the exponential kinds, 0 otherwise.
    pub fn at_zero(&self) -> f64 {
        match self.kind {
            FunctionalKind::ExpH { .. } | FunctionalKind::ExpHAlpha { .. } => 1.0,
            _ => 0.0,
        }
    }
}

pub fn eval_functional(f: &MomentFunctional, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return contract(format!("moment functionals take nonnegative input, got {x}"));
    }
    Ok(match f.kind {
        FunctionalKind::Log => x.ln_1p(),
        FunctionalKind::LogLog => x.ln_1p().ln_1p(),
        FunctionalKind::LogPow { eps } => x.ln_1p().powf(1.0 - eps),
        FunctionalKind::PolyH { k } => x.powi(k as i32),
        FunctionalKind::ExpH { k_scale } => (x.sqrt() / k_scale).exp(),
        FunctionalKind::ExpHAlpha { k_scale, alpha } => (x.powf(1.0 - alpha) / k_scale).exp(),
    })
}

/// `f(max_t x(t))`, which equals `max_t f(x(t))` for the nondecreasing kinds.
pub fn pathwise_sup(history: &[f64], f: &MomentFunctional) -> Result<f64> {
    if history.is_empty() {
        return contract("empty history");
    }
    let m = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    eval_functional(f, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    /// 95% half width: `1.96 sqrt(variance / n)` for means, half the Wilson
    /// interval for proportions.
    pub ci: f64,
    /// Sample extremes for means, the Wilson bounds for proportions.
    pub min: f64,
    pub max: f64,
    pub excluded: usize,
}

impl EnsembleStats {
    /// Summary of the retained `values` with `excluded` dropped samples.
    pub fn from_samples(values: &[f64], excluded: usize) -> Self {
        let n = values.len();
        if n == 0 {
            return EnsembleStats {
                n_samples: 0,
                mean: f64::NAN,
                variance: f64::NAN,
                ci: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                excluded,
            };
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mean, variance) = if min == max {
            (min, 0.0)
        } else {
            let mean = (values.iter().sum::<f64>() / n as f64).clamp(min, max);
            let var = if n > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (mean, var)
        };
        EnsembleStats {
            n_samples: n,
            mean,
            variance,
            ci: 1.96 * (variance / n as f64).sqrt(),
            min,
            max,
            excluded,
        }
    }

    /// Proportion of `hits` among `n` with a 95% Wilson score interval.
    pub fn proportion(hits: usize, n: usize, excluded: usize) -> Self {
        let (lo, hi) = wilson_interval(hits, n);
        let p = if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
        EnsembleStats {
            n_samples: n,
            mean: p,
            variance: p * (1.0 - p),
            ci: 0.5 * (hi - lo),
            min: lo,
            max: hi,
            excluded,
        }
    }
}

/// 95% Wilson score interval for `hits` successes in `n` trials.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96_f64;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Runs `sample(stream)` for streams `0..n_samples` and keeps the results in
/// stream order. `None` marks a blown-up path.
pub fn mc_samples<T: Send>(
    n_samples: usize,
    sample: impl Fn(u64) -> Result<Option<T>> + Sync,
) -> Result<(Vec<T>, usize)> {
    let all: Vec<Option<T>> = (0..n_samples as u64)
        .into_par_iter()
        .map(&sample)
        .collect::<Result<_>>()?;
    let excluded = all.iter().filter(|s| s.is_none()).count();
    Ok((all.into_iter().flatten().collect(), excluded))
}

pub fn mc_expectation(
    n_samples: usize,
    sample: impl Fn(u64) -> Result<Option<f64>> + Sync,
) -> Result<EnsembleStats> {
    if n_samples < 30 {
        return config(format!("at least 30 samples required, got {n_samples}"));
    }
    let (values, excluded) = mc_samples(n_samples, sample)?;
    Ok(EnsembleStats::from_samples(&values, excluded))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study: String,
    pub scenario: String,
    pub level: usize,
    pub horizon: f64,
    pub param: String,
    pub stats: EnsembleStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

pub const STUDY_CSV_HEADER: &str = "study,scenario,level,T,param,n_samples,mean,ci,min,max,excluded";

impl StudyTable {
    pub fn excluded(&self) -> usize {
        self.rows.iter().map(|r| r.stats.excluded).max().unwrap_or(0)
    }

    /// Rows of one study and parameter, in level order.
    pub fn select(&self, study: &str, param: &str) -> Vec<&StudyRow> {
        self.rows
            .iter()
            .filter(|r| r.study == study && r.param == param)
            .collect()
    }

    pub fn means(&self, study: &str, param: &str) -> Vec<f64> {
        self.select(study, param).iter().map(|r| r.stats.mean).collect()
    }

    /// Fails when any sample blew up.
    pub fn require_complete(&self) -> Result<()> {
        match self.excluded() {
            0 => Ok(()),
            e => Err(Error::Numeric(format!(
                "{e} sample paths blew up and were excluded; reduce dt"
            ))),
        }
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{STUDY_CSV_HEADER}")?;
        for r in &self.rows {
            let s = &r.stats;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.study,
                r.scenario,
                r.level,
                r.horizon,
                r.param,
                s.n_samples,
                s.mean,
                s.ci,
                s.min,
                s.max,
                s.excluded
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for StudyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>5} {:>6} {:>14} {:>14} {:>12}", "study", "level", "T", "param", "mean", "ci")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>5} {:>6} {:>14} {:>14.6e} {:>12.3e}",
                r.study, r.level, r.horizon, r.param, r.stats.mean, r.stats.ci
            )?;
        }
        Ok(())
    }
}

fn coupled_run(scn: &Scenario, levels: &[usize], n_ref: usize, seed: u64, stream: u64) -> Result<Option<MultilevelRun>> {
    if !scn.system.config().record_coeffs {
        return contract("studies need recorded coefficients");
    }
    let run = scn
        .system
        .simulate_coupled(&scn.u0, levels, n_ref, scn.coupling, seed, stream)?;
    Ok(run.blow_up().is_none().then_some(run))
}

/// Runs the coupled ensemble once and applies `stat(run, level)` for each level
/// (including `n_ref`), returning per-level sample vectors of `width` values.
fn per_level_samples(
    scn: &Scenario,
    levels: &[usize],
    n_ref: usize,
    n_samples: usize,
    seed: u64,
    stat: impl Fn(&MultilevelRun, usize) -> Result<Vec<f64>> + Sync,
) -> Result<(Vec<usize>, Vec<Vec<Vec<f64>>>, usize)> {
    if n_samples < 30 {
        return config(format!("at least 30 samples required, got {n_samples}"));
    }
    let mut rows = levels.to_vec();
    if rows.last() != Some(&n_ref) {
        rows.push(n_ref);
    }
    let (samples, excluded) = mc_samples(n_samples, |stream| {
        let Some(run) = coupled_run(scn, levels, n_ref, seed, stream)? else {
            return Ok(None);
        };
        rows.iter()
            .map(|&n| stat(&run, n))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    })?;
    Ok((rows, samples, excluded))
}

fn column(samples: &[Vec<Vec<f64>>], row: usize, j: usize) -> Vec<f64> {
    samples.iter().map(|s| s[row][j]).collect()
}

fn horizon(scn: &Scenario) -> f64 {
    let c = scn.system.config();
    c.steps() as f64 * c.dt
}

/// `E sup_t log(1 + |u^{N_ref} - u^n|_V^2)^(1 - eps)` per level.
pub fn study_v_convergence(
    scn: &Scenario,
    levels: &[usize],
    n_ref: usize,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<StudyTable> {
    let f = MomentFunctional::new(FunctionalKind::LogPow { eps }, NormSelector::VSqOfError)?;
    let eig = scn.system.basis().eigenvalues();
    let (rows, samples, excluded) = per_level_samples(scn, levels, n_ref, n_samples, seed, |run, n| {
        Ok(vec![pathwise_sup(&error_trajectory(run, n, eig)?.v_sq, &f)?])
    })?;
    let t = horizon(scn);
    Ok(StudyTable {
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, &n)| StudyRow {
                study: "v_convergence".into(),
                scenario: scn.label.clone(),
                level: n,
                horizon: t,
                param: format!("eps={eps}"),
                stats: EnsembleStats::from_samples(&column(&samples, i, 0), excluded),
            })
            .collect(),
    })
}

/// `E sup_{[0,T]} log(1 + |u^n|_V^2)` for every `n` in `n_list` and `T` in `t_list`.
pub fn study_log_boundedness(
    scn: &Scenario,
    n_list: &[usize],
    t_list: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<StudyTable> {
    if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0)) {
        return config("horizons must be positive");
    }
    let mut levels = n_list.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let t_max = t_list.iter().copied().fold(0.0, f64::max);
    let mut cfg = scn.system.config().clone();
    cfg.horizon = t_max;
    let sys = scn
        .system
        .share(&forcing_of(scn), scn.system.model().clone(), cfg)?;
    let f = MomentFunctional::new(FunctionalKind::Log, NormSelector::VSqOfU)?;
    let n_ref = *levels.last().ok_or_else(|| Error::Config("no levels given".into()))?;
    let local = Scenario {
        label: scn.label.clone(),
        system: sys,
        u0: scn.u0.clone(),
        coupling: Coupling::Projected,
    };
    if n_samples < 30 {
        return config(format!("at least 30 samples required, got {n_samples}"));
    }
    let (samples, excluded) = mc_samples(n_samples, |stream| {
        let run = local
            .system
            .simulate_coupled(&local.u0, &levels, n_ref, Coupling::Projected, seed, stream)?;
        if run.blow_up().is_some() {
            return Ok(None);
        }
        let per_level = levels
            .iter()
            .map(|&n| {
                let rec = run.record(n).expect("level recorded");
                t_list
                    .iter()
                    .map(|&t| {
                        let upto = rec.times.iter().take_while(|s| **s <= t + 1e-12).count();
                        pathwise_sup(&rec.v_sq[..upto.max(1)], &f)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(per_level))
    })?;
    let mut table = StudyTable::default();
    for (i, &n) in levels.iter().enumerate() {
        for (j, &t) in t_list.iter().enumerate() {
            table.rows.push(StudyRow {
                study: "log_boundedness".into(),
                scenario: scn.label.clone(),
                level: n,
                horizon: t,
                param: "log".into(),
                stats: EnsembleStats::from_samples(&column(&samples, i, j), excluded),
            });
        }
    }
    Ok(table)
}

fn forcing_of(scn: &Scenario) -> crate::spectral::SpectralField {
    scn.system.forcing_field()
}

/// `|P_{N_ref} u0 - P_n u0|_V^2` for each level.
pub fn initial_projection_errors(scn: &Scenario, levels: &[usize], n_ref: usize) -> Result<Vec<f64>> {
    let eig = scn.system.basis().eigenvalues();
    let c = scn.u0.coeffs();
    levels
        .iter()
        .map(|&n| {
            if n == 0 || n > n_ref || n_ref > c.len() {
                return config(format!("level {n} outside 1..={n_ref}"));
            }
            Ok((n..n_ref).map(|k| eig[k] * c[k] * c[k]).sum())
        })
        .collect()
}

/// Median of the initial projection errors, the default tail threshold.
pub fn median_initial_error(scn: &Scenario, levels: &[usize], n_ref: usize) -> Result<f64> {
    let mut e = initial_projection_errors(scn, levels, n_ref)?;
    if e.is_empty() {
        return config("no levels given");
    }
    e.sort_by(f64::total_cmp);
    let m = e.len() / 2;
    Ok(if e.len() % 2 == 1 { e[m] } else { 0.5 * (e[m - 1] + e[m]) })
}

/// Empirical `P(sup_t |u^{N_ref} - u^n|_V^2 >= delta)` with Wilson intervals.
pub fn study_probability_tail(
    scn: &Scenario,
    levels: &[usize],
    n_ref: usize,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<StudyTable> {
    if !(delta > 0.0) {
        return config(format!("delta must be positive, got {delta}"));
    }
    let eig = scn.system.basis().eigenvalues();
    let (rows, samples, excluded) = per_level_samples(scn, levels, n_ref, n_samples, seed, |run, n| {
        let sup = error_trajectory(run, n, eig)?
            .v_sq
            .iter()
            .copied()
            .fold(0.0, f64::max);
        Ok(vec![if sup >= delta { 1.0 } else { 0.0 }])
    })?;
    let t = horizon(scn);
    Ok(StudyTable {
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let hits = samples.iter().filter(|s| s[i][0] == 1.0).count();
                StudyRow {
                    study: "probability_tail".into(),
                    scenario: scn.label.clone(),
                    level: n,
                    horizon: t,
                    param: format!("delta={delta}"),
                    stats: EnsembleStats::proportion(hits, samples.len(), excluded),
                }
            })
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HVariant {
    Poly,
    ExpBounded,
    ExpAlpha,
}

/// `4 max sup_t |u|_H` over 100 pilot paths of the reference level, on streams
/// disjoint from those of the study.
pub fn calibrate_k_scale(scn: &Scenario, n_ref: usize, seed: u64) -> Result<f64> {
    const PILOT_OFFSET: u64 = 1 << 40;
    let (sups, _) = mc_samples(100, |i| {
        let rec = scn
            .system
            .simulate(&scn.u0, n_ref, seed, PILOT_OFFSET + i)?;
        Ok(rec
            .completed()
            .then(|| rec.h_sq.iter().copied().fold(0.0, f64::max).sqrt()))
    })?;
    let m = sups.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        Ok(4.0 * m)
    } else {
        Ok(1.0)
    }
}

/// H-error moments: `E sup |u^{N_ref} - u^n|_H^{2k}` for `k` in `k_list`, or
/// the exponential functionals of the H error.
#[allow(clippy::too_many_arguments)]
pub fn study_h_moments(
    scn: &Scenario,
    levels: &[usize],
    n_ref: usize,
    k_list: &[u32],
    variant: HVariant,
    k_scale: Option<f64>,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<StudyTable> {
    let model = scn.system.model();
    let functionals: Vec<(String, MomentFunctional)> = match variant {
        HVariant::Poly => {
            if k_list.is_empty() {
                return config("poly variant needs at least one k");
            }
            k_list
                .iter()
                .map(|&k| {
                    Ok((
                        format!("k={k}"),
                        MomentFunctional::new(FunctionalKind::PolyH { k }, NormSelector::HOfError)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
        HVariant::ExpBounded | HVariant::ExpAlpha => {
            if variant == HVariant::ExpBounded && model.kind() != NoiseKind::SaturatedDiagonal {
                return config("exp_bounded requires saturated_diagonal noise");
            }
            if variant == HVariant::ExpAlpha
                && !(model.kind() == NoiseKind::AlphaGrowth && model.alpha() == alpha)
            {
                return config("exp_alpha requires alpha_growth noise with the same alpha");
            }
            let k_scale = match k_scale {
                Some(k) => k,
                None => calibrate_k_scale(scn, n_ref, seed)?,
            };
            let kind = if variant == HVariant::ExpBounded {
                FunctionalKind::ExpH { k_scale }
            } else {
                FunctionalKind::ExpHAlpha { k_scale, alpha }
            };
            vec![(
                format!("K={k_scale}"),
                MomentFunctional::new(kind, NormSelector::HOfError)?,
            )]
        }
    };
    let eig = scn.system.basis().eigenvalues();
    let (rows, samples, excluded) = per_level_samples(scn, levels, n_ref, n_samples, seed, |run, n| {
        let err = error_trajectory(run, n, eig)?;
        functionals
            .iter()
            .map(|(_, f)| pathwise_sup(&err.h_sq, f))
            .collect()
    })?;
    let study = match variant {
        HVariant::Poly => "h_poly",
        HVariant::ExpBounded => "h_exp_bounded",
        HVariant::ExpAlpha => "h_exp_alpha",
    };
    let t = horizon(scn);
    let mut table = StudyTable::default();
    for (j, (param, _)) in functionals.iter().enumerate() {
        for (i, &n) in rows.iter().enumerate() {
            table.rows.push(StudyRow {
                study: study.into(),
                scenario: scn.label.clone(),
                level: n,
                horizon: t,
                param: param.clone(),
                stats: EnsembleStats::from_samples(&column(&samples, i, j), excluded),
            });
        }
    }
    Ok(table)
}

/// `E[|e(T)|_H^2 + int_0^T |e|_V^2 dt]` (param `h_end+v_int`) and the stronger
/// `E[sup_t |e|_V^2 + int_0^T |Ae|_H^2 dt]` (param `v_sup+a_int`), with
/// `e = u^{N_ref} - u^n`.
pub fn study_breckner(
    scn: &Scenario,
    levels: &[usize],
    n_ref: usize,
    n_samples: usize,
    seed: u64,
) -> Result<StudyTable> {
    let eig = scn.system.basis().eigenvalues();
    let (rows, samples, excluded) = per_level_samples(scn, levels, n_ref, n_samples, seed, |run, n| {
        let e = error_trajectory(run, n, eig)?;
        let weak = e.h_sq.last().copied().unwrap_or(0.0) + time_integral(&e.times, &e.v_sq);
        let strong = e.v_sq.iter().copied().fold(0.0, f64::max) + time_integral(&e.times, &e.a_sq);
        Ok(vec![weak, strong])
    })?;
    let t = horizon(scn);
    let mut table = StudyTable::default();
    for (j, param) in ["h_end+v_int", "v_sup+a_int"].iter().enumerate() {
        for (i, &n) in rows.iter().enumerate() {
            table.rows.push(StudyRow {
                study: "breckner".into(),
                scenario: scn.label.clone(),
                level: n,
                horizon: t,
                param: param.to_string(),
                stats: EnsembleStats::from_samples(&column(&samples, i, j), excluded),
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{GalerkinSystem, IntegratorConfig};
    use crate::noise::{stream_rng, NoiseModel};
    use crate::scenario::FieldSpec;
    use crate::spectral::{build_periodic_basis, SpectralField};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn f(kind: FunctionalKind) -> MomentFunctional {
        MomentFunctional::new(kind, NormSelector::VSqOfU).unwrap()
    }

    fn all_kinds() -> Vec<MomentFunctional> {
        vec![
            f(FunctionalKind::Log),
            f(FunctionalKind::LogLog),
            f(FunctionalKind::LogPow { eps: 0.25 }),
            f(FunctionalKind::PolyH { k: 2 }),
            f(FunctionalKind::ExpH { k_scale: 3.0 }),
            f(FunctionalKind::ExpHAlpha { k_scale: 3.0, alpha: 0.5 }),
        ]
    }

    #[test]
    fn functional_values() {
        let log = f(FunctionalKind::Log);
        assert!((eval_functional(&log, std::f64::consts::E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        for x in [0.0, 0.5, 3.0, 100.0] {
            assert!(eval_functional(&log, x).unwrap() <= x);
        }
        assert_eq!(eval_functional(&f(FunctionalKind::LogLog), 0.0).unwrap(), 0.0);
        assert_eq!(eval_functional(&f(FunctionalKind::LogPow { eps: 0.25 }), 0.0).unwrap(), 0.0);
        assert!(eval_functional(&log, -1e-3).is_err());
        for g in all_kinds() {
            assert_eq!(eval_functional(&g, 0.0).unwrap(), g.at_zero());
        }
    }

    #[test]
    fn functional_parameter_ranges() {
        assert!(MomentFunctional::new(FunctionalKind::LogPow { eps: 1.0 }, NormSelector::VSqOfU).is_err());
        assert!(MomentFunctional::new(FunctionalKind::LogPow { eps: 0.0 }, NormSelector::VSqOfU).is_err());
        assert!(MomentFunctional::new(FunctionalKind::PolyH { k: 0 }, NormSelector::HOfU).is_err());
        assert!(MomentFunctional::new(FunctionalKind::ExpH { k_scale: 0.0 }, NormSelector::HOfU).is_err());
        assert!(MomentFunctional::new(FunctionalKind::ExpHAlpha { k_scale: 1.0, alpha: 1.0 }, NormSelector::HOfU).is_err());
    }

    #[test]
    fn pathwise_sup_cases() {
        let log = f(FunctionalKind::Log);
        assert_eq!(pathwise_sup(&[3.0; 5], &log).unwrap(), 4.0_f64.ln());
        assert_eq!(pathwise_sup(&[0.0; 3], &log).unwrap(), 0.0);
        assert!(pathwise_sup(&[], &log).is_err());
    }

    #[test]
    fn ensemble_constant_and_normal() {
        let c = mc_expectation(50, |_| Ok(Some(0.1))).unwrap();
        assert_eq!((c.mean, c.ci, c.variance), (0.1, 0.0, 0.0));
        let normal = |s: u64| {
            let z: f64 = StandardNormal.sample(&mut stream_rng(21, s));
            Ok(Some(z))
        };
        let n = 4000;
        let a = mc_expectation(n, normal).unwrap();
        assert!(a.mean.abs() <= 4.0 / (n as f64).sqrt());
        assert!(a.min <= a.mean && a.mean <= a.max);
        assert!((a.ci - 1.96 * (a.variance / n as f64).sqrt()).abs() < 1e-15);
        assert_eq!(a, mc_expectation(n, normal).unwrap());
        assert!(mc_expectation(29, normal).is_err());
        let b = mc_expectation(4 * n, normal).unwrap();
        assert!((a.ci / b.ci - 2.0).abs() <= 0.6);
    }

    #[test]
    fn blow_ups_counted() {
        let s = mc_expectation(40, |i| Ok((i % 10 != 0).then_some(1.0))).unwrap();
        assert_eq!((s.n_samples, s.excluded), (36, 4));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && ((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
    }

    fn small_scenario(nonlinear: bool, model: NoiseModel, coupling: Coupling) -> Scenario {
        let b = Arc::new(build_periodic_basis(TAU, 16).unwrap());
        let cfg = IntegratorConfig {
            viscosity: 0.5,
            dt: 0.01,
            horizon: 0.3,
            record_coeffs: true,
            dealias: true,
            nonlinear,
        };
        let u0 = FieldSpec::Smooth { amplitude: 1.0, smoothing: 0.05, variant: 0, band: None }.realize(&b).unwrap();
        let system = GalerkinSystem::new(b, &SpectralField::zeros(16), model, cfg, 16).unwrap();
        Scenario { label: "test".into(), system, u0, coupling }
    }

    #[test]
    fn study_tables_structure() {
        let scn = small_scenario(true, NoiseModel::new(NoiseKind::DiagonalLinear, vec![0.5; 4], 1.0, 0.0).unwrap(), Coupling::Strict);
        let v = study_v_convergence(&scn, &[4, 8], 16, 0.25, 30, 1).unwrap();
        assert_eq!(v.rows.len(), 3);
        assert_eq!(v.rows[2].stats.mean, 0.0);
        assert_eq!(v.rows[2].stats.ci, 0.0);
        let p = study_probability_tail(&scn, &[4, 8], 16, 1e9, 30, 1).unwrap();
        assert!(p.rows.iter().all(|r| r.stats.mean == 0.0));
        let h = study_h_moments(&scn, &[4, 8], 16, &[1, 2], HVariant::Poly, None, 0.0, 30, 1).unwrap();
        assert_eq!(h.means("h_poly", "k=1")[2], 0.0);
        assert!(study_h_moments(&scn, &[4], 16, &[], HVariant::ExpBounded, None, 0.0, 30, 1).is_err());
        let b = study_breckner(&scn, &[4, 8], 16, 30, 1).unwrap();
        assert_eq!(b.means("breckner", "h_end+v_int")[2], 0.0);
        let lb = study_log_boundedness(&scn, &[8, 16], &[0.1, 0.3], 30, 1).unwrap();
        let m = lb.means("log_boundedness", "log");
        assert!(m[0] <= m[1] && m[2] <= m[3]);
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(STUDY_CSV_HEADER));
    }

    #[test]
    fn initial_errors_and_median() {
        let mut scn = small_scenario(false, NoiseModel::zero(), Coupling::Strict);
        scn.u0 = SpectralField::new((0..16).map(|k| 1.0 / (k + 1) as f64).collect()).unwrap();
        let eig = scn.system.basis().eigenvalues().to_vec();
        let e = initial_projection_errors(&scn, &[4, 8, 12], 16).unwrap();
        let direct: f64 = (8..16).map(|k| eig[k] / ((k + 1) * (k + 1)) as f64).sum();
        assert!((e[1] - direct).abs() <= 1e-12 * direct);
        assert!(e[0] > e[1] && e[1] > e[2]);
        assert_eq!(median_initial_error(&scn, &[4, 8, 12], 16).unwrap(), e[1]);
        assert_eq!(median_initial_error(&scn, &[4, 8], 16).unwrap(), 0.5 * (e[0] + e[1]));
        assert!(initial_projection_errors(&scn, &[17], 16).is_err());
    }

    #[test]
    fn zero_data_log_boundedness_is_zero() {
        let mut scn = small_scenario(true, NoiseModel::new(NoiseKind::DiagonalLinear, vec![0.5; 4], 1.0, 0.0).unwrap(), Coupling::Strict);
        scn.u0 = SpectralField::zeros(16);
        let lb = study_log_boundedness(&scn, &[8, 16], &[0.3], 30, 1).unwrap();
        assert!(lb.rows.iter().all(|r| r.stats.mean == 0.0));
    }

    #[test]
    fn exp_variants_check_noise_kind() {
        let sat = NoiseModel::new(NoiseKind::SaturatedDiagonal, vec![0.5; 4], 1.0, 0.0).unwrap();
        let scn = small_scenario(true, sat, Coupling::Strict);
        let t = study_h_moments(&scn, &[4, 8], 16, &[], HVariant::ExpBounded, Some(2.0), 0.0, 30, 1).unwrap();
        let m = t.means("h_exp_bounded", "K=2");
        assert_eq!(m[2], 1.0);
        assert!(m[0] >= m[1] && m[1] >= 1.0);
        assert!(study_h_moments(&scn, &[4], 16, &[], HVariant::ExpAlpha, Some(2.0), 0.5, 30, 1).is_err());
    }

    proptest! {
        #[test]
        fn functionals_nondecreasing(x in 0.0f64..1e3, dx in 0.0f64..1e3) {
            for g in all_kinds() {
                prop_assert!(eval_functional(&g, x).unwrap() <= eval_functional(&g, x + dx).unwrap());
            }
        }

        #[test]
        fn sup_then_apply_equals_apply_then_sup(h in prop::collection::vec(0.0f64..50.0, 1..40)) {
            for g in all_kinds() {
                let direct = h.iter().map(|x| eval_functional(&g, *x).unwrap()).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(pathwise_sup(&h, &g).unwrap(), direct);
            }
        }
    }
}
