//! Experiment configuration: a strict TOML schema plus the semantic checks that
//! can run before any basis is built.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::integrator::{Coupling, GalerkinSystem, IntegratorConfig};
use crate::moments::HVariant;
use crate::noise::{NoiseKind, NoiseModel};
use crate::scenario::{FieldSpec, Scenario};
use crate::spectral::io::{load_or_build, CACHE_ENV};
use crate::spectral::{build_periodic_basis, DomainKind, DomainSpec, StokesBasis, MAX_DIRICHLET_GRID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_label")]
    pub label: String,
    pub domain: DomainConfig,
    pub basis: BasisConfig,
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    #[serde(default = "default_side")]
    pub side_length: f64,
    /// Cells per axis. Optional on the torus, where the smallest grid resolving
    /// the modes is used.
    #[serde(default)]
    pub grid_points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub n_modes: usize,
    /// Reference level; defaults to `n_modes`.
    #[serde(default)]
    pub n_ref: Option<usize>,
    /// Cache directory; the environment variable is used when absent.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub viscosity: f64,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    #[serde(default = "zero_field")]
    pub forcing: FieldSpec,
    #[serde(default = "zero_field")]
    pub initial: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "additive")]
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Number of driven modes `K`.
    #[serde(default)]
    pub modes: usize,
    #[serde(default = "one")]
    pub cap: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::Additive,
            sigma0: 0.0,
            decay: default_decay(),
            modes: 0,
            cap: 1.0,
            alpha: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub record_coeffs: bool,
    #[serde(default = "yes")]
    pub dealias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Truncation levels compared against the reference; empty means
    /// `n_ref / 4, n_ref / 2`.
    #[serde(default)]
    pub levels: Vec<usize>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_k")]
    pub k: Vec<u32>,
    #[serde(default = "poly")]
    pub variant: HVariant,
    /// Exponent of the alpha-growth functional; defaults to the noise alpha.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Tail threshold; defaults to the median initial projection error.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Horizons of the boundedness study; defaults to the integrator horizon.
    #[serde(default)]
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub coupling: Coupling,
    /// Scale of the exponential functionals; calibrated when absent.
    #[serde(default)]
    pub k_scale: Option<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            levels: Vec::new(),
            n_samples: default_samples(),
            epsilon: default_eps(),
            k: default_k(),
            variant: HVariant::Poly,
            alpha: None,
            delta: None,
            horizons: Vec::new(),
            coupling: Coupling::Strict,
            k_scale: None,
        }
    }
}

/// Sizes of the `check` suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_iso_paths")]
    pub isometry_paths: usize,
    #[serde(default = "default_bdg_paths")]
    pub bdg_paths: usize,
    #[serde(default = "default_check_steps")]
    pub steps: usize,
    #[serde(default = "default_check_dt")]
    pub dt: f64,
    #[serde(default = "default_lip_samples")]
    pub lipschitz_samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            pairs: default_pairs(),
            isometry_paths: default_iso_paths(),
            bdg_paths: default_bdg_paths(),
            steps: default_check_steps(),
            dt: default_check_dt(),
            lipschitz_samples: default_lip_samples(),
        }
    }
}

fn default_label() -> String {
    "scenario".into()
}
fn default_side() -> f64 {
    TAU
}
fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn zero_field() -> FieldSpec {
    FieldSpec::Zero
}
fn additive() -> NoiseKind {
    NoiseKind::Additive
}
fn default_decay() -> f64 {
    2.0
}
fn default_samples() -> usize {
    200
}
fn default_eps() -> f64 {
    0.25
}
fn default_k() -> Vec<u32> {
    vec![1, 2]
}
fn poly() -> HVariant {
    HVariant::Poly
}
fn default_pairs() -> usize {
    100
}
fn default_iso_paths() -> usize {
    10_000
}
fn default_bdg_paths() -> usize {
    2_000
}
fn default_check_steps() -> usize {
    50
}
fn default_check_dt() -> f64 {
    0.02
}
fn default_lip_samples() -> usize {
    500
}

/// Reads and validates a TOML configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// As [`parse_config`] for text already in memory.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, key) = match e.span() {
            Some(span) => locate(text, span.start),
            None => (0, String::new()),
        };
        let mut msg = e.message().trim().to_string();
        if let Some(s) = suggestion(&msg) {
            msg.push_str(&format!("; did you mean `{s}`?"));
        }
        let at = match (line, key.is_empty()) {
            (0, _) => String::new(),
            (l, true) => format!("line {l}: "),
            (l, false) => format!("{key} (line {l}): "),
        };
        Error::Config(format!("{at}{msg}"))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// 1-based line of `offset` and the dotted key path written there.
fn locate(text: &str, offset: usize) -> (usize, String) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line_no = before.matches('\n').count() + 1;
    let mut section = String::new();
    for l in before.lines() {
        let t = l.trim();
        if t.starts_with('[') && !t.starts_with("[[") {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    let line = text[before.rfind('\n').map_or(0, |i| i + 1)..]
        .lines()
        .next()
        .unwrap_or("");
    let key = line
        .split_once('=')
        .map(|(k, _)| k.trim().trim_matches('"').to_string())
        .filter(|k| !k.is_empty() && !k.starts_with('['));
    let path = match (section.is_empty(), key) {
        (_, None) => section,
        (true, Some(k)) => k,
        (false, Some(k)) => format!("{section}.{k}"),
    };
    (line_no, path)
}

/// Nearest accepted key for an "unknown field" message.
fn suggestion(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    let (bad, rest) = rest.split_once('`')?;
    let candidates: Vec<&str> = rest.split('`').skip(1).step_by(2).collect();
    candidates
        .into_iter()
        .map(|c| (strsim::damerau_levenshtein(bad, c), c))
        .filter(|(d, c)| *d <= 3.max(c.len() / 3))
        .min()
        .map(|(_, c)| c.to_string())
}

fn alpha_ok(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        config(format!("alpha must lie in [0,1), got {alpha}"))
    }
}

impl ExperimentConfig {
    pub fn n_ref(&self) -> usize {
        self.basis.n_ref.unwrap_or(self.basis.n_modes)
    }

    /// Study levels with the documented default filled in.
    pub fn levels(&self) -> Vec<usize> {
        if self.study.levels.is_empty() {
            let r = self.n_ref();
            let mut l: Vec<usize> = [r / 4, r / 2].into_iter().filter(|n| *n >= 1).collect();
            l.dedup();
            l
        } else {
            self.study.levels.clone()
        }
    }

    pub fn horizons(&self) -> Vec<f64> {
        if self.study.horizons.is_empty() {
            vec![self.integrator.horizon]
        } else {
            self.study.horizons.clone()
        }
    }

    pub fn study_alpha(&self) -> f64 {
        self.study.alpha.unwrap_or(self.noise.alpha)
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            viscosity: self.physics.viscosity,
            dt: self.integrator.dt,
            horizon: self.integrator.horizon,
            record_coeffs: self.integrator.record_coeffs,
            dealias: self.integrator.dealias,
            nonlinear: self.physics.nonlinear,
        }
    }

    /// Every check that does not need the eigenvalues.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        match (d.kind, d.grid_points) {
            (DomainKind::DirichletSquare, None) => {
                return config("domain.grid_points is required on the dirichlet square")
            }
            (DomainKind::DirichletSquare, Some(g)) if g > MAX_DIRICHLET_GRID => {
                return config(format!("domain.grid_points must not exceed {MAX_DIRICHLET_GRID}, got {g}"))
            }
            (_, Some(g)) => {
                DomainSpec::new(d.kind, d.side_length, g)?;
            }
            (_, None) => {
                DomainSpec::new(d.kind, d.side_length, 8)?;
            }
        }
        let n_modes = self.basis.n_modes;
        if n_modes == 0 {
            return config("basis.n_modes must be at least 1");
        }
        let n_ref = self.n_ref();
        if n_ref == 0 || n_ref > n_modes {
            return config(format!("basis.n_ref must lie in 1..={n_modes}, got {n_ref}"));
        }
        let p = &self.physics;
        if !(p.viscosity > 0.0 && p.viscosity.is_finite()) {
            return config(format!("physics.viscosity must be positive, got {}", p.viscosity));
        }
        let i = &self.integrator;
        if !(i.dt > 0.0 && i.dt.is_finite()) {
            return config(format!("integrator.dt must be positive, got {}", i.dt));
        }
        if !(i.horizon.is_finite() && i.dt <= i.horizon) {
            return config(format!("integrator.dt = {} exceeds the horizon {}", i.dt, i.horizon));
        }
        let n = &self.noise;
        alpha_ok(n.alpha)?;
        if !(n.sigma0 >= 0.0 && n.sigma0.is_finite()) {
            return config(format!("noise.sigma0 must be nonnegative, got {}", n.sigma0));
        }
        if !(n.decay >= 2.0) {
            return config(format!("noise.decay must be at least 2, got {}", n.decay));
        }
        if !(n.cap > 0.0 && n.cap.is_finite()) {
            return config(format!("noise.cap must be positive, got {}", n.cap));
        }
        if n.modes > n_modes {
            return config(format!("noise.modes = {} exceeds basis.n_modes = {n_modes}", n.modes));
        }
        let s = &self.study;
        let levels = self.levels();
        if levels.is_empty() {
            return config("study.levels is empty");
        }
        if let Some(bad) = levels.iter().find(|l| **l == 0 || **l > n_ref) {
            return config(format!("study level {bad} outside 1..={n_ref}"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return config("study.levels must be strictly increasing");
        }
        let min_level = levels[0];
        if s.coupling == Coupling::Strict && n.modes > min_level {
            return config(format!(
                "noise.modes K = {} > min level {min_level}; strict coupling needs K <= every level",
                n.modes
            ));
        }
        if s.n_samples < 30 {
            return config(format!("study.n_samples must be at least 30, got {}", s.n_samples));
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            return config(format!("study.epsilon must lie in (0,1), got {}", s.epsilon));
        }
        if s.k.iter().any(|k| *k == 0) {
            return config("study.k entries must be positive");
        }
        if let Some(a) = s.alpha {
            alpha_ok(a)?;
        }
        if let Some(dl) = s.delta {
            if !(dl > 0.0 && dl.is_finite()) {
                return config(format!("study.delta must be positive, got {dl}"));
            }
        }
        if let Some(k) = s.k_scale {
            if !(k > 0.0 && k.is_finite()) {
                return config(format!("study.k_scale must be positive, got {k}"));
            }
        }
        if self.horizons().iter().any(|t| !(*t > 0.0 && *t <= i.horizon)) {
            return config("study.horizons must lie in (0, integrator.horizon]");
        }
        let c = &self.check;
        if c.pairs == 0 || c.isometry_paths < 2 || c.bdg_paths < 1000 || c.steps == 0 {
            return config("check sizes too small (pairs >= 1, isometry_paths >= 2, bdg_paths >= 1000, steps >= 1)");
        }
        if !(c.dt > 0.0 && c.dt.is_finite()) {
            return config(format!("check.dt must be positive, got {}", c.dt));
        }
        if c.lipschitz_samples < 100 {
            return config("check.lipschitz_samples must be at least 100");
        }
        Ok(())
    }

    /// Cache directory from the file, else from the environment.
    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.basis
            .cache
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
    }

    pub fn build_basis(&self) -> Result<StokesBasis> {
        let d = &self.domain;
        match d.grid_points {
            None => build_periodic_basis(d.side_length, self.basis.n_modes),
            Some(g) => {
                let spec = DomainSpec::new(d.kind, d.side_length, g)?;
                load_or_build(&spec, self.basis.n_modes, self.cache_dir().as_deref())
            }
        }
    }

    pub fn noise_model(&self, eigenvalues: &[f64]) -> Result<NoiseModel> {
        let n = &self.noise;
        if n.modes == 0 {
            return Ok(NoiseModel::zero());
        }
        NoiseModel::with_decay(n.kind, n.sigma0, n.decay, n.modes, eigenvalues, n.cap, n.alpha)
    }

    /// Builds the system up to `n_ref` on `basis` and realizes the data.
    pub fn scenario_on(&self, basis: Arc<StokesBasis>) -> Result<Scenario> {
        let forcing = self.physics.forcing.realize(&basis)?;
        let u0 = self.physics.initial.realize(&basis)?;
        let model = self.noise_model(basis.eigenvalues())?;
        let system = GalerkinSystem::new(basis, &forcing, model, self.integrator_config(), self.n_ref())?;
        Ok(Scenario {
            label: self.label.clone(),
            system,
            u0,
            coupling: self.study.coupling,
        })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_on(Arc::new(self.build_basis()?))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
