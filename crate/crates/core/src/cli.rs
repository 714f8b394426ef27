//! The `snse` command line: basis tables, check suites, single paths and the
//! Monte Carlo studies, each with a JSON manifest that reproduces the run.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, ExperimentConfig};
use crate::error::{config, contract, Error, Result};
use crate::integrator::TrajectoryRecord;
use crate::moments::{
    median_initial_error, study_breckner, study_h_moments, study_log_boundedness,
    study_probability_tail, study_v_convergence, StudyTable,
};
use crate::noise::{bdg_check_from, isometry_check, lipschitz_bounds, stream_rng, verify_lipschitz};
use crate::nonlinear::{ladyzhenskaya_ratio, skew_ratio, BilinearWorkspace};
use crate::scenario::Scenario;
use crate::spectral::io::content_hash;
use crate::spectral::{DomainKind, SpectralField, StokesBasis};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Tolerances of the check suite.
pub const SKEW_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-8;
pub const ISOMETRY_TOL: f64 = 0.05;
pub const BDG_P2_CONSTANT: f64 = 4.2;

#[derive(Debug, Parser)]
#[command(name = "snse", version, about = "Stochastic Navier-Stokes Galerkin experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration or a manifest.json written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "snse-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Eigenvalue table and basis diagnostics.
    BasisInfo,
    /// Cancellation, Ito isometry, BDG and Lipschitz checks.
    Check,
    /// One path at the reference level.
    Simulate,
    /// V-norm log-moment convergence.
    StudyV,
    /// H-norm moments (poly, exp_bounded or exp_alpha).
    StudyH,
    /// Log boundedness of the truncations.
    StudyBound,
    /// Tail probabilities of the V error.
    StudyProb,
    /// Weak and strong energy-error expectations.
    StudyBreckner,
}

impl Command {
    fn is_study(self) -> bool {
        matches!(
            self,
            Command::StudyV
                | Command::StudyH
                | Command::StudyBound
                | Command::StudyProb
                | Command::StudyBreckner
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to rerun a command. Deliberately free of timestamps and
/// thread counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub format: Format,
    pub seed: u64,
    pub scenario_hash: String,
    pub basis_hash: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Contract(_) | Error::Numeric(_) | Error::BlowUp { .. } | Error::Io(_) => EXIT_NUMERIC,
    }
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match execute(&cli) {
        Ok(passed) => {
            if passed {
                EXIT_PASS
            } else {
                EXIT_ASSERTION
            }
        }
        Err(e) => {
            eprintln!("snse: {e}");
            exit_code(&e)
        }
    }
}

/// Loads a TOML config or the config stored in a manifest; the manifest's
/// format is returned so a rerun writes the same files.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Option<Format>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{} (line {}): {e}", path.display(), e.line()))
        })?;
        m.config.validate()?;
        Ok((m.config, Some(m.format)))
    } else {
        Ok((parse_config(path)?, None))
    }
}

/// Runs the parsed command; `Ok(false)` means an assertion failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let Some(path) = &cli.config else {
        return config("--config is required");
    };
    let (mut cfg, manifest_format) = load_config(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let format = cli.format.or(manifest_format).unwrap_or_default();
    if cli.command.is_study() && !cfg.integrator.record_coeffs {
        return config("integrator.record_coeffs must be true for studies");
    }
    if cli.jobs == Some(0) {
        return config("--jobs must be at least 1");
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    pool.install(|| Runner::new(cfg, cli.command, format, &cli.out)?.go())
}

struct Runner<'a> {
    cfg: ExperimentConfig,
    command: Command,
    format: Format,
    out: &'a Path,
    outputs: Vec<OutputFile>,
}

impl<'a> Runner<'a> {
    fn new(cfg: ExperimentConfig, command: Command, format: Format, out: &'a Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Runner {
            cfg,
            command,
            format,
            out,
            outputs: Vec::new(),
        })
    }

    fn go(mut self) -> Result<bool> {
        let basis = Arc::new(self.cfg.build_basis()?);
        let passed = match self.command {
            Command::BasisInfo => self.basis_info(&basis)?,
            Command::Check => self.check(&basis)?,
            Command::Simulate => self.simulate(&basis)?,
            _ => self.study(&basis)?,
        };
        let manifest = Manifest {
            tool: "snse".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            format: self.format,
            seed: self.cfg.seed,
            scenario_hash: self.cfg.hash(),
            basis_hash: content_hash(&basis),
            config: self.cfg.clone(),
            outputs: self.outputs.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Numeric(format!("manifest: {e}")))?;
        text.push('\n');
        fs::write(self.out.join(MANIFEST_FILE), text)?;
        Ok(passed)
    }

    fn emit(&mut self, stem: &str, csv: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>, json: impl FnOnce() -> serde_json::Result<String>) -> Result<()> {
        let (name, bytes) = match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                csv(&mut buf)?;
                (format!("{stem}.csv"), buf)
            }
            Format::Json => {
                let mut s = json().map_err(|e| Error::Numeric(format!("json: {e}")))?;
                s.push('\n');
                (format!("{stem}.json"), s.into_bytes())
            }
        };
        fs::write(self.out.join(&name), &bytes)?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.outputs.push(OutputFile { file: name, sha256 });
        Ok(())
    }

    fn basis_info(&mut self, basis: &StokesBasis) -> Result<bool> {
        #[derive(Serialize)]
        struct Info<'b> {
            kind: DomainKind,
            side_length: f64,
            grid_points: usize,
            eigenvalues: &'b [f64],
            gram_deviation: f64,
            max_divergence: f64,
            max_wall_value: f64,
        }
        let info = Info {
            kind: basis.domain().kind,
            side_length: basis.domain().side_length,
            grid_points: basis.domain().grid_points,
            eigenvalues: basis.eigenvalues(),
            gram_deviation: basis.gram_deviation(),
            max_divergence: basis.max_divergence(),
            max_wall_value: basis.max_wall_value(),
        };
        println!(
            "{} modes, gram deviation {:.3e}, max divergence {:.3e}, max wall value {:.3e}",
            basis.dim(),
            info.gram_deviation,
            info.max_divergence,
            info.max_wall_value
        );
        self.emit(
            "basis",
            |w| {
                writeln!(w, "index,eigenvalue")?;
                for (k, l) in basis.eigenvalues().iter().enumerate() {
                    writeln!(w, "{k},{l}")?;
                }
                Ok(())
            },
            || serde_json::to_string_pretty(&info),
        )?;
        Ok(true)
    }

    fn check(&mut self, basis: &Arc<StokesBasis>) -> Result<bool> {
        let rows = check_suite(&self.cfg, basis)?;
        for r in &rows {
            println!(
                "{} {:<24} {:.6e} (bound {:.3e})",
                if r.pass { "PASS" } else { "FAIL" },
                r.name,
                r.value,
                r.bound
            );
        }
        let passed = rows.iter().all(|r| r.pass);
        self.emit(
            "check",
            |w| {
                writeln!(w, "check,value,bound,pass")?;
                for r in &rows {
                    writeln!(w, "{},{},{},{}", r.name, r.value, r.bound, r.pass)?;
                }
                Ok(())
            },
            || serde_json::to_string_pretty(&rows),
        )?;
        Ok(passed)
    }

    fn simulate(&mut self, basis: &Arc<StokesBasis>) -> Result<bool> {
        let scn = self.cfg.scenario_on(Arc::clone(basis))?;
        let rec: TrajectoryRecord = scn.system.simulate(&scn.u0, self.cfg.n_ref(), self.cfg.seed, 0)?;
        if let Some(b) = rec.blow_up {
            eprintln!("path blew up at step {} (t = {})", b.step, b.time);
        }
        self.emit("trajectory", |w| rec.write_csv(w, true), || serde_json::to_string(&rec))?;
        Ok(rec.completed())
    }

    fn study(&mut self, basis: &Arc<StokesBasis>) -> Result<bool> {
        let scn = self.cfg.scenario_on(Arc::clone(basis))?;
        let n_ref = self.cfg.n_ref();
        let (stem, table) = run_study(&self.cfg, &scn, self.command)?;
        print!("{table}");
        let mut passed = true;
        if table.excluded() > 0 {
            println!("FAIL {} samples excluded after blow-up", table.excluded());
            passed = false;
        }
        if self.command != Command::StudyBound {
            // the reference compared with itself
            let self_rows_zero = table
                .rows
                .iter()
                .filter(|r| r.level == n_ref)
                .all(|r| r.stats.mean == value_at_zero(&r.study));
            if !self_rows_zero {
                println!("FAIL reference self-difference row is not exact");
                passed = false;
            }
        }
        self.emit(stem, |w| table.write_csv(w), || serde_json::to_string_pretty(&table))?;
        Ok(passed)
    }
}

/// Runs one study subcommand; returns the output file stem and the table.
pub fn run_study(c: &ExperimentConfig, scn: &Scenario, command: Command) -> Result<(&'static str, StudyTable)> {
    let (levels, n_ref, n, seed) = (c.levels(), c.n_ref(), c.study.n_samples, c.seed);
    Ok(match command {
            Command::StudyV => ("study_v", study_v_convergence(scn, &levels, n_ref, c.study.epsilon, n, seed)?),
            Command::StudyH => (
                "study_h",
                study_h_moments(
                    scn,
                    &levels,
                    n_ref,
                    &c.study.k,
                    c.study.variant,
                    c.study.k_scale,
                    c.study_alpha(),
                    n,
                    seed,
                )?,
            ),
            Command::StudyBound => {
                let mut ns = levels.clone();
                ns.push(n_ref);
                ns.dedup();
                ("study_bound", study_log_boundedness(scn, &ns, &c.horizons(), n, seed)?)
            }
            Command::StudyProb => {
                let delta = match c.study.delta {
                    Some(d) => d,
                    None => median_initial_error(scn, &levels, n_ref)?,
                };
                ("study_prob", study_probability_tail(scn, &levels, n_ref, delta, n, seed)?)
            }
            Command::StudyBreckner => ("study_breckner", study_breckner(scn, &levels, n_ref, n, seed)?),
            _ => return contract(format!("{command:?} is not a study")),
        })
}

/// Value of a study's functional at zero error.
fn value_at_zero(study: &str) -> f64 {
    if study.starts_with("h_exp") {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

fn row(name: impl Into<String>, value: f64, bound: f64) -> CheckRow {
    CheckRow {
        name: name.into(),
        value,
        bound,
        pass: value.is_finite() && value <= bound,
    }
}

/// Random field with coefficients of size `lambda_1 / lambda_k`.
fn random_field(basis: &StokesBasis, seed: u64, stream: u64) -> SpectralField {
    let mut rng = stream_rng(seed, stream);
    let l1 = basis.eigenvalues()[0];
    let c = basis
        .eigenvalues()
        .iter()
        .map(|l| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * l1 / l
        })
        .collect();
    SpectralField::new(c).expect("finite coefficients")
}

/// The `check` suite for the configured basis and noise.
pub fn check_suite(cfg: &ExperimentConfig, basis: &Arc<StokesBasis>) -> Result<Vec<CheckRow>> {
    let ch = &cfg.check;
    let seed = cfg.seed;
    let mut rows = Vec::new();
    let ws = BilinearWorkspace::new(Arc::clone(basis), cfg.integrator.dealias);
    let (mut skew, mut grad) = (0.0_f64, 0.0_f64);
    for i in 0..ch.pairs as u64 {
        let u = random_field(basis, seed, 2 * i);
        let v = random_field(basis, seed, 2 * i + 1);
        skew = skew.max(skew_ratio(&u, &v, &ws)?);
        grad = grad.max(ladyzhenskaya_ratio(&u, &ws)?);
    }
    match basis.domain().kind {
        DomainKind::PeriodicTorus => {
            rows.push(row("skew_pairing", skew, SKEW_TOL));
            rows.push(row("gradient_pairing", grad, GRAD_TOL));
        }
        DomainKind::DirichletSquare => {
            // Grid differentiation breaks the first cancellation at O(h) and
            // the walls break the second outright; both are reported only.
            rows.push(row("skew_pairing", skew, f64::INFINITY));
            rows.push(row("gradient_pairing", grad, f64::INFINITY));
        }
    }
    let model = cfg.noise_model(basis.eigenvalues())?;
    let u0 = cfg.physics.initial.realize(basis)?;
    let iso = isometry_check(&model, &u0, ch.isometry_paths, ch.steps, ch.dt, seed)?;
    rows.push(row("ito_isometry", iso.relative_error, ISOMETRY_TOL));
    let bdg = bdg_check_from(2, ch.bdg_paths, ch.steps, ch.dt, &model, &u0, seed)?;
    rows.push(row("bdg_p2", bdg.ratio.unwrap_or(0.0), BDG_P2_CONSTANT));
    for j in 0..3 {
        let seen = verify_lipschitz(&model, basis, j, ch.lipschitz_samples, 10.0, seed)?;
        let bound = lipschitz_bounds(&model, basis.eigenvalues(), j)?;
        let tol = |b: f64| b * (1.0 + 1e-12) + 1e-300;
        rows.push(row(format!("sublinear_j{j}"), seen.sublinear, tol(bound.sublinear)));
        if !bound.local_only {
            rows.push(row(format!("lipschitz_j{j}"), seen.lipschitz, tol(bound.lipschitz)));
        }
    }
    Ok(rows)
}
