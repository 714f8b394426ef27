//! Initial data and forcing presets, and the bundle a study runs on.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::integrator::{Coupling, GalerkinSystem};
use crate::spectral::{project, GridField, SpectralField, StokesBasis};

/// A field given by name or by coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `amplitude * e_index` (zero based).
    Mode { index: usize, amplitude: f64 },
    /// Explicit leading coefficients; the rest are zero.
    Coeffs { values: Vec<f64> },
    /// Projection of a fixed smooth periodic field, damped by
    /// `exp(-smoothing * lambda_k)`, optionally cut to the first `band` modes,
    /// and scaled to H norm `amplitude`.
    Smooth {
        amplitude: f64,
        smoothing: f64,
        #[serde(default)]
        variant: u32,
        #[serde(default)]
        band: Option<usize>,
    },
}

impl FieldSpec {
    pub fn realize(&self, basis: &StokesBasis) -> Result<SpectralField> {
        let dim = basis.dim();
        match self {
            FieldSpec::Zero => Ok(SpectralField::zeros(dim)),
            FieldSpec::Mode { index, amplitude } => {
                if *index >= dim {
                    return config(format!("mode index {index} outside a basis of {dim} modes"));
                }
                SpectralField::new(SpectralField::unit(dim, *index).scaled(*amplitude).into_coeffs())
            }
            FieldSpec::Coeffs { values } => {
                if values.len() > dim {
                    return config(format!(
                        "{} coefficients given for a basis of {dim} modes",
                        values.len()
                    ));
                }
                let mut c = values.clone();
                c.resize(dim, 0.0);
                SpectralField::new(c)
            }
            FieldSpec::Smooth {
                amplitude,
                smoothing,
                variant,
                band,
            } => {
                if !(smoothing.is_finite() && *smoothing >= 0.0) {
                    return config(format!("smoothing must be nonnegative, got {smoothing}"));
                }
                let grid = smooth_field(basis, *variant);
                let raw = project(&grid, basis, dim)?;
                let keep = band.unwrap_or(dim).min(dim);
                let damped: Vec<f64> = raw
                    .coeffs()
                    .iter()
                    .zip(basis.eigenvalues())
                    .enumerate()
                    .map(|(k, (c, l))| if k < keep { c * (-smoothing * l).exp() } else { 0.0 })
                    .collect();
                let norm = damped.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return config("smooth preset has no component in the basis");
                }
                SpectralField::new(damped.iter().map(|c| c * amplitude / norm).collect())
            }
        }
    }
}

fn smooth_field(basis: &StokesBasis, variant: u32) -> GridField {
    let l = basis.domain().side_length;
    let p = 1.3 * variant as f64;
    GridField::from_fn(basis.domain(), |x, y| {
        let (s, t) = (x / l, y / l);
        (
            (TAU * t + 0.4 + p).sin()
                + 0.6 * (TAU * (s + 2.0 * t) + 1.1 - p).cos()
                + 0.3 * (2.0 * TAU * s - 0.5 + 0.5 * p).sin(),
            (TAU * s - 0.7 - p).cos() + 0.5 * (TAU * (2.0 * s - t) + 0.3 + p).sin()
                - 0.4 * (2.0 * TAU * t + 0.9).cos(),
        )
    })
}

/// A fully specified experiment: the system built up to the reference level,
/// initial data and the coupling rule.
#[derive(Clone, Debug)]
pub struct Scenario {
    /// Short label written into study tables.
    pub label: String,
    pub system: GalerkinSystem,
    pub u0: SpectralField,
    pub coupling: Coupling,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_dirichlet_basis, build_periodic_basis};

    #[test]
    fn presets_realize() {
        let b = build_periodic_basis(TAU, 10).unwrap();
        assert_eq!(FieldSpec::Zero.realize(&b).unwrap(), SpectralField::zeros(10));
        let m = FieldSpec::Mode { index: 2, amplitude: 3.0 }.realize(&b).unwrap();
        assert_eq!(m.coeffs()[2], 3.0);
        assert!(FieldSpec::Mode { index: 10, amplitude: 1.0 }.realize(&b).is_err());
        assert!(FieldSpec::Coeffs { values: vec![0.0; 11] }.realize(&b).is_err());
        let s = FieldSpec::Smooth { amplitude: 2.0, smoothing: 0.01, variant: 0, band: None }.realize(&b).unwrap();
        assert!((s.dot(&s).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_preset_consistent_across_grids() {
        let spec = FieldSpec::Smooth { amplitude: 1.0, smoothing: 0.002, variant: 0, band: None };
        let a = spec.realize(&build_dirichlet_basis(1.0, 24, 12).unwrap()).unwrap();
        let b = spec.realize(&build_dirichlet_basis(1.0, 32, 12).unwrap()).unwrap();
        // Same leading modes up to discretization error.
        for k in 0..6 {
            assert!((a.coeffs()[k] - b.coeffs()[k]).abs() < 0.05, "{k}: {} {}", a.coeffs()[k], b.coeffs()[k]);
        }
    }

    #[test]
    fn band_limit_zeroes_tail() {
        let b = build_periodic_basis(TAU, 20).unwrap();
        let s = FieldSpec::Smooth { amplitude: 1.0, smoothing: 0.0, variant: 2, band: Some(8) }.realize(&b).unwrap();
        assert!(s.coeffs()[8..].iter().all(|c| *c == 0.0));
        assert!((s.dot(&s).unwrap() - 1.0).abs() < 1e-12);
    }
}
