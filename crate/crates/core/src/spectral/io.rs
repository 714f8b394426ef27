//! Basis cache files.
//!
//! Layout (all integers and floats little endian):
//!
//! ```text
//! magic        8 bytes   "SNSEBAS\0"
//! version      u32
//! header_len   u64
//! header       JSON      {format_version, domain, dim, nodes_per_axis, fourier_modes}
//! eigenvalues  dim x f64
//! weights      nodes^2 x f64
//! modes        dim x (ux: nodes^2 x f64, uy: nodes^2 x f64)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DomainKind, DomainSpec, FourierMode, GridField, StokesBasis};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SNSEBAS\0";
pub const FORMAT_VERSION: u32 = 1;

/// Environment variable naming the basis cache directory.
pub const CACHE_ENV: &str = "SNSE_BASIS_CACHE";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    domain: DomainSpec,
    dim: usize,
    nodes_per_axis: usize,
    fourier_modes: Option<Vec<FourierMode>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("invalid basis file: {}", msg.into()))
}

pub fn encode_basis(basis: &StokesBasis) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        domain: basis.domain().clone(),
        dim: basis.dim(),
        nodes_per_axis: basis.domain().nodes_per_axis(),
        fourier_modes: basis.fourier_modes().map(|f| f.to_vec()),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let nodes2 = header.nodes_per_axis * header.nodes_per_axis;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * (basis.dim() * (1 + 2 * nodes2) + nodes2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    put(basis.eigenvalues());
    put(basis.quadrature_weights());
    for mode in basis.modes() {
        put(&mode.ux);
        put(&mode.uy);
    }
    out
}

pub fn decode_basis(bytes: &[u8]) -> Result<StokesBasis> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    header.domain.validate()?;
    if header.nodes_per_axis != header.domain.nodes_per_axis() {
        return Err(bad("grid size does not match domain"));
    }
    let nodes2 = header.nodes_per_axis * header.nodes_per_axis;
    let expected = header.dim * (1 + 2 * nodes2) + nodes2;
    let data = &bytes[20 + hlen..];
    if data.len() != 8 * expected {
        return Err(bad(format!(
            "payload holds {} bytes, expected {}",
            data.len(),
            8 * expected
        )));
    }
    let mut floats = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let eigenvalues = take(header.dim);
    let weights = take(nodes2);
    let mut modes = Vec::with_capacity(header.dim);
    for _ in 0..header.dim {
        let ux = take(nodes2);
        let uy = take(nodes2);
        modes.push(GridField::from_components(header.nodes_per_axis, ux, uy)?);
    }
    if header.domain.kind == DomainKind::PeriodicTorus && header.fourier_modes.is_none() {
        return Err(bad("torus basis without Fourier labels"));
    }
    Ok(StokesBasis::from_parts(
        header.domain,
        eigenvalues,
        weights,
        modes,
        header.fourier_modes,
    ))
}

pub fn write_basis(path: &Path, basis: &StokesBasis) -> Result<()> {
    let bytes = encode_basis(basis);
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<StokesBasis> {
    decode_basis(&fs::read(path)?)
}

/// Hex SHA-256 of the encoded basis.
pub fn content_hash(basis: &StokesBasis) -> String {
    let digest = Sha256::digest(encode_basis(basis));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// File name under which a basis for `(domain, n_modes)` is cached.
pub fn cache_file_name(domain: &DomainSpec, n_modes: usize) -> String {
    let kind = match domain.kind {
        DomainKind::PeriodicTorus => "torus",
        DomainKind::DirichletSquare => "square",
    };
    format!(
        "{kind}_L{:016x}_g{}_n{}.sbasis",
        domain.side_length.to_bits(),
        domain.grid_points,
        n_modes
    )
}

/// Loads the basis from `cache_dir` when present, otherwise builds it and, if a
/// cache directory was given, stores it there.
pub fn load_or_build(
    domain: &DomainSpec,
    n_modes: usize,
    cache_dir: Option<&Path>,
) -> Result<StokesBasis> {
    let path: Option<PathBuf> = cache_dir.map(|d| d.join(cache_file_name(domain, n_modes)));
    if let Some(p) = &path {
        if p.exists() {
            let basis = read_basis(p)?;
            if basis.domain() == domain && basis.dim() == n_modes {
                return Ok(basis);
            }
        }
    }
    let basis = StokesBasis::build(domain, n_modes)?;
    if let (Some(dir), Some(p)) = (cache_dir, &path) {
        fs::create_dir_all(dir)?;
        write_basis(p, &basis)?;
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_dirichlet_basis, build_periodic_basis};

    #[test]
    fn round_trip_preserves_everything() {
        for basis in [
            build_periodic_basis(2.0, 10).unwrap(),
            build_dirichlet_basis(1.0, 12, 6).unwrap(),
        ] {
            let back = decode_basis(&encode_basis(&basis)).unwrap();
            assert_eq!(back.domain(), basis.domain());
            assert_eq!(back.eigenvalues(), basis.eigenvalues());
            assert_eq!(back.modes(), basis.modes());
            assert_eq!(back.fourier_modes(), basis.fourier_modes());
            assert_eq!(content_hash(&back), content_hash(&basis));
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let basis = build_periodic_basis(2.0, 4).unwrap();
        let mut bytes = encode_basis(&basis);
        assert!(decode_basis(&bytes[..bytes.len() - 8]).is_err());
        bytes[8] = 9;
        assert!(decode_basis(&bytes).is_err());
        assert!(decode_basis(b"not a basis file at all").is_err());
    }

    #[test]
    fn cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let domain = DomainSpec::new(DomainKind::DirichletSquare, 1.0, 10).unwrap();
        let a = load_or_build(&domain, 5, Some(dir.path())).unwrap();
        let file = dir.path().join(cache_file_name(&domain, 5));
        assert!(file.exists());
        let b = load_or_build(&domain, 5, Some(dir.path())).unwrap();
        assert_eq!(a.modes(), b.modes());
    }
}
