use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::IsingFit;
use crate::error::{Error, Result};
use crate::mixture::Reader;

pub const FIT_MAGIC: &[u8; 4] = b"MSIF";
pub const FIT_VERSION: u32 = 1;

/// Non-finite per-node values (constant spins) are stored as null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitHeader {
    pub c: usize,
    pub gamma: f64,
    pub lambda_grid: Vec<Vec<f64>>,
    pub lambda_selected: Vec<Option<f64>>,
    pub ebic_scores: Vec<Option<f64>>,
    pub n_samples: usize,
    pub warnings: Vec<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Layout: magic, version, header length, JSON header, then `J` (`c x c`)
/// and `h` (`c`) as little-endian f32.
pub fn write_fit<W: Write>(fit: &IsingFit, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&FitHeader {
        c: fit.c(),
        gamma: fit.gamma,
        lambda_grid: fit.lambda_grid.clone(),
        lambda_selected: fit.lambda_selected.iter().map(|&v| finite(v)).collect(),
        ebic_scores: fit.ebic_scores.iter().map(|&v| finite(v)).collect(),
        n_samples: fit.n_samples,
        warnings: fit.warnings.clone(),
    })?;
    out.write_all(FIT_MAGIC)?;
    out.write_all(&FIT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity((fit.j.len() + fit.h.len()) * 4);
    for &v in fit.j.iter().chain(&fit.h) {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn save_fit(fit: &IsingFit, path: impl AsRef<Path>) -> Result<()> {
    write_fit(fit, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_fit(bytes: &[u8]) -> Result<IsingFit> {
    let mut r = Reader::new(bytes);
    r.expect_magic(FIT_MAGIC, FIT_VERSION)?;
    let at = r.offset();
    let header: FitHeader = r.json_header()?;
    let c = header.c;
    if header.lambda_selected.len() != c || header.ebic_scores.len() != c || header.lambda_grid.len() != c {
        return Err(Error::format(at, format!("per-node header lists do not match c = {c}")));
    }
    let j_at = r.offset();
    let j = Array2::from_shape_vec((c, c), r.f32s(c * c)?.into_iter().map(f64::from).collect()).expect("shape");
    let h = r.f32s(c)?.into_iter().map(f64::from).collect();
    r.finish()?;
    if (0..c).any(|a| j[[a, a]] != 0.0 || (0..a).any(|b| j[[a, b]] != j[[b, a]])) {
        return Err(Error::format(j_at, "couplings are not symmetric with zero diagonal"));
    }
    Ok(IsingFit {
        j,
        h,
        lambda_selected: header
            .lambda_selected
            .iter()
            .map(|v| v.unwrap_or(f64::INFINITY))
            .collect(),
        ebic_scores: header.ebic_scores.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        lambda_grid: header.lambda_grid,
        gamma: header.gamma,
        n_samples: header.n_samples,
        warnings: header.warnings,
    })
}

pub fn load_fit(path: impl AsRef<Path>) -> Result<IsingFit> {
    read_fit(&std::fs::read(path)?)
}
