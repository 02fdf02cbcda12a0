//! External code matrices: the dataset binary layout with no instances, or
//! a `sample,atom,value` CSV of nonzero entries.

use std::path::Path;

use clap::ValueEnum;
use msb_core::mixture::{read_dataset, save_dataset, MixtureDataset, DATASET_MAGIC};
use msb_core::CodeMatrix;

use crate::CliError;

pub const CSV_HEADER: &str = "sample,atom,value";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum CodeFormat {
    /// Sniff the magic bytes.
    #[default]
    Auto,
    Binary,
    Csv,
}

pub fn ingest_codes(path: &Path, format: CodeFormat) -> Result<CodeMatrix, CliError> {
    let bytes = std::fs::read(path)?;
    let format = match format {
        CodeFormat::Auto if bytes.starts_with(DATASET_MAGIC) => CodeFormat::Binary,
        CodeFormat::Auto => CodeFormat::Csv,
        f => f,
    };
    match format {
        CodeFormat::Binary => codes_from_binary(&bytes),
        _ => {
            let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Csv {
                line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
                message: "invalid UTF-8".into(),
            })?;
            codes_from_csv(text)
        }
    }
}

fn codes_from_binary(bytes: &[u8]) -> Result<CodeMatrix, CliError> {
    let data = read_dataset(bytes)?;
    if data.meta.m != 0 {
        return Err(CliError::Core(msb_core::Error::Format {
            offset: 12,
            message: format!("expected a code matrix with m = 0, found m = {}", data.meta.m),
        }));
    }
    Ok(CodeMatrix::from_dense(data.x.view()))
}

/// Dimensions are one past the largest sample and atom index seen.
pub fn codes_from_csv(text: &str) -> Result<CodeMatrix, CliError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(CliError::Csv {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}, found {:?}", h.trim()),
            })
        }
        None => {
            return Err(CliError::Csv {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut entries: Vec<(usize, usize, f32, usize)> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Csv { line, message };
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let sample: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("sample index {:?} is not a non-negative integer", fields[0])))?;
        let atom: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("atom index {:?} is not a non-negative integer", fields[1])))?;
        let value: f32 = fields[2]
            .parse()
            .map_err(|_| err(format!("value {:?} is not a number", fields[2])))?;
        if !value.is_finite() {
            return Err(err(format!("value {value} is not finite")));
        }
        entries.push((sample, atom, value, line));
    }
    let n = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let c = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    entries.sort_by_key(|e| (e.0, e.1, e.3));
    if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(CliError::Csv {
            line: w[1].3,
            message: format!("duplicate entry for sample {} atom {}", w[1].0, w[1].1),
        });
    }
    let mut codes = CodeMatrix::empty(c);
    let mut it = entries.iter().peekable();
    for row in 0..n {
        let mut cols = Vec::new();
        while let Some(e) = it.next_if(|e| e.0 == row) {
            cols.push((e.1, e.2));
        }
        codes.push_row(cols);
    }
    Ok(codes)
}

/// Stores codes in the dataset layout with `d = c` and no instances.
pub fn save_codes(codes: &CodeMatrix, path: &Path) -> Result<(), CliError> {
    save_dataset(&MixtureDataset::from_matrix(codes.to_dense()), path)?;
    Ok(())
}
