//! Matrix files: comma-separated text and the `ICAB1` binary format.
//!
//! Text files hold one channel per line with no header. Binary files start
//! with the five magic bytes `ICAB1`, then `N` and `T` as little-endian `u64`,
//! then `N * T` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ica_core::prep::DataMatrix;
use ndarray::Array2;
use thiserror::Error;

use crate::BenchError;

pub const MAGIC: &[u8; 5] = b"ICAB1";
const HEADER_LEN: usize = MAGIC.len() + 16;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("empty file")]
    Empty,

    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },

    #[error("line {line}, column {column}: `{token}` is not a finite number")]
    NotANumber { line: usize, column: usize, token: String },

    #[error("offset 0: missing ICAB1 magic")]
    BadMagic,

    #[error("offset {offset}: payload truncated, expected {expected} bytes")]
    Truncated { offset: usize, expected: usize },

    #[error("offset {offset}: unexpected trailing bytes")]
    TrailingBytes { offset: usize },

    #[error("header declares {n} x {t}, which does not fit in memory")]
    Oversized { n: u64, t: u64 },
}

/// On-disk layout, chosen from the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.icab` selects the binary format; anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("icab") => MatrixFormat::Binary,
            _ => MatrixFormat::Csv,
        }
    }
}

pub fn load_matrix(path: &Path) -> Result<DataMatrix, BenchError> {
    let bytes = fs::read(path)?;
    let values = match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => {
            let text = String::from_utf8_lossy(&bytes);
            parse_csv(&text)
        }
        MatrixFormat::Binary => decode_binary(&bytes),
    }
    .map_err(|source| BenchError::Format { path: path.to_path_buf(), source })?;
    DataMatrix::new(values).map_err(|e| BenchError::Data { path: path.to_path_buf(), source: e })
}

pub fn save_matrix(path: &Path, data: &DataMatrix) -> Result<(), BenchError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => out.write_all(format_csv(data.values()).as_bytes())?,
        MatrixFormat::Binary => out.write_all(&encode_binary(data.values()))?,
    }
    out.flush()?;
    Ok(())
}

/// Formats every value with 17 significant digits.
pub fn format_csv(values: &Array2<f64>) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for row in values.rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push_str(&format!("{v:.16e}"));
        }
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>, FormatError> {
    let lines: Vec<&str> = text.trim_end_matches(['\n', '\r']).split('\n').collect();
    if lines.len() == 1 && lines[0].trim().is_empty() {
        return Err(FormatError::Empty);
    }
    let mut width = 0;
    let mut values = Vec::new();
    for (idx, raw) in lines.iter().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        let mut found = 0;
        for (col, token) in raw.split(',').enumerate() {
            let token = token.trim();
            let v: f64 = token
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| FormatError::NotANumber {
                    line,
                    column: col + 1,
                    token: token.to_string(),
                })?;
            values.push(v);
            found += 1;
        }
        if idx == 0 {
            width = found;
        } else if found != width {
            return Err(FormatError::RaggedRow { line, expected: width, found });
        }
    }
    Ok(Array2::from_shape_vec((lines.len(), width), values).expect("row lengths checked"))
}

pub fn encode_binary(values: &Array2<f64>) -> Vec<u8> {
    let (n, t) = values.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * t);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Array2<f64>, FormatError> {
    if bytes.is_empty() {
        return Err(FormatError::Empty);
    }
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { offset: bytes.len(), expected: HEADER_LEN });
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (n, t) = (word(5), word(13));
    let len = n
        .checked_mul(t)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| usize::try_from(c).ok())
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or(FormatError::Oversized { n, t })?;
    if bytes.len() < len {
        return Err(FormatError::Truncated { offset: bytes.len(), expected: len });
    }
    if bytes.len() > len {
        return Err(FormatError::TrailingBytes { offset: len });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n as usize, t as usize), values).expect("length checked"))
}
