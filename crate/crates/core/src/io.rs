//! File formats: domains as JSON, fields as CSV, operator matrices as raw
//! little-endian `f64` with a JSON header.
//!
//! A field file starts with a `# domain <hash>` line naming the domain it
//! belongs to, followed by the header `cell_index,x,value` (1D) or
//! `cell_index,x,y,value` (2D) and one row per active cell. Values are written
//! with 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, DomainFile, ScalarField};
use crate::error::{FracError, Result};
use crate::fraclap::{OperatorKind, OperatorMatrix};

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(FracError::Malformed(msg.into()))
}

pub fn read_domain(path: &Path) -> Result<Domain> {
    Domain::from_json(&fs::read_to_string(path)?)
}

pub fn write_domain(path: &Path, d: &Domain) -> Result<()> {
    fs::write(path, d.to_json())?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn field_to_csv(f: &ScalarField) -> String {
    let d = f.domain();
    let mut out = format!("# domain {}\n", d.hash());
    out.push_str(if d.dim() == 1 { "cell_index,x,value\n" } else { "cell_index,x,y,value\n" });
    for (i, (c, v)) in d.centers().iter().zip(f.values()).enumerate() {
        if d.dim() == 1 {
            let _ = writeln!(out, "{i},{},{}", num(c[0]), num(*v));
        } else {
            let _ = writeln!(out, "{i},{},{},{}", num(c[0]), num(c[1]), num(*v));
        }
    }
    out
}

/// Parses a field file for `d`, enforcing the domain hash, the header, one
/// row per active cell and the cell-center coordinates.
pub fn field_from_csv(text: &str, d: &Arc<Domain>) -> Result<ScalarField> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = match lines.next() {
        Some(l) => l.trim(),
        None => return malformed("empty field file"),
    };
    let found = match first.strip_prefix("# domain ") {
        Some(h) => h.trim().to_string(),
        None => return malformed("field file must start with a '# domain <hash>' line"),
    };
    let expected = d.hash();
    if found != expected {
        return Err(FracError::HashMismatch { expected, found });
    }
    let header = if d.dim() == 1 { "cell_index,x,value" } else { "cell_index,x,y,value" };
    match lines.next() {
        Some(l) if l.trim() == header => {}
        Some(l) => return malformed(format!("expected header {header:?}, found {:?}", l.trim())),
        None => return malformed("missing header row"),
    }
    let cols = d.dim() + 2;
    let mut values = vec![f64::NAN; d.len()];
    let mut seen = vec![false; d.len()];
    let tol = 1e-9 * (1.0 + d.bounding_extent().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for (row, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != cols {
            return malformed(format!("row {}: expected {cols} columns, found {}", row + 1, parts.len()));
        }
        let idx: usize = parts[0].parse().map_err(|_| FracError::Malformed(format!("row {}: bad cell index", row + 1)))?;
        if idx >= d.len() || seen[idx] {
            return malformed(format!("row {}: cell index {idx} out of range or repeated", row + 1));
        }
        let nums: Vec<f64> = parts[1..]
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| FracError::Malformed(format!("row {}: unparsable number", row + 1)))?;
        let c = d.centers()[idx];
        if (nums[0] - c[0]).abs() > tol || (d.dim() == 2 && (nums[1] - c[1]).abs() > tol) {
            return malformed(format!("row {}: coordinates do not match cell {idx}", row + 1));
        }
        values[idx] = nums[cols - 2];
        seen[idx] = true;
    }
    let count = seen.iter().filter(|s| **s).count();
    if count != d.len() {
        return malformed(format!("field has {count} rows, domain has {} cells", d.len()));
    }
    ScalarField::new(d.clone(), values)
}

pub fn write_field(path: &Path, f: &ScalarField) -> Result<()> {
    fs::write(path, field_to_csv(f))?;
    Ok(())
}

pub fn read_field(path: &Path, d: &Arc<Domain>) -> Result<ScalarField> {
    field_from_csv(&fs::read_to_string(path)?, d)
}

/// Header stored next to a binary matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub n: usize,
    pub sigma: f64,
    pub kind: OperatorKind,
    pub domain_hash: String,
    /// The domain itself, so the matrix file is self-contained.
    pub domain: DomainFile,
}

/// `A.bin` pairs with `A.json`.
pub fn matrix_header_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the row-major matrix to `bin` and its header next to it.
pub fn write_matrix(bin: &Path, a: &OperatorMatrix) -> Result<()> {
    let n = a.len();
    let mut bytes = Vec::with_capacity(8 * n * n);
    for i in 0..n {
        for j in 0..n {
            bytes.extend_from_slice(&a.matrix()[(i, j)].to_le_bytes());
        }
    }
    fs::write(bin, bytes)?;
    let header = MatrixHeader {
        n,
        sigma: a.sigma(),
        kind: a.kind(),
        domain_hash: a.domain().hash(),
        domain: a.domain().to_file(),
    };
    fs::write(matrix_header_path(bin), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_matrix(bin: &Path) -> Result<OperatorMatrix> {
    let header: MatrixHeader = serde_json::from_str(&fs::read_to_string(matrix_header_path(bin))?)?;
    let d = Arc::new(Domain::from_file(&header.domain)?);
    if d.hash() != header.domain_hash {
        return Err(FracError::HashMismatch { expected: header.domain_hash, found: d.hash() });
    }
    if d.len() != header.n {
        return malformed(format!("header says n = {}, domain has {} cells", header.n, d.len()));
    }
    crate::error::check_sigma(header.sigma)?;
    let bytes = fs::read(bin)?;
    let n = header.n;
    if bytes.len() != 8 * n * n {
        return malformed(format!("matrix file holds {} bytes, expected {}", bytes.len(), 8 * n * n));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    OperatorMatrix::from_parts(d, header.sigma, header.kind, DMatrix::from_row_slice(n, n, &vals))
}
