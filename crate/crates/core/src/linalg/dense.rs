//! Dense square matrices: generation, norms, and file I/O.
//!
//! Dense matrices only appear at the edges of the engine — building inputs,
//! verifying factorizations, reading/writing test matrices. The hot path
//! works on tiles (see [`super::tile`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniform random matrix in [-1, 1), reproducible from `seed`.
pub fn random_matrix(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
}

pub fn identity(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

const BIN_MAGIC: &[u8; 8] = b"TQRMAT01";

/// Write a square matrix as flat binary: an 8-byte magic, then `n` and `nb`
/// as little-endian u64, then the n*n entries as little-endian f64 in
/// row-major order. `nb` records the tile size the matrix is intended for
/// (zero if unspecified).
pub fn write_matrix_bin(path: &Path, a: &Array2<f64>, nb: usize) -> Result<()> {
    let n = square_order(a)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BIN_MAGIC)?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(nb as u64).to_le_bytes())?;
    for row in a.rows() {
        for &x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix_bin`]; returns the matrix and the
/// recorded tile-size hint.
pub fn read_matrix_bin(path: &Path) -> Result<(Array2<f64>, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| parse_err(path, 0, "file too short for header"))?;
    if &magic != BIN_MAGIC {
        return Err(parse_err(path, 0, "not a matrix file (bad magic)"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let nb = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        r.read_exact(&mut word)
            .map_err(|_| parse_err(path, 0, "file truncated before n*n entries"))?;
        data.push(f64::from_le_bytes(word));
    }
    let a = Array2::from_shape_vec((n, n), data)
        .map_err(|e| parse_err(path, 0, &e.to_string()))?;
    Ok((a, nb))
}

/// Write a small matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a square matrix from plain CSV. `#`-prefixed lines and blank lines
/// are skipped; every data row must have the same number of columns as there
/// are data rows.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in trimmed.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, idx + 1, &format!("bad number {:?}", field.trim())))?;
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyDataset("matrix csv"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(parse_err(
                path,
                i + 1,
                &format!("expected {n} columns for a square matrix, got {}", row.len()),
            ));
        }
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

pub(crate) fn square_order(a: &Array2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::ShapeMismatch { what: "square matrix", expected: r, got: c });
    }
    Ok(r)
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.to_string() }
}
