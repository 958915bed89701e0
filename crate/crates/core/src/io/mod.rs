//! File formats and run plumbing.
//!
//! Binary files are little-endian IEEE 754 doubles. Text outputs print
//! floats with Rust's shortest round-trip formatting, so every value read
//! back is bit-identical to the one written.

mod config;
mod draws_file;
mod tensor_file;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{stream_id, Block, Dataset};
use crate::rng::RngStream;

pub use config::{DataPaths, HyperOverrides, ModelSection, RunConfig, SelectionSection};
pub use draws_file::{decode_draws, encode_draws, read_draws, write_draws, DRAWS_MAGIC};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};

/// Canonical file names inside a data directory.
pub const TENSOR_NAME: &str = "X.btrt";
pub const RESPONSE_NAME: &str = "y.txt";
pub const COVARIATE_NAME: &str = "eta.csv";

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        msg: format!("line {line}: '{}' is not a number", s.trim()),
    })
}

/// One value per line; blank lines are skipped.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_f64(path, i + 1, l))
        .collect()
}

pub fn values_to_text(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v) + "\n").collect()
}

pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    write_atomic(path, values_to_text(values).as_bytes())
}

/// Comma-separated rows, one subject per row.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line.split(',').map(|c| parse_f64(path, i + 1, c)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    msg: format!("line {}: {} columns, expected {}", i + 1, row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    let q = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Loads a dataset and runs the collinearity preflight, returning its
/// warnings alongside. Without a covariate file `η` has zero columns.
pub fn load_dataset(paths: &DataPaths, seed: u64) -> Result<(Dataset, Vec<String>)> {
    let x = read_tensor(&paths.tensor)?;
    let n = *x.dims().last().unwrap_or(&0);
    let y = read_values(&paths.response)?;
    if y.len() != n {
        return Err(Error::Shape(format!(
            "{} holds {} responses but {} holds {n} subjects",
            paths.response.display(),
            y.len(),
            paths.tensor.display()
        )));
    }
    let eta = match &paths.covariates {
        Some(p) => {
            let eta = read_matrix_csv(p)?;
            if eta.nrows() != n {
                return Err(Error::Shape(format!(
                    "{} holds {} rows but {} holds {n} subjects",
                    p.display(),
                    eta.nrows(),
                    paths.tensor.display()
                )));
            }
            eta
        }
        None => DMatrix::zeros(n, 0),
    };
    let data = Dataset::new(y, x, eta)?;
    let warnings = data.collinearity_warnings(&mut RngStream::new(seed, stream_id(0, Block::Preflight)));
    Ok((data, warnings))
}

/// Writes the dataset under `dir` with the canonical file names.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<DataPaths> {
    let paths = DataPaths::in_dir(dir, data.q() > 0);
    write_tensor(data.x(), &paths.tensor)?;
    write_values(&paths.response, data.y())?;
    if let Some(p) = &paths.covariates {
        write_atomic(p, matrix_to_csv(data.eta()).as_bytes())?;
    }
    Ok(paths)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
