//! CSV and JSON emission: versioned schema headers, UTF-8, LF line
//! endings, and full-precision (17 significant digit) decimal floats.
//! Wall-clock columns never feed back into any numeric result.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::CliResult;

/// 17 significant digits, enough to round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    /// Create the file and emit the schema comment line plus the header
    /// row.
    pub fn create(path: &Path, schema: &str, columns: &[&str]) -> CliResult<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# {schema}")?;
        writeln!(out, "{}", columns.join(","))?;
        Ok(CsvWriter { out })
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| crate::config::CliError::Config(format!("json serialization: {e}")))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Root-mean-square distance between ensemble rows (restricted to
/// `dims`) and the matching entries of `truth`.
pub fn rmse(
    ensemble: &crosspol::WeightedEnsemble,
    dims: std::ops::Range<usize>,
    truth: &[f64],
) -> f64 {
    let n = ensemble.len() as f64;
    let mut acc = 0.0;
    for p in ensemble.particles() {
        for d in dims.clone() {
            let diff = p[d] - truth[d];
            acc += diff * diff;
        }
    }
    (acc / n).sqrt()
}
