//! Matrix Market file ingestion and export.
//!
//! Supports the `coordinate` (1-based sparse triplets) and `array`
//! (column-major dense) formats with the `real general` field. Loaded
//! matrices with fewer rows than columns are stored transposed so that the
//! resulting operator always has `rows >= cols`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{CsrOp, DenseOp, LinearOperator, OpKernel, OperatorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MmFormat {
    Coordinate,
    Array,
}

fn format_err(line: usize, message: impl Into<String>) -> OperatorError {
    OperatorError::Format {
        line,
        message: message.into(),
    }
}

/// Loads a real, general Matrix Market file as a [`LinearOperator`].
///
/// Coordinate files become CSR operators, array files dense operators.
/// When the stored matrix is wider than tall, the transpose is kept instead,
/// so the returned operator reports the swapped dimensions.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<LinearOperator, OperatorError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file"))?
        .1
        .map(|l| (0usize, l))
        .map_err(OperatorError::Io)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%MatrixMarket" || fields[1] != "matrix" {
        return Err(format_err(1, "expected '%%MatrixMarket matrix ...' header"));
    }
    let format = match fields[2] {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(format_err(1, format!("unknown format '{other}'"))),
    };
    match fields[3] {
        "real" => {}
        other => return Err(OperatorError::Unsupported(format!("field '{other}'"))),
    }
    match fields[4] {
        "general" | "symmetric" => {}
        other => return Err(OperatorError::Unsupported(format!("symmetry '{other}'"))),
    }
    let symmetric = fields[4] == "symmetric";

    // skip comments, read size line
    let mut size_line = None;
    for (idx, line) in &mut lines {
        let line = line.map_err(OperatorError::Io)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some((idx + 1, trimmed.to_string()));
        break;
    }
    let (size_lineno, size_line) = size_line.ok_or_else(|| format_err(1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();

    match format {
        MmFormat::Coordinate => {
            if dims.len() != 3 {
                return Err(format_err(size_lineno, "coordinate size line needs 'm n nnz'"));
            }
            let m: usize = dims[0]
                .parse()
                .map_err(|_| format_err(size_lineno, "bad row count"))?;
            let n: usize = dims[1]
                .parse()
                .map_err(|_| format_err(size_lineno, "bad column count"))?;
            let nnz: usize = dims[2]
                .parse()
                .map_err(|_| format_err(size_lineno, "bad nnz count"))?;
            let mut triplets = Vec::with_capacity(nnz);
            let mut seen = 0usize;
            for (idx, line) in &mut lines {
                let line = line.map_err(OperatorError::Io)?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('%') {
                    continue;
                }
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(format_err(idx + 1, "expected 'i j value'"));
                }
                let i: usize = parts[0]
                    .parse()
                    .map_err(|_| format_err(idx + 1, "bad row index"))?;
                let j: usize = parts[1]
                    .parse()
                    .map_err(|_| format_err(idx + 1, "bad column index"))?;
                let v: f64 = parts[2]
                    .parse()
                    .map_err(|_| format_err(idx + 1, "bad value"))?;
                if i == 0 || i > m || j == 0 || j > n {
                    return Err(format_err(idx + 1, "index out of bounds (1-based)"));
                }
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
                seen += 1;
                if seen == nnz {
                    break;
                }
            }
            if seen != nnz {
                return Err(format_err(0, format!("expected {nnz} entries, found {seen}")));
            }
            let transpose = m < n;
            let (rows, cols) = if transpose { (n, m) } else { (m, n) };
            let oriented: Vec<(usize, usize, f64)> = triplets
                .into_iter()
                .map(|(i, j, v)| if transpose { (j, i, v) } else { (i, j, v) })
                .collect();
            Ok(LinearOperator::new(Arc::new(CsrOp::from_triplets(
                rows, cols, &oriented,
            ))))
        }
        MmFormat::Array => {
            if dims.len() != 2 {
                return Err(format_err(size_lineno, "array size line needs 'm n'"));
            }
            let m: usize = dims[0]
                .parse()
                .map_err(|_| format_err(size_lineno, "bad row count"))?;
            let n: usize = dims[1]
                .parse()
                .map_err(|_| format_err(size_lineno, "bad column count"))?;
            if symmetric {
                return Err(OperatorError::Unsupported(
                    "symmetric array files".to_string(),
                ));
            }
            let mut values = Vec::with_capacity(m * n);
            for (idx, line) in &mut lines {
                let line = line.map_err(OperatorError::Io)?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('%') {
                    continue;
                }
                for tok in trimmed.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| format_err(idx + 1, "bad value"))?;
                    values.push(v);
                }
                if values.len() >= m * n {
                    break;
                }
            }
            if values.len() != m * n {
                return Err(format_err(
                    0,
                    format!("expected {} values, found {}", m * n, values.len()),
                ));
            }
            // array format is column-major
            let a = DMatrix::from_vec(m, n, values);
            let a = if m < n { a.transpose() } else { a };
            Ok(LinearOperator::new(Arc::new(DenseOp::new(a))))
        }
    }
}

/// Writes a dense matrix in array format. Values are printed with 17
/// significant digits, which round-trips every f64 exactly.
pub fn write_matrix_market_dense(
    path: impl AsRef<Path>,
    a: &DMatrix<f64>,
) -> Result<(), OperatorError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} {}", a.nrows(), a.ncols())?;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            writeln!(w, "{:.16e}", a[(i, j)])?;
        }
    }
    Ok(())
}

/// Writes sparse triplets in coordinate format with 1-based indices.
pub fn write_matrix_market_csr(path: impl AsRef<Path>, csr: &CsrOp) -> Result<(), OperatorError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", csr.rows(), csr.cols(), csr.nnz())?;
    for (i, j, v) in csr.triplets() {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}
