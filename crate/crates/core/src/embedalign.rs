//! Alignment metrics between two token-embedding matrices: row-wise cosine,
//! linear CKA, and nearest-neighbor identity accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

/// Row-major matrix; each row is one token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AlignError> {
        if rows == 0 || cols == 0 {
            return Err(AlignError::Empty);
        }
        if values.len() != rows * cols {
            return Err(AlignError::WrongLength {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn row_norms(&self) -> Result<Vec<f64>, AlignError> {
        (0..self.rows)
            .map(|i| {
                let n = norm(self.row(i));
                if n == 0.0 {
                    Err(AlignError::ZeroRow(i))
                } else {
                    Ok(n)
                }
            })
            .collect()
    }

    fn centered(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.rows as f64;
        }
        let mut out = self.values.clone();
        for row in out.chunks_exact_mut(self.cols) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub mean_cosine: f64,
    pub std_cosine: f64,
    pub cka: f64,
    pub knn_top1: f64,
}

fn same_shape(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<(), AlignError> {
    if a.shape() != b.shape() {
        return Err(AlignError::ShapeMismatch {
            a: a.shape(),
            b: b.shape(),
        });
    }
    Ok(())
}

/// Mean and population standard deviation of `cos(A_i, B_i)`.
pub fn rowwise_cosine(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<(f64, f64), AlignError> {
    same_shape(a, b)?;
    let na = a.row_norms()?;
    let nb = b.row_norms()?;
    let cos: Vec<f64> = (0..a.rows)
        .map(|i| dot(a.row(i), b.row(i)) / (na[i] * nb[i]))
        .collect();
    let n = cos.len() as f64;
    let mean = cos.iter().sum::<f64>() / n;
    let var = cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `X^T Y` for row-major `x` (n x p) and `y` (n x q), as p x q.
fn cross(x: &[f64], p: usize, y: &[f64], q: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    for r in 0..n {
        let xr = &x[r * p..(r + 1) * p];
        let yr = &y[r * q..(r + 1) * q];
        for (i, xi) in xr.iter().enumerate() {
            let row = &mut out[i * q..(i + 1) * q];
            for (o, yj) in row.iter_mut().zip(yr) {
                *o += xi * yj;
            }
        }
    }
    out
}

fn frobenius_sq(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA in feature space:
/// `||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)` with column-centered
/// inputs. Column counts may differ.
pub fn linear_cka(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64, AlignError> {
    if a.rows != b.rows {
        return Err(AlignError::ShapeMismatch {
            a: a.shape(),
            b: b.shape(),
        });
    }
    let n = a.rows;
    let xc = a.centered();
    let yc = b.centered();
    let xx = frobenius_sq(&cross(&xc, a.cols, &xc, a.cols, n)).sqrt();
    let yy = frobenius_sq(&cross(&yc, b.cols, &yc, b.cols, n)).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(AlignError::Undefined("all rows identical after centering"));
    }
    let xy = frobenius_sq(&cross(&yc, b.cols, &xc, a.cols, n));
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Fraction of rows whose cosine nearest neighbor among the rows of `b` is
/// the row with the same index. Ties go to the lowest index.
pub fn knn_top1(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64, AlignError> {
    same_shape(a, b)?;
    let na = a.row_norms()?;
    let nb = b.row_norms()?;
    let mut hits = 0usize;
    for (i, &ni) in na.iter().enumerate() {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, &nj) in nb.iter().enumerate() {
            let c = dot(a.row(i), b.row(j)) / (ni * nj);
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / a.rows as f64)
}

pub fn align(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<AlignmentReport, AlignError> {
    let (mean_cosine, std_cosine) = rowwise_cosine(a, b)?;
    Ok(AlignmentReport {
        mean_cosine,
        std_cosine,
        cka: linear_cka(a, b)?,
        knn_top1: knn_top1(a, b)?,
    })
}
