//! Dense row-major matrices and the few factorization kernels the samplers
//! and solvers need: multiplication, Cholesky, triangular solves, and a
//! symmetric Jacobi eigendecomposition for pseudo-inverse fallbacks.
//!
//! Entries are `f64` throughout and must be finite on construction; every
//! constructor that accepts outside data enforces this.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Jitter added once to a near-singular symmetric matrix before retrying
/// its Cholesky factorization.
pub const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Matrix::new",
                detail: format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            });
        }
        for (pos, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (r, x) in v.iter().enumerate() {
            self.set(r, c, *x);
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        debug_assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            self.data[i * self.cols + i] += s;
        }
    }

    /// `self * rhs`.
    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension {
                op: "Matrix::mul",
                detail: format!("{}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let lhs_row = self.row(r);
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (kk, &l) in lhs_row.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                let rhs_row = rhs.row(kk);
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += l * rv;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`, avoiding an explicit transpose.
    pub fn tr_mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::Dimension {
                op: "Matrix::tr_mul",
                detail: format!("{}x{}^T * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for kk in 0..self.rows {
            let lhs_row = self.row(kk);
            let rhs_row = rhs.row(kk);
            for (r, &l) in lhs_row.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += l * rv;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Dimension {
                op: "Matrix::mul_vec",
                detail: format!("{}x{} * len {}", self.rows, self.cols, v.len()),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lower-triangular Cholesky factor of a symmetric positive-definite
    /// matrix. Fails with the offending pivot index when a diagonal pivot is
    /// not strictly positive.
    pub fn cholesky(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::Dimension {
                op: "Matrix::cholesky",
                detail: format!("{}x{} not square", self.rows, self.cols),
            });
        }
        let n = self.rows;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for kk in 0..j {
                    s -= l[i * n + kk] * l[j * n + kk];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Cholesky { pivot: i });
                    }
                    l[i * n + j] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Matrix::from_parts(n, n, l))
    }

    /// Cholesky with the one-time jitter retry used for near-singular
    /// precision matrices: on failure, add `CHOLESKY_JITTER * I` once and
    /// retry; fail if the matrix is still not positive definite.
    pub fn cholesky_jittered(&self) -> Result<Matrix> {
        match self.cholesky() {
            Ok(l) => Ok(l),
            Err(_) => {
                let mut jittered = self.clone();
                jittered.add_scaled_identity(CHOLESKY_JITTER);
                jittered.cholesky()
            }
        }
    }

    /// Symmetric Jacobi eigendecomposition: returns (eigenvalues, V) with
    /// `self = V diag(vals) V^T` and orthonormal columns in V. Intended for
    /// the small symmetric PSD systems behind pseudo-inverse fallbacks.
    pub fn jacobi_eigh(&self) -> Result<(Vec<f64>, Matrix)> {
        if self.rows != self.cols {
            return Err(Error::Dimension {
                op: "Matrix::jacobi_eigh",
                detail: format!("{}x{} not square", self.rows, self.cols),
            });
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut v = Matrix::identity(n);
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off.sqrt() <= 1e-14 * (1.0 + frob(&a)) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        1.0 / (theta - (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for kk in 0..n {
                        let akp = a[kk * n + p];
                        let akq = a[kk * n + q];
                        a[kk * n + p] = c * akp - s * akq;
                        a[kk * n + q] = s * akp + c * akq;
                    }
                    for kk in 0..n {
                        let apk = a[p * n + kk];
                        let aqk = a[q * n + kk];
                        a[p * n + kk] = c * apk - s * aqk;
                        a[q * n + kk] = s * apk + c * aqk;
                    }
                    for kk in 0..n {
                        let vkp = v.data[kk * n + p];
                        let vkq = v.data[kk * n + q];
                        v.data[kk * n + p] = c * vkp - s * vkq;
                        v.data[kk * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[i * n + i]).collect();
        Ok((vals, v))
    }

    /// Writes the matrix as headerless CSV, one row per line, with enough
    /// digits (17 significant) to round-trip every f64 exactly.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut line = String::new();
        for r in 0..self.rows {
            line.clear();
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", format_f64(*v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses headerless numeric CSV produced by `write_csv`. Errors carry
    /// the path, 1-based line, and 1-based column of the offending field.
    pub fn read_csv(r: impl BufRead, path: &str) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for (colno, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    column: colno + 1,
                    detail: format!("expected a number, got {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        column: colno + 1,
                        detail: "non-finite value".to_string(),
                    });
                }
                row.push(v);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        column: 1,
                        detail: format!("expected {} fields, got {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                column: 1,
                detail: "empty matrix file".to_string(),
            });
        }
        let cols = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Matrix::new(rows_of(&data, cols), cols, data)
    }

    pub fn read_csv_file(path: &Path) -> Result<Matrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Matrix::read_csv(std::io::BufReader::new(file), &path.display().to_string())
    }
}

fn rows_of(data: &[f64], cols: usize) -> usize {
    if cols == 0 {
        0
    } else {
        data.len() / cols
    }
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scientific notation with 17 significant digits, round-trip exact for f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `L y = b` for lower-triangular L.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        let row = l.row(i);
        for j in 0..i {
            s -= row[j] * y[j];
        }
        y[i] = s / row[i];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular L.
pub fn solve_lower_transpose(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(y.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= l.get(j, i) * x[j];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Solves `A x = b` given the Cholesky factor L of A.
pub fn chol_solve_vec(l: &Matrix, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Solves `A X = B` column by column given the Cholesky factor L of A.
pub fn chol_solve_mat(l: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(b.rows(), b.cols());
    for c in 0..b.cols() {
        let col = b.col(c);
        out.set_col(c, &chol_solve_vec(l, &col));
    }
    out
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let l = a.cholesky()?;
    Ok(chol_solve_mat(&l, &Matrix::identity(a.rows())))
}

/// Solves `A X = B` for symmetric PSD A, falling back to an eigenvalue
/// pseudo-inverse when A is singular. Used where rank-deficient systems are
/// legitimate (least-squares normal equations, degenerate solver inputs).
pub fn psd_solve_or_pinv(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    match a.cholesky() {
        Ok(l) => Ok(chol_solve_mat(&l, b)),
        Err(_) => {
            let (vals, v) = a.jacobi_eigh()?;
            let vmax = vals.iter().cloned().fold(0.0_f64, f64::max);
            let tol = vmax.max(1.0) * 1e-12 * a.rows() as f64;
            // pinv(A) B = V diag(1/vals where > tol) V^T B
            let vtb = v.tr_mul(b)?;
            let mut scaled = vtb;
            for (i, val) in vals.iter().enumerate() {
                let inv = if *val > tol { 1.0 / *val } else { 0.0 };
                for x in scaled.row_mut(i) {
                    *x *= inv;
                }
            }
            v.mul(&scaled)
        }
    }
}

/// Writes bytes to `path` atomically: temp file in the same directory, then
/// rename over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let tmp = dir.join(format!(
        ".tmp.{}.{}",
        std::process::id(),
        path.file_name().and_then(|s| s.to_str()).unwrap_or("file")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
