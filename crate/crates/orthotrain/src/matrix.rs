//! Dense row-major `f64` matrix with deterministic kernels.
//!
//! Every kernel fixes its floating-point evaluation order, so identical
//! inputs give bit-identical outputs on every run:
//!
//! * `matmul` uses the i-k-j loop order — for each output entry `C[i][j]`
//!   the products `A[i][k]·B[k][j]` are accumulated strictly in ascending
//!   `k`, while the innermost `j` sweep is a contiguous in-place update
//!   (friendly to auto-vectorization without reassociating any sum).
//! * reductions (`frobenius_norm`, dot products, column norms) run in
//!   ascending index order.
//!
//! The text serialization is `"<rows> <cols>"` on the first line followed by
//! one line per row of space-separated values printed with 17 significant
//! digits, which round-trips every finite `f64` exactly.

use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data; errors if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Format {
                what: format!(
                    "matrix data length {} does not match shape {}x{}",
                    data.len(),
                    rows,
                    cols
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; errors on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Format {
                    what: format!("ragged rows: expected {} columns, got {}", c, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// True if the matrix is square.
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Entry at `(i, j)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Sets the entry at `(i, j)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row `i` as a mutable slice.
    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Underlying row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable row-major data.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column `j` copied into a new vector.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Overwrites column `j`.
    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    /// Swaps rows `a` and `b` in place.
    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (a, b) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(b * self.cols);
        head[a * self.cols..(a + 1) * self.cols].swap_with_slice(&mut tail[..self.cols]);
    }

    /// Matrix product `self · rhs`.
    ///
    /// For each output entry the `k` accumulation runs in ascending order,
    /// making the result independent of everything but the operand values.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(n, p);
        for i in 0..n {
            let arow = &self.data[i * m..(i + 1) * m];
            let crow = &mut out.data[i * p..(i + 1) * p];
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &rhs.data[k * p..(k + 1) * p];
                for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                    *cj += aik * bj;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    ///
    /// Same deterministic accumulation order as [`Matrix::matmul`] (ascending
    /// `k`, where `k` indexes the shared dimension).
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, n, p) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(n, p);
        for k in 0..m {
            let arow = &self.data[k * n..(k + 1) * n];
            let brow = &rhs.data[k * p..(k + 1) * p];
            for (i, &aki) in arow.iter().enumerate() {
                let crow = &mut out.data[i * p..(i + 1) * p];
                for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                    *cj += aki * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`, implemented as a transpose followed by [`Matrix::matmul`]
    /// so the accumulation order matches the documented kernel.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        self.matmul(&rhs.transpose())
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entry-wise sum.
    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    /// Entry-wise difference.
    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Entry-wise (Hadamard) product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Scaled copy `c · self`.
    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| c * x).collect(),
        }
    }

    /// In-place `self += c · rhs` (shape-checked).
    pub fn add_scaled(&mut self, c: f64, rhs: &Matrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape {
                op: "add_scaled",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        for (x, &y) in self.data.iter_mut().zip(rhs.data.iter()) {
            *x += c * y;
        }
        Ok(())
    }

    /// Frobenius norm, accumulated in ascending index order.
    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Squared Frobenius norm.
    pub fn frobenius_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for &x in &self.data {
            s += x * x;
        }
        s
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute entry-wise difference to `rhs`.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape {
                op: "max_abs_diff",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(rhs.data.iter())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Orthogonality residual `‖selfᵀ·self − I‖_F` (columns orthonormal ⇒ 0).
    pub fn ortho_residual(&self) -> f64 {
        let mut g = self.matmul_tn(self).expect("same operand");
        let n = g.cols;
        for i in 0..n {
            let d = g.get(i, i) - 1.0;
            g.set(i, i, d);
        }
        g.frobenius_norm()
    }

    /// Euclidean norm of column `j`.
    pub fn col_norm(&self, j: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            let x = self.get(i, j);
            s += x * x;
        }
        s.sqrt()
    }

    /// New matrix holding the given rows, in the given order (gather).
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            if i >= self.rows {
                return Err(Error::Contract {
                    what: format!("row index {} out of bounds for {} rows", i, self.rows),
                });
            }
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        Ok(out)
    }

    /// New matrix holding the given columns, in the given order (gather).
    pub fn gather_cols(&self, idx: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for (c, &j) in idx.iter().enumerate() {
            if j >= self.cols {
                return Err(Error::Contract {
                    what: format!("column index {} out of bounds for {} columns", j, self.cols),
                });
            }
            for i in 0..self.rows {
                out.set(i, c, self.get(i, j));
            }
        }
        Ok(out)
    }

    /// Overwrites the rows listed in `idx` with the rows of `src` (scatter).
    pub fn scatter_rows(&mut self, idx: &[usize], src: &Matrix) -> Result<()> {
        if src.rows != idx.len() || src.cols != self.cols {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: (idx.len(), self.cols),
                rhs: src.shape(),
            });
        }
        for (r, &i) in idx.iter().enumerate() {
            if i >= self.rows {
                return Err(Error::Contract {
                    what: format!("row index {} out of bounds for {} rows", i, self.rows),
                });
            }
            self.row_mut(i).copy_from_slice(src.row(r));
        }
        Ok(())
    }

    /// Vertical concatenation (all operands must share a column count).
    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: m.shape(),
                });
            }
            out.data[at * cols..(at + m.rows) * cols].copy_from_slice(&m.data);
            at += m.rows;
        }
        Ok(out)
    }

    /// Horizontal concatenation (all operands must share a row count).
    pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for m in parts {
            if m.rows != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: m.shape(),
                });
            }
            for i in 0..rows {
                out.data[i * cols + at..i * cols + at + m.cols].copy_from_slice(m.row(i));
            }
            at += m.cols;
        }
        Ok(out)
    }

    /// FNV-1a hash over the shape and the little-endian bytes of the data;
    /// used to verify that frozen tensors were not mutated.
    pub fn byte_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(&(self.rows as u64).to_le_bytes());
        eat(&(self.cols as u64).to_le_bytes());
        for &x in &self.data {
            eat(&x.to_le_bytes());
        }
        h
    }

    /// Serializes to the text format: `"rows cols"` then one line per row,
    /// space-separated, 17 significant digits (exact `f64` round-trip).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{} {}\n", self.rows, self.cols));
        for i in 0..self.rows {
            let mut first = true;
            for &x in self.row(i) {
                if !first {
                    s.push(' ');
                }
                s.push_str(&format!("{:.16e}", x));
                first = false;
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text format produced by [`Matrix::to_text`].
    pub fn from_text(text: &str) -> Result<Matrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format {
            what: "empty matrix text".into(),
        })?;
        let mut dims = header.split_whitespace();
        let rows: usize = dims
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format {
                what: format!("bad matrix header {:?}", header),
            })?;
        let cols: usize = dims
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format {
                what: format!("bad matrix header {:?}", header),
            })?;
        if dims.next().is_some() {
            return Err(Error::Format {
                what: format!("trailing tokens in matrix header {:?}", header),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            if i >= rows {
                return Err(Error::Format {
                    what: format!("expected {} data rows, found more", rows),
                });
            }
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Format {
                    what: format!("bad numeric token {:?} in row {}", tok, i),
                })?;
                data.push(v);
            }
            if data.len() != (i + 1) * cols {
                return Err(Error::Format {
                    what: format!("row {} has wrong number of entries", i),
                });
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Format {
                what: format!(
                    "expected {} entries for {}x{}, found {}",
                    rows * cols,
                    rows,
                    cols,
                    data.len()
                ),
            });
        }
        Matrix::from_vec(rows, cols, data)
    }

    /// Writes the text format to a file atomically (temp file + rename).
    pub fn write_text_file(&self, path: &std::path::Path) -> Result<()> {
        crate::cli::atomic_write(path, self.to_text().as_bytes())
    }

    /// Reads the text format from a file.
    pub fn read_text_file(path: &std::path::Path) -> Result<Matrix> {
        let text = std::fs::read_to_string(path)?;
        Matrix::from_text(&text)
    }
}
