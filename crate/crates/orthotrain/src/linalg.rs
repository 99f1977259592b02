//! Hand-rolled dense linear algebra: partially-pivoted LU, blocked
//! triangular solves, Newton–Schulz polar factor, Householder QR, and Haar
//! orthogonal sampling.
//!
//! No external BLAS/LAPACK: every routine fixes its loop order so results
//! are deterministic. The LU factorization is right-looking with partial
//! pivoting; a factorization is rejected as singular when a pivot falls
//! below `1e-14 · ‖A‖_F`. Triangular solves process all right-hand-side
//! columns together (row-sweep form), which both vectorizes and keeps the
//! per-entry accumulation order fixed.

use crate::matrix::Matrix;
use crate::rng::RngState;
use crate::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_RTOL: f64 = 1e-14;

/// LU factorization `P·A = L·U` with partial pivoting.
///
/// `lu` packs the unit-lower factor (below the diagonal) and `U` (on and
/// above); `perm[i]` is the original row of `A` that landed in position `i`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
    swaps: usize,
}

impl LuFactors {
    /// Factors a square matrix; errors on shape or (numerical) singularity.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                op: "lu_factor",
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let threshold = PIVOT_RTOL * a.frobenius_norm();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            // partial pivot: largest |entry| in column k at or below the diagonal
            let mut best = k;
            let mut best_abs = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best_abs {
                    best = i;
                    best_abs = v;
                }
            }
            if best_abs <= threshold {
                return Err(Error::Singular { what: "lu_factor" });
            }
            if best != k {
                lu.swap_rows(k, best);
                perm.swap(k, best);
                swaps += 1;
            }
            let inv = 1.0 / lu.get(k, k);
            for i in k + 1..n {
                let lik = lu.get(i, k) * inv;
                lu.set(i, k, lik);
                // rank-1 update of the trailing row, contiguous in j
                let (upper, lower) = lu.data_mut().split_at_mut(i * n);
                let top = &upper[k * n + k + 1..k * n + n];
                let bottom = &mut lower[k + 1..n];
                for (b, &t) in bottom.iter_mut().zip(top.iter()) {
                    *b -= lik * t;
                }
            }
        }
        Ok(LuFactors { lu, perm, swaps })
    }

    /// Order of the factored matrix.
    pub fn order(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A·X = B` for all columns of `B` at once.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.order();
        if b.rows() != n {
            return Err(Error::Shape {
                op: "lu_solve",
                lhs: (n, n),
                rhs: b.shape(),
            });
        }
        let k = b.cols();
        // apply the permutation: X starts as P·B
        let mut x = Matrix::zeros(n, k);
        for i in 0..n {
            x.row_mut(i).copy_from_slice(b.row(self.perm[i]));
        }
        // forward (unit lower): row_i -= Σ_{l<i} L[i,l]·row_l
        for i in 1..n {
            for l in 0..i {
                let c = self.lu.get(i, l);
                if c != 0.0 {
                    let (head, tail) = x.data_mut().split_at_mut(i * k);
                    let src = &head[l * k..(l + 1) * k];
                    for (xi, &s) in tail[..k].iter_mut().zip(src.iter()) {
                        *xi -= c * s;
                    }
                }
            }
        }
        // backward (upper): row_i -= Σ_{l>i} U[i,l]·row_l ; row_i /= U[i,i]
        for i in (0..n).rev() {
            for l in i + 1..n {
                let c = self.lu.get(i, l);
                if c != 0.0 {
                    let (head, tail) = x.data_mut().split_at_mut(l * k);
                    let dst = &mut head[i * k..(i + 1) * k];
                    let src = &tail[..k];
                    for (xi, &s) in dst.iter_mut().zip(src.iter()) {
                        *xi -= c * s;
                    }
                }
            }
            let inv = 1.0 / self.lu.get(i, i);
            for xi in x.row_mut(i) {
                *xi *= inv;
            }
        }
        Ok(x)
    }

    /// Solves `Aᵀ·X = B`, reusing this factorization (`Aᵀ = Uᵀ·Lᵀ·P`).
    pub fn solve_transposed_matrix(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.order();
        if b.rows() != n {
            return Err(Error::Shape {
                op: "lu_solve_t",
                lhs: (n, n),
                rhs: b.shape(),
            });
        }
        let k = b.cols();
        let mut z = b.clone();
        // forward solve Uᵀ·W = B (Uᵀ is lower with diagonal U[i,i]);
        // row-sweep: after scaling row i, eliminate it from later rows.
        for i in 0..n {
            let inv = 1.0 / self.lu.get(i, i);
            for zi in z.row_mut(i) {
                *zi *= inv;
            }
            for l in i + 1..n {
                let c = self.lu.get(i, l); // (Uᵀ)[l,i] = U[i,l]
                if c != 0.0 {
                    let (head, tail) = z.data_mut().split_at_mut(l * k);
                    let src = &head[i * k..(i + 1) * k];
                    for (zl, &s) in tail[..k].iter_mut().zip(src.iter()) {
                        *zl -= c * s;
                    }
                }
            }
        }
        // backward solve Lᵀ·Y = W (Lᵀ is unit upper)
        for i in (0..n).rev() {
            for l in i + 1..n {
                let c = self.lu.get(l, i); // (Lᵀ)[i,l] = L[l,i]
                if c != 0.0 {
                    let (head, tail) = z.data_mut().split_at_mut(l * k);
                    let dst = &mut head[i * k..(i + 1) * k];
                    let src = &tail[..k];
                    for (zi, &s) in dst.iter_mut().zip(src.iter()) {
                        *zi -= c * s;
                    }
                }
            }
        }
        // X = Pᵀ·Y, i.e. X[perm[i]] = Y[i]
        let mut x = Matrix::zeros(n, k);
        for i in 0..n {
            x.row_mut(self.perm[i]).copy_from_slice(z.row(i));
        }
        Ok(x)
    }

    /// Determinant of the factored matrix: `(−1)^swaps · Π U[i,i]`.
    pub fn det(&self) -> f64 {
        let mut d = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..self.order() {
            d *= self.lu.get(i, i);
        }
        d
    }
}

/// Solves `A·X = B` (factor + solve in one call).
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    LuFactors::factor(a)?.solve_matrix(b)
}

/// Matrix inverse via LU against the identity.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    LuFactors::factor(a)?.solve_matrix(&Matrix::identity(a.rows()))
}

/// Determinant via LU; 0 for numerically singular input.
pub fn det(a: &Matrix) -> Result<f64> {
    match LuFactors::factor(a) {
        Ok(f) => Ok(f.det()),
        Err(Error::Singular { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Default iteration cap for [`newton_schulz_polar`].
pub const POLAR_MAX_ITERS: usize = 30;
/// Default orthogonality tolerance for [`newton_schulz_polar`].
pub const POLAR_TOL: f64 = 1e-11;

/// Orthogonal polar factor by Newton–Schulz iteration.
///
/// Scales the input to `X₀ = A/‖A‖_F` (bringing every singular value into
/// `(0, 1]`) and iterates `X ← ½·X·(3I − XᵀX)` until `‖XᵀX − I‖_F ≤ tol`.
/// Requires full rank (checked by a preliminary pivoted LU); errors with the
/// final residual if the tolerance is not met within `max_iters`.
pub fn newton_schulz_polar(a: &Matrix, max_iters: usize, tol: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "newton_schulz_polar",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    LuFactors::factor(a).map_err(|e| match e {
        Error::Singular { .. } => Error::Singular {
            what: "newton_schulz_polar",
        },
        other => other,
    })?;
    let n = a.rows();
    let _ = n;
    let mut x = a.scale(1.0 / a.frobenius_norm());
    for _ in 0..max_iters {
        if x.ortho_residual() <= tol {
            return Ok(x);
        }
        // X ← 1.5·X − 0.5·X·(XᵀX)
        let g = x.matmul_tn(&x).expect("same operand");
        let xg = x.matmul(&g).expect("shapes fixed");
        let mut next = x.scale(1.5);
        next.add_scaled(-0.5, &xg).expect("same shape");
        x = next;
    }
    let residual = x.ortho_residual();
    if residual <= tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence {
            what: "newton_schulz_polar",
            residual,
            iters: max_iters,
        })
    }
}

/// One Householder reflector for `x`: returns `(v, β)` with `v[0] = 1` such
/// that `(I − β·v·vᵀ)·x` is a multiple of `e₁`.
///
/// Sign convention: with `σ = ‖x[1..]‖²` and `s = √(x₀² + σ)`,
/// `v₀ = x₀ − s` when `x₀ ≤ 0` and `v₀ = −σ/(x₀ + s)` otherwise (the
/// cancellation-free form); `β = 2v₀²/(σ + v₀²)`; the tail of `v` is
/// `x[1..]/v₀`. When `σ = 0` the reflector is the identity (`β = 0`).
pub fn householder_reflector(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    let mut sigma = 0.0;
    for &xi in &x[1..] {
        sigma += xi * xi;
    }
    if sigma == 0.0 {
        return (v, 0.0);
    }
    let x0 = x[0];
    let s = (x0 * x0 + sigma).sqrt();
    let v0 = if x0 <= 0.0 { x0 - s } else { -sigma / (x0 + s) };
    let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
    for i in 1..n {
        v[i] = x[i] / v0;
    }
    (v, beta)
}

/// Householder QR of a square matrix: returns `(Q, R)` with `A = Q·R`,
/// `Q` orthogonal, `R` upper-triangular, using the reflector convention of
/// [`householder_reflector`].
pub fn householder_qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "householder_qr",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let mut r = a.clone();
    let mut vs: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = (j..n).map(|i| r.get(i, j)).collect();
        let (v, beta) = householder_reflector(&x);
        apply_reflector_left(&mut r, &v, beta, j, j);
        vs.push((v, beta));
    }
    // zero the (numerically negligible) subdiagonal of R
    for i in 0..n {
        for j in 0..i {
            r.set(i, j, 0.0);
        }
    }
    // Q = H₀·H₁·…·H_{n−1}·I, accumulated right-to-left
    let mut q = Matrix::identity(n);
    for j in (0..n).rev() {
        let (v, beta) = &vs[j];
        apply_reflector_left(&mut q, v, *beta, j, 0);
    }
    Ok((q, r))
}

/// Applies `I − β·v·vᵀ` to the block `m[row0.., col0..]` from the left.
fn apply_reflector_left(m: &mut Matrix, v: &[f64], beta: f64, row0: usize, col0: usize) {
    if beta == 0.0 {
        return;
    }
    let cols = m.cols();
    let width = cols - col0;
    // w = (block)ᵀ·v
    let mut w = vec![0.0; width];
    for (iv, &vi) in v.iter().enumerate() {
        let row = &m.row(row0 + iv)[col0..];
        for (wj, &mj) in w.iter_mut().zip(row.iter()) {
            *wj += vi * mj;
        }
    }
    // block -= β·v·wᵀ
    for (iv, &vi) in v.iter().enumerate() {
        let c = beta * vi;
        let row = &mut m.row_mut(row0 + iv)[col0..];
        for (mj, &wj) in row.iter_mut().zip(w.iter()) {
            *mj -= c * wj;
        }
    }
}

/// Haar-distributed random orthogonal matrix: QR of a standard Gaussian
/// matrix with the sign correction `Q ← Q·sign(diag R)` that removes the
/// factorization's sign ambiguity.
pub fn rand_orthogonal(n: usize, rng: &mut RngState) -> Matrix {
    let g = rng.gaussian_matrix(n, n, 0.0, 1.0);
    let (mut q, r) = householder_qr(&g).expect("square by construction");
    for j in 0..n {
        if r.get(j, j) < 0.0 {
            for i in 0..n {
                let v = q.get(i, j);
                q.set(i, j, -v);
            }
        }
    }
    q
}
