//! Orthogonalization kernels and the orthogonality-preserving update step.
//!
//! Every kernel maps a parameter matrix to an orthogonal matrix `R` and is
//! available in two forms: a pure numeric routine (this module) and a
//! differentiable tape node ([`crate::autodiff`]), whose backward pass is
//! the exact reverse-mode sweep of the fully unrolled forward algorithm.
//!
//! Methods (config string in parentheses):
//!
//! * classic Gram–Schmidt (`gs`) — matrix form: for each column,
//!   `t = u_j − E·(Eᵀ·u_j)` against all previously built columns at once;
//! * modified Gram–Schmidt (`mgs`) — projections removed sequentially;
//! * iterative Gram–Schmidt (`igs`) — the projection step is re-applied a
//!   fixed number of times per column (`t ← t − E·(Eᵀ·t)`), which tightens
//!   orthogonality on ill-conditioned inputs while keeping a fixed, fully
//!   differentiable unroll;
//! * Householder chain (`hr`) — the orthogonal factor of a QR factorization
//!   by reflectors (see [`crate::linalg::householder_reflector`] for the
//!   sign convention);
//! * Löwdin symmetric orthogonalization (`ls`) — the orthogonal polar
//!   factor `U·(UᵀU)^(−1/2)`, computed by Newton–Schulz iteration; it is the
//!   *nearest* orthogonal matrix in Frobenius norm;
//! * Cayley parameterization (`cp`) — `R = (I+W)(I−W)⁻¹ = 2(I−W)⁻¹ − I`
//!   for the skew matrix `W` built from the strict upper triangle of the
//!   parameter matrix; always a proper rotation (`det R = +1`);
//! * Stiefel descent (`ogd`) — not a reparameterization: `R` itself is the
//!   trainable and is moved along the manifold by [`ogd_step`];
//! * soft penalty (`or`) — unconstrained `R` plus `β·‖RᵀR−I‖_F²` in the loss;
//! * unconstrained (`upt`) — plain trainable `R` (weight decay only), the
//!   ablation baseline.
//!
//! Block-diagonal application ([`block_apply`]) runs any of the above on
//! `k` row-slices independently (shared or per-block parameters), cutting
//! parameter count from `d²` to `d²/k²` (shared) or `d²/k` (per-block),
//! without ever materializing the dense `d×d` rotation.

use crate::autodiff::{GsVariant, NodeId, Tape};
use crate::linalg::{self, LuFactors, POLAR_MAX_ITERS, POLAR_TOL};
use crate::matrix::Matrix;
use crate::rng::RngState;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance below which a Gram–Schmidt residual column counts as
/// linearly dependent on its predecessors.
pub const RANK_RTOL: f64 = 1e-10;

/// Orthogonality residual above which a skew-symmetry or orthogonality
/// precondition is considered violated.
pub const ORTHO_CHECK_TOL: f64 = 1e-10;

/// Orthogonalization method selector (config string form in lowercase).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classic Gram–Schmidt.
    Gs,
    /// Modified Gram–Schmidt.
    Mgs,
    /// Iterative Gram–Schmidt with a fixed unroll count.
    Igs,
    /// Householder-reflection chain.
    Hr,
    /// Löwdin (symmetric / polar) orthogonalization.
    Ls,
    /// Cayley parameterization from a skew matrix.
    Cp,
    /// Orthogonal-manifold descent on R itself.
    Ogd,
    /// Soft orthogonality penalty on an unconstrained R.
    Or,
    /// Unconstrained trainable R (ablation baseline).
    Upt,
}

impl Method {
    /// True for methods that *construct* R from a free parameter matrix by
    /// an unrolled algorithm (as opposed to training R directly).
    pub fn is_unrolled(self) -> bool {
        matches!(self, Method::Gs | Method::Mgs | Method::Igs | Method::Hr | Method::Ls | Method::Cp)
    }

    /// True when the trainable parameter *is* the rotation matrix.
    pub fn is_direct(self) -> bool {
        matches!(self, Method::Ogd | Method::Or | Method::Upt)
    }

    /// True when parameters must be updated with [`ogd_step`] rather than a
    /// Euclidean step.
    pub fn uses_manifold_update(self) -> bool {
        matches!(self, Method::Ogd)
    }
}

/// Per-layer orthogonalization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrthoSpec {
    /// Which kernel builds / constrains the rotation.
    pub method: Method,
    /// Projection repetitions per column for `igs`.
    pub igs_unroll: usize,
    /// Newton–Schulz iterations for the differentiable `ls` unroll.
    pub ls_iters: usize,
    /// Fixed-point iterations for the `ogd` update when not closed-form.
    pub ogd_fixed_point_iters: usize,
    /// Use the closed-form (solve-based) `ogd` update.
    pub ogd_closed_form: bool,
    /// Penalty weight for `or`.
    pub or_beta: f64,
    /// Number of diagonal blocks (1 = dense).
    pub blocks: usize,
    /// Share one parameter matrix across all blocks.
    pub block_shared: bool,
}

impl Default for OrthoSpec {
    fn default() -> Self {
        OrthoSpec {
            method: Method::Gs,
            igs_unroll: 2,
            ls_iters: 12,
            ogd_fixed_point_iters: 2,
            ogd_closed_form: true,
            or_beta: 1e-3,
            blocks: 1,
            block_shared: false,
        }
    }
}

impl OrthoSpec {
    /// Shorthand: default settings with the given method.
    pub fn with_method(method: Method) -> Self {
        OrthoSpec {
            method,
            ..OrthoSpec::default()
        }
    }

    /// Validates the numeric fields.
    pub fn validate(&self) -> Result<()> {
        if self.igs_unroll == 0 {
            return Err(Error::Config {
                what: "igs_unroll must be at least 1".into(),
            });
        }
        if self.ls_iters == 0 {
            return Err(Error::Config {
                what: "ls_iters must be at least 1".into(),
            });
        }
        if self.blocks == 0 {
            return Err(Error::Config {
                what: "blocks must be at least 1".into(),
            });
        }
        if !(self.or_beta.is_finite() && self.or_beta >= 0.0) {
            return Err(Error::Config {
                what: "or_beta must be finite and non-negative".into(),
            });
        }
        Ok(())
    }

    /// Fresh parameter matrix for one `dim×dim` block of this spec's method.
    ///
    /// Unrolled reparameterizations start from `N(0,1)` entries (`cp` from a
    /// strictly-upper `N(0, 0.01²)` skew seed so R starts near the identity,
    /// preserving the step-0 statistics of `R·V`); direct methods start at a
    /// Haar orthogonal matrix (so `or`'s penalty starts at zero and energy
    /// starts exactly at the frozen directions' energy).
    pub fn init_params(&self, dim: usize, rng: &mut RngState) -> Matrix {
        match self.method {
            Method::Cp => cayley_init_params(dim, 0.01, rng),
            m if m.is_unrolled() => rng.gaussian_matrix(dim, dim, 0.0, 1.0),
            _ => linalg::rand_orthogonal(dim, rng),
        }
    }

    /// Parameter matrix that makes the rotation exactly the identity
    /// (dimension-subset rounds re-initialize from this).
    pub fn identity_params(&self, dim: usize) -> Matrix {
        match self.method {
            Method::Cp => Matrix::zeros(dim, dim),
            _ => Matrix::identity(dim),
        }
    }
}

/// Classic Gram–Schmidt in matrix form.
///
/// Columns are orthogonalized in order: `t = u_j − E·(Eᵀ·u_j)` against the
/// matrix `E` of already-produced columns, then normalized. Errors with the
/// offending column index if `‖t‖ ≤ RANK_RTOL·‖u_j‖`.
pub fn gram_schmidt(u: &Matrix) -> Result<Matrix> {
    gs_forward(u, GsVariant::Classic)
}

/// Modified Gram–Schmidt: projections are removed one predecessor at a time,
/// each against the current residual rather than the original column.
pub fn modified_gram_schmidt(u: &Matrix) -> Result<Matrix> {
    gs_forward(u, GsVariant::Modified)
}

/// Iterative Gram–Schmidt: the full projection sweep `t ← t − E·(Eᵀ·t)` is
/// applied `unroll` times per column before normalizing.
pub fn iterative_gram_schmidt(u: &Matrix, unroll: usize) -> Result<Matrix> {
    if unroll == 0 {
        return Err(Error::Config {
            what: "iterative Gram–Schmidt needs unroll ≥ 1".into(),
        });
    }
    gs_forward(u, GsVariant::Iterative(unroll))
}

/// Shared forward pass for the Gram–Schmidt family (also used by the tape
/// composite, whose backward recomputes per-column intermediates from the
/// same code path so the orders match bit-exactly).
pub(crate) fn gs_forward(u: &Matrix, variant: GsVariant) -> Result<Matrix> {
    let (n, m) = u.shape();
    if m > n {
        return Err(Error::Contract {
            what: format!("cannot orthogonalize {} columns in dimension {}", m, n),
        });
    }
    let mut e = Matrix::zeros(n, m);
    let mut col = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            col[i] = u.get(i, j);
        }
        let t = gs_column_residual(&e, j, &col, variant);
        let unorm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rho: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rho <= RANK_RTOL * unorm.max(1.0) {
            return Err(Error::RankDeficient { column: j });
        }
        for i in 0..n {
            e.set(i, j, t[i] / rho);
        }
    }
    Ok(e)
}

/// Residual of one column against the first `j` columns of `e`, before
/// normalization, per the chosen variant.
pub(crate) fn gs_column_residual(e: &Matrix, j: usize, col: &[f64], variant: GsVariant) -> Vec<f64> {
    let n = col.len();
    match variant {
        GsVariant::Classic => {
            // t = u − E·(Eᵀu): coefficients against the *original* column
            let mut t = col.to_vec();
            for k in 0..j {
                let mut c = 0.0;
                for i in 0..n {
                    c += e.get(i, k) * col[i];
                }
                for i in 0..n {
                    t[i] -= c * e.get(i, k);
                }
            }
            t
        }
        GsVariant::Modified => {
            // projections against the evolving residual
            let mut t = col.to_vec();
            for k in 0..j {
                let mut c = 0.0;
                for i in 0..n {
                    c += e.get(i, k) * t[i];
                }
                for i in 0..n {
                    t[i] -= c * e.get(i, k);
                }
            }
            t
        }
        GsVariant::Iterative(unroll) => {
            // the whole classic sweep repeated on the residual
            let mut t = col.to_vec();
            for _ in 0..unroll {
                let p = t.clone();
                let mut s = vec![0.0; j];
                for (k, sk) in s.iter_mut().enumerate() {
                    for i in 0..n {
                        *sk += e.get(i, k) * p[i];
                    }
                }
                for i in 0..n {
                    let mut v = 0.0;
                    for (k, &sk) in s.iter().enumerate() {
                        v += e.get(i, k) * sk;
                    }
                    t[i] = p[i] - v;
                }
            }
            t
        }
    }
}

/// One recorded reflector application, kept so the backward pass can undo
/// block updates without storing whole intermediate matrices.
#[derive(Debug, Clone)]
pub(crate) struct HhStep {
    /// Reflector vector (`v[0] = 1`).
    pub v: Vec<f64>,
    /// Reflector gain β.
    pub beta: f64,
    /// `w = Bᵀ·v` from the factorization update of the trailing block.
    pub w_factor: Vec<f64>,
    /// `w = Qᵀ·v` from the accumulation update of the Q rows.
    pub w_accum: Vec<f64>,
}

/// Forward trace of [`householder_chain`].
#[derive(Debug, Clone)]
pub(crate) struct HouseholderTrace {
    pub steps: Vec<HhStep>,
    /// Final transformed matrix of the factorization phase, the starting
    /// point for reconstructing intermediates in the backward sweep.
    pub r_up: Matrix,
}

/// Orthogonal factor of the reflector QR, together with the per-step trace
/// needed for exact reverse-mode differentiation.
pub(crate) fn householder_chain(u: &Matrix) -> Result<(Matrix, HouseholderTrace)> {
    if !u.is_square() {
        return Err(Error::NotSquare {
            op: "householder_orthogonalize",
            rows: u.rows(),
            cols: u.cols(),
        });
    }
    let n = u.rows();
    let mut r = u.clone();
    let mut steps: Vec<HhStep> = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = (j..n).map(|i| r.get(i, j)).collect();
        let (v, beta) = linalg::householder_reflector(&x);
        let w_factor = reflect_block(&mut r, &v, beta, j, j);
        steps.push(HhStep {
            v,
            beta,
            w_factor,
            w_accum: Vec::new(),
        });
    }
    let mut q = Matrix::identity(n);
    for j in (0..n).rev() {
        let (v, beta) = (steps[j].v.clone(), steps[j].beta);
        steps[j].w_accum = reflect_block(&mut q, &v, beta, j, 0);
    }
    Ok((q, HouseholderTrace { steps, r_up: r }))
}

/// Applies `I − β·v·vᵀ` to `m[row0.., col0..]`, returning `w = blockᵀ·v`.
fn reflect_block(m: &mut Matrix, v: &[f64], beta: f64, row0: usize, col0: usize) -> Vec<f64> {
    let cols = m.cols();
    let width = cols - col0;
    let mut w = vec![0.0; width];
    for (iv, &vi) in v.iter().enumerate() {
        let row = &m.row(row0 + iv)[col0..];
        for (wj, &mj) in w.iter_mut().zip(row.iter()) {
            *wj += vi * mj;
        }
    }
    if beta != 0.0 {
        for (iv, &vi) in v.iter().enumerate() {
            let c = beta * vi;
            let row = &mut m.row_mut(row0 + iv)[col0..];
            for (mj, &wj) in row.iter_mut().zip(w.iter()) {
                *mj -= c * wj;
            }
        }
    }
    w
}

/// Orthogonal factor of the reflector QR (pure form).
pub fn householder_orthogonalize(u: &Matrix) -> Result<Matrix> {
    householder_chain(u).map(|(q, _)| q)
}

/// Löwdin symmetric orthogonalization: the orthogonal polar factor
/// `U·(UᵀU)^(−1/2)`, i.e. the orthogonal matrix nearest to `U` in Frobenius
/// norm, computed by Newton–Schulz iteration (early-exits when the input is
/// already orthogonal, since the polar factor of an orthogonal matrix is the
/// matrix itself).
pub fn lowdin(u: &Matrix, max_iters: usize) -> Result<Matrix> {
    if u.is_square() && u.ortho_residual() <= POLAR_TOL {
        return Ok(u.clone());
    }
    linalg::newton_schulz_polar(u, max_iters, POLAR_TOL)
}

/// Fixed-unroll Newton–Schulz states for the differentiable `ls` node:
/// returns `(states, ‖u‖_F)` where `states[0] = u/‖u‖_F` and
/// `states[k+1] = ½·states[k]·(3I − states[k]ᵀ·states[k])`.
pub(crate) fn newton_schulz_states(u: &Matrix, iters: usize) -> Result<(Vec<Matrix>, f64)> {
    if !u.is_square() {
        return Err(Error::NotSquare {
            op: "newton_schulz_unroll",
            rows: u.rows(),
            cols: u.cols(),
        });
    }
    LuFactors::factor(u).map_err(|e| match e {
        Error::Singular { .. } => Error::Singular {
            what: "newton_schulz_unroll",
        },
        other => other,
    })?;
    let fro = u.frobenius_norm();
    let mut states = Vec::with_capacity(iters + 1);
    states.push(u.scale(1.0 / fro));
    for k in 0..iters {
        let x = &states[k];
        let g = x.matmul_tn(x).expect("same operand");
        let xg = x.matmul(&g).expect("fixed shapes");
        let mut next = x.scale(1.5);
        next.add_scaled(-0.5, &xg).expect("same shape");
        states.push(next);
    }
    Ok((states, fro))
}

/// Skew-symmetric matrix from the strict upper triangle of `p`:
/// `W = triu(p) − triu(p)ᵀ` (diagonal and lower triangle of `p` ignored).
pub fn skew_from_upper(p: &Matrix) -> Result<Matrix> {
    if !p.is_square() {
        return Err(Error::NotSquare {
            op: "skew_from_upper",
            rows: p.rows(),
            cols: p.cols(),
        });
    }
    let n = p.rows();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let x = p.get(i, j);
            w.set(i, j, x);
            w.set(j, i, -x);
        }
    }
    Ok(w)
}

/// Cayley transform `R = (I+W)(I−W)⁻¹` of a skew-symmetric `W`, computed as
/// `R = 2(I−W)⁻¹ − I`; always orthogonal with `det R = +1`.
pub fn cayley_transform(w: &Matrix) -> Result<Matrix> {
    if !w.is_square() {
        return Err(Error::NotSquare {
            op: "cayley_transform",
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let skewness = w.add(&w.transpose())?.max_abs();
    if skewness > ORTHO_CHECK_TOL * w.max_abs().max(1.0) {
        return Err(Error::Contract {
            what: format!("cayley_transform requires skew input (‖W+Wᵀ‖∞ = {:.3e})", skewness),
        });
    }
    let (r, _) = cayley_from_skew(w)?;
    Ok(r)
}

/// Shared Cayley core: `(R, LU(I−W))`.
pub(crate) fn cayley_from_skew(w: &Matrix) -> Result<(Matrix, LuFactors)> {
    let n = w.rows();
    let mut a = w.scale(-1.0);
    for i in 0..n {
        let d = a.get(i, i) + 1.0;
        a.set(i, i, d);
    }
    // I − W is always invertible for skew W (its symmetric part is I), so a
    // singular error here indicates a violated skew precondition.
    let lu = LuFactors::factor(&a)?;
    let mut r = lu.solve_matrix(&Matrix::identity(n))?.scale(2.0);
    for i in 0..n {
        let d = r.get(i, i) - 1.0;
        r.set(i, i, d);
    }
    Ok((r, lu))
}

/// Tape-node core for the rotation built from parameter matrix `p`:
/// `(R, LU(I−W))` with `W = skew_from_upper(p)`.
pub(crate) fn cayley_pieces(p: &Matrix) -> Result<(Matrix, LuFactors)> {
    let w = skew_from_upper(p)?;
    cayley_from_skew(&w)
}

/// Fused Cayley application `W_eff = R·V = 2(I−W)⁻¹·V − V` without
/// materializing `R`: `(W_eff, LU(I−W), S = (I−W)⁻¹·V)`.
pub(crate) fn cayley_apply_pieces(p: &Matrix, v: &Matrix) -> Result<(Matrix, LuFactors, Matrix)> {
    let w = skew_from_upper(p)?;
    if v.rows() != w.rows() {
        return Err(Error::Shape {
            op: "cayley_apply",
            lhs: w.shape(),
            rhs: v.shape(),
        });
    }
    let n = w.rows();
    let mut a = w.scale(-1.0);
    for i in 0..n {
        let d = a.get(i, i) + 1.0;
        a.set(i, i, d);
    }
    let lu = LuFactors::factor(&a)?;
    let s = lu.solve_matrix(v)?;
    let mut weff = s.scale(2.0);
    weff.add_scaled(-1.0, v)?;
    Ok((weff, lu, s))
}

/// Strictly-upper-triangular Gaussian seed for the Cayley parameterization
/// (entries `N(0, std²)` above the diagonal, zero elsewhere), filled in
/// row-major order of the upper triangle.
pub fn cayley_init_params(n: usize, std: f64, rng: &mut RngState) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            p.set(i, j, std * rng.next_gaussian());
        }
    }
    p
}

/// One orthogonality-preserving descent step for a square Stiefel parameter.
///
/// From the Euclidean gradient `g` at `u`, forms the tangent generator
/// `Ŵ = g·uᵀ − ½·u·(uᵀ·g·uᵀ)`, its skew part `W = Ŵ − Ŵᵀ`, and moves along
/// the Cayley retraction with step `lr`:
///
/// * closed form: `Y = (I − (lr/2)·W)⁻¹ · (I + (lr/2)·W) · u`;
/// * fixed point: `Y₀ = u + lr·W·u`, then `iters` sweeps of
///   `Y ← u + (lr/2)·W·(u + Y)`. The warm start matches the closed form
///   through O(lr^(iters+1)), so two sweeps leave an O(lr⁴) gap.
pub fn ogd_step(u: &Matrix, g: &Matrix, lr: f64, iters: usize, closed_form: bool) -> Result<Matrix> {
    if !u.is_square() {
        return Err(Error::NotSquare {
            op: "ogd_step",
            rows: u.rows(),
            cols: u.cols(),
        });
    }
    if g.shape() != u.shape() {
        return Err(Error::Shape {
            op: "ogd_step",
            lhs: u.shape(),
            rhs: g.shape(),
        });
    }
    let n = u.rows();
    // Ŵ = g·uᵀ − ½·u·(uᵀ·g·uᵀ)
    let gut = g.matmul_nt(u)?;
    let ut_gut = u.matmul_tn(&gut)?;
    let mut w_hat = gut;
    w_hat.add_scaled(-0.5, &u.matmul(&ut_gut)?)?;
    let w = w_hat.sub(&w_hat.transpose())?;
    let a = lr / 2.0;
    if closed_form {
        // rhs = u + a·W·u ; solve (I − a·W)·Y = rhs
        let mut rhs = u.clone();
        rhs.add_scaled(a, &w.matmul(u)?)?;
        let mut lhs = w.scale(-a);
        for i in 0..n {
            let d = lhs.get(i, i) + 1.0;
            lhs.set(i, i, d);
        }
        linalg::solve(&lhs, &rhs)
    } else {
        // warm start: first-order step, then fixed-point sweeps
        let wu = w.matmul(u)?;
        let mut y = u.clone();
        y.add_scaled(lr, &wu)?;
        for _ in 0..iters {
            let mut upy = u.clone();
            upy.add_scaled(1.0, &y)?;
            let mut next = u.clone();
            next.add_scaled(a, &w.matmul(&upy)?)?;
            y = next;
        }
        Ok(y)
    }
}

/// Residual threshold above which manifold-updated rotations are snapped
/// back onto the orthogonal group (keeps accumulated drift far below the
/// 1e-6 per-step trace requirement).
pub const RENORM_TOL: f64 = 1e-9;

/// Re-orthogonalizes `r` via [`lowdin`] when its residual exceeds `tol`;
/// returns the (possibly corrected) matrix and whether a correction ran.
pub fn renormalize_if_drifting(r: &Matrix, tol: f64) -> Result<(Matrix, bool)> {
    if r.ortho_residual() > tol {
        Ok((lowdin(r, POLAR_MAX_ITERS)?, true))
    } else {
        Ok((r.clone(), false))
    }
}

/// Soft orthogonality penalty `‖RᵀR − I‖_F²`.
pub fn ortho_penalty(r: &Matrix) -> f64 {
    let res = r.ortho_residual();
    res * res
}

/// Analytic gradient of [`ortho_penalty`]: `4·R·(RᵀR − I)`.
pub fn ortho_penalty_gradient(r: &Matrix) -> Result<Matrix> {
    let mut g = r.matmul_tn(r)?;
    let n = g.rows();
    for i in 0..n {
        let d = g.get(i, i) - 1.0;
        g.set(i, i, d);
    }
    Ok(r.matmul(&g)?.scale(4.0))
}

/// Side length of each diagonal block, checking divisibility.
pub fn block_dim(d: usize, blocks: usize) -> Result<usize> {
    if blocks == 0 || d % blocks != 0 {
        return Err(Error::Config {
            what: format!("dimension {} is not divisible into {} equal blocks", d, blocks),
        });
    }
    Ok(d / blocks)
}

/// Trainable parameter count of a block-diagonal rotation of order `d`:
/// `(d/k)²` when the block is shared, `k·(d/k)²` otherwise.
pub fn block_param_count(d: usize, blocks: usize, shared: bool) -> Result<usize> {
    let m = block_dim(d, blocks)?;
    Ok(if shared { m * m } else { blocks * m * m })
}

/// Applies per-block rotations to the row-slices of `v` (rows
/// `[b·m, (b+1)·m)` get block `b`), never materializing the dense rotation.
/// `rs` holds one matrix if shared, else one per block.
pub fn block_apply(rs: &[Matrix], blocks: usize, v: &Matrix) -> Result<Matrix> {
    let m = block_dim(v.rows(), blocks)?;
    if rs.len() != 1 && rs.len() != blocks {
        return Err(Error::Config {
            what: format!("got {} block matrices for {} blocks", rs.len(), blocks),
        });
    }
    let mut parts: Vec<Matrix> = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let r = if rs.len() == 1 { &rs[0] } else { &rs[b] };
        if r.shape() != (m, m) {
            return Err(Error::Shape {
                op: "block_apply",
                lhs: (m, m),
                rhs: r.shape(),
            });
        }
        let idx: Vec<usize> = (b * m..(b + 1) * m).collect();
        let slice = v.gather_rows(&idx)?;
        parts.push(r.matmul(&slice)?);
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::concat_rows(&refs)
}

/// Dense block-diagonal rotation assembled from the blocks (equivalence-check
/// helper — production paths use [`block_apply`]).
pub fn block_dense_equivalent(rs: &[Matrix], blocks: usize, d: usize) -> Result<Matrix> {
    let m = block_dim(d, blocks)?;
    let mut out = Matrix::zeros(d, d);
    for b in 0..blocks {
        let r = if rs.len() == 1 { &rs[0] } else { &rs[b] };
        for i in 0..m {
            for j in 0..m {
                out.set(b * m + i, b * m + j, r.get(i, j));
            }
        }
    }
    Ok(out)
}

/// Numeric (tape-free) rotation from a parameter matrix, per method.
/// Direct methods (`ogd`, `or`, `upt`) return the parameters unchanged —
/// the caller owns any constraint on them.
pub fn rotation_from_params(spec: &OrthoSpec, params: &Matrix) -> Result<Matrix> {
    match spec.method {
        Method::Gs => gram_schmidt(params),
        Method::Mgs => modified_gram_schmidt(params),
        Method::Igs => iterative_gram_schmidt(params, spec.igs_unroll),
        Method::Hr => householder_orthogonalize(params),
        Method::Ls => lowdin(params, POLAR_MAX_ITERS.max(spec.ls_iters)),
        Method::Cp => {
            let (r, _) = cayley_pieces(params)?;
            Ok(r)
        }
        Method::Ogd | Method::Or | Method::Upt => Ok(params.clone()),
    }
}

/// Differentiable rotation node from a parameter node, per method.
/// Direct methods return the parameter node itself.
pub fn rotation_node(tape: &mut Tape, spec: &OrthoSpec, params: NodeId) -> Result<NodeId> {
    match spec.method {
        Method::Gs => tape.gram_schmidt(params, GsVariant::Classic),
        Method::Mgs => tape.gram_schmidt(params, GsVariant::Modified),
        Method::Igs => tape.gram_schmidt(params, GsVariant::Iterative(spec.igs_unroll)),
        Method::Hr => tape.householder_orthogonalize(params),
        Method::Ls => tape.newton_schulz(params, spec.ls_iters),
        Method::Cp => tape.cayley(params),
        Method::Ogd | Method::Or | Method::Upt => Ok(params),
    }
}

/// Differentiable `R·v` for one dense (non-blocked) rotation; uses the fused
/// solve-based node for `cp` so the dense rotation is never materialized.
fn apply_dense_rotation(tape: &mut Tape, spec: &OrthoSpec, params: NodeId, v: NodeId) -> Result<NodeId> {
    if spec.method == Method::Cp {
        tape.cayley_apply(params, v)
    } else {
        let r = rotation_node(tape, spec, params)?;
        tape.matmul(r, v)
    }
}

/// Differentiable block-diagonal application of the configured rotation(s) to
/// the row-slices of `v`. `params` holds one node if `block_shared` (or if
/// `blocks == 1`), else one per block. The dense `d×d` rotation is never
/// built; slices are rotated independently and re-concatenated.
pub fn apply_rotation_node(
    tape: &mut Tape,
    spec: &OrthoSpec,
    params: &[NodeId],
    v: NodeId,
) -> Result<NodeId> {
    let d = tape.value(v).rows();
    let m = block_dim(d, spec.blocks)?;
    let expected = if spec.blocks == 1 || spec.block_shared { 1 } else { spec.blocks };
    if params.len() != expected {
        return Err(Error::Config {
            what: format!("expected {} parameter nodes, got {}", expected, params.len()),
        });
    }
    if spec.blocks == 1 {
        return apply_dense_rotation(tape, spec, params[0], v);
    }
    let mut parts: Vec<NodeId> = Vec::with_capacity(spec.blocks);
    for b in 0..spec.blocks {
        let p = if spec.block_shared { params[0] } else { params[b] };
        let idx: Vec<usize> = (b * m..(b + 1) * m).collect();
        let slice = tape.gather_rows(v, idx)?;
        parts.push(apply_dense_rotation(tape, spec, p, slice)?);
    }
    tape.concat_rows(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rand_orthogonal;

    fn gauss(n: usize, m: usize, seed: u64) -> Matrix {
        RngState::new(seed).gaussian_matrix(n, m, 0.0, 1.0)
    }

    /// Textbook per-vector Gram–Schmidt as an independent oracle.
    fn gs_oracle(u: &Matrix) -> Matrix {
        let (n, m) = u.shape();
        let mut es: Vec<Vec<f64>> = Vec::new();
        for j in 0..m {
            let mut t: Vec<f64> = (0..n).map(|i| u.get(i, j)).collect();
            let orig = t.clone();
            for e in &es {
                let c: f64 = e.iter().zip(orig.iter()).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    t[i] -= c * e[i];
                }
            }
            let rho = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            es.push(t.iter().map(|x| x / rho).collect());
        }
        let mut e = Matrix::zeros(n, m);
        for (j, col) in es.iter().enumerate() {
            for i in 0..n {
                e.set(i, j, col[i]);
            }
        }
        e
    }

    #[test]
    fn all_reparameterizations_produce_orthogonal_output() {
        for seed in 0..3u64 {
            let u = gauss(64, 64, seed);
            let spec_tol = 1e-10;
            assert!(gram_schmidt(&u).unwrap().ortho_residual() <= spec_tol, "gs");
            assert!(modified_gram_schmidt(&u).unwrap().ortho_residual() <= spec_tol, "mgs");
            assert!(iterative_gram_schmidt(&u, 2).unwrap().ortho_residual() <= spec_tol, "igs");
            assert!(householder_orthogonalize(&u).unwrap().ortho_residual() <= spec_tol, "hr");
            assert!(lowdin(&u, 100).unwrap().ortho_residual() <= spec_tol, "ls");
            let p = cayley_init_params(64, 0.5, &mut RngState::new(seed + 77));
            let (r, _) = cayley_pieces(&p).unwrap();
            assert!(r.ortho_residual() <= spec_tol, "cp");
        }
    }

    #[test]
    fn classic_gs_matches_textbook_oracle() {
        let u = gauss(10, 10, 5);
        let got = gram_schmidt(&u).unwrap();
        let want = gs_oracle(&u);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn modified_gs_agrees_with_classic_on_well_conditioned_input() {
        let u = gauss(12, 12, 6);
        let a = gram_schmidt(&u).unwrap();
        let b = modified_gram_schmidt(&u).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn gs_rejects_dependent_columns() {
        let mut u = gauss(6, 6, 7);
        let c0 = u.col(0);
        let c1 = u.col(1);
        let dep: Vec<f64> = c0.iter().zip(c1.iter()).map(|(a, b)| 2.0 * a - b).collect();
        u.set_col(3, &dep);
        match gram_schmidt(&u) {
            Err(Error::RankDeficient { column: 3 }) => {}
            other => panic!("expected rank deficiency at column 3, got {:?}", other.map(|_| ())),
        }
    }

    /// Ill-conditioned inputs: a second projection sweep must not hurt.
    #[test]
    fn iterative_sweep_is_monotone_on_ill_conditioned_input() {
        let n = 8;
        for trial in 0..100u64 {
            let q1 = rand_orthogonal(n, &mut RngState::new(1000 + trial));
            let q2 = rand_orthogonal(n, &mut RngState::new(2000 + trial));
            let mut d = Matrix::zeros(n, n);
            for i in 0..n {
                // condition number 1e6, log-spaced singular values
                d.set(i, i, 10f64.powf(-6.0 * i as f64 / (n - 1) as f64));
            }
            let u = q1.matmul(&d).unwrap().matmul(&q2).unwrap();
            let r1 = iterative_gram_schmidt(&u, 1).unwrap().ortho_residual();
            let r2 = iterative_gram_schmidt(&u, 2).unwrap().ortho_residual();
            assert!(
                r2 <= r1 * (1.0 + 1e-9),
                "trial {}: unroll-2 residual {} worse than unroll-1 {}",
                trial,
                r2,
                r1
            );
        }
    }

    #[test]
    fn householder_matches_qr_factor() {
        let u = gauss(9, 9, 8);
        let (q, _) = linalg::householder_qr(&u).unwrap();
        let got = householder_orthogonalize(&u).unwrap();
        assert!(got.max_abs_diff(&q).unwrap() < 1e-13);
    }

    #[test]
    fn lowdin_is_nearest_orthogonal_matrix() {
        // Compare against random orthogonal perturbations of the answer.
        let mut rng = RngState::new(40);
        for trial in 0..10u64 {
            let u = gauss(6, 6, 50 + trial);
            let x = lowdin(&u, 100).unwrap();
            let base = x.sub(&u).unwrap().frobenius_norm();
            for _ in 0..5 {
                let q = rand_orthogonal(6, &mut rng);
                let other = q.sub(&u).unwrap().frobenius_norm();
                assert!(base <= other + 1e-9, "trial {}: {} > {}", trial, base, other);
            }
        }
    }

    #[test]
    fn lowdin_of_orthogonal_input_is_bit_identical() {
        let q = rand_orthogonal(16, &mut RngState::new(3));
        let x = lowdin(&q, 30).unwrap();
        assert_eq!(x, q);
        let i = Matrix::identity(16);
        assert_eq!(lowdin(&i, 30).unwrap(), i);
    }

    #[test]
    fn cayley_two_by_two_hand_value() {
        // W = [[0, 1], [-1, 0]] → R = [[0, 1], [-1, 0]] (tan-half-angle form)
        let mut p = Matrix::zeros(2, 2);
        p.set(0, 1, 1.0);
        let (r, _) = cayley_pieces(&p).unwrap();
        let want = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(r.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn cayley_determinant_is_plus_one() {
        for (n, seed) in [(3usize, 1u64), (8, 2), (17, 3)] {
            let p = cayley_init_params(n, 0.8, &mut RngState::new(seed));
            let (r, _) = cayley_pieces(&p).unwrap();
            let d = linalg::det(&r).unwrap();
            assert!((d - 1.0).abs() < 1e-10, "n={} det={}", n, d);
        }
    }

    #[test]
    fn cayley_transform_requires_skew_input() {
        let w = gauss(4, 4, 9);
        match cayley_transform(&w) {
            Err(Error::Contract { .. }) => {}
            other => panic!("expected contract violation, got {:?}", other.map(|_| ())),
        }
        let ok = skew_from_upper(&w).unwrap();
        assert!(cayley_transform(&ok).is_ok());
        assert!(ok.add(&ok.transpose()).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn fused_cayley_apply_matches_explicit_rotation() {
        let p = cayley_init_params(20, 0.3, &mut RngState::new(11));
        let v = gauss(20, 7, 12);
        let (weff, _, _) = cayley_apply_pieces(&p, &v).unwrap();
        let (r, _) = cayley_pieces(&p).unwrap();
        let explicit = r.matmul(&v).unwrap();
        assert!(weff.max_abs_diff(&explicit).unwrap() < 1e-12);
    }

    #[test]
    fn ogd_step_preserves_orthogonality() {
        let u = rand_orthogonal(12, &mut RngState::new(13));
        let g = gauss(12, 12, 14);
        let y = ogd_step(&u, &g, 0.05, 2, true).unwrap();
        assert!(y.ortho_residual() < 1e-12, "residual {}", y.ortho_residual());
        // the step actually moves
        assert!(y.max_abs_diff(&u).unwrap() > 1e-4);
    }

    #[test]
    fn ogd_zero_step_is_identity_both_paths() {
        let u = rand_orthogonal(8, &mut RngState::new(15));
        let g = gauss(8, 8, 16);
        let closed = ogd_step(&u, &g, 0.0, 2, true).unwrap();
        let fixed = ogd_step(&u, &g, 0.0, 2, false).unwrap();
        assert!(closed.max_abs_diff(&u).unwrap() < 1e-14);
        assert!(fixed.max_abs_diff(&u).unwrap() < 1e-14);
    }

    #[test]
    fn ogd_fixed_point_converges_at_fourth_order() {
        // two sweeps + warm start ⇒ error Θ(λ⁴): halving λ shrinks the gap
        // to the closed form by ≈16; assert comfortably above 8.
        let u = rand_orthogonal(10, &mut RngState::new(17));
        let g = gauss(10, 10, 18);
        let err = |lam: f64| {
            let a = ogd_step(&u, &g, lam, 2, false).unwrap();
            let b = ogd_step(&u, &g, lam, 2, true).unwrap();
            a.sub(&b).unwrap().frobenius_norm()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!(ratio > 8.0, "ratio {}", ratio);
        assert!(ratio < 32.0, "ratio {}", ratio);
    }

    #[test]
    fn drift_renormalization_triggers_only_past_tolerance() {
        let q = rand_orthogonal(6, &mut RngState::new(19));
        let (same, fixed) = renormalize_if_drifting(&q, 1e-6).unwrap();
        assert!(!fixed);
        assert_eq!(same, q);
        let drifted = q.scale(1.0 + 1e-3);
        let (corrected, fixed) = renormalize_if_drifting(&drifted, 1e-6).unwrap();
        assert!(fixed);
        assert!(corrected.ortho_residual() < 1e-10);
    }

    #[test]
    fn penalty_gradient_matches_analytic_form() {
        let r = gauss(5, 5, 20);
        let g = ortho_penalty_gradient(&r).unwrap();
        // finite-difference check of ‖RᵀR−I‖_F²
        let h = 1e-6;
        for (i, j) in [(0, 0), (1, 3), (4, 2)] {
            let mut rp = r.clone();
            rp.set(i, j, r.get(i, j) + h);
            let mut rm = r.clone();
            rm.set(i, j, r.get(i, j) - h);
            let fd = (ortho_penalty(&rp) - ortho_penalty(&rm)) / (2.0 * h);
            assert!(
                (fd - g.get(i, j)).abs() < 1e-4 * fd.abs().max(1.0),
                "({}, {}): fd {} vs analytic {}",
                i,
                j,
                fd,
                g.get(i, j)
            );
        }
    }

    #[test]
    fn block_apply_matches_dense_equivalent() {
        let blocks = 4;
        let d = 16;
        let m = block_dim(d, blocks).unwrap();
        let mut rng = RngState::new(21);
        let rs: Vec<Matrix> = (0..blocks).map(|_| rand_orthogonal(m, &mut rng)).collect();
        let v = gauss(d, 5, 22);
        let fast = block_apply(&rs, blocks, &v).unwrap();
        let dense = block_dense_equivalent(&rs, blocks, d).unwrap();
        let slow = dense.matmul(&v).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }

    #[test]
    fn block_param_counts() {
        assert_eq!(block_param_count(16, 4, true).unwrap(), 16);
        assert_eq!(block_param_count(16, 4, false).unwrap(), 64);
        assert_eq!(block_param_count(16, 1, false).unwrap(), 256);
        assert!(block_param_count(10, 3, false).is_err());
    }

    #[test]
    fn identity_params_give_exact_identity_rotation() {
        for method in [Method::Gs, Method::Mgs, Method::Igs, Method::Hr, Method::Ls, Method::Cp] {
            let spec = OrthoSpec::with_method(method);
            let p = spec.identity_params(6);
            let r = rotation_from_params(&spec, &p).unwrap();
            assert_eq!(r, Matrix::identity(6), "{:?}", method);
        }
    }

    #[test]
    fn spec_validation_catches_bad_fields() {
        let mut s = OrthoSpec::default();
        s.igs_unroll = 0;
        assert!(s.validate().is_err());
        let mut s = OrthoSpec::default();
        s.or_beta = -1.0;
        assert!(s.validate().is_err());
        let mut s = OrthoSpec::default();
        s.blocks = 0;
        assert!(s.validate().is_err());
        assert!(OrthoSpec::default().validate().is_ok());
    }
}
