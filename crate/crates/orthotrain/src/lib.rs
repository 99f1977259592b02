//! Orthogonality-preserving over-parameterized training.
//!
//! A neuron `w` is re-parameterized as `w = R·v`, where `v` is a frozen
//! randomly-initialized vector and `R` is a layer-shared orthogonal matrix
//! learned by gradient descent. Because `R` is orthogonal it preserves all
//! pairwise angles among the layer's neurons, and therefore preserves the
//! layer's *hyperspherical energy*
//!
//! ```text
//!   E_s(v̂_1..v̂_n) = Σ_{i≠j} ‖v̂_i − v̂_j‖^(−s)        (s > 0)
//!   E_0(v̂_1..v̂_n) = Σ_{i≠j} log ‖v̂_i − v̂_j‖^(−1)    (s = 0)
//! ```
//!
//! which for neurons drawn from an isotropic Gaussian starts near its
//! minimum (the uniform distribution on the sphere) and stays there for the
//! whole run. The crate provides, from scratch:
//!
//! * [`matrix`] / [`linalg`] — a row-major `f64` matrix with deterministic
//!   hand-rolled kernels (i-k-j matmul, partially-pivoted LU, Newton–Schulz
//!   polar factor, Householder QR) and a bit-exactly documented PRNG
//!   ([`rng::RngState`]).
//! * [`autodiff`] — a reverse-mode tape over matrices; iterative algorithms
//!   are differentiated by full unrolling, never by implicit-function
//!   shortcuts.
//! * [`ortho`] — the orthogonalization kernels (classic / modified /
//!   iterative Gram–Schmidt, Householder reflections, Löwdin symmetric
//!   orthogonalization, Cayley parameterization, a Stiefel descent step, a
//!   soft orthogonality penalty, and block-diagonal application), each
//!   usable as a pure numeric routine and as a differentiable tape node.
//! * [`energy`] — hyperspherical energy, its gradient, invariance checks,
//!   projected-gradient energy minimization, and uniformity diagnostics.
//! * [`model`] / [`train`] / [`sopt`] / [`landscape`] — a desk-scale MLP
//!   harness: frozen-neuron layers, momentum SGD with per-method orthogonal
//!   updates, stochastic dimension-subset rounds, inference-time
//!   materialization (`W_eff = R·V`), and loss-landscape grids with
//!   filter-normalized directions.
//! * [`data`] / [`config`] / [`cli`] — synthetic datasets, an IDX
//!   image/label reader-writer, a strict TOML config schema, and the
//!   `orthotrain` binary (`train`, `energy`, `landscape`, `selftest`).
//!
//! Every run is reproducible: randomness flows only through [`rng::RngState`]
//! (a counter-based generator specified bit-exactly in its docs), matrix
//! kernels fix their summation order, and outputs are byte-identical for
//! identical config + seed (wall-clock fields excepted).
//!
//! The `examples/` directory is the guided tour; each file is runnable with
//! `cargo run --example <name>`:
//!
//! * `orthogonalize` — every kernel on one random matrix: residuals, determinants.
//! * `gradients` — finite-difference verification of tape gradients.
//! * `energy_invariance` — energy before/after random rotations.
//! * `refine_energy` — projected-gradient energy minimization on the circle.
//! * `train_blobs` — OPT vs. standard training on Gaussian blobs, energy traces.
//! * `stochastic_rounds` — dimension-subset training rounds preserving energy.
//! * `block_diagonal` — parameter-efficient block-diagonal variants.
//! * `landscape` — loss-landscape grid around a trained model.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod energy;
pub mod landscape;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod ortho;
pub mod rng;
pub mod sopt;
pub mod train;

pub use matrix::Matrix;
pub use rng::RngState;

/// Crate-wide error type; every fallible public operation returns one of
/// these rather than panicking.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A square matrix was required.
    #[error("{op}: requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    /// An LU pivot fell below the singularity threshold.
    #[error("{what}: matrix is singular to working precision")]
    Singular { what: &'static str },
    /// A Gram–Schmidt style sweep hit a numerically dependent column.
    #[error("column {column} is numerically dependent on preceding columns")]
    RankDeficient { column: usize },
    /// An iterative routine failed to reach its tolerance.
    #[error("{what}: no convergence after {iters} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        residual: f64,
        iters: usize,
    },
    /// Input is degenerate for the requested operation (e.g. a zero row
    /// where a direction is required).
    #[error("degenerate input: {what}")]
    Degenerate { what: &'static str },
    /// Two points are (numerically) coincident, making the energy infinite.
    #[error("energy is infinite: points {i} and {j} coincide")]
    InfiniteEnergy { i: usize, j: usize },
    /// Backward pass was seeded from a non-scalar node.
    #[error("backward requires a 1x1 output node, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {what}")]
    Contract { what: String },
    /// Invalid configuration.
    #[error("config error: {what}")]
    Config { what: String },
    /// Malformed file contents (matrix text, IDX, JSONL, CSV).
    #[error("format error: {what}")]
    Format { what: String },
    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iter} (non-finite loss)")]
    Divergence { iter: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
