//! Hyperspherical energy of a set of direction vectors.
//!
//! For rows `v_1..v_n` (neuron weight vectors) with unit normalizations
//! `v̂_i = v_i/‖v_i‖`, the energy with exponent `s` is the sum over ordered
//! pairs of a Riesz kernel on chordal distance:
//!
//! ```text
//! E_s = Σ_{i≠j} ‖v̂_i − v̂_j‖⁻ˢ          (s > 0)
//! E_0 = Σ_{i≠j} log ‖v̂_i − v̂_j‖⁻¹      (s = 0)
//! ```
//!
//! The energy is invariant under any orthogonal map applied to all rows —
//! rotations preserve pairwise distances — which is what lets a trainable
//! orthogonal matrix steer frozen random directions without disturbing
//! their mutual arrangement. Its minimum over configurations is attained
//! by maximally separated (asymptotically uniform) directions on the
//! sphere.
//!
//! The half-space variant measures separation of *undirected* axes: each
//! normalized row is paired with its antipode, the energy runs over the
//! augmented `2n` points, and the `n` self-antipode pairs (distance exactly
//! 2, carrying no information) are excluded.
//!
//! Summation order is pinned — outer index ascending, inner index ascending
//! — so values are bit-reproducible across runs.

use crate::matrix::Matrix;
use crate::rng::RngState;
use crate::{Error, Result};
use serde::Serialize;

/// Chordal distance below which a pair makes the energy effectively
/// infinite (coincident directions) and evaluation refuses.
pub const MIN_CHORD: f64 = 1e-12;

/// Row norm below which a direction vector is degenerate.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Hardest-case reference: number of Monte-Carlo pair draws used when no
/// closed form for the uniform-pair energy is available.
const UNIFORMITY_MC_PAIRS: usize = 10_000;

/// Internal seed for the uniformity reference draw (fixed so diagnostics
/// are reproducible).
const UNIFORMITY_SEED: u64 = 0xD1A6;

/// Summary of one energy evaluation, serialized as the `energy` command's
/// JSON output (field order is the declaration order).
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    /// Riesz exponent.
    pub s: f64,
    /// Energy value.
    pub value: f64,
    /// Smallest pairwise angle between normalized rows, radians.
    pub min_angle: f64,
    /// Number of direction vectors (rows).
    pub n: usize,
    /// Ambient dimension (columns).
    pub d: usize,
    /// Whether the antipode-augmented variant was used.
    pub half_space: bool,
}

fn check_exponent(s: f64) -> Result<()> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::Contract {
            what: format!("energy exponent must be finite and ≥ 0, got {}", s),
        });
    }
    Ok(())
}

fn check_rows(v: &Matrix) -> Result<()> {
    if v.rows() < 2 {
        return Err(Error::Contract {
            what: format!("energy needs at least 2 rows, got {}", v.rows()),
        });
    }
    Ok(())
}

/// Rows rescaled to unit Euclidean norm; errors on degenerate rows.
pub fn normalize_neurons(v: &Matrix) -> Result<Matrix> {
    let mut out = v.clone();
    for i in 0..v.rows() {
        let norm = row_norm(v, i);
        if norm < MIN_ROW_NORM {
            return Err(Error::Degenerate {
                what: "direction row with near-zero norm",
            });
        }
        for x in out.row_mut(i) {
            *x /= norm;
        }
    }
    Ok(out)
}

fn row_norm(v: &Matrix, i: usize) -> f64 {
    v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Kernel value at chordal distance `dist`.
fn kernel(dist: f64, s: f64) -> f64 {
    if s == 0.0 {
        -dist.ln()
    } else {
        dist.powf(-s)
    }
}

/// Derivative of the kernel with respect to the distance.
fn kernel_deriv(dist: f64, s: f64) -> f64 {
    if s == 0.0 {
        -1.0 / dist
    } else {
        -s * dist.powf(-s - 1.0)
    }
}

/// Augmented point list for an evaluation: the normalized rows, plus their
/// antipodes when `half_space`. Point `k` maps back to source row `k % n`
/// with sign `+1` for `k < n`, `−1` otherwise.
fn augmented_points(vhat: &Matrix, half_space: bool) -> Vec<Vec<f64>> {
    let (n, d) = vhat.shape();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(if half_space { 2 * n } else { n });
    for i in 0..n {
        pts.push(vhat.row(i).to_vec());
    }
    if half_space {
        for i in 0..n {
            pts.push((0..d).map(|c| -vhat.get(i, c)).collect());
        }
    }
    pts
}

/// True when augmented points `i`, `j` are the same source row and its
/// antipode (excluded from half-space sums).
fn is_self_antipode(i: usize, j: usize, n: usize) -> bool {
    i % n == j % n
}

/// Hyperspherical energy of the rows of `v` (normalized internally).
///
/// Errors: [`Error::Degenerate`] on a near-zero row, [`Error::InfiniteEnergy`]
/// when two normalized directions (or a direction and an antipode, in the
/// half-space variant) nearly coincide.
pub fn hyperspherical_energy(v: &Matrix, s: f64, half_space: bool) -> Result<f64> {
    check_exponent(s)?;
    check_rows(v)?;
    let vhat = normalize_neurons(v)?;
    let n = v.rows();
    let pts = augmented_points(&vhat, half_space);
    let total = pts.len();
    let mut acc = 0.0;
    for i in 0..total {
        for j in 0..total {
            if i == j || (half_space && is_self_antipode(i, j, n)) {
                continue;
            }
            let dist = chord(&pts[i], &pts[j]);
            if dist < MIN_CHORD {
                return Err(Error::InfiniteEnergy { i: i % n, j: j % n });
            }
            acc += kernel(dist, s);
        }
    }
    Ok(acc)
}

fn chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gradient of [`hyperspherical_energy`] with respect to the *unnormalized*
/// rows of `v` (the chain rule through normalization is included, so rows
/// may have any nonzero norm).
pub fn energy_gradient(v: &Matrix, s: f64, half_space: bool) -> Result<Matrix> {
    check_exponent(s)?;
    check_rows(v)?;
    let vhat = normalize_neurons(v)?;
    let (n, d) = vhat.shape();
    let pts = augmented_points(&vhat, half_space);
    let total = pts.len();
    // adjoint with respect to the normalized rows
    let mut ghat = Matrix::zeros(n, d);
    for i in 0..total {
        for j in (i + 1)..total {
            if half_space && is_self_antipode(i, j, n) {
                continue;
            }
            let dist = chord(&pts[i], &pts[j]);
            if dist < MIN_CHORD {
                return Err(Error::InfiniteEnergy { i: i % n, j: j % n });
            }
            // each unordered pair appears twice in the ordered sum
            let w = 2.0 * kernel_deriv(dist, s) / dist;
            let (si, sj) = (if i < n { 1.0 } else { -1.0 }, if j < n { 1.0 } else { -1.0 });
            let (ri, rj) = (i % n, j % n);
            for c in 0..d {
                let diff = pts[i][c] - pts[j][c];
                let g = w * diff;
                ghat.set(ri, c, ghat.get(ri, c) + si * g);
                ghat.set(rj, c, ghat.get(rj, c) - sj * g);
            }
        }
    }
    // chain through v̂ = v/‖v‖: g = (ĝ − v̂·(v̂ᵀĝ)) / ‖v‖
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let norm = row_norm(v, i);
        let hat = vhat.row(i);
        let gh = ghat.row(i);
        let dot: f64 = hat.iter().zip(gh.iter()).map(|(a, b)| a * b).sum();
        for c in 0..d {
            grad.set(i, c, (gh[c] - hat[c] * dot) / norm);
        }
    }
    Ok(grad)
}

/// Relative deviation of the energy when every row is mapped through the
/// orthogonal matrix `r` (rows transform as `v → v·rᵀ`). Rotation invariance
/// means this should sit at rounding error.
pub fn energy_invariance_check(v: &Matrix, r: &Matrix, s: f64, half_space: bool) -> Result<f64> {
    if r.ortho_residual() > 1e-10 {
        return Err(Error::Contract {
            what: format!(
                "invariance check needs an orthogonal map (residual {:.3e})",
                r.ortho_residual()
            ),
        });
    }
    let before = hyperspherical_energy(v, s, half_space)?;
    let after = hyperspherical_energy(&v.matmul_nt(r)?, s, half_space)?;
    Ok(relative_deviation(before, after))
}

/// Relative deviation of the energy when an orthogonal `r_p` acts on the
/// coordinate subset `dims` of every row (all other coordinates untouched).
pub fn subset_invariance_check(v: &Matrix, r_p: &Matrix, dims: &[usize], s: f64, half_space: bool) -> Result<f64> {
    let rotated = rotate_dims(v, r_p, dims)?;
    let before = hyperspherical_energy(v, s, half_space)?;
    let after = hyperspherical_energy(&rotated, s, half_space)?;
    Ok(relative_deviation(before, after))
}

/// Applies `r_p` to the coordinates `dims` of every row of `v`.
pub fn rotate_dims(v: &Matrix, r_p: &Matrix, dims: &[usize]) -> Result<Matrix> {
    let p = dims.len();
    if r_p.shape() != (p, p) {
        return Err(Error::Shape {
            op: "rotate_dims",
            lhs: (p, p),
            rhs: r_p.shape(),
        });
    }
    if r_p.ortho_residual() > 1e-10 {
        return Err(Error::Contract {
            what: format!(
                "subset rotation must be orthogonal (residual {:.3e})",
                r_p.ortho_residual()
            ),
        });
    }
    let mut seen = vec![false; v.cols()];
    for &c in dims {
        if c >= v.cols() {
            return Err(Error::Contract {
                what: format!("dimension index {} out of range for {} columns", c, v.cols()),
            });
        }
        if seen[c] {
            return Err(Error::Contract {
                what: format!("dimension index {} repeated", c),
            });
        }
        seen[c] = true;
    }
    let mut out = v.clone();
    let mut x = vec![0.0; p];
    for i in 0..v.rows() {
        for (k, &c) in dims.iter().enumerate() {
            x[k] = v.get(i, c);
        }
        for (a, &ca) in dims.iter().enumerate() {
            let mut acc = 0.0;
            for (b, &xb) in x.iter().enumerate() {
                acc += r_p.get(a, b) * xb;
            }
            out.set(i, ca, acc);
        }
    }
    Ok(out)
}

fn relative_deviation(before: f64, after: f64) -> f64 {
    let diff = (before - after).abs();
    if before.abs() > 1e-12 {
        diff / before.abs()
    } else {
        diff
    }
}

/// Smallest pairwise angle between normalized rows, radians.
pub fn min_pairwise_angle(v: &Matrix) -> Result<f64> {
    check_rows(v)?;
    let vhat = normalize_neurons(v)?;
    let n = vhat.rows();
    let mut max_dot = -1.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = vhat.row(i).iter().zip(vhat.row(j).iter()).map(|(a, b)| a * b).sum();
            if dot > max_dot {
                max_dot = dot;
            }
        }
    }
    Ok(max_dot.clamp(-1.0, 1.0).acos())
}

/// Full diagnostic report for one direction set.
pub fn energy_report(v: &Matrix, s: f64, half_space: bool) -> Result<EnergyReport> {
    Ok(EnergyReport {
        s,
        value: hyperspherical_energy(v, s, half_space)?,
        min_angle: min_pairwise_angle(v)?,
        n: v.rows(),
        d: v.cols(),
        half_space,
    })
}

/// Number of ordered pairs the energy sums over.
fn pair_count(n: usize, half_space: bool) -> f64 {
    if half_space {
        // 2n·(2n−1) ordered pairs minus 2n self-antipode exclusions
        (4 * n * (n - 1)) as f64
    } else {
        (n * (n - 1)) as f64
    }
}

/// Energy divided by the expected energy of the same number of i.i.d.
/// uniform directions: near 1.0 for a uniform cloud, above 1.0 for
/// clustered directions, and below 1.0 for energy-minimizing arrangements.
///
/// For `d = 3, s = 1` the uniform pair expectation `E‖û−ŵ‖⁻¹ = 1` is exact,
/// so the reference is just the pair count; every other case uses a fixed
/// Monte-Carlo estimate of the pair expectation.
pub fn uniformity_ratio(v: &Matrix, s: f64, half_space: bool) -> Result<f64> {
    check_exponent(s)?;
    check_rows(v)?;
    let value = hyperspherical_energy(v, s, half_space)?;
    let (n, d) = v.shape();
    let per_pair = if d == 3 && s == 1.0 {
        1.0
    } else {
        uniform_pair_expectation(d, s)
    };
    Ok(value / (pair_count(n, half_space) * per_pair))
}

/// Monte-Carlo estimate of `E[kernel(‖û−ŵ‖)]` for independent uniform
/// directions in dimension `d` (fixed seed; antipodes of uniform points are
/// uniform, so the same expectation serves the half-space reference).
fn uniform_pair_expectation(d: usize, s: f64) -> f64 {
    let mut rng = RngState::new(UNIFORMITY_SEED);
    let mut acc = 0.0;
    for _ in 0..UNIFORMITY_MC_PAIRS {
        let u = random_direction(d, &mut rng);
        let w = random_direction(d, &mut rng);
        acc += kernel(chord(&u, &w), s);
    }
    acc / UNIFORMITY_MC_PAIRS as f64
}

fn random_direction(d: usize, rng: &mut RngState) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > MIN_ROW_NORM {
            return x.iter().map(|a| a / norm).collect();
        }
    }
}

/// Result of [`refine_mhe`].
#[derive(Debug, Clone)]
pub struct Refined {
    /// Refined direction matrix (original row norms preserved).
    pub v: Matrix,
    /// Energy of the refined directions.
    pub energy: f64,
    /// Gradient steps actually applied.
    pub steps_taken: usize,
    /// True when backtracking stalled before `steps` (best iterate returned).
    pub stalled: bool,
}

/// Maximum step-size halvings per refinement step before declaring a stall.
const REFINE_MAX_HALVINGS: usize = 20;

/// Direct minimum-energy refinement: projected gradient descent on the
/// energy, rescaling each row to its original norm after every step.
/// Each step backtracks (halving the step size up to 20 times) until the
/// energy decreases; if no decrease is found the best iterate so far is
/// returned with `stalled = true` rather than an error.
pub fn refine_mhe(v: &Matrix, s: f64, half_space: bool, steps: usize, lr: f64) -> Result<Refined> {
    check_exponent(s)?;
    check_rows(v)?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Contract {
            what: format!("refinement step size must be positive, got {}", lr),
        });
    }
    let norms: Vec<f64> = (0..v.rows()).map(|i| row_norm(v, i)).collect();
    if norms.iter().any(|&x| x < MIN_ROW_NORM) {
        return Err(Error::Degenerate {
            what: "direction row with near-zero norm",
        });
    }
    let mut cur = v.clone();
    let mut cur_energy = hyperspherical_energy(&cur, s, half_space)?;
    let mut steps_taken = 0;
    for _ in 0..steps {
        let grad = energy_gradient(&cur, s, half_space)?;
        let mut step = lr;
        let mut accepted = false;
        for _ in 0..=REFINE_MAX_HALVINGS {
            let mut cand = cur.clone();
            cand.add_scaled(-step, &grad)?;
            rescale_rows(&mut cand, &norms);
            match hyperspherical_energy(&cand, s, half_space) {
                Ok(e) if e < cur_energy => {
                    cur = cand;
                    cur_energy = e;
                    accepted = true;
                    break;
                }
                // collision or increase: shrink and retry
                Ok(_) | Err(Error::InfiniteEnergy { .. }) => step *= 0.5,
                Err(other) => return Err(other),
            }
        }
        if !accepted {
            return Ok(Refined {
                v: cur,
                energy: cur_energy,
                steps_taken,
                stalled: true,
            });
        }
        steps_taken += 1;
    }
    Ok(Refined {
        v: cur,
        energy: cur_energy,
        steps_taken,
        stalled: false,
    })
}

fn rescale_rows(m: &mut Matrix, norms: &[f64]) {
    for (i, &target) in norms.iter().enumerate() {
        let cur = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if cur > 0.0 {
            let f = target / cur;
            for x in m.row_mut(i) {
                *x *= f;
            }
        }
    }
}
