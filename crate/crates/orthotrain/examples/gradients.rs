//! Checks the analytic gradients of the differentiable orthogonalization
//! kernels against central finite differences.
//!
//! Each kernel is wrapped in a small scalar loss ⟨Q ∘ W⟩² (a fixed random
//! Hadamard weighting, so the loss actually depends on every entry of Q),
//! the tape computes ∂loss/∂U by reverse accumulation, and `grad_check`
//! reports the worst relative disagreement with the finite-difference
//! estimate. Everything lands at or below ~1e-6 except the Newton–Schulz
//! unroll, whose truncation makes ~1e-5 the expected scale.
//!
//! Run with: `cargo run --example gradients`

use orthotrain::autodiff::{grad_check, GsVariant, NodeId, Tape};
use orthotrain::ortho::cayley_init_params;
use orthotrain::{Matrix, RngState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 6;
    let mut rng = RngState::new(7);
    let u0 = rng.gaussian_matrix(n, n, 0.0, 1.0);
    let weights = rng.gaussian_matrix(n, n, 0.0, 1.0);

    // Hadamard-weighted squared sum: a scalar that sees every entry of Q.
    let weigh = |tape: &mut Tape, q: NodeId, w: &Matrix| -> orthotrain::Result<NodeId> {
        let wn = tape.leaf(w.clone());
        let h = tape.hadamard(q, wn)?;
        Ok(tape.frobenius_sq(h))
    };

    println!("worst relative gradient error, {n}x{n} input, step 1e-5:\n");

    let w = weights.clone();
    let err = grad_check(
        move |tape, x| {
            let q = tape.gram_schmidt(x, GsVariant::Classic)?;
            weigh(tape, q, &w)
        },
        &u0,
        1e-5,
    )?;
    println!("  gram-schmidt (classic)     {err:.3e}");

    let w = weights.clone();
    let err = grad_check(
        move |tape, x| {
            let q = tape.gram_schmidt(x, GsVariant::Iterative(2))?;
            weigh(tape, q, &w)
        },
        &u0,
        1e-5,
    )?;
    println!("  gram-schmidt (iterative)   {err:.3e}");

    let w = weights.clone();
    let err = grad_check(
        move |tape, x| {
            let q = tape.householder_orthogonalize(x)?;
            weigh(tape, q, &w)
        },
        &u0,
        1e-5,
    )?;
    println!("  householder                {err:.3e}");

    let w = weights.clone();
    let err = grad_check(
        move |tape, x| {
            let q = tape.newton_schulz(x, 12)?;
            weigh(tape, q, &w)
        },
        &u0,
        1e-4, // the truncated unroll needs a larger probe step
    )?;
    println!("  newton-schulz (12 iters)   {err:.3e}");

    let p0 = cayley_init_params(n, 0.1, &mut rng);
    let w = weights.clone();
    let err = grad_check(
        move |tape, x| {
            let r = tape.cayley(x)?;
            weigh(tape, r, &w)
        },
        &p0,
        1e-5,
    )?;
    println!("  cayley                     {err:.3e}");

    // Gradient of the pairwise-energy objective itself ∂E/∂V, which the
    // energy refinement loop and the soft-orthogonality penalty rely on.
    let v0 = rng.gaussian_matrix(8, 3, 0.0, 1.0);
    let err = grad_check(|tape, v| tape.energy(v, 1.0, false), &v0, 1e-5)?;
    println!("  hyperspherical energy s=1  {err:.3e}");

    Ok(())
}
