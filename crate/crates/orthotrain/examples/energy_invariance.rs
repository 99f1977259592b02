//! Demonstrates the identity this whole crate is built around: the
//! hyperspherical energy of a direction set is invariant under a shared
//! orthogonal transform.
//!
//! E_s(V) = Σ_{i≠j} ‖v̂_i − v̂_j‖⁻ˢ depends only on pairwise angles between
//! the normalized directions, and an orthogonal R preserves every inner
//! product — so E_s(RV) = E_s(V) exactly (up to floating-point roundoff).
//! The same holds when the rotation touches only a coordinate subset, which
//! is what makes subset-rotation training sound.
//!
//! Run with: `cargo run --example energy_invariance`

use orthotrain::energy::{hyperspherical_energy, rotate_dims};
use orthotrain::linalg::rand_orthogonal;
use orthotrain::RngState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d) = (24, 8);
    let mut rng = RngState::new(2024);
    // rows are neurons / points on the sphere after normalization
    let v = rng.gaussian_matrix(n, d, 0.0, 1.0);
    let r = rand_orthogonal(d, &mut rng);
    // a shared rotation acts on the coordinates: V ↦ V Rᵀ in row convention
    let vr = v.matmul_nt(&r)?;

    println!("{n} random directions in {d} dimensions, Haar-random rotation\n");
    println!(
        "{:>6} {:>22} {:>22} {:>12}",
        "s", "E_s(V)", "E_s(RV)", "rel. dev."
    );
    for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let before = hyperspherical_energy(&v, s, false)?;
        let after = hyperspherical_energy(&vr, s, false)?;
        let dev = ((after - before) / before).abs();
        println!("{s:>6.1} {before:>22.12} {after:>22.12} {dev:>12.2e}");
    }

    // Half-space variant (each point paired with its antipode) is invariant
    // for the same reason.
    let before = hyperspherical_energy(&v, 1.0, true)?;
    let after = hyperspherical_energy(&vr, 1.0, true)?;
    println!(
        "\nhalf-space s=1: {before:.12} vs {after:.12} (rel. dev. {:.2e})",
        ((after - before) / before).abs()
    );

    // Subset version: rotate only 3 of the 8 coordinates with a 3x3
    // orthogonal block. Pairwise angles are still preserved because the
    // complementary coordinates are untouched and the block preserves the
    // norms within the selected ones.
    let dims = [1usize, 4, 6];
    let r3 = rand_orthogonal(3, &mut rng);
    let v_sub = rotate_dims(&v, &r3, &dims)?;
    let before = hyperspherical_energy(&v, 1.0, false)?;
    let after = hyperspherical_energy(&v_sub, 1.0, false)?;
    println!(
        "subset rotation of coords {dims:?}: {before:.12} vs {after:.12} (rel. dev. {:.2e})",
        ((after - before) / before).abs()
    );

    // Contrast: a NON-orthogonal transform does change the energy.
    let mut skewed = v.clone();
    for i in 0..n {
        skewed.set(i, 0, skewed.get(i, 0) * 3.0); // stretch one coordinate
    }
    let after = hyperspherical_energy(&skewed, 1.0, false)?;
    println!(
        "\nnon-orthogonal stretch for contrast: {before:.6} -> {after:.6} \
         (moves by {:.1}%)",
        100.0 * ((after - before) / before).abs()
    );
    Ok(())
}
