//! Loss-landscape slices around a trained model.
//!
//! The surface is `f(α, β) = L(θ* + α·δ + β·η)` where `θ*` is the
//! combination of all trainable matrices (rotation parameters for
//! rotation-bearing layers, weight matrices for dense layers; biases are
//! left untouched) and `δ, η` are two fixed-seed Gaussian direction sets.
//! Each direction column is filter-normalized — rescaled to the norm of the
//! corresponding trained column — so slices are comparable across layers and
//! parameterizations of different scale.
//!
//! The model is never mutated: perturbed parameters are built fresh from the
//! trained values at every grid point, and zero coefficients are skipped
//! outright, so the center point evaluates the trained parameters bit for
//! bit.

use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::model::{
    classification_error, data_loss, forward_standard, materialize, penalty_value, ModelState,
};
use crate::rng::{RngState, STREAM_PROBE};
use crate::{Error, Result};

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapePoint {
    /// Coefficient along the first direction set.
    pub alpha: f64,
    /// Coefficient along the second direction set.
    pub beta: f64,
    /// Full-training-set loss (including any soft-orthogonality penalty).
    pub loss: f64,
    /// Held-out misclassification rate.
    pub test_err: f64,
}

/// Grid axis: `steps` evenly spaced values spanning `[-range, range]`
/// (a single step degenerates to `[0]`). Odd step counts hit `0.0` exactly.
pub fn grid_axis(steps: usize, range: f64) -> Vec<f64> {
    if steps <= 1 {
        return vec![0.0];
    }
    (0..steps)
        .map(|i| -range + 2.0 * range * (i as f64 / (steps - 1) as f64))
        .collect()
}

/// One Gaussian direction per trainable matrix, filter-normalized against
/// the trained parameter: column `j` of the direction is rescaled to the
/// Euclidean norm of column `j` of the parameter.
fn direction_set(params: &[&Matrix], rng: &mut RngState) -> Vec<Matrix> {
    params
        .iter()
        .map(|p| {
            let mut d = rng.gaussian_matrix(p.rows(), p.cols(), 0.0, 1.0);
            for j in 0..p.cols() {
                let target = p.col_norm(j);
                let have = d.col_norm(j);
                let scale = if have > 0.0 { target / have } else { 0.0 };
                for i in 0..d.rows() {
                    let v = d.get(i, j) * scale;
                    d.set(i, j, v);
                }
            }
            d
        })
        .collect()
}

/// Evaluates the loss/test-error surface on a `steps × steps` grid over
/// `[-range, range]²`. Points are emitted row-major: `alpha` in the outer
/// loop, `beta` in the inner loop, both ascending.
///
/// Directions derive from `seed` alone, so a grid is reproducible
/// bit-for-bit given the same trained model, dataset, and seed.
pub fn landscape_grid(
    model: &ModelState,
    ds: &Dataset,
    steps: usize,
    range: f64,
    seed: u64,
) -> Result<Vec<LandscapePoint>> {
    if steps == 0 {
        return Err(Error::Config {
            what: "landscape grid needs at least one step".into(),
        });
    }
    if !(range.is_finite() && range >= 0.0) {
        return Err(Error::Config {
            what: format!("landscape range must be finite and >= 0, got {range}"),
        });
    }
    let trained: Vec<&Matrix> = model
        .layers
        .iter()
        .flat_map(|l| l.params.iter())
        .collect();
    let mut probe_rng = RngState::new(seed).split(STREAM_PROBE);
    let delta = direction_set(&trained, &mut probe_rng);
    let eta = direction_set(&trained, &mut probe_rng);
    let axis = grid_axis(steps, range);
    let mut points = Vec::with_capacity(steps * steps);
    let mut scratch = model.clone();
    for &alpha in &axis {
        for &beta in &axis {
            let mut k = 0;
            for (l, layer) in model.layers.iter().enumerate() {
                for (i, p) in layer.params.iter().enumerate() {
                    let mut perturbed = p.clone();
                    if alpha != 0.0 {
                        perturbed.add_scaled(alpha, &delta[k])?;
                    }
                    if beta != 0.0 {
                        perturbed.add_scaled(beta, &eta[k])?;
                    }
                    scratch.layers[l].params[i] = perturbed;
                    k += 1;
                }
            }
            let mats = materialize(&scratch)?;
            let train_logits = forward_standard(&mats, scratch.spec.activation, &ds.x_train)?;
            let loss = data_loss(&train_logits, &ds.y_train, scratch.spec.output)?
                + penalty_value(&scratch)?;
            let test_logits = forward_standard(&mats, scratch.spec.activation, &ds.x_test)?;
            let test_err = classification_error(&test_logits, &ds.y_test);
            points.push(LandscapePoint {
                alpha,
                beta,
                loss,
                test_err,
            });
        }
    }
    Ok(points)
}

/// Renders grid points as CSV with the pinned `alpha,beta,loss,test_err`
/// header. Floats are serialized shortest-round-trip, so re-parsing
/// recovers the exact values.
pub fn landscape_csv(points: &[LandscapePoint]) -> String {
    let mut out = String::from("alpha,beta,loss,test_err\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.alpha, p.beta, p.loss, p.test_err));
    }
    out
}
