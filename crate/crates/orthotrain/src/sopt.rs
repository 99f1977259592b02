//! Dimension-subset rotation training.
//!
//! Instead of learning one `d×d` rotation per layer, each outer round picks
//! `p` of the layer's `d` input coordinates at random, trains a fresh
//! identity-initialized `p×p` rotation on just those coordinates, and then
//! folds the learned rotation back into the layer's working direction
//! matrix. Rotating a coordinate subset rigidly transforms the selected
//! components of every neuron while leaving the rest untouched, so pairwise
//! distances between unit-normalized neurons — and with them the
//! hyperspherical energy — are preserved exactly, round after round.
//! Parameter cost per layer drops from `d²` to `p²`.
//!
//! Scheduling: every rotation-bearing layer except the network's first
//! follows the subset schedule; the first layer keeps its full rotation and
//! trains it continuously (its input dimension is the data width, which is
//! where a full rotation is cheapest relative to the savings elsewhere).
//! Non-rotation parameters (classifier weights, biases) train during every
//! inner iteration. Momentum state is per-round: each round is a fresh
//! optimization problem over newly drawn coordinates.
//!
//! Folding uses the same rotation computation as the differentiable forward,
//! so an untrained round (`n_in = 0`) folds an exact identity and leaves the
//! model bit-identical.

use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::model::{
    classification_error, data_loss, forward_standard, init_model, layer_ortho_residual,
    materialize, rotation_matrix, LayerMode, LayerNodes, ModelState, TrainMode, ENERGY_TRACE_S,
};
use crate::autodiff::{NodeId, Tape};
use crate::energy::hyperspherical_energy;
use crate::ortho::{ortho_penalty, rotation_node, Method, OrthoSpec};
use crate::rng::{RngState, STREAM_BATCH, STREAM_MODEL, STREAM_SUBSET};
use crate::train::{
    apply_dense_updates, diagnostic_record, eval_record, momentum_update, ogd_param_update,
    MetricsRecord, TrainConfig, TrainOutcome, Velocities,
};
use crate::{Error, Result};
use std::time::Instant;

/// Endless minibatch index stream: yields fixed-size batches from a
/// shuffled order, reshuffling after each full pass (the short remainder
/// batch is dropped), and counts completed passes.
#[derive(Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
    rng: RngState,
    consumed: usize,
    per_epoch: usize,
}

impl BatchStream {
    /// Stream over `n` samples in batches of `batch` (`1 ≤ batch ≤ n`).
    pub fn new(n: usize, batch: usize, mut rng: RngState) -> Result<Self> {
        if batch == 0 || batch > n {
            return Err(Error::Config {
                what: format!("batch size {batch} invalid for {n} samples"),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Ok(BatchStream {
            order,
            batch,
            pos: 0,
            rng,
            consumed: 0,
            per_epoch: n / batch,
        })
    }

    /// The next batch of sample indices.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        self.consumed += 1;
        b
    }

    /// Completed passes over the data (batches consumed / batches per pass).
    pub fn epochs_completed(&self) -> usize {
        self.consumed / self.per_epoch
    }
}

/// One layer's in-progress subset rotation during a round.
#[derive(Debug)]
pub struct SubsetState {
    /// Which layer the subset belongs to.
    pub layer: usize,
    /// Selected coordinates, sorted ascending.
    pub dims: Vec<usize>,
    /// Complement coordinates, sorted ascending.
    comp: Vec<usize>,
    /// Row permutation restoring natural order after `dims ++ comp` stacking.
    inv: Vec<usize>,
    /// The layer's method settings, forced dense (`blocks = 1`).
    spec: OrthoSpec,
    /// Trainable `p×p` rotation parameters, identity-initialized.
    pub params: Matrix,
    vel: Matrix,
}

impl SubsetState {
    fn fresh(layer: usize, d: usize, p: usize, spec: OrthoSpec, rng: &mut RngState) -> Self {
        let mut dims = rng.sample_distinct(d, p);
        dims.sort_unstable();
        let mut in_dims = vec![false; d];
        for &i in &dims {
            in_dims[i] = true;
        }
        let comp: Vec<usize> = (0..d).filter(|&i| !in_dims[i]).collect();
        let mut inv = vec![0usize; d];
        for (k, &i) in dims.iter().chain(comp.iter()).enumerate() {
            inv[i] = k;
        }
        let params = spec.identity_params(p);
        let vel = Matrix::zeros(params.rows(), params.cols());
        SubsetState {
            layer,
            dims,
            comp,
            inv,
            spec,
            params,
            vel,
        }
    }

    /// The subset rotation as an explicit `p×p` matrix, computed exactly as
    /// the forward graph computes it.
    pub fn rotation(&self) -> Result<Matrix> {
        rotation_matrix(&self.spec, &self.params)
    }
}

/// Rotation-bearing layers that follow the subset schedule: all but the
/// network's first layer.
pub fn scheduled_layers(model: &ModelState) -> Vec<usize> {
    model
        .rotation_layers()
        .into_iter()
        .filter(|&l| l != 0)
        .collect()
}

/// What one round did.
#[derive(Debug)]
pub struct RoundOutcome {
    /// Inner iterations completed.
    pub completed: usize,
    /// `(inner iteration, loss value)` if a minibatch loss went non-finite;
    /// the round aborts without folding in that case.
    pub diverged: Option<(usize, f64)>,
}

/// Runs one outer round: samples fresh coordinates per scheduled layer,
/// trains the subset rotations (plus all unscheduled trainables) for
/// `n_in` inner iterations, then folds each rotation into its layer's
/// working directions. Per-layer hyperspherical energy after the fold
/// matches the energy at round start to rounding error.
pub fn sopt_round(
    cfg: &TrainConfig,
    ds: &Dataset,
    model: &mut ModelState,
    batches: &mut BatchStream,
    subset_rng: &mut RngState,
) -> Result<RoundOutcome> {
    sopt_round_with(cfg, ds, model, batches, subset_rng, |_, _, _, _| Ok(()))
}

/// [`sopt_round`] with a callback invoked after every inner iteration as
/// `(model, subsets, inner_iter, epochs_completed)`, for metrics capture.
pub(crate) fn sopt_round_with<F>(
    cfg: &TrainConfig,
    ds: &Dataset,
    model: &mut ModelState,
    batches: &mut BatchStream,
    subset_rng: &mut RngState,
    mut after_iter: F,
) -> Result<RoundOutcome>
where
    F: FnMut(&ModelState, &[SubsetState], usize, usize) -> Result<()>,
{
    let sopt = cfg.sopt.as_ref().ok_or_else(|| Error::Config {
        what: "no subset schedule configured".into(),
    })?;
    let mut subs: Vec<SubsetState> = Vec::new();
    for l in scheduled_layers(model) {
        let layer = &model.layers[l];
        if layer.ortho.blocks != 1 {
            return Err(Error::Config {
                what: format!("subset training requires blocks = 1 on layer {l}"),
            });
        }
        let d = layer.d_in();
        let p = sopt.p.resolve(d)?;
        let spec = OrthoSpec {
            blocks: 1,
            block_shared: false,
            ..layer.ortho.clone()
        };
        subs.push(SubsetState::fresh(l, d, p, spec, subset_rng));
    }
    let mut vels = Velocities::zeros_like(model);
    let (lr, mu) = (cfg.optimizer.lr, cfg.optimizer.momentum);
    for k in 1..=sopt.n_in {
        let idx = batches.next_batch();
        let x = ds.x_train.gather_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| ds.y_train[i]).collect();
        let (tape, loss, layer_nodes, sub_nodes) = build_subset_forward(model, &subs, &x, &y)?;
        let loss_val = tape.value(loss).get(0, 0);
        if !loss_val.is_finite() {
            return Ok(RoundOutcome {
                completed: k - 1,
                diverged: Some((k, loss_val)),
            });
        }
        let mut grads = tape.backward(loss)?;
        apply_dense_updates(
            model,
            &mut vels,
            &mut grads,
            &layer_nodes,
            lr,
            mu,
            cfg.weight_decay,
            cfg.decay_targets,
        )?;
        for (sub, &node) in subs.iter_mut().zip(sub_nodes.iter()) {
            let g = grads
                .take(node)
                .unwrap_or_else(|| Matrix::zeros(sub.params.rows(), sub.params.cols()));
            if sub.spec.method == Method::Ogd {
                sub.params = ogd_param_update(&sub.spec, &sub.params, &g, lr)?;
            } else {
                momentum_update(&mut sub.params, &mut sub.vel, &g, lr, mu, 0.0)?;
            }
        }
        after_iter(model, &subs, k, batches.epochs_completed())?;
    }
    for sub in &subs {
        fold_subset(model, sub)?;
    }
    Ok(RoundOutcome {
        completed: sopt.n_in,
        diverged: None,
    })
}

/// Overwrites the selected rows of the layer's working directions with the
/// rotated rows, and re-pins the frozen-directions hash: the fold is the
/// only sanctioned mutation of the direction matrix.
fn fold_subset(model: &mut ModelState, sub: &SubsetState) -> Result<()> {
    let r = sub.rotation()?;
    let layer = &mut model.layers[sub.layer];
    let v_sub = layer.v_fixed.gather_rows(&sub.dims)?;
    let rotated = r.matmul(&v_sub)?;
    layer.v_fixed.scatter_rows(&sub.dims, &rotated)?;
    layer.v_hash = layer.v_fixed.byte_hash();
    Ok(())
}

/// Forward graph for one inner iteration. Scheduled layers compute
/// `W_eff` as: gather the selected rows of the direction leaf, rotate them
/// with the subset rotation, stack over the untouched complement rows, and
/// permute back to natural row order — all on the tape, so the subset
/// parameters receive exact gradients. Returns the tape, the loss node,
/// per-layer handles (scheduled layers carry an empty parameter list; their
/// placeholder parameters are not in the graph), and one subset-parameter
/// node per entry of `subs`.
fn build_subset_forward(
    model: &ModelState,
    subs: &[SubsetState],
    x: &Matrix,
    y: &[usize],
) -> Result<(Tape, NodeId, Vec<LayerNodes>, Vec<NodeId>)> {
    let mut tape = Tape::new();
    let batch = x.rows();
    let ones = tape.leaf(Matrix::from_vec(batch, 1, vec![1.0; batch])?);
    let mut h = tape.leaf(x.clone());
    let mut layer_nodes = Vec::with_capacity(model.layers.len());
    let mut sub_nodes = Vec::with_capacity(subs.len());
    let mut penalties: Vec<(f64, NodeId)> = Vec::new();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let sub = subs.iter().find(|s| s.layer == l);
        let (w_eff, param_nodes) = match (layer.mode, sub) {
            (LayerMode::Standard, _) => {
                let w = tape.leaf(layer.params[0].clone());
                (w, vec![w])
            }
            (_, Some(sub)) => {
                let v = tape.leaf(layer.v_fixed.clone());
                let p = tape.leaf(sub.params.clone());
                let r = rotation_node(&mut tape, &sub.spec, p)?;
                let v_sel = tape.gather_rows(v, sub.dims.clone())?;
                let rotated = tape.matmul(r, v_sel)?;
                let stacked = if sub.comp.is_empty() {
                    rotated
                } else {
                    let v_rest = tape.gather_rows(v, sub.comp.clone())?;
                    tape.concat_rows(&[rotated, v_rest])?
                };
                let w = tape.gather_rows(stacked, sub.inv.clone())?;
                if sub.spec.method == Method::Or {
                    let pt = tape.transpose(p);
                    let gram = tape.matmul(pt, p)?;
                    let eye = tape.leaf(Matrix::identity(sub.params.cols()));
                    let diff = tape.sub(gram, eye)?;
                    penalties.push((sub.spec.or_beta, tape.frobenius_sq(diff)));
                }
                sub_nodes.push(p);
                (w, Vec::new())
            }
            (LayerMode::Opt | LayerMode::Upt, None) => {
                let v = tape.leaf(layer.v_fixed.clone());
                let p_nodes: Vec<NodeId> =
                    layer.params.iter().map(|p| tape.leaf(p.clone())).collect();
                let w = crate::ortho::apply_rotation_node(&mut tape, &layer.ortho, &p_nodes, v)?;
                if layer.ortho.method == Method::Or {
                    for &p in &p_nodes {
                        let pt = tape.transpose(p);
                        let gram = tape.matmul(pt, p)?;
                        let eye = tape.leaf(Matrix::identity(tape.value(p).cols()));
                        let diff = tape.sub(gram, eye)?;
                        penalties.push((layer.ortho.or_beta, tape.frobenius_sq(diff)));
                    }
                }
                (w, p_nodes)
            }
        };
        let bias_node = tape.leaf(Matrix::from_vec(1, layer.bias.len(), layer.bias.clone())?);
        let xb = tape.matmul(h, w_eff)?;
        let bb = tape.matmul(ones, bias_node)?;
        let mut out = tape.add(xb, bb)?;
        if l != last {
            out = match model.spec.activation {
                crate::model::Activation::Relu => tape.relu(out),
            };
        }
        h = out;
        layer_nodes.push(LayerNodes {
            params: param_nodes,
            bias: bias_node,
        });
    }
    let mut loss = match model.spec.output {
        crate::model::OutputLoss::SoftmaxCe => tape.softmax_cross_entropy(h, y)?,
        crate::model::OutputLoss::LeastSquares => {
            let n_out = model.spec.dims[model.spec.dims.len() - 1];
            let targets = tape.leaf(crate::model::one_hot(y, n_out, batch)?);
            let diff = tape.sub(h, targets)?;
            let sq = tape.frobenius_sq(diff);
            tape.scalar_mul(sq, 1.0 / batch as f64)
        }
    };
    for (beta, pen) in penalties {
        let scaled = tape.scalar_mul(pen, beta);
        loss = tape.add(loss, scaled)?;
    }
    Ok((tape, loss, layer_nodes, sub_nodes))
}

/// Effective per-layer weights mid-round: materialized weights with each
/// active subset's rotation applied to its selected rows.
fn subset_weights(model: &ModelState, subs: &[SubsetState]) -> Result<Vec<(Matrix, Vec<f64>)>> {
    let mut mats = materialize(model)?;
    for sub in subs {
        let r = sub.rotation()?;
        let v_sel = model.layers[sub.layer].v_fixed.gather_rows(&sub.dims)?;
        let rotated = r.matmul(&v_sel)?;
        mats[sub.layer].0.scatter_rows(&sub.dims, &rotated)?;
    }
    Ok(mats)
}

/// Metrics snapshot mid-round, from the subset-applied effective weights.
fn eval_subset_record(
    model: &ModelState,
    subs: &[SubsetState],
    ds: &Dataset,
    iter: usize,
    epoch: usize,
    t0: Instant,
) -> Result<MetricsRecord> {
    let mats = subset_weights(model, subs)?;
    let train_logits = forward_standard(&mats, model.spec.activation, &ds.x_train)?;
    let mut loss = data_loss(&train_logits, &ds.y_train, model.spec.output)?
        + crate::model::penalty_value(model)?;
    for sub in subs {
        if sub.spec.method == Method::Or {
            loss += sub.spec.or_beta * ortho_penalty(&sub.params);
        }
    }
    let test_logits = forward_standard(&mats, model.spec.activation, &ds.x_test)?;
    let test_err = classification_error(&test_logits, &ds.y_test);
    let energy = model
        .traced_layers()
        .into_iter()
        .map(|l| hyperspherical_energy(&mats[l].0.transpose(), ENERGY_TRACE_S, false))
        .collect::<Result<Vec<_>>>()?;
    let ortho_res = model
        .rotation_layers()
        .into_iter()
        .map(|l| match subs.iter().find(|s| s.layer == l) {
            Some(sub) => Ok(sub.rotation()?.ortho_residual()),
            None => Ok(layer_ortho_residual(&model.layers[l])?.expect("rotation layer")),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetricsRecord {
        iter,
        epoch,
        loss,
        test_err,
        energy,
        ortho_res,
        wall_ms: t0.elapsed().as_millis() as u64,
    })
}

/// Full subset-scheduled training run: `n_out` rounds of `n_in` inner
/// iterations, with the metrics cadence and divergence handling of the
/// plain loop. Scheduled layers start at their frozen directions (identity
/// placeholder parameters); all rotation learned for them lives in the
/// folds.
pub(crate) fn sopt_train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let sopt = *cfg.sopt.as_ref().expect("subset schedule present");
    if !matches!(cfg.mode, TrainMode::Opt | TrainMode::ClsOpt) {
        return Err(Error::Config {
            what: "subset training needs rotation-bearing layers (opt or cls_opt mode)".into(),
        });
    }
    let mut model_rng = RngState::new(cfg.seed).split(STREAM_MODEL);
    let mut model = init_model(&cfg.model, cfg.mode, &mut model_rng)?;
    for l in scheduled_layers(&model) {
        let layer = &mut model.layers[l];
        if layer.ortho.blocks != 1 {
            return Err(Error::Config {
                what: format!("subset training requires blocks = 1 on layer {l}"),
            });
        }
        let d = layer.d_in();
        layer.params = vec![layer.ortho.identity_params(d)];
    }
    let mut batches = BatchStream::new(
        ds.train_len(),
        cfg.batch,
        RngState::new(cfg.seed).split(STREAM_BATCH),
    )?;
    let mut subset_rng = RngState::new(cfg.seed).split(STREAM_SUBSET);
    let total = sopt.n_out * sopt.n_in;
    let t0 = Instant::now();
    let mut records = vec![eval_record(&model, ds, 0, 0, t0)?];
    let mut diverged = None;
    for round in 0..sopt.n_out {
        let base = round * sopt.n_in;
        let eval_every = cfg.eval_every;
        let recs = &mut records;
        let outcome = sopt_round_with(
            cfg,
            ds,
            &mut model,
            &mut batches,
            &mut subset_rng,
            |m, subs, k, epoch| {
                let t = base + k;
                if t % eval_every == 0 || t == total {
                    recs.push(eval_subset_record(m, subs, ds, t, epoch, t0)?);
                }
                Ok(())
            },
        )?;
        if let Some((k, bad)) = outcome.diverged {
            let t = base + k;
            records.push(diagnostic_record(
                &model,
                ds,
                t,
                batches.epochs_completed(),
                t0,
                bad,
            ));
            diverged = Some(t);
            break;
        }
    }
    let v_hash_ok = model.frozen_intact();
    Ok(TrainOutcome {
        model,
        records,
        diverged,
        v_hash_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataKind, DatasetSpec};
    use crate::model::{build_forward, ModelSpec, OrthoChoice};
    use crate::train::{records_equal_modulo_wall, train_run, OptimizerSpec, SoptSpec, SubsetSize};

    fn sopt_cfg(method: Method, p: SubsetSize, n_out: usize, n_in: usize) -> TrainConfig {
        TrainConfig {
            model: ModelSpec {
                ortho: OrthoChoice::Shared(OrthoSpec::with_method(method)),
                ..ModelSpec::with_dims(vec![32, 16, 32, 4])
            },
            mode: TrainMode::Opt,
            optimizer: OptimizerSpec {
                lr: 0.05,
                momentum: 0.9,
            },
            batch: 16,
            epochs: 1,
            weight_decay: 0.0,
            decay_targets: Default::default(),
            seed: 11,
            sopt: Some(SoptSpec { p, n_out, n_in }),
            dataset: DatasetSpec::synthetic(DataKind::Blobs, 200, 1.0),
            eval_every: 7,
        }
    }

    fn direction_energy(model: &ModelState, layer: usize) -> f64 {
        hyperspherical_energy(&model.layers[layer].v_fixed.transpose(), 1.0, false).unwrap()
    }

    #[test]
    fn subset_size_resolution() {
        assert_eq!(SubsetSize::Count(4).resolve(16).unwrap(), 4);
        assert_eq!(SubsetSize::Fraction(0.25).resolve(16).unwrap(), 4);
        assert_eq!(SubsetSize::Fraction(1.0).resolve(16).unwrap(), 16);
        assert_eq!(SubsetSize::Fraction(0.01).resolve(16).unwrap(), 1);
        assert!(SubsetSize::Count(17).resolve(16).is_err());
        assert!(SubsetSize::Count(0).resolve(16).is_err());
        assert!(SubsetSize::Fraction(1.5).resolve(16).is_err());
    }

    #[test]
    fn untrained_rounds_fold_to_bitwise_noop() {
        let one = sopt_cfg(Method::Gs, SubsetSize::Count(4), 1, 0);
        let five = sopt_cfg(Method::Gs, SubsetSize::Count(4), 5, 0);
        let ds = one.dataset.load(one.seed).unwrap();
        let a = train_run(&one, &ds).unwrap();
        let b = train_run(&five, &ds).unwrap();
        assert!(a.v_hash_ok && b.v_hash_ok);
        let wa = materialize(&a.model).unwrap();
        let wb = materialize(&b.model).unwrap();
        for ((ma, ba), (mb, bb)) in wa.iter().zip(wb.iter()) {
            assert_eq!(ma.byte_hash(), mb.byte_hash());
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn energy_preserved_after_every_fold() {
        for method in [Method::Gs, Method::Cp] {
            let cfg = sopt_cfg(method, SubsetSize::Count(4), 10, 5);
            let ds = cfg.dataset.load(cfg.seed).unwrap();
            let mut rng = RngState::new(cfg.seed).split(STREAM_MODEL);
            let mut model = init_model(&cfg.model, cfg.mode, &mut rng).unwrap();
            for l in scheduled_layers(&model) {
                let d = model.layers[l].d_in();
                model.layers[l].params = vec![model.layers[l].ortho.identity_params(d)];
            }
            let mut batches = BatchStream::new(
                ds.train_len(),
                cfg.batch,
                RngState::new(cfg.seed).split(STREAM_BATCH),
            )
            .unwrap();
            let mut subset_rng = RngState::new(cfg.seed).split(STREAM_SUBSET);
            let e0 = direction_energy(&model, 1);
            for round in 0..10 {
                let out =
                    sopt_round(&cfg, &ds, &mut model, &mut batches, &mut subset_rng).unwrap();
                assert!(out.diverged.is_none());
                let e = direction_energy(&model, 1);
                let drift = ((e - e0) / e0).abs();
                assert!(
                    drift <= 1e-9,
                    "{method:?} round {round}: relative energy drift {drift}"
                );
            }
        }
    }

    #[test]
    fn full_subset_matches_plain_identity_rotation_training() {
        // p = d a subset round is plain rotation training from identity:
        // run the same iterations through both graph builders and compare
        // the resulting models bit for bit.
        let cfg = sopt_cfg(Method::Gs, SubsetSize::Count(16), 1, 7);
        let ds = cfg.dataset.load(cfg.seed).unwrap();
        let fresh = || {
            let mut rng = RngState::new(cfg.seed).split(STREAM_MODEL);
            let mut m = init_model(&cfg.model, cfg.mode, &mut rng).unwrap();
            for l in scheduled_layers(&m) {
                let d = m.layers[l].d_in();
                m.layers[l].params = vec![m.layers[l].ortho.identity_params(d)];
            }
            m
        };
        let mut via_subset = fresh();
        let mut batches = BatchStream::new(
            ds.train_len(),
            cfg.batch,
            RngState::new(cfg.seed).split(STREAM_BATCH),
        )
        .unwrap();
        let mut subset_rng = RngState::new(cfg.seed).split(STREAM_SUBSET);
        sopt_round(&cfg, &ds, &mut via_subset, &mut batches, &mut subset_rng).unwrap();

        let mut plain = fresh();
        let mut batches2 = BatchStream::new(
            ds.train_len(),
            cfg.batch,
            RngState::new(cfg.seed).split(STREAM_BATCH),
        )
        .unwrap();
        let mut vels = Velocities::zeros_like(&plain);
        for _ in 0..7 {
            let idx = batches2.next_batch();
            let x = ds.x_train.gather_rows(&idx).unwrap();
            let y: Vec<usize> = idx.iter().map(|&i| ds.y_train[i]).collect();
            let pass = build_forward(&plain, &x, &y).unwrap();
            let mut grads = pass.tape.backward(pass.loss).unwrap();
            apply_dense_updates(
                &mut plain,
                &mut vels,
                &mut grads,
                &pass.layers,
                cfg.optimizer.lr,
                cfg.optimizer.momentum,
                0.0,
                cfg.decay_targets,
            )
            .unwrap();
        }
        // fold the plain model's trained rotation into its directions the
        // same way the subset path does, then compare everything bit for bit
        let r = rotation_matrix(&plain.layers[1].ortho, &plain.layers[1].params[0]).unwrap();
        let folded = r.matmul(&plain.layers[1].v_fixed).unwrap();
        assert_eq!(
            via_subset.layers[1].v_fixed.byte_hash(),
            folded.byte_hash(),
            "folded directions diverge from plain rotation training"
        );
        for l in [0, 2] {
            for (a, b) in via_subset.layers[l]
                .params
                .iter()
                .zip(plain.layers[l].params.iter())
            {
                assert_eq!(a.byte_hash(), b.byte_hash(), "layer {l} params");
            }
        }
        for l in 0..3 {
            assert_eq!(via_subset.layers[l].bias, plain.layers[l].bias, "layer {l} bias");
        }
    }

    #[test]
    fn records_stay_energy_flat_and_orthogonal() {
        let cfg = sopt_cfg(Method::Gs, SubsetSize::Fraction(0.25), 4, 10);
        let ds = cfg.dataset.load(cfg.seed).unwrap();
        let out = train_run(&cfg, &ds).unwrap();
        assert!(out.diverged.is_none());
        assert!(out.v_hash_ok);
        assert_eq!(out.records.first().unwrap().iter, 0);
        assert_eq!(out.records.last().unwrap().iter, 40);
        let e0 = &out.records[0].energy;
        for r in &out.records {
            assert_eq!(r.energy.len(), 2);
            assert_eq!(r.ortho_res.len(), 2);
            for (e, b) in r.energy.iter().zip(e0.iter()) {
                assert!(((e - b) / b).abs() <= 1e-6, "drift at iter {}", r.iter);
            }
            for &res in &r.ortho_res {
                assert!(res <= 1e-6, "residual {res} at iter {}", r.iter);
            }
        }
        let first = out.records.first().unwrap().loss;
        let last = out.records.last().unwrap().loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = sopt_cfg(Method::Cp, SubsetSize::Count(4), 3, 9);
        let ds = cfg.dataset.load(cfg.seed).unwrap();
        let a = train_run(&cfg, &ds).unwrap();
        let b = train_run(&cfg, &ds).unwrap();
        assert!(records_equal_modulo_wall(&a.records, &b.records));
    }

    #[test]
    fn subset_training_needs_rotation_mode() {
        let mut cfg = sopt_cfg(Method::Gs, SubsetSize::Count(4), 2, 3);
        cfg.mode = TrainMode::Standard;
        let ds = cfg.dataset.load(cfg.seed).unwrap();
        assert!(matches!(
            train_run(&cfg, &ds),
            Err(Error::Config { .. })
        ));
    }
}
