//! Model assembly: multilayer perceptrons whose layers carry their weights
//! either directly (`standard`) or as a learned rotation of frozen random
//! directions.
//!
//! A reparameterized layer stores frozen neuron directions `V` (one neuron
//! per column of the `d_in × d_out` matrix, immutable after initialization
//! and hash-verified), plus trainable rotation parameters interpreted by the
//! layer's [`OrthoSpec`]. The effective weight is `W_eff = R·V`, so the
//! neurons only ever rotate rigidly and their pairwise hyperspherical energy
//! stays pinned at its initial value. `standard` layers train `W` directly;
//! `upt` layers train an unconstrained mixing matrix times frozen `V` (the
//! ablation that shows the orthogonality constraint, not the
//! over-parameterization, preserves energy).
//!
//! The forward pass can be built two ways: onto a [`Tape`] for training
//! (rotation nodes differentiate through the chosen orthogonalization), or
//! as a plain evaluation over materialized effective weights — the two agree
//! to float precision, which is the inference-equivalence guarantee: a
//! trained model exports ordinary dense weights with zero runtime overhead.

use crate::autodiff::{NodeId, Tape};
use crate::energy::{hyperspherical_energy, normalize_neurons, refine_mhe};
use crate::matrix::Matrix;
use crate::ortho::{
    apply_rotation_node, block_apply, block_dim, block_param_count, Method, OrthoSpec,
};
use crate::rng::RngState;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Exponent used for all per-layer energy traces and init-time refinement.
pub const ENERGY_TRACE_S: f64 = 1.0;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, x)` elementwise.
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

/// Output-layer loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLoss {
    /// Mean softmax cross-entropy against integer labels (the default).
    SoftmaxCe,
    /// Mean squared error against one-hot targets.
    LeastSquares,
}

impl Default for OutputLoss {
    fn default() -> Self {
        OutputLoss::SoftmaxCe
    }
}

/// Weight / direction initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Zero-mean Gaussian with variance `2 / fan_in`.
    He,
    /// Zero-mean Gaussian with variance `2 / (fan_in + fan_out)`.
    Xavier,
    /// Gaussian with explicit mean and standard deviation. A positive mean
    /// raises the initial hyperspherical energy (the high-energy ablation).
    Normal { mean: f64, std: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::He
    }
}

/// Optional treatment of freshly drawn neuron directions, applied before
/// they are frozen: energy refinement first, normalization second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineSpec {
    /// Keep the raw Gaussian draw.
    None,
    /// Projected-gradient descent on the neurons' hyperspherical energy.
    Mhe { steps: usize, lr: f64 },
    /// Rescale every neuron to unit norm.
    Normalize,
    /// Energy refinement followed by normalization.
    Both { steps: usize, lr: f64 },
}

impl Default for RefineSpec {
    fn default() -> Self {
        RefineSpec::None
    }
}

/// Orthogonalization settings for the model: one spec shared by every
/// rotation-bearing layer, or an explicit per-layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrthoChoice {
    /// One spec applied to every layer.
    Shared(OrthoSpec),
    /// One spec per weight layer (length must equal the layer count).
    PerLayer(Vec<OrthoSpec>),
}

impl Default for OrthoChoice {
    fn default() -> Self {
        OrthoChoice::Shared(OrthoSpec::default())
    }
}

/// Architecture and initialization description of an MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Layer widths, input first: `[d_in, h_1, …, n_out]`.
    pub dims: Vec<usize>,
    /// Orthogonalization settings per rotation-bearing layer.
    #[serde(default)]
    pub ortho: OrthoChoice,
    /// Hidden activation.
    #[serde(default)]
    pub activation: Activation,
    /// Output loss.
    #[serde(default)]
    pub output: OutputLoss,
    /// Weight / direction initialization.
    #[serde(default)]
    pub init: InitScheme,
    /// Direction refinement applied before freezing.
    #[serde(default)]
    pub refine: RefineSpec,
}

impl ModelSpec {
    /// Plain spec with the given widths and defaults everywhere else.
    pub fn with_dims(dims: Vec<usize>) -> Self {
        ModelSpec {
            dims,
            ortho: OrthoChoice::default(),
            activation: Activation::default(),
            output: OutputLoss::default(),
            init: InitScheme::default(),
            refine: RefineSpec::default(),
        }
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    /// Orthogonalization spec for layer `l`.
    pub fn layer_ortho(&self, l: usize) -> OrthoSpec {
        match &self.ortho {
            OrthoChoice::Shared(s) => s.clone(),
            OrthoChoice::PerLayer(v) => v[l].clone(),
        }
    }

    /// Validates widths and per-layer spec counts.
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Config {
                what: format!("need at least input and output widths, got {:?}", self.dims),
            });
        }
        if let Some(&zero) = self.dims.iter().find(|&&d| d == 0) {
            return Err(Error::Config {
                what: format!("layer width must be positive, got {zero}"),
            });
        }
        if let OrthoChoice::PerLayer(v) = &self.ortho {
            if v.len() != self.num_layers() {
                return Err(Error::Config {
                    what: format!(
                        "{} per-layer ortho specs for {} layers",
                        v.len(),
                        self.num_layers()
                    ),
                });
            }
        }
        for l in 0..self.num_layers() {
            self.layer_ortho(l).validate()?;
        }
        if let InitScheme::Normal { std, .. } = self.init {
            if !(std.is_finite() && std > 0.0) {
                return Err(Error::Config {
                    what: format!("init std must be positive, got {std}"),
                });
            }
        }
        if let RefineSpec::Mhe { steps, .. } | RefineSpec::Both { steps, .. } = self.refine {
            if steps == 0 {
                return Err(Error::Config {
                    what: "refine steps must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// How the whole model wires its layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every layer trains its weight matrix directly (the baseline).
    Standard,
    /// Hidden layers are rotations of frozen directions; output is standard.
    Opt,
    /// Hidden layers standard; the classifier layer gets frozen random
    /// directions and a learned rotation.
    ClsOpt,
    /// Hidden layers multiply frozen directions by an unconstrained
    /// trainable matrix (the no-orthogonality ablation); output standard.
    Upt,
}

/// How one layer carries its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    /// Trainable dense `W`.
    Standard,
    /// Frozen directions times a constrained rotation.
    Opt,
    /// Frozen directions times an unconstrained matrix.
    Upt,
}

/// One weight layer's state.
#[derive(Debug, Clone)]
pub struct LayerState {
    /// How this layer carries its weights.
    pub mode: LayerMode,
    /// Rotation settings (meaningful for `Opt`/`Upt`).
    pub ortho: OrthoSpec,
    /// Frozen neuron directions, `d_in × d_out`, one neuron per column.
    /// Empty (0×0) for `Standard` layers.
    pub v_fixed: Matrix,
    /// Byte hash of `v_fixed` taken when it was frozen (0 for `Standard`).
    pub v_hash: u64,
    /// Trainable matrices: `Standard` → `[W]`; `Opt`/`Upt` → one rotation
    /// parameter block, or one per diagonal block when unshared.
    pub params: Vec<Matrix>,
    /// Trainable bias, one entry per output neuron.
    pub bias: Vec<f64>,
}

impl LayerState {
    /// Input width.
    pub fn d_in(&self) -> usize {
        match self.mode {
            LayerMode::Standard => self.params[0].rows(),
            _ => self.v_fixed.rows(),
        }
    }

    /// Output width (neuron count).
    pub fn d_out(&self) -> usize {
        match self.mode {
            LayerMode::Standard => self.params[0].cols(),
            _ => self.v_fixed.cols(),
        }
    }

    /// Re-hashes the frozen directions and compares with the init-time hash.
    pub fn frozen_intact(&self) -> bool {
        self.mode == LayerMode::Standard || self.v_fixed.byte_hash() == self.v_hash
    }
}

/// A fully assembled model.
#[derive(Debug, Clone)]
pub struct ModelState {
    /// The spec this model was built from.
    pub spec: ModelSpec,
    /// Layer wiring.
    pub mode: TrainMode,
    /// Weight layers, input side first.
    pub layers: Vec<LayerState>,
    /// Per-traced-layer energy recorded right after initialization.
    pub initial_energy: Vec<f64>,
}

impl ModelState {
    /// Indices of layers whose neuron energy is traced: the rotation-bearing
    /// layers for `opt`/`cls_opt`/`upt`, and the same (hidden) set for the
    /// `standard` baseline so its trace is comparable.
    pub fn traced_layers(&self) -> Vec<usize> {
        let last = self.layers.len() - 1;
        match self.mode {
            TrainMode::ClsOpt => vec![last],
            _ => (0..last).collect(),
        }
    }

    /// Indices of layers that carry a rotation (empty for the baseline).
    pub fn rotation_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.layers[l].mode != LayerMode::Standard)
            .collect()
    }

    /// True when every frozen direction matrix still hashes to its
    /// init-time value.
    pub fn frozen_intact(&self) -> bool {
        self.layers.iter().all(LayerState::frozen_intact)
    }
}

/// Standard deviation for the init scheme at the given fan-in/out.
fn init_std(init: InitScheme, fan_in: usize, fan_out: usize) -> (f64, f64) {
    match init {
        InitScheme::He => (0.0, (2.0 / fan_in as f64).sqrt()),
        InitScheme::Xavier => (0.0, (2.0 / (fan_in + fan_out) as f64).sqrt()),
        InitScheme::Normal { mean, std } => (mean, std),
    }
}

/// Applies the refine pipeline to a direction matrix (neurons as columns):
/// energy refinement first, normalization second.
fn refine_directions(w: &Matrix, refine: RefineSpec) -> Result<Matrix> {
    let rows_are_neurons = w.transpose();
    let refined = match refine {
        RefineSpec::None => return Ok(w.clone()),
        RefineSpec::Normalize => normalize_neurons(&rows_are_neurons)?,
        RefineSpec::Mhe { steps, lr } => {
            refine_mhe(&rows_are_neurons, ENERGY_TRACE_S, false, steps, lr)?.v
        }
        RefineSpec::Both { steps, lr } => {
            let out = refine_mhe(&rows_are_neurons, ENERGY_TRACE_S, false, steps, lr)?;
            normalize_neurons(&out.v)?
        }
    };
    Ok(refined.transpose())
}

/// Number of rotation parameter matrices a spec needs for one layer.
fn param_block_count(spec: &OrthoSpec) -> usize {
    if spec.blocks == 1 || spec.block_shared {
        1
    } else {
        spec.blocks
    }
}

/// Builds a model: draws each layer's direction/weight matrix per the init
/// scheme, applies the refine pipeline on traced layers, freezes directions
/// (hash recorded), initializes rotation parameters per the layer's method,
/// zeroes biases, and records the initial per-layer energy trace.
pub fn init_model(spec: &ModelSpec, mode: TrainMode, rng: &mut RngState) -> Result<ModelState> {
    spec.validate()?;
    let num_layers = spec.num_layers();
    let last = num_layers - 1;
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let (d_in, d_out) = (spec.dims[l], spec.dims[l + 1]);
        let layer_mode = match mode {
            TrainMode::Standard => LayerMode::Standard,
            TrainMode::Opt => {
                if l == last {
                    LayerMode::Standard
                } else {
                    LayerMode::Opt
                }
            }
            TrainMode::ClsOpt => {
                if l == last {
                    LayerMode::Opt
                } else {
                    LayerMode::Standard
                }
            }
            TrainMode::Upt => {
                if l == last {
                    LayerMode::Standard
                } else {
                    LayerMode::Upt
                }
            }
        };
        let mut ortho = spec.layer_ortho(l);
        if layer_mode == LayerMode::Upt {
            ortho.method = Method::Upt;
        }
        let (mean, std) = init_std(spec.init, d_in, d_out);
        let mut base = rng.gaussian_matrix(d_in, d_out, mean, std);
        let traced = match mode {
            TrainMode::ClsOpt => l == last,
            _ => l != last,
        };
        if traced {
            base = refine_directions(&base, spec.refine)?;
        }
        let layer = match layer_mode {
            LayerMode::Standard => LayerState {
                mode: layer_mode,
                ortho,
                v_fixed: Matrix::zeros(0, 0),
                v_hash: 0,
                params: vec![base],
                bias: vec![0.0; d_out],
            },
            LayerMode::Opt | LayerMode::Upt => {
                let bd = block_dim(d_in, ortho.blocks)?;
                let params: Vec<Matrix> = (0..param_block_count(&ortho))
                    .map(|_| ortho.init_params(bd, rng))
                    .collect();
                let v_hash = base.byte_hash();
                LayerState {
                    mode: layer_mode,
                    ortho,
                    v_fixed: base,
                    v_hash,
                    params,
                    bias: vec![0.0; d_out],
                }
            }
        };
        layers.push(layer);
    }
    let mut model = ModelState {
        spec: spec.clone(),
        mode,
        layers,
        initial_energy: Vec::new(),
    };
    model.initial_energy = layer_energies(&model)?;
    Ok(model)
}

/// Rotation matrix for one parameter block, computed exactly as the tape
/// forward computes it (the truncated polar unroll keeps its fixed iteration
/// count, so materialized weights replay the training-time rotation).
pub fn rotation_matrix(spec: &OrthoSpec, params: &Matrix) -> Result<Matrix> {
    match spec.method {
        Method::Ls => {
            let (states, _) = crate::ortho::newton_schulz_states(params, spec.ls_iters)?;
            Ok(states.last().expect("at least one state").clone())
        }
        _ => crate::ortho::rotation_from_params(spec, params),
    }
}

/// Effective dense weight of one layer: `W` itself for standard layers,
/// `R·V` (block-diagonally applied) for rotation-bearing layers.
pub fn materialize_layer(layer: &LayerState) -> Result<Matrix> {
    match layer.mode {
        LayerMode::Standard => Ok(layer.params[0].clone()),
        LayerMode::Opt | LayerMode::Upt => {
            let rs: Vec<Matrix> = layer
                .params
                .iter()
                .map(|p| rotation_matrix(&layer.ortho, p))
                .collect::<Result<_>>()?;
            block_apply(&rs, layer.ortho.blocks, &layer.v_fixed)
        }
    }
}

/// Materializes every layer into `(W_eff, bias)` pairs for plain inference.
pub fn materialize(model: &ModelState) -> Result<Vec<(Matrix, Vec<f64>)>> {
    model
        .layers
        .iter()
        .map(|l| Ok((materialize_layer(l)?, l.bias.clone())))
        .collect()
}

/// Frobenius orthogonality residual of a layer's rotation: block residuals
/// combined as `sqrt(Σ‖R_bᵀR_b − I‖²)` (equal to the dense block-diagonal
/// residual). `None` for standard layers.
pub fn layer_ortho_residual(layer: &LayerState) -> Result<Option<f64>> {
    if layer.mode == LayerMode::Standard {
        return Ok(None);
    }
    let mut acc = 0.0;
    for b in 0..layer.ortho.blocks {
        let p = if layer.params.len() == 1 {
            &layer.params[0]
        } else {
            &layer.params[b]
        };
        let r = rotation_matrix(&layer.ortho, p)?;
        let res = r.ortho_residual();
        acc += res * res;
        if layer.params.len() == 1 {
            // shared or dense: every block has the same residual
            acc = res * res * layer.ortho.blocks as f64;
            break;
        }
    }
    Ok(Some(acc.sqrt()))
}

/// Hyperspherical energy (at [`ENERGY_TRACE_S`]) of each traced layer's
/// materialized neurons.
pub fn layer_energies(model: &ModelState) -> Result<Vec<f64>> {
    model
        .traced_layers()
        .into_iter()
        .map(|l| {
            let w = materialize_layer(&model.layers[l])?;
            hyperspherical_energy(&w.transpose(), ENERGY_TRACE_S, false)
        })
        .collect()
}

/// Orthogonality residuals of every rotation-bearing layer, in layer order.
pub fn layer_residuals(model: &ModelState) -> Result<Vec<f64>> {
    model
        .rotation_layers()
        .into_iter()
        .map(|l| Ok(layer_ortho_residual(&model.layers[l])?.expect("rotation layer")))
        .collect()
}

/// Tape handles for one layer's trainable leaves.
#[derive(Debug, Clone)]
pub struct LayerNodes {
    /// One node per entry of `LayerState::params`.
    pub params: Vec<NodeId>,
    /// Bias row node (`1 × d_out`).
    pub bias: NodeId,
}

/// A training-ready forward graph.
pub struct ForwardPass {
    /// The tape holding the whole computation.
    pub tape: Tape,
    /// Batch logits node.
    pub logits: NodeId,
    /// Total optimized loss: data term plus any soft-orthogonality
    /// penalties.
    pub loss: NodeId,
    /// Per-layer trainable leaf handles, in layer order.
    pub layers: Vec<LayerNodes>,
}

impl ForwardPass {
    /// Value of the optimized loss.
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).get(0, 0)
    }
}

/// Builds the differentiable forward graph for one batch.
///
/// Layer recipe: rotation-bearing layers push their parameter leaves, apply
/// the method's differentiable orthogonalization to the frozen direction
/// leaf (`cp` uses the fused solve that never materializes the rotation),
/// then `h·W_eff + 1·b`; standard layers use their weight leaf directly.
/// Hidden layers get the activation; the output layer feeds the loss.
/// Layers with the soft-orthogonality method add `β·‖RᵀR−I‖²` per parameter
/// block to the returned loss.
pub fn build_forward(model: &ModelState, x: &Matrix, y: &[usize]) -> Result<ForwardPass> {
    if x.cols() != model.spec.dims[0] {
        return Err(Error::Shape {
            op: "model_forward",
            lhs: (x.rows(), x.cols()),
            rhs: (x.rows(), model.spec.dims[0]),
        });
    }
    let mut tape = Tape::new();
    let batch = x.rows();
    let ones = tape.leaf(Matrix::from_vec(batch, 1, vec![1.0; batch])?);
    let mut h = tape.leaf(x.clone());
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut penalties: Vec<(f64, NodeId)> = Vec::new();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let param_nodes: Vec<NodeId> = layer
            .params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect();
        let w_eff = match layer.mode {
            LayerMode::Standard => param_nodes[0],
            LayerMode::Opt | LayerMode::Upt => {
                let v = tape.leaf(layer.v_fixed.clone());
                apply_rotation_node(&mut tape, &layer.ortho, &param_nodes, v)?
            }
        };
        if layer.mode != LayerMode::Standard && layer.ortho.method == Method::Or {
            for &p in &param_nodes {
                let pt = tape.transpose(p);
                let gram = tape.matmul(pt, p)?;
                let eye = tape.leaf(Matrix::identity(tape.value(p).cols()));
                let diff = tape.sub(gram, eye)?;
                let pen = tape.frobenius_sq(diff);
                penalties.push((layer.ortho.or_beta, pen));
            }
        }
        let bias_node = tape.leaf(Matrix::from_vec(1, layer.bias.len(), layer.bias.clone())?);
        let xb = tape.matmul(h, w_eff)?;
        let bb = tape.matmul(ones, bias_node)?;
        let mut out = tape.add(xb, bb)?;
        if l != last {
            out = match model.spec.activation {
                Activation::Relu => tape.relu(out),
            };
        }
        h = out;
        layers.push(LayerNodes {
            params: param_nodes,
            bias: bias_node,
        });
    }
    let logits = h;
    let mut loss = match model.spec.output {
        OutputLoss::SoftmaxCe => tape.softmax_cross_entropy(logits, y)?,
        OutputLoss::LeastSquares => {
            let n_out = model.spec.dims[model.spec.dims.len() - 1];
            let targets = tape.leaf(one_hot(y, n_out, batch)?);
            let diff = tape.sub(logits, targets)?;
            let sq = tape.frobenius_sq(diff);
            tape.scalar_mul(sq, 1.0 / batch as f64)
        }
    };
    for (beta, pen) in penalties {
        let scaled = tape.scalar_mul(pen, beta);
        loss = tape.add(loss, scaled)?;
    }
    Ok(ForwardPass {
        tape,
        logits,
        loss,
        layers,
    })
}

/// One-hot matrix (`batch × classes`) from integer labels.
pub fn one_hot(y: &[usize], classes: usize, batch: usize) -> Result<Matrix> {
    if y.len() != batch {
        return Err(Error::Contract {
            what: format!("{} labels for batch of {batch}", y.len()),
        });
    }
    let mut t = Matrix::zeros(batch, classes);
    for (i, &label) in y.iter().enumerate() {
        if label >= classes {
            return Err(Error::Contract {
                what: format!("label {label} out of range for {classes} classes"),
            });
        }
        t.set(i, label, 1.0);
    }
    Ok(t)
}

/// Plain (tape-free) forward over materialized weights.
pub fn forward_standard(
    weights: &[(Matrix, Vec<f64>)],
    activation: Activation,
    x: &Matrix,
) -> Result<Matrix> {
    let mut h = x.clone();
    let last = weights.len() - 1;
    for (l, (w, b)) in weights.iter().enumerate() {
        let mut out = h.matmul(w)?;
        for i in 0..out.rows() {
            for (v, bj) in out.row_mut(i).iter_mut().zip(b.iter()) {
                *v += bj;
            }
        }
        if l != last {
            match activation {
                Activation::Relu => {
                    for v in out.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        h = out;
    }
    Ok(h)
}

/// Mean data loss of logits against labels under the chosen output loss.
pub fn data_loss(logits: &Matrix, y: &[usize], output: OutputLoss) -> Result<f64> {
    let (b, c) = logits.shape();
    if y.len() != b {
        return Err(Error::Contract {
            what: format!("{} labels for {b} logit rows", y.len()),
        });
    }
    match output {
        OutputLoss::SoftmaxCe => {
            let mut total = 0.0;
            for i in 0..b {
                let row = logits.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                total += z.ln() - (row[y[i]] - m);
            }
            Ok(total / b as f64)
        }
        OutputLoss::LeastSquares => {
            let targets = one_hot(y, c, b)?;
            Ok(logits.sub(&targets)?.frobenius_norm_sq() / b as f64)
        }
    }
}

/// Fraction of rows whose argmax disagrees with the label.
pub fn classification_error(logits: &Matrix, y: &[usize]) -> f64 {
    let mut wrong = 0usize;
    for (i, &label) in y.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best != label {
            wrong += 1;
        }
    }
    wrong as f64 / y.len().max(1) as f64
}

/// Sum of the soft-orthogonality penalties at the current parameters
/// (zero unless some layer uses the penalty method).
pub fn penalty_value(model: &ModelState) -> Result<f64> {
    let mut total = 0.0;
    for layer in &model.layers {
        if layer.mode != LayerMode::Standard && layer.ortho.method == Method::Or {
            for p in &layer.params {
                total += layer.ortho.or_beta * crate::ortho::ortho_penalty(p);
            }
        }
    }
    Ok(total)
}

/// Parameter accounting for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    /// Entries in the materialized network: `Σ d_in·d_out + d_out`.
    pub materialized: usize,
    /// Trainable entries: dense weights, rotation parameters, biases.
    pub trainable: usize,
    /// Rotation-parameter entries alone.
    pub rotation: usize,
}

/// Counts materialized, trainable, and rotation parameters.
pub fn parameter_counts(model: &ModelState) -> Result<ParamCounts> {
    let mut materialized = 0usize;
    let mut trainable = 0usize;
    let mut rotation = 0usize;
    for layer in &model.layers {
        let (d_in, d_out) = (layer.d_in(), layer.d_out());
        materialized += d_in * d_out + d_out;
        trainable += layer.bias.len();
        match layer.mode {
            LayerMode::Standard => trainable += d_in * d_out,
            LayerMode::Opt | LayerMode::Upt => {
                let count =
                    block_param_count(d_in, layer.ortho.blocks, layer.ortho.block_shared)?;
                trainable += count;
                rotation += count;
            }
        }
    }
    Ok(ParamCounts {
        materialized,
        trainable,
        rotation,
    })
}
