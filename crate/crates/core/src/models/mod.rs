//! Wide component, deep component, their joint model and the baselines.

mod closed_form;
mod config;

use std::sync::Arc;

use rand::Rng;

pub use closed_form::{closed_form_from_state, closed_form_propagation};
pub use config::{Arch, BnStatistics, DropoutPlacement, DropoutPositions, ModelConfig, Techniques};

use crate::autodiff::{BatchNormStats, DecayGroup, ParamStore, StatRows, Tape, Var};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_normalized_operator, drop_edge, Graph, SparseOperator};

pub const WIDE_WEIGHT: &str = "wide.weight";
pub const WIDE_BN_SCALE: &str = "wide.bn.scale";
pub const WIDE_BN_SHIFT: &str = "wide.bn.shift";
pub const DEEP_EMBED: &str = "deep.embed";
pub const DEEP_PREDICT: &str = "deep.predict";
pub const INPUT_FEATURES: &str = "input.features";

pub fn deep_layer_name(l: usize) -> String {
    format!("deep.layer.{l}")
}

pub fn gcn_layer_name(l: usize) -> String {
    format!("gcn.layer.{l}")
}

pub const MLP_HIDDEN: &str = "mlp.hidden";
pub const MLP_OUTPUT: &str = "mlp.output";

/// Trainable parameters plus non-trainable batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub params: ParamStore,
    pub wide_bn: Option<BatchNormStats>,
}

/// Glorot-uniform `rows × cols` matrix.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
}

impl ModelState {
    /// Initialises every parameter the configuration needs, in a fixed order:
    /// learnable input features, deep stack, then wide component.
    pub fn init<R: Rng + ?Sized>(graph: &Graph, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = graph.num_features();
        let c = graph.num_classes();
        let h = config.hidden;
        let mut params = ParamStore::new();
        if graph.learnable_features() {
            params.add(
                INPUT_FEATURES,
                (*graph.input_features()).clone(),
                DecayGroup::A,
            )?;
        }
        match config.arch {
            Arch::Gcniii | Arch::Gcnii => {
                params.add(DEEP_EMBED, glorot(d, h, rng), DecayGroup::A)?;
                if config.deep_techniques().identity_mapping {
                    for l in 1..=config.layers {
                        params.add(deep_layer_name(l), glorot(h, h, rng), DecayGroup::B)?;
                    }
                }
                params.add(DEEP_PREDICT, glorot(h, c, rng), DecayGroup::A)?;
            }
            Arch::Gcn | Arch::Resgcn | Arch::GcnV => {
                let l_max = config.layers;
                for l in 0..l_max {
                    if config.arch == Arch::GcnV && l > 0 && l + 1 < l_max {
                        continue;
                    }
                    let rows = if l == 0 { d } else { h };
                    let cols = if l + 1 == l_max { c } else { h };
                    let group = if l == 0 || l + 1 == l_max {
                        DecayGroup::A
                    } else {
                        DecayGroup::B
                    };
                    params.add(gcn_layer_name(l), glorot(rows, cols, rng), group)?;
                }
            }
            Arch::Appnp | Arch::Mlp => {
                params.add(MLP_HIDDEN, glorot(d, h, rng), DecayGroup::A)?;
                params.add(MLP_OUTPUT, glorot(h, c, rng), DecayGroup::A)?;
            }
            Arch::Linear | Arch::Imlinear => {}
        }
        let mut wide_bn = None;
        if config.has_wide() {
            params.add(WIDE_WEIGHT, glorot(d, c, rng), DecayGroup::A)?;
            if config.wide_batchnorm {
                params.add(
                    WIDE_BN_SCALE,
                    DenseMatrix::filled(1, c, 1.0),
                    DecayGroup::None,
                )?;
                params.add(WIDE_BN_SHIFT, DenseMatrix::zeros(1, c), DecayGroup::None)?;
                wide_bn = Some(BatchNormStats::new(c));
            }
        }
        Ok(Self { params, wide_bn })
    }

    /// Every tensor by name, including running statistics.
    pub fn named_tensors(&self) -> Vec<(String, DenseMatrix)> {
        let mut out: Vec<(String, DenseMatrix)> = self
            .params
            .iter()
            .map(|p| (p.name().to_string(), p.value().clone()))
            .collect();
        if let Some(bn) = &self.wide_bn {
            let c = bn.dim();
            out.push((
                "wide.bn.running_mean".into(),
                DenseMatrix::from_vec(1, c, bn.running_mean.clone()).expect("1×c"),
            ));
            out.push((
                "wide.bn.running_var".into(),
                DenseMatrix::from_vec(1, c, bn.running_var.clone()).expect("1×c"),
            ));
        }
        out
    }

    /// Overwrites tensors by name; every tensor of this state must be present.
    pub fn load_named_tensors(&mut self, tensors: &[(String, DenseMatrix)]) -> Result<()> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' missing")))
        };
        let names: Vec<String> = self.params.iter().map(|p| p.name().to_string()).collect();
        for name in names {
            let id = self.params.require(&name)?;
            let value = find(&name)?.clone();
            self.params
                .get_mut(id)
                .set_value(value)
                .map_err(|e| Error::Checkpoint(format!("tensor '{name}': {e}")))?;
        }
        if let Some(bn) = &mut self.wide_bn {
            let mean = find("wide.bn.running_mean")?;
            let var = find("wide.bn.running_var")?;
            if mean.cols() != bn.dim() || var.cols() != bn.dim() {
                return Err(Error::Checkpoint(
                    "batch-norm statistics have the wrong width".into(),
                ));
            }
            bn.running_mean = mean.data().to_vec();
            bn.running_var = var.data().to_vec();
        }
        Ok(())
    }

    /// Copies values of identically named parameters from `other`.
    pub fn share_from(&mut self, other: &ModelState) -> Result<usize> {
        let mut copied = 0;
        for p in other.params.iter() {
            if let Some(id) = self.params.id(p.name()) {
                self.params.get_mut(id).set_value(p.value().clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Everything a forward pass needs besides the tape and state.
pub struct ForwardContext<'a> {
    pub graph: &'a Graph,
    pub training: bool,
    /// Train rows, used when batch-norm statistics are restricted to them.
    pub train_rows: Option<&'a [usize]>,
}

impl<'a> ForwardContext<'a> {
    pub fn eval(graph: &'a Graph) -> Self {
        Self {
            graph,
            training: false,
            train_rows: None,
        }
    }

    pub fn train(graph: &'a Graph, train_rows: &'a [usize]) -> Self {
        Self {
            graph,
            training: true,
            train_rows: Some(train_rows),
        }
    }
}

fn input_var(tape: &mut Tape, ctx: &ForwardContext<'_>, state: &ModelState) -> Result<Var> {
    match state.params.id(INPUT_FEATURES) {
        Some(id) => tape.param(&state.params, id),
        None => tape.constant(ctx.graph.input_features()),
    }
}

/// Operator for one forward pass: DropEdge-resampled in training when enabled.
fn pass_operator<R: Rng + ?Sized>(
    ctx: &ForwardContext<'_>,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Arc<SparseOperator>> {
    if ctx.training && config.dropedge > 0.0 {
        let kept = drop_edge(ctx.graph.adjacency(), config.dropedge, rng)?;
        Ok(Arc::new(build_normalized_operator(&kept)?))
    } else {
        Ok(ctx.graph.normalized_operator())
    }
}

fn maybe_dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    enabled: bool,
    config: &ModelConfig,
    ctx: &ForwardContext<'_>,
    rng: &mut R,
) -> Result<Var> {
    if enabled {
        tape.dropout(x, config.dropout, ctx.training, rng)
    } else {
        Ok(x)
    }
}

/// `{ψ}(XW)`, optionally followed by one propagation with the full operator.
/// No randomness and no nonlinearity.
pub fn wide_forward(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &mut ModelState,
    config: &ModelConfig,
) -> Result<Var> {
    let x = input_var(tape, ctx, state)?;
    let w = tape.param(&state.params, state.params.require(WIDE_WEIGHT)?)?;
    let mut z = tape.matmul(x, w)?;
    if config.wide_batchnorm {
        let scale = tape.param(&state.params, state.params.require(WIDE_BN_SCALE)?)?;
        let shift = tape.param(&state.params, state.params.require(WIDE_BN_SHIFT)?)?;
        let stats = state.wide_bn.as_mut().ok_or_else(|| {
            Error::Config("wide batch norm enabled but state has no statistics".into())
        })?;
        let rows = if !ctx.training {
            None
        } else {
            match (config.bn_statistics, ctx.train_rows) {
                (BnStatistics::TrainNodes, Some(r)) => Some(StatRows::Subset(r)),
                _ => Some(StatRows::All),
            }
        };
        z = tape.batch_norm(z, scale, shift, stats, rows)?;
    }
    if config.wide_memory() {
        z = tape.propagate(ctx.graph.normalized_operator(), z)?;
    }
    Ok(z)
}

/// Embedding, `L` propagation layers and prediction layer of the deep component.
pub fn deep_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    let tech = config.deep_techniques();
    let pos = config.dropout_positions;
    let op = pass_operator(ctx, config, rng)?;
    let x = input_var(tape, ctx, state)?;
    let x = maybe_dropout(tape, x, pos.input, config, ctx, rng)?;
    let we = tape.param(&state.params, state.params.require(DEEP_EMBED)?)?;
    let h0 = tape.matmul(x, we)?;
    let h0 = tape.relu(h0)?;
    let mut h = h0;
    let before_prop = config.dropout_placement == DropoutPlacement::BeforePropagation;
    for l in 1..=config.layers {
        if before_prop {
            h = maybe_dropout(tape, h, pos.per_layer, config, ctx, rng)?;
        }
        let mut s = tape.propagate(Arc::clone(&op), h)?;
        if tech.initial_residual {
            s = tape.convex_combine(s, h0, config.alpha)?;
        }
        if !before_prop {
            s = maybe_dropout(tape, s, pos.per_layer, config, ctx, rng)?;
        }
        if tech.identity_mapping {
            let w = tape.param(&state.params, state.params.require(&deep_layer_name(l))?)?;
            s = tape.identity_map(s, w, config.beta(l))?;
        }
        h = tape.relu(s)?;
    }
    let h = maybe_dropout(tape, h, pos.pre_prediction, config, ctx, rng)?;
    let wp = tape.param(&state.params, state.params.require(DEEP_PREDICT)?)?;
    tape.matmul(h, wp)
}

/// `γ·wide + (1 − γ)·deep`; γ at 0 or 1 returns one branch untouched.
pub fn gcniii_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &mut ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    combine(tape, ctx, state, config, rng, |t, c, s, cfg, r| {
        deep_forward(t, c, s, cfg, r)
    })
}

fn combine<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &mut ModelState,
    config: &ModelConfig,
    rng: &mut R,
    deep: impl FnOnce(&mut Tape, &ForwardContext<'_>, &ModelState, &ModelConfig, &mut R) -> Result<Var>,
) -> Result<Var> {
    let gamma = config.wide_weight();
    if gamma == 0.0 {
        return deep(tape, ctx, state, config, rng);
    }
    if gamma == 1.0 {
        return wide_forward(tape, ctx, state, config);
    }
    let d = deep(tape, ctx, state, config, rng)?;
    let w = wide_forward(tape, ctx, state, config)?;
    tape.convex_combine(d, w, gamma)
}

/// `H ↦ Ĝ H W`, multiplying first when that shrinks the width.
fn graph_conv(tape: &mut Tape, op: &Arc<SparseOperator>, h: Var, w: Var) -> Result<Var> {
    let (rows, cols) = tape.value(w).shape();
    if cols < rows {
        let hw = tape.matmul(h, w)?;
        tape.propagate(Arc::clone(op), hw)
    } else {
        let gh = tape.propagate(Arc::clone(op), h)?;
        tape.matmul(gh, w)
    }
}

fn gcn_stack<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    let op = pass_operator(ctx, config, rng)?;
    let pos = config.dropout_positions;
    let l_max = config.layers;
    let mut h = input_var(tape, ctx, state)?;
    for l in 0..l_max {
        let enabled = if l == 0 { pos.input } else { pos.per_layer };
        h = maybe_dropout(tape, h, enabled, config, ctx, rng)?;
        let last = l + 1 == l_max;
        let hidden = l > 0 && !last;
        if config.arch == Arch::GcnV && hidden {
            let z = tape.propagate(Arc::clone(&op), h)?;
            h = tape.relu(z)?;
            continue;
        }
        let w = tape.param(&state.params, state.params.require(&gcn_layer_name(l))?)?;
        let z = graph_conv(tape, &op, h, w)?;
        h = if last {
            z
        } else if config.arch == Arch::Resgcn && hidden {
            let a = tape.relu(z)?;
            tape.add(a, h)?
        } else {
            tape.relu(z)?
        };
    }
    Ok(h)
}

/// Two-layer ReLU network `f_θ`.
fn mlp<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    let pos = config.dropout_positions;
    let x = input_var(tape, ctx, state)?;
    let x = maybe_dropout(tape, x, pos.input, config, ctx, rng)?;
    let w1 = tape.param(&state.params, state.params.require(MLP_HIDDEN)?)?;
    let h = tape.matmul(x, w1)?;
    let h = tape.relu(h)?;
    let h = maybe_dropout(tape, h, pos.pre_prediction, config, ctx, rng)?;
    let w2 = tape.param(&state.params, state.params.require(MLP_OUTPUT)?)?;
    tape.matmul(h, w2)
}

fn appnp<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    let op = pass_operator(ctx, config, rng)?;
    let z0 = mlp(tape, ctx, state, config, rng)?;
    let mut z = z0;
    for _ in 0..config.layers {
        let p = tape.propagate(Arc::clone(&op), z)?;
        z = tape.convex_combine(p, z0, config.alpha)?;
    }
    Ok(z)
}

/// Any non-GCNIII architecture, plus the optional wide component.
pub fn baseline_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &mut ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    combine(tape, ctx, state, config, rng, |t, c, s, cfg, r| {
        match cfg.arch {
            Arch::Gcnii | Arch::Gcniii => deep_forward(t, c, s, cfg, r),
            Arch::Gcn | Arch::Resgcn | Arch::GcnV => gcn_stack(t, c, s, cfg, r),
            Arch::Appnp => appnp(t, c, s, cfg, r),
            Arch::Mlp => mlp(t, c, s, cfg, r),
            Arch::Linear | Arch::Imlinear => {
                Err(Error::Config("wide-only model has no deep part".into()))
            }
        }
    })
}

/// Logits of the configured architecture.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ctx: &ForwardContext<'_>,
    state: &mut ModelState,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Var> {
    match config.arch {
        Arch::Gcniii => gcniii_forward(tape, ctx, state, config, rng),
        _ => baseline_forward(tape, ctx, state, config, rng),
    }
}

/// Inference-mode logits without keeping the tape.
pub fn infer(graph: &Graph, state: &mut ModelState, config: &ModelConfig) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let ctx = ForwardContext::eval(graph);
    // Inference consumes no randomness; any generator works.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let z = forward(&mut tape, &ctx, state, config, &mut rng)?;
    Ok(tape.value(z).clone())
}

/// Row-wise softmax probabilities and argmax classes (lowest index wins ties).
pub fn predict(logits: &DenseMatrix) -> (Vec<usize>, DenseMatrix) {
    let mut probs = logits.clone();
    let mut classes = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = probs.row_mut(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        classes.push(best);
        let max = row[best];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    (classes, probs)
}
