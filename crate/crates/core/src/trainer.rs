//! Full-batch training with Adam, per-group L2 and early stopping.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, DecayGroup, ParamStore, Tape};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::models::{forward, infer, predict, ForwardContext, ModelConfig, ModelState};
use crate::output::write_atomic;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    #[default]
    Accuracy,
    MicroF1,
}

/// Quantity driving early stopping and best-epoch selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Validation accuracy; ties go to lower validation loss, then the earlier epoch.
    #[default]
    Accuracy,
    /// Validation loss; ties go to the earlier epoch.
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// L2 coefficient of decay group A (embedding, prediction, wide, learnable features).
    pub l2_a: f64,
    /// L2 coefficient of decay group B (hidden layers).
    pub l2_b: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_metric: EvalMetric,
    pub monitor: Monitor,
    /// When false the final-epoch model is evaluated instead of the best one.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            l2_a: 0.01,
            l2_b: 5e-4,
            max_epochs: 1500,
            patience: 100,
            seed: 42,
            eval_metric: EvalMetric::Accuracy,
            monitor: Monitor::Accuracy,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [("l2_a", self.l2_a), ("l2_b", self.l2_b)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    fn decay(&self, group: DecayGroup) -> f64 {
        match group {
            DecayGroup::A => self.l2_a,
            DecayGroup::B => self.l2_b,
            DecayGroup::None => 0.0,
        }
    }
}

/// First and second moments, one pair per parameter in store order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| DenseMatrix::zeros(p.value().rows(), p.value().cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
/// `decay(group)` adds `2·decay·θ` to each gradient before the moment update.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    decay: impl Fn(DecayGroup) -> f64,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} moment slots for {} parameters",
                state.m.len(),
                params.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.value().shape() {
            return Err(Error::dim(
                "adam_step",
                format!("moment shape mismatch for '{}'", p.name()),
            ));
        }
        let d = decay(p.group());
        let grad = p.grad().clone();
        let theta = p.value_mut();
        for (((x, g), mi), vi) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g + 2.0 * d * *x;
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite("adam_step"));
        }
    }
    Ok(())
}

/// Metric of `logits` against `labels` on the `mask` rows.
pub fn evaluate(
    logits: &DenseMatrix,
    labels: &[usize],
    mask: &[usize],
    metric: EvalMetric,
) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Parameter("evaluation mask is empty".into()));
    }
    let (pred, _) = predict(logits);
    let mut correct = 0usize;
    for &i in mask {
        if i >= pred.len() {
            return Err(Error::Index {
                index: i,
                bound: pred.len(),
                context: "evaluation mask".into(),
            });
        }
        correct += usize::from(pred[i] == labels[i]);
    }
    let total = mask.len();
    Ok(match metric {
        EvalMetric::Accuracy => correct as f64 / total as f64,
        EvalMetric::MicroF1 => {
            // Pooled over classes: each wrong prediction is one FP and one FN.
            let tp = correct as f64;
            let wrong = (total - correct) as f64;
            let denom = 2.0 * tp + 2.0 * wrong;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        }
    })
}

/// Mean cross-entropy of `logits` on the `mask` rows.
pub fn masked_loss(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Parameter("loss mask is empty".into()));
    }
    let mut total = 0.0;
    for &i in mask {
        let row = logits.row(i);
        total += log_sum_exp(row) - row[labels[i]];
    }
    Ok(total / mask.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Data loss of the training-mode pass that produced the gradient.
    pub train_loss: f64,
    /// Error of the same training-mode pass.
    pub train_err: f64,
    pub val_loss: f64,
    pub val_err: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch of the selected model.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub test_metric: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub seed: u64,
    pub wall_time: Duration,
    /// Model evaluated for the test metrics.
    pub state: ModelState,
    /// Inference-mode logits of `state`.
    pub logits: DenseMatrix,
}

impl TrainResult {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

struct Best {
    epoch: usize,
    acc: f64,
    loss: f64,
    state: Option<ModelState>,
}

impl Best {
    /// Whether `(acc, loss)` replaces the current best.
    fn beaten_by(&self, monitor: Monitor, acc: f64, loss: f64) -> bool {
        if self.epoch == 0 {
            return true;
        }
        match monitor {
            Monitor::Accuracy => acc > self.acc || (acc == self.acc && loss < self.loss),
            Monitor::Loss => loss < self.loss,
        }
    }

    /// Whether the patience counter resets.
    fn improves(&self, monitor: Monitor, acc: f64, loss: f64) -> bool {
        match monitor {
            Monitor::Accuracy => self.epoch == 0 || acc > self.acc,
            Monitor::Loss => self.epoch == 0 || loss < self.loss,
        }
    }
}

/// Trains `model` on `split` from a fresh seeded initialisation.
pub fn train(
    graph: &Graph,
    split: &Split,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainResult> {
    train_observed(graph, split, model, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    graph: &Graph,
    split: &Split,
    model: &ModelConfig,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainResult> {
    config.validate()?;
    model.validate()?;
    split.validate(graph.num_nodes())?;
    for (part, idx) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        if idx.is_empty() {
            return Err(Error::Config(format!("split has an empty {part} set")));
        }
    }
    let started = Instant::now();
    let labels = graph.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ModelState::init(graph, model, &mut rng)?;
    let mut adam = AdamState::new(&state.params);
    let mut records = Vec::new();
    let mut best = Best {
        epoch: 0,
        acc: f64::NEG_INFINITY,
        loss: f64::INFINITY,
        state: None,
    };
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let mut tape = Tape::new();
        let ctx = ForwardContext::train(graph, &split.train);
        let z = forward(&mut tape, &ctx, &mut state, model, &mut rng)?;
        let loss = tape.cross_entropy(z, labels, &split.train)?;
        let train_loss = tape.value(loss).get(0, 0);
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss is {train_loss} at epoch {epoch}"
            )));
        }
        let train_err = 1.0 - evaluate(tape.value(z), labels, &split.train, EvalMetric::Accuracy)?;
        tape.backward(loss)?.write_to(&mut state.params)?;
        drop(tape);
        adam_step(&mut state.params, &mut adam, config.lr, |g| config.decay(g))?;

        let logits = infer(graph, &mut state, model)?;
        let val_loss = masked_loss(&logits, labels, &split.val)?;
        let val_acc = evaluate(&logits, labels, &split.val, EvalMetric::Accuracy)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_err,
            val_loss,
            val_err: 1.0 - val_acc,
        };
        observe(&record);
        records.push(record);

        if best.improves(config.monitor, val_acc, val_loss) {
            stale = 0;
        } else {
            stale += 1;
        }
        if best.beaten_by(config.monitor, val_acc, val_loss) {
            best.epoch = epoch;
            best.acc = val_acc;
            best.loss = val_loss;
            if config.restore_best {
                best.state = Some(state.clone());
            }
        }
        if stale >= config.patience {
            break;
        }
    }

    if let Some(saved) = best.state.take() {
        state = saved;
    }
    let logits = infer(graph, &mut state, model)?;
    Ok(TrainResult {
        best_epoch: best.epoch,
        best_val_acc: best.acc,
        best_val_loss: best.loss,
        test_metric: evaluate(&logits, labels, &split.test, config.eval_metric)?,
        test_acc: evaluate(&logits, labels, &split.test, EvalMetric::Accuracy)?,
        test_loss: masked_loss(&logits, labels, &split.test)?,
        seed: config.seed,
        wall_time: started.elapsed(),
        records,
        state,
        logits,
    })
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_err,val_loss,val_err";

pub fn epoch_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_err, r.val_loss, r.val_err
        )
        .unwrap();
    }
    out
}

/// Inverse of [`epoch_csv`].
pub fn parse_epoch_csv(text: &str, path: &Path) -> Result<Vec<EpochRecord>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EPOCH_CSV_HEADER => {}
        _ => {
            return Err(parse_err(
                1,
                format!("expected header '{EPOCH_CSV_HEADER}'"),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(
                i + 1,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        let num = |k: usize| {
            f[k].trim()
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, format!("invalid number '{}'", f[k])))
        };
        out.push(EpochRecord {
            epoch: f[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid epoch '{}'", f[0])))?,
            train_loss: num(1)?,
            train_err: num(2)?,
            val_loss: num(3)?,
            val_err: num(4)?,
        });
    }
    Ok(out)
}

/// `key: value` run summary. Wall time is left out so identical runs produce
/// identical summaries.
pub fn summary_text(
    result: &TrainResult,
    model: &ModelConfig,
    config: &TrainConfig,
    dataset: &str,
) -> String {
    let metric = match config.eval_metric {
        EvalMetric::Accuracy => "accuracy",
        EvalMetric::MicroF1 => "micro_f1",
    };
    let mut s = String::new();
    for (k, v) in [
        ("dataset", dataset.to_string()),
        ("arch", model.arch.to_string()),
        ("layers", model.layers.to_string()),
        ("seed", result.seed.to_string()),
        ("epochs_run", result.epochs_run().to_string()),
        ("best_epoch", result.best_epoch.to_string()),
        ("best_val_accuracy", result.best_val_acc.to_string()),
        ("best_val_loss", result.best_val_loss.to_string()),
        ("test_metric", metric.to_string()),
        ("test_value", result.test_metric.to_string()),
        ("test_accuracy", result.test_acc.to_string()),
        ("test_loss", result.test_loss.to_string()),
    ] {
        writeln!(s, "{k}: {v}").unwrap();
    }
    s
}

/// Writes `epochs.csv` and `summary.txt` under `dir`, each atomically.
pub fn write_run_artifacts(
    dir: &Path,
    result: &TrainResult,
    model: &ModelConfig,
    config: &TrainConfig,
    dataset: &str,
) -> Result<()> {
    write_atomic(
        &dir.join("epochs.csv"),
        epoch_csv(&result.records).as_bytes(),
    )?;
    write_atomic(
        &dir.join("summary.txt"),
        summary_text(result, model, config, dataset).as_bytes(),
    )
}
