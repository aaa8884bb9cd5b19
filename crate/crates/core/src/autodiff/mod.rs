//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks it in reverse. Nodes that cannot reach a parameter are marked as not
//! requiring gradients and are skipped during the backward sweep.

mod param;

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;

pub use param::{BatchNormStats, DecayGroup, ParamId, ParamStore, Parameter, BN_EPS, BN_MOMENTUM};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::SparseOperator;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(DenseMatrix),
    Shared(Arc<DenseMatrix>),
}

impl Deref for Value {
    type Target = DenseMatrix;

    fn deref(&self) -> &DenseMatrix {
        match self {
            Value::Owned(m) => m,
            Value::Shared(m) => m,
        }
    }
}

/// Rows whose statistics drive a training-mode batch norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StatRows<'a> {
    All,
    Subset(&'a [usize]),
}

enum BnCoupling {
    /// Inference: running statistics, no dependence of the output on batch stats.
    None,
    All,
    Subset(Vec<usize>),
}

enum Op {
    Constant,
    Param(ParamId),
    Matmul(Var, Var),
    Propagate(Arc<SparseOperator>, Var),
    Convex {
        a: Var,
        b: Var,
        alpha: f64,
    },
    Add(Var, Var),
    IdentityMap {
        h: Var,
        w: Var,
        beta: f64,
    },
    Relu(Var),
    Dropout {
        x: Var,
        keep: Vec<bool>,
        scale: f64,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: DenseMatrix,
        inv_std: Vec<f64>,
        coupling: BnCoupling,
    },
    CrossEntropy {
        logits: Var,
        probs: DenseMatrix,
        labels: Vec<usize>,
        mask: Vec<usize>,
    },
}

struct Node {
    value: Value,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        value: Value,
        requires_grad: bool,
        op: Op,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, m: Arc<DenseMatrix>) -> Result<Var> {
        self.push(Value::Shared(m), false, Op::Constant, "constant")
    }

    pub fn constant_owned(&mut self, m: DenseMatrix) -> Result<Var> {
        self.push(Value::Owned(m), false, Op::Constant, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(
            Value::Shared(store.get(id).value_arc()),
            true,
            Op::Param(id),
            "parameter",
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), rg, Op::Matmul(a, b), "matmul")
    }

    /// `op · h` with a fixed sparse operator.
    pub fn propagate(&mut self, op: Arc<SparseOperator>, h: Var) -> Result<Var> {
        let out = op.spmm(self.value(h))?;
        let rg = self.rg(h);
        self.push(
            Value::Owned(out),
            rg,
            Op::Propagate(op, h),
            "graph_propagate",
        )
    }

    /// `(1 − alpha)·a + alpha·b`.
    pub fn convex_combine(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!(
                "convex weight {alpha} outside [0, 1]"
            )));
        }
        self.value(a)
            .check_same_shape(self.value(b), "convex_combine")?;
        if alpha == 0.0 {
            return Ok(a);
        }
        if alpha == 1.0 {
            return Ok(b);
        }
        let mut out = self.value(a).scale(1.0 - alpha);
        out.add_scaled(self.value(b), alpha)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Value::Owned(out),
            rg,
            Op::Convex { a, b, alpha },
            "convex_combine",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_scaled(self.value(b), 1.0)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Value::Owned(out), rg, Op::Add(a, b), "add")
    }

    /// `(1 − beta)·h + beta·h·w` for a square `w`.
    pub fn identity_map(&mut self, h: Var, w: Var, beta: f64) -> Result<Var> {
        let (wr, wc) = self.value(w).shape();
        if wr != wc {
            return Err(Error::dim(
                "identity_map_apply",
                format!("weight is {wr}x{wc}, not square"),
            ));
        }
        if self.value(h).cols() != wr {
            return Err(Error::dim(
                "identity_map_apply",
                format!(
                    "h has {} columns, weight is {wr}x{wc}",
                    self.value(h).cols()
                ),
            ));
        }
        if beta == 0.0 {
            return Ok(h);
        }
        if beta == 1.0 {
            return self.matmul(h, w);
        }
        let mut out = self.value(h).matmul(self.value(w))?.scale(beta);
        out.add_scaled(self.value(h), 1.0 - beta)?;
        let rg = self.rg(h) || self.rg(w);
        self.push(
            Value::Owned(out),
            rg,
            Op::IdentityMap { h, w, beta },
            "identity_map_apply",
        )
    }

    pub fn relu(&mut self, h: Var) -> Result<Var> {
        let out = self.value(h).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(h);
        self.push(Value::Owned(out), rg, Op::Relu(h), "relu")
    }

    /// Inverted dropout. Identity (same handle) in inference mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let src = self.value(x);
        let mut out = DenseMatrix::zeros(src.rows(), src.cols());
        let mut keep = Vec::with_capacity(src.data().len());
        for (o, &s) in out.data_mut().iter_mut().zip(src.data()) {
            let k = rng.random::<f64>() >= rate;
            keep.push(k);
            if k {
                *o = s * scale;
            }
        }
        let rg = self.rg(x);
        self.push(
            Value::Owned(out),
            rg,
            Op::Dropout { x, keep, scale },
            "dropout",
        )
    }

    /// Column-wise batch normalisation with learnable `scale`/`shift` (both 1×c).
    ///
    /// `stats_rows = Some(..)` selects training mode: batch statistics over the
    /// chosen rows normalise every row and update `stats`. `None` uses the
    /// running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        stats: &mut BatchNormStats,
        stats_rows: Option<StatRows<'_>>,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if stats.dim() != c
            || self.value(scale).shape() != (1, c)
            || self.value(shift).shape() != (1, c)
        {
            return Err(Error::dim(
                "batch_norm",
                format!("input has {c} columns, state has {}", stats.dim()),
            ));
        }
        let (mean, var, coupling) = match stats_rows {
            None => (
                stats.running_mean.clone(),
                stats.running_var.clone(),
                BnCoupling::None,
            ),
            Some(rows) => {
                let (idx, coupling): (Vec<usize>, BnCoupling) = match rows {
                    StatRows::All => ((0..n).collect(), BnCoupling::All),
                    StatRows::Subset(s) => {
                        if let Some(&bad) = s.iter().find(|&&i| i >= n) {
                            return Err(Error::Index {
                                index: bad,
                                bound: n,
                                context: "batch_norm statistic rows".into(),
                            });
                        }
                        (s.to_vec(), BnCoupling::Subset(s.to_vec()))
                    }
                };
                if idx.is_empty() {
                    return Err(Error::Parameter(
                        "batch_norm needs at least one statistic row".into(),
                    ));
                }
                let m = idx.len() as f64;
                let mut mean = vec![0.0; c];
                for &i in &idx {
                    for (a, v) in mean.iter_mut().zip(xv.row(i)) {
                        *a += v;
                    }
                }
                mean.iter_mut().for_each(|a| *a /= m);
                let mut var = vec![0.0; c];
                for &i in &idx {
                    for ((a, v), mu) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                        *a += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|a| *a /= m);
                stats.update(&mean, &var);
                (mean, var, coupling)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = DenseMatrix::zeros(n, c);
        for i in 0..n {
            let src = xv.row(i);
            for (j, o) in xhat.row_mut(i).iter_mut().enumerate() {
                *o = (src[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (self.value(scale).row(0), self.value(shift).row(0));
        let mut out = xhat.clone();
        for i in 0..n {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = g[j] * *o + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        self.push(
            Value::Owned(out),
            rg,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                coupling,
            },
            "batch_norm",
        )
    }

    /// Mean negative log-likelihood of `labels` over the `mask` rows, as a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::Parameter("cross-entropy mask is empty".into()));
        }
        let lv = self.value(logits);
        let (n, c) = lv.shape();
        if labels.len() != n {
            return Err(Error::dim(
                "log_softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        let mut probs = DenseMatrix::zeros(mask.len(), c);
        let mut total = 0.0;
        for (k, &i) in mask.iter().enumerate() {
            if i >= n {
                return Err(Error::Index {
                    index: i,
                    bound: n,
                    context: "cross-entropy mask".into(),
                });
            }
            let y = labels[i];
            if y >= c {
                return Err(Error::Index {
                    index: y,
                    bound: c,
                    context: format!("label of row {i}"),
                });
            }
            let row = lv.row(i);
            let lse = log_sum_exp(row);
            total -= row[y] - lse;
            for (p, &z) in probs.row_mut(k).iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let loss = DenseMatrix::from_vec(1, 1, vec![total / mask.len() as f64])?;
        let rg = self.rg(logits);
        self.push(
            Value::Owned(loss),
            rg,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
            "log_softmax_cross_entropy",
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::dim("backward", "loss must be a 1x1 value"));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let want = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    params.push((*id, idx));
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    if want(a) {
                        let da = g.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, da)?;
                    }
                    if want(b) {
                        let db = self.value(*a).t_matmul(&g)?;
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Propagate(op, h) => {
                    if want(h) {
                        let dh = if op.is_flagged_symmetric() {
                            op.spmm(&g)?
                        } else {
                            op.transpose().spmm(&g)?
                        };
                        accumulate(&mut grads, *h, dh)?;
                    }
                }
                Op::Convex { a, b, alpha } => {
                    if want(a) {
                        accumulate(&mut grads, *a, g.scale(1.0 - alpha))?;
                    }
                    if want(b) {
                        accumulate(&mut grads, *b, g.scale(*alpha))?;
                    }
                }
                Op::Add(a, b) => {
                    if want(a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if want(b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                }
                Op::IdentityMap { h, w, beta } => {
                    if want(h) {
                        let mut dh = g.matmul_t(self.value(*w))?.scale(*beta);
                        dh.add_scaled(&g, 1.0 - beta)?;
                        accumulate(&mut grads, *h, dh)?;
                    }
                    if want(w) {
                        let dw = self.value(*h).t_matmul(&g)?.scale(*beta);
                        accumulate(&mut grads, *w, dw)?;
                    }
                }
                Op::Relu(h) => {
                    let mut dh = g;
                    for (d, &o) in dh.data_mut().iter_mut().zip(node.value.data()) {
                        if o <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *h, dh)?;
                }
                Op::Dropout { x, keep, scale } => {
                    let mut dx = g;
                    for (d, &k) in dx.data_mut().iter_mut().zip(keep) {
                        *d = if k { *d * scale } else { 0.0 };
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    coupling,
                } => {
                    let (n, c) = xhat.shape();
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for i in 0..n {
                        for ((j, &gi), &xh) in g.row(i).iter().enumerate().zip(xhat.row(i)) {
                            sum_g[j] += gi;
                            sum_gx[j] += gi * xh;
                        }
                    }
                    if want(scale) {
                        accumulate(
                            &mut grads,
                            *scale,
                            DenseMatrix::from_vec(1, c, sum_gx.clone())?,
                        )?;
                    }
                    if want(shift) {
                        accumulate(
                            &mut grads,
                            *shift,
                            DenseMatrix::from_vec(1, c, sum_g.clone())?,
                        )?;
                    }
                    if want(x) {
                        let gamma = self.value(*scale).row(0);
                        let mut dx = DenseMatrix::zeros(n, c);
                        for i in 0..n {
                            let gi = g.row(i);
                            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                                *d = gamma[j] * inv_std[j] * gi[j];
                            }
                        }
                        let coupled: Option<Vec<usize>> = match coupling {
                            BnCoupling::None => None,
                            BnCoupling::All => Some((0..n).collect()),
                            BnCoupling::Subset(rows) => Some(rows.clone()),
                        };
                        if let Some(rows) = coupled {
                            let m = rows.len() as f64;
                            for &k in &rows {
                                let xh = xhat.row(k).to_vec();
                                for (j, d) in dx.row_mut(k).iter_mut().enumerate() {
                                    *d -=
                                        gamma[j] * inv_std[j] / m * (sum_g[j] + xh[j] * sum_gx[j]);
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx)?;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                    mask,
                } => {
                    let lv = self.value(*logits);
                    let s = g.get(0, 0) / mask.len() as f64;
                    let mut dl = DenseMatrix::zeros(lv.rows(), lv.cols());
                    for (k, &i) in mask.iter().enumerate() {
                        let row = dl.row_mut(i);
                        for (d, p) in row.iter_mut().zip(probs.row(k)) {
                            *d += s * p;
                        }
                        row[labels[i]] -= s;
                    }
                    accumulate(&mut grads, *logits, dl)?;
                }
            }
        }
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_scaled(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Numerically stable `ln Σ exp(z)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Zeroes every parameter gradient in `store`, then adds the gradients of
    /// all parameter leaves (a parameter bound twice accumulates).
    pub fn write_to(&self, store: &mut ParamStore) -> Result<()> {
        store.zero_grads();
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad_mut().add_scaled(g, 1.0)?;
            }
        }
        Ok(())
    }
}
